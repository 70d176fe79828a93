#pragma once

#include <cstdint>
#include <vector>

#include "ltfr/data.hpp"
#include "ltfr/matrix.hpp"
#include "ltfr/rng.hpp"

namespace ltfr {

// Label of an in-batch element; kUnlabeled marks entities outside the
// relation (long-tail for the ground-truth system).
inline constexpr int kUnlabeled = -1;

struct MiningConfig {
  // Margin applied to the hardest-pair bound.
  double delta = 0.1;
  // paper_min bounds positives by the *closest* negative; original_max by
  // the farthest one. Both ship; paper_min is the default.
  enum class Variant { paper_min, original_max };
  Variant variant = Variant::paper_min;
};

struct MsHyper {
  double alpha = 2.0;
  double beta = 50.0;
  double gamma = 1.0;
  void validate() const;
};

// Cosine similarities of L2-normalized embedding rows: S = E * E^T.
// Throws NonFiniteError when a row norm is off unit by more than 1e-6.
Matrix similarity_matrix(const Matrix& embeddings);

// Index sets mined for anchor `i`. Candidates for positives are same-label
// j != i; for negatives, different-label j. Unlabeled entries never appear
// on either side; an unlabeled anchor throws ValidationError.
// Conventions: an anchor with no in-batch negatives keeps all its positives;
// an anchor with no in-batch positives mines no negatives.
std::vector<size_t> mine_positive_set(const Matrix& S, const std::vector<int>& labels, size_t i,
                                      const MiningConfig& cfg);
std::vector<size_t> mine_negative_set(const Matrix& S, const std::vector<int>& labels, size_t i,
                                      const MiningConfig& cfg);

struct LossResult {
  double value = 0.0;
  Matrix grad_s;  // dL/dS, same shape as S
};

// Multi-similarity loss over mined pairs, averaged over the batch size.
// Anchors whose mined sets are both empty (or that are unlabeled)
// contribute zero.
LossResult ms_loss(const Matrix& S, const std::vector<int>& labels, const MsHyper& hyper,
                   const MiningConfig& cfg);

// Same functional form, but pairs come straight from meta-consistency label
// equality (no mining). Every element must be labeled.
LossResult prior_loss(const Matrix& S, const std::vector<int>& meta_labels,
                      const MsHyper& hyper);

// L = ms_loss(S, y_rel) + lambda * prior_loss(S, y_meta).
LossResult multi_relationship_loss(const Matrix& S, const std::vector<int>& y_rel,
                                   const std::vector<int>& y_meta, const MsHyper& rel_hyper,
                                   const MsHyper& prior_hyper, const MiningConfig& cfg,
                                   double lambda);

// P-classes x Q-instances batch over `labels` (indices into the population),
// plus ceil(tail_mix * P * Q) unlabeled entries appended so the prior term
// reaches them. Classes are drawn from those with >= 2 members; members are
// drawn with replacement only when a class is smaller than Q.
std::vector<size_t> sample_batch(const std::vector<int>& labels, size_t num_classes,
                                 size_t per_class, double tail_mix, Rng& rng);

}  // namespace ltfr
