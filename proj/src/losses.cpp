#include "ltfr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "ltfr/error.hpp"

namespace ltfr {

void MsHyper::validate() const {
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw ValidationError("MsHyper: alpha and beta must be strictly positive");
  }
  if (!std::isfinite(gamma)) throw ValidationError("MsHyper: gamma must be finite");
}

Matrix similarity_matrix(const Matrix& embeddings) {
  for (size_t i = 0; i < embeddings.rows(); ++i) {
    double n2 = 0.0;
    for (size_t j = 0; j < embeddings.cols(); ++j) n2 += embeddings(i, j) * embeddings(i, j);
    if (!(n2 > 1e-24)) throw NonFiniteError("similarity_matrix: zero-norm row");
    if (std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
      throw ValidationError("similarity_matrix: row " + std::to_string(i) +
                            " is not L2-normalized");
    }
  }
  return matmul_nt(embeddings, embeddings);
}

namespace {

void check_anchor(const Matrix& S, const std::vector<int>& labels, size_t i) {
  if (S.rows() != S.cols() || S.rows() != labels.size()) {
    throw DimensionError("mining: S must be NxN matching labels length");
  }
  if (i >= labels.size()) throw ValidationError("mining: anchor index out of range");
  if (labels[i] == kUnlabeled) {
    throw ValidationError("mining: anchor " + std::to_string(i) + " is unlabeled");
  }
}

}  // namespace

std::vector<size_t> mine_positive_set(const Matrix& S, const std::vector<int>& labels, size_t i,
                                      const MiningConfig& cfg) {
  check_anchor(S, labels, i);
  const size_t n = labels.size();

  // Hardest-negative bound over different-label candidates.
  bool has_negative = false;
  double bound = 0.0;
  for (size_t k = 0; k < n; ++k) {
    if (labels[k] == kUnlabeled || labels[k] == labels[i]) continue;
    const double s = S(i, k);
    if (!has_negative) {
      bound = s;
      has_negative = true;
    } else if (cfg.variant == MiningConfig::Variant::paper_min) {
      bound = std::min(bound, s);
    } else {
      bound = std::max(bound, s);
    }
  }

  std::vector<size_t> out;
  for (size_t j = 0; j < n; ++j) {
    if (j == i || labels[j] != labels[i]) continue;
    if (!has_negative || S(i, j) < bound + cfg.delta) out.push_back(j);
  }
  return out;
}

std::vector<size_t> mine_negative_set(const Matrix& S, const std::vector<int>& labels, size_t i,
                                      const MiningConfig& cfg) {
  check_anchor(S, labels, i);
  const size_t n = labels.size();

  // Weakest-positive bound over same-label candidates.
  bool has_positive = false;
  double bound = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < n; ++k) {
    if (k == i || labels[k] != labels[i]) continue;
    bound = std::min(bound, S(i, k));
    has_positive = true;
  }
  if (!has_positive) return {};  // anchor skipped

  std::vector<size_t> out;
  for (size_t j = 0; j < n; ++j) {
    if (labels[j] == kUnlabeled || labels[j] == labels[i]) continue;
    if (S(i, j) > bound - cfg.delta) out.push_back(j);
  }
  return out;
}

namespace {

// Accumulates one log[1 + sum_j exp(x_j)] term and its softmax-style weights
// w_j = exp(x_j) / (1 + sum exp), computed against the running max for
// stability.
struct LogSumTerm {
  double value = 0.0;                 // log(1 + sum exp(x_j))
  std::vector<double> weights;        // d value / d x_j

  explicit LogSumTerm(const std::vector<double>& xs) {
    double m = 0.0;  // the implicit "1 +" contributes exp(0)
    for (double x : xs) m = std::max(m, x);
    double denom = std::exp(-m);
    std::vector<double> es(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) {
      es[i] = std::exp(xs[i] - m);
      denom += es[i];
    }
    value = m + std::log(denom);
    weights.resize(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) weights[i] = es[i] / denom;
  }
};

// Shared evaluator: the multi-similarity functional over externally chosen
// index sets per anchor.
LossResult ms_form(const Matrix& S, const MsHyper& hyper,
                   const std::vector<std::vector<size_t>>& positives,
                   const std::vector<std::vector<size_t>>& negatives) {
  hyper.validate();
  const size_t n = S.rows();
  LossResult res;
  res.grad_s = Matrix(n, n);
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const auto& P = positives[i];
    const auto& N = negatives[i];
    if (!P.empty()) {
      std::vector<double> xs(P.size());
      for (size_t t = 0; t < P.size(); ++t) xs[t] = -hyper.alpha * (S(i, P[t]) - hyper.gamma);
      LogSumTerm term(xs);
      total += term.value / hyper.alpha;
      for (size_t t = 0; t < P.size(); ++t) {
        res.grad_s(i, P[t]) += -term.weights[t] / static_cast<double>(n);
      }
    }
    if (!N.empty()) {
      std::vector<double> xs(N.size());
      for (size_t t = 0; t < N.size(); ++t) xs[t] = hyper.beta * (S(i, N[t]) - hyper.gamma);
      LogSumTerm term(xs);
      total += term.value / hyper.beta;
      for (size_t t = 0; t < N.size(); ++t) {
        res.grad_s(i, N[t]) += term.weights[t] / static_cast<double>(n);
      }
    }
  }
  res.value = total / static_cast<double>(n);
  if (!std::isfinite(res.value) || !res.grad_s.all_finite()) {
    throw NonFiniteError("ms loss produced a non-finite value");
  }
  return res;
}

}  // namespace

LossResult ms_loss(const Matrix& S, const std::vector<int>& labels, const MsHyper& hyper,
                   const MiningConfig& cfg) {
  if (S.rows() != S.cols() || S.rows() != labels.size()) {
    throw DimensionError("ms_loss: S must be NxN matching labels length");
  }
  const size_t n = labels.size();
  std::vector<std::vector<size_t>> pos(n), neg(n);
  for (size_t i = 0; i < n; ++i) {
    if (labels[i] == kUnlabeled) continue;  // contributes nothing
    pos[i] = mine_positive_set(S, labels, i, cfg);
    neg[i] = mine_negative_set(S, labels, i, cfg);
  }
  return ms_form(S, hyper, pos, neg);
}

LossResult prior_loss(const Matrix& S, const std::vector<int>& meta_labels,
                      const MsHyper& hyper) {
  if (S.rows() != S.cols() || S.rows() != meta_labels.size()) {
    throw DimensionError("prior_loss: S must be NxN matching labels length");
  }
  const size_t n = meta_labels.size();
  for (size_t i = 0; i < n; ++i) {
    if (meta_labels[i] == kUnlabeled) {
      throw ValidationError("prior_loss: element " + std::to_string(i) +
                            " has no meta-consistency label");
    }
  }
  std::vector<std::vector<size_t>> pos(n), neg(n);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (meta_labels[j] == meta_labels[i]) {
        pos[i].push_back(j);
      } else {
        neg[i].push_back(j);
      }
    }
  }
  return ms_form(S, hyper, pos, neg);
}

LossResult multi_relationship_loss(const Matrix& S, const std::vector<int>& y_rel,
                                   const std::vector<int>& y_meta, const MsHyper& rel_hyper,
                                   const MsHyper& prior_hyper, const MiningConfig& cfg,
                                   double lambda) {
  if (lambda < 0.0) throw ValidationError("multi_relationship_loss: lambda must be >= 0");
  LossResult rel = ms_loss(S, y_rel, rel_hyper, cfg);
  if (lambda == 0.0) return rel;
  LossResult prior = prior_loss(S, y_meta, prior_hyper);
  LossResult out;
  out.value = rel.value + lambda * prior.value;
  out.grad_s = rel.grad_s;
  add_scaled_in_place(out.grad_s, prior.grad_s, lambda);
  return out;
}

std::vector<size_t> sample_batch(const std::vector<int>& labels, size_t num_classes,
                                 size_t per_class, double tail_mix, Rng& rng) {
  if (num_classes < 1 || per_class < 1) {
    throw ValidationError("sample_batch: P and Q must be >= 1");
  }
  if (tail_mix < 0.0 || tail_mix >= 1.0) {
    throw ValidationError("sample_batch: tail_mix must be in [0, 1)");
  }

  std::map<int, std::vector<size_t>> members;
  std::vector<size_t> unlabeled;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kUnlabeled) {
      unlabeled.push_back(i);
    } else {
      members[labels[i]].push_back(i);
    }
  }
  std::vector<int> eligible;
  for (const auto& [label, m] : members) {
    if (m.size() >= 2) eligible.push_back(label);
  }
  if (eligible.empty()) {
    throw ValidationError("sample_batch: no label class has >= 2 members");
  }

  // P distinct classes when possible, cycling with replacement otherwise.
  std::vector<int> chosen;
  if (eligible.size() >= num_classes) {
    rng.shuffle(eligible);
    chosen.assign(eligible.begin(), eligible.begin() + static_cast<long>(num_classes));
  } else {
    for (size_t i = 0; i < num_classes; ++i) {
      chosen.push_back(eligible[rng.uniform_int(eligible.size())]);
    }
  }

  std::vector<size_t> batch;
  for (int label : chosen) {
    const auto& m = members[label];
    if (m.size() >= per_class) {
      std::vector<size_t> pool = m;
      rng.shuffle(pool);
      batch.insert(batch.end(), pool.begin(), pool.begin() + static_cast<long>(per_class));
    } else {
      for (size_t q = 0; q < per_class; ++q) batch.push_back(m[rng.uniform_int(m.size())]);
    }
  }

  const size_t tail_count =
      static_cast<size_t>(std::ceil(tail_mix * static_cast<double>(num_classes * per_class)));
  if (tail_count > 0 && !unlabeled.empty()) {
    for (size_t t = 0; t < tail_count; ++t) {
      batch.push_back(unlabeled[rng.uniform_int(unlabeled.size())]);
    }
  }
  return batch;
}

}  // namespace ltfr
