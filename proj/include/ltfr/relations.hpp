#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "ltfr/data.hpp"

namespace ltfr {

// One of the four relation label systems. Pseudo-class labels are connected
// components of the underlying pairwise graph: dense ids 0..num_labels-1.
// Every entity in scope is either labeled or in the unlabeled set.
struct LabelAssignment {
  char kind = '?';  // 'C', 'U', 'A' or 'P'
  std::map<std::string, int> labels;
  std::set<std::string> unlabeled;
  int num_labels = 0;

  bool is_labeled(const std::string& id) const { return labels.count(id) > 0; }
  int label_of(const std::string& id) const;  // throws UnknownIdError when absent
  size_t population() const { return labels.size() + unlabeled.size(); }
};

struct CoInteractionConfig {
  enum class Mode { threshold, top_k, combined };
  Mode mode = Mode::threshold;
  size_t threshold = 2;  // minimum shared-user count
  size_t k = 10;         // mutual top-k by shared-user count
};

// Y_A: components of the ground-truth similarity graph over `entity_ids`.
// Entities with no edges land in the unlabeled set.
LabelAssignment build_ground_truth_labels(const std::vector<RelationEdge>& relations,
                                          const std::vector<std::string>& entity_ids);

// Y_C over music items: grouped by owning artist, with groups merged when
// the owners share a ground-truth label. Labels every music item.
LabelAssignment build_content_labels(const DatasetBundle& bundle,
                                     const LabelAssignment& artist_ground_truth);

// Y_U over artists: components of the co-interaction graph (edge when the
// shared-user count clears the configured rule). Isolated artists unlabeled.
LabelAssignment build_user_labels(const std::vector<InteractionRecord>& interactions,
                                  const std::vector<std::string>& artist_ids,
                                  const CoInteractionConfig& cfg);

// Y_P: exact equality classes of (genre, region, popularity). Labels every
// entity passed in.
LabelAssignment build_meta_consistency_labels(const std::vector<EntityRecord>& entities);

// Long-tail set: exactly the entities without ground-truth labels.
std::set<std::string> long_tail_flags(const LabelAssignment& ground_truth);

}  // namespace ltfr
