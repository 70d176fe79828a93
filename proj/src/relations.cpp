#include "ltfr/relations.hpp"

#include <algorithm>
#include <tuple>

#include "ltfr/error.hpp"

namespace ltfr {

int LabelAssignment::label_of(const std::string& id) const {
  auto it = labels.find(id);
  if (it == labels.end()) {
    throw UnknownIdError("no " + std::string(1, kind) + " label for entity '" + id + "'");
  }
  return it->second;
}

namespace {

// Union-find over dense indices.
class DisjointSets {
 public:
  explicit DisjointSets(size_t n) : parent_(n), rank_(n, 0) {
    for (size_t i = 0; i < n; ++i) parent_[i] = i;
  }
  size_t find(size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void merge(size_t a, size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<size_t> parent_;
  std::vector<size_t> rank_;
};

// Components -> dense labels in first-touch order over `ids`; members of
// singleton components go to the unlabeled set unless label_singletons.
LabelAssignment components_to_labels(char kind, const std::vector<std::string>& ids,
                                     DisjointSets& ds, const std::vector<bool>& has_edge,
                                     bool label_singletons) {
  LabelAssignment out;
  out.kind = kind;
  std::map<size_t, int> root_to_label;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (!label_singletons && !has_edge[i]) {
      out.unlabeled.insert(ids[i]);
      continue;
    }
    size_t root = ds.find(i);
    auto it = root_to_label.find(root);
    if (it == root_to_label.end()) {
      it = root_to_label.emplace(root, out.num_labels++).first;
    }
    out.labels.emplace(ids[i], it->second);
  }
  return out;
}

std::map<std::string, size_t> index_ids(const std::vector<std::string>& ids) {
  std::map<std::string, size_t> idx;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (!idx.emplace(ids[i], i).second) throw DuplicateIdError("duplicate id '" + ids[i] + "'");
  }
  return idx;
}

}  // namespace

LabelAssignment build_ground_truth_labels(const std::vector<RelationEdge>& relations,
                                          const std::vector<std::string>& entity_ids) {
  auto idx = index_ids(entity_ids);
  DisjointSets ds(entity_ids.size());
  std::vector<bool> has_edge(entity_ids.size(), false);
  for (const auto& e : relations) {
    auto si = idx.find(e.src);
    auto di = idx.find(e.dst);
    if (si == idx.end()) throw DanglingIdError("relation references unknown id '" + e.src + "'");
    if (di == idx.end()) throw DanglingIdError("relation references unknown id '" + e.dst + "'");
    ds.merge(si->second, di->second);
    has_edge[si->second] = true;
    has_edge[di->second] = true;
  }
  return components_to_labels('A', entity_ids, ds, has_edge, /*label_singletons=*/false);
}

LabelAssignment build_content_labels(const DatasetBundle& bundle,
                                     const LabelAssignment& artist_ground_truth) {
  std::vector<std::string> music_ids = bundle.ids_of_kind(EntityKind::music);
  auto idx = index_ids(music_ids);
  DisjointSets ds(music_ids.size());

  // First music index seen per owner, and per owner ground-truth label.
  std::map<std::string, size_t> owner_first;
  std::map<int, size_t> label_first;
  for (size_t i = 0; i < music_ids.size(); ++i) {
    const EntityRecord& e = bundle.entity(music_ids[i]);
    if (!e.owner_artist_id) {
      throw ValidationError("music '" + e.id + "' is missing its owner");
    }
    const std::string& owner = *e.owner_artist_id;
    auto [it, fresh] = owner_first.emplace(owner, i);
    if (!fresh) ds.merge(it->second, i);
    if (artist_ground_truth.is_labeled(owner)) {
      int lab = artist_ground_truth.label_of(owner);
      auto [lit, lfresh] = label_first.emplace(lab, i);
      if (!lfresh) ds.merge(lit->second, i);
    }
  }
  std::vector<bool> has_edge(music_ids.size(), true);
  return components_to_labels('C', music_ids, ds, has_edge, /*label_singletons=*/true);
}

LabelAssignment build_user_labels(const std::vector<InteractionRecord>& interactions,
                                  const std::vector<std::string>& artist_ids,
                                  const CoInteractionConfig& cfg) {
  using Mode = CoInteractionConfig::Mode;
  if ((cfg.mode == Mode::threshold || cfg.mode == Mode::combined) && cfg.threshold < 1) {
    throw ValidationError("co-interaction threshold must be >= 1");
  }
  if ((cfg.mode == Mode::top_k || cfg.mode == Mode::combined) && cfg.k < 1) {
    throw ValidationError("co-interaction k must be >= 1");
  }
  auto idx = index_ids(artist_ids);

  // Distinct artists per user (weights intentionally ignored).
  std::map<std::string, std::set<size_t>> by_user;
  for (const auto& r : interactions) {
    auto it = idx.find(r.artist_id);
    if (it == idx.end()) {
      throw DanglingIdError("interaction references unknown artist '" + r.artist_id + "'");
    }
    by_user[r.user_id].insert(it->second);
  }

  // Shared-user counts over co-interacted pairs.
  std::map<std::pair<size_t, size_t>, size_t> shared;
  for (const auto& [user, artists] : by_user) {
    for (auto a = artists.begin(); a != artists.end(); ++a) {
      for (auto b = std::next(a); b != artists.end(); ++b) {
        shared[{*a, *b}] += 1;
      }
    }
  }

  std::set<std::pair<size_t, size_t>> edges;
  if (cfg.mode == Mode::threshold || cfg.mode == Mode::combined) {
    for (const auto& [pair, count] : shared) {
      if (count >= cfg.threshold) edges.insert(pair);
    }
  }
  if (cfg.mode == Mode::top_k || cfg.mode == Mode::combined) {
    // Per artist: neighbors ranked by shared count desc, id asc; an edge
    // needs each endpoint inside the other's top k (kept symmetric).
    std::vector<std::vector<std::pair<size_t, size_t>>> neighbors(artist_ids.size());
    for (const auto& [pair, count] : shared) {
      neighbors[pair.first].push_back({pair.second, count});
      neighbors[pair.second].push_back({pair.first, count});
    }
    std::vector<std::set<size_t>> topk(artist_ids.size());
    for (size_t i = 0; i < neighbors.size(); ++i) {
      auto& ns = neighbors[i];
      std::sort(ns.begin(), ns.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
      });
      for (size_t j = 0; j < ns.size() && j < cfg.k; ++j) topk[i].insert(ns[j].first);
    }
    for (const auto& [pair, count] : shared) {
      if (topk[pair.first].count(pair.second) && topk[pair.second].count(pair.first)) {
        edges.insert(pair);
      }
    }
  }

  DisjointSets ds(artist_ids.size());
  std::vector<bool> has_edge(artist_ids.size(), false);
  for (const auto& [a, b] : edges) {
    ds.merge(a, b);
    has_edge[a] = true;
    has_edge[b] = true;
  }
  return components_to_labels('U', artist_ids, ds, has_edge, /*label_singletons=*/false);
}

LabelAssignment build_meta_consistency_labels(const std::vector<EntityRecord>& entities) {
  LabelAssignment out;
  out.kind = 'P';
  std::map<std::tuple<std::string, std::string, int>, int> classes;
  for (const auto& e : entities) {
    if (e.genre.empty() || e.region.empty()) {
      throw ValidationError("entity '" + e.id + "' is missing genre/region metadata");
    }
    auto key = std::make_tuple(e.genre, e.region, e.popularity);
    auto it = classes.find(key);
    if (it == classes.end()) it = classes.emplace(key, out.num_labels++).first;
    if (!out.labels.emplace(e.id, it->second).second) {
      throw DuplicateIdError("duplicate entity '" + e.id + "' in meta label build");
    }
  }
  return out;
}

std::set<std::string> long_tail_flags(const LabelAssignment& ground_truth) {
  return ground_truth.unlabeled;
}

}  // namespace ltfr
