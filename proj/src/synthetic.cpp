#include "ltfr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "ltfr/error.hpp"
#include "ltfr/rng.hpp"

namespace ltfr {

namespace {

std::string padded_id(char prefix, size_t idx, size_t width) {
  std::string num = std::to_string(idx);
  if (num.size() < width) num.insert(0, width - num.size(), '0');
  return prefix + num;
}

size_t digits(size_t n) {
  size_t d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}

// Skewed bucket distribution: most entities sit in the low-popularity
// buckets, which combined with exponential attractiveness gives the
// heavy-tailed degree profile.
int sample_popularity(Rng& rng) {
  static const double probs[kPopularityBuckets] = {0.38, 0.26, 0.17, 0.12, 0.07};
  double r = rng.uniform();
  double acc = 0.0;
  for (int b = 0; b < kPopularityBuckets; ++b) {
    acc += probs[b];
    if (r < acc) return b;
  }
  return kPopularityBuckets - 1;
}

struct NodeMeta {
  size_t genre;
  size_t region;
  int popularity;
  size_t owner = SIZE_MAX;  // music only
};

// Pairwise edge machinery shared by the artist and music graphs.
class EdgeModel {
 public:
  EdgeModel(const std::vector<NodeMeta>& nodes, const SyntheticConfig& cfg, bool music)
      : nodes_(nodes), cfg_(cfg), music_(music) {
    attract_.reserve(nodes.size());
    for (const auto& n : nodes) {
      attract_.push_back(std::pow(cfg.popularity_base, n.popularity));
    }
  }

  double pair_rate(size_t i, size_t j) const {
    const NodeMeta& a = nodes_[i];
    const NodeMeta& b = nodes_[j];
    double m = 1.0;
    if (a.genre == b.genre) m *= cfg_.genre_match_boost;
    if (a.region == b.region) m *= cfg_.region_match_boost;
    if (a.popularity == b.popularity) m *= cfg_.popularity_match_boost;
    if (music_ && a.owner == b.owner) m *= cfg_.same_artist_boost;
    return attract_[i] * attract_[j] * m;
  }

  double prob(size_t i, size_t j, double rho) const {
    return std::min(1.0, rho * pair_rate(i, j) / static_cast<double>(nodes_.size()));
  }

  // Expected fraction of isolated nodes at scale rho.
  double expected_isolated(double rho) const {
    const size_t n = nodes_.size();
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double log_none = 0.0;
      for (size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        double p = prob(i, j, rho);
        if (p >= 1.0) {
          log_none = -std::numeric_limits<double>::infinity();
          break;
        }
        log_none += std::log1p(-p);
      }
      total += std::exp(log_none);
    }
    return total / static_cast<double>(n);
  }

  // Bisection on the expected isolated fraction (monotone decreasing in rho).
  double calibrate(double target_isolated) const {
    double lo = 0.0, hi = 1.0;
    // Grow hi until the graph is dense enough.
    while (expected_isolated(hi) > target_isolated && hi < 1e12) hi *= 16.0;
    for (int it = 0; it < 64; ++it) {
      double mid = 0.5 * (lo + hi);
      if (expected_isolated(mid) > target_isolated) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    return 0.5 * (lo + hi);
  }

  std::set<std::pair<size_t, size_t>> sample(double rho, Rng& rng) const {
    std::set<std::pair<size_t, size_t>> edges;
    const size_t n = nodes_.size();
    for (size_t i = 0; i < n; ++i) {
      for (size_t j = i + 1; j < n; ++j) {
        if (rng.uniform() < prob(i, j, rho)) edges.insert({i, j});
      }
    }
    return edges;
  }

  const std::vector<NodeMeta>& nodes() const { return nodes_; }

 private:
  const std::vector<NodeMeta>& nodes_;
  const SyntheticConfig& cfg_;
  bool music_;
  std::vector<double> attract_;
};

// Deterministically adds/removes edges until the isolated fraction sits
// inside [target - band, target + band].
void repair_to_target(const EdgeModel& model, std::set<std::pair<size_t, size_t>>& edges,
                      double target, double band) {
  const size_t n = model.nodes().size();
  auto degree_of = [&](std::vector<size_t>& deg) {
    deg.assign(n, 0);
    for (const auto& [a, b] : edges) {
      ++deg[a];
      ++deg[b];
    }
  };
  std::vector<size_t> deg;
  degree_of(deg);
  auto isolated_fraction = [&]() {
    size_t c = 0;
    for (size_t d : deg) c += (d == 0);
    return static_cast<double>(c) / static_cast<double>(n);
  };

  // A zero target means exactly zero: every node ends up connected.
  const double upper = target == 0.0 ? 0.0 : target + band;
  for (size_t guard = 0; guard < 4 * n + 16; ++guard) {
    const double frac = isolated_fraction();
    if (frac > upper) {
      // Connect the first isolated node to its best-matched partner.
      size_t best = SIZE_MAX;
      double best_rate = -1.0;
      for (size_t i = 0; i < n; ++i) {
        if (deg[i] != 0) continue;
        if (best == SIZE_MAX) best = i;
      }
      if (best == SIZE_MAX) break;
      size_t partner = SIZE_MAX;
      for (size_t j = 0; j < n; ++j) {
        if (j == best || deg[j] == 0) continue;
        double r = model.pair_rate(best, j);
        if (r > best_rate) {
          best_rate = r;
          partner = j;
        }
      }
      if (partner == SIZE_MAX) {
        // Nothing connected yet: pair up isolated nodes directly.
        for (size_t j = 0; j < n && partner == SIZE_MAX; ++j) {
          if (j != best && deg[j] == 0) partner = j;
        }
      }
      if (partner == SIZE_MAX) {
        throw ValidationError("infeasible long-tail target: no partner to connect");
      }
      edges.insert({std::min(best, partner), std::max(best, partner)});
      ++deg[best];
      ++deg[partner];
    } else if (frac < target - band) {
      // Isolate the lowest-degree node whose removal strands nobody else.
      size_t victim = SIZE_MAX;
      for (size_t pass = 0; pass < 2 && victim == SIZE_MAX; ++pass) {
        size_t best_deg = SIZE_MAX;
        for (size_t i = 0; i < n; ++i) {
          if (deg[i] == 0 || deg[i] >= best_deg) continue;
          if (pass == 0) {
            bool safe = true;
            for (const auto& [a, b] : edges) {
              if (a != i && b != i) continue;
              size_t other = (a == i) ? b : a;
              if (deg[other] <= 1) {
                safe = false;
                break;
              }
            }
            if (!safe) continue;
          }
          best_deg = deg[i];
          victim = i;
        }
      }
      if (victim == SIZE_MAX) {
        throw ValidationError("infeasible long-tail target: cannot isolate more nodes");
      }
      for (auto it = edges.begin(); it != edges.end();) {
        if (it->first == victim || it->second == victim) {
          --deg[it->first];
          --deg[it->second];
          it = edges.erase(it);
        } else {
          ++it;
        }
      }
    } else {
      return;
    }
  }
  if (isolated_fraction() > upper || isolated_fraction() < target - band) {
    throw ValidationError("infeasible long-tail target: repair did not converge");
  }
}

}  // namespace

void SyntheticConfig::validate() const {
  if (n_artists < 1 || n_genres < 1 || n_regions < 1 || content_dim < 1 || n_users < 1) {
    throw ValidationError("SyntheticConfig: counts must be >= 1");
  }
  if (songs_per_artist_mean < 1.0) {
    throw ValidationError("SyntheticConfig: songs_per_artist_mean must be >= 1");
  }
  if (long_tail_target < 0.0 || long_tail_target >= 1.0 || music_long_tail_target < 0.0 ||
      music_long_tail_target >= 1.0) {
    throw ValidationError("SyntheticConfig: long-tail targets must be in [0, 1)");
  }
}

DatasetBundle generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  // Latent centroids per genre and region.
  std::vector<std::vector<double>> genre_centroid(cfg.n_genres,
                                                  std::vector<double>(cfg.content_dim));
  std::vector<std::vector<double>> region_centroid(cfg.n_regions,
                                                   std::vector<double>(cfg.content_dim));
  for (auto& c : genre_centroid) {
    for (auto& v : c) v = rng.normal();
  }
  for (auto& c : region_centroid) {
    for (auto& v : c) v = rng.normal(0.0, cfg.region_weight);
  }

  std::vector<double> genre_mass(cfg.n_genres), region_mass(cfg.n_regions);
  for (size_t g = 0; g < cfg.n_genres; ++g) {
    genre_mass[g] = std::pow(static_cast<double>(g + 1), -cfg.category_skew);
  }
  for (size_t r = 0; r < cfg.n_regions; ++r) {
    region_mass[r] = std::pow(static_cast<double>(r + 1), -cfg.category_skew);
  }

  const size_t aw = digits(cfg.n_artists);
  std::vector<NodeMeta> artists(cfg.n_artists);
  std::vector<std::vector<double>> artist_content(cfg.n_artists);
  for (size_t i = 0; i < cfg.n_artists; ++i) {
    artists[i].genre = rng.weighted_index(genre_mass);
    artists[i].region = rng.weighted_index(region_mass);
    artists[i].popularity = sample_popularity(rng);
    auto& c = artist_content[i];
    c.resize(cfg.content_dim);
    for (size_t d = 0; d < cfg.content_dim; ++d) {
      c[d] = genre_centroid[artists[i].genre][d] + region_centroid[artists[i].region][d] +
             rng.normal(0.0, cfg.artist_content_noise);
    }
  }

  // Songs: count ~ 1 + Poisson(mean - 1); metadata follows the owner with a
  // popularity wobble of one bucket.
  std::vector<NodeMeta> songs;
  std::vector<std::vector<double>> song_content;
  std::vector<size_t> song_owner;
  for (size_t i = 0; i < cfg.n_artists; ++i) {
    const int count = 1 + rng.poisson(cfg.songs_per_artist_mean - 1.0);
    for (int s = 0; s < count; ++s) {
      NodeMeta m;
      m.genre = artists[i].genre;
      m.region = artists[i].region;
      double r = rng.uniform();
      int delta = r < 0.25 ? -1 : (r < 0.75 ? 0 : 1);
      m.popularity = std::clamp(artists[i].popularity + delta, 0, kPopularityBuckets - 1);
      m.owner = i;
      songs.push_back(m);
      std::vector<double> c(cfg.content_dim);
      for (size_t d = 0; d < cfg.content_dim; ++d) {
        c[d] = artist_content[i][d] + rng.normal(0.0, cfg.song_content_noise);
      }
      song_content.push_back(std::move(c));
      song_owner.push_back(i);
    }
  }
  const size_t mw = digits(songs.size() == 0 ? 1 : songs.size());

  // Relation edges over the task kind.
  const bool music_task = cfg.task_kind == EntityKind::music;
  const std::vector<NodeMeta>& graph_nodes = music_task ? songs : artists;
  const double target = music_task ? cfg.music_long_tail_target : cfg.long_tail_target;
  if (graph_nodes.size() < 2 && target < 1.0 - 1e-12) {
    throw ValidationError("infeasible long-tail target: not enough entities for edges");
  }
  EdgeModel edge_model(graph_nodes, cfg, music_task);
  const double bisect_target = std::clamp(target, 0.02, 0.98);
  const double rho = edge_model.calibrate(bisect_target);
  auto edges = edge_model.sample(rho, rng);
  const double band = std::max(0.015, 1.0 / static_cast<double>(graph_nodes.size()));
  repair_to_target(edge_model, edges, target, band);

  // User interactions over artists, popularity-proportional with a genre
  // preference so co-interaction is informative.
  std::vector<std::vector<size_t>> artists_by_genre(cfg.n_genres);
  std::vector<std::vector<double>> weight_by_genre(cfg.n_genres);
  std::vector<double> all_weights(cfg.n_artists);
  for (size_t i = 0; i < cfg.n_artists; ++i) {
    double a = std::pow(cfg.popularity_base, artists[i].popularity);
    all_weights[i] = a;
    artists_by_genre[artists[i].genre].push_back(i);
    weight_by_genre[artists[i].genre].push_back(a);
  }
  std::map<std::pair<size_t, size_t>, size_t> play_counts;  // (user, artist) -> count
  for (size_t u = 0; u < cfg.n_users; ++u) {
    const size_t pref = rng.uniform_int(cfg.n_genres);
    const int draws = 1 + rng.poisson(cfg.interactions_per_user - 1.0);
    for (int d = 0; d < draws; ++d) {
      size_t artist;
      if (!artists_by_genre[pref].empty() && rng.uniform() < cfg.genre_affinity) {
        artist = artists_by_genre[pref][rng.weighted_index(weight_by_genre[pref])];
      } else {
        artist = rng.weighted_index(all_weights);
      }
      play_counts[{u, artist}] += 1;
    }
  }

  // Assemble the bundle.
  DatasetBundle b;
  b.task_kind = cfg.task_kind;
  auto artist_id = [&](size_t i) { return padded_id('a', i, aw); };
  auto music_id = [&](size_t i) { return padded_id('m', i, mw); };

  const char* genre_names[] = {"rock", "pop", "jazz", "folk", "metal", "hiphop", "classical",
                               "electro", "blues", "country", "latin", "reggae"};
  const char* region_names[] = {"us", "uk", "jp", "de", "br", "kr", "fr", "se", "in", "ng"};
  auto genre_name = [&](size_t g) {
    return g < std::size(genre_names) ? std::string(genre_names[g]) : "genre" + std::to_string(g);
  };
  auto region_name = [&](size_t r) {
    return r < std::size(region_names) ? std::string(region_names[r])
                                       : "region" + std::to_string(r);
  };

  for (size_t i = 0; i < cfg.n_artists; ++i) {
    EntityRecord e;
    e.id = artist_id(i);
    e.kind = EntityKind::artist;
    e.genre = genre_name(artists[i].genre);
    e.region = region_name(artists[i].region);
    e.popularity = artists[i].popularity;
    e.content = artist_content[i];
    b.index.emplace(e.id, b.entities.size());
    b.entities.push_back(std::move(e));
  }
  for (size_t i = 0; i < songs.size(); ++i) {
    EntityRecord e;
    e.id = music_id(i);
    e.kind = EntityKind::music;
    e.genre = genre_name(songs[i].genre);
    e.region = region_name(songs[i].region);
    e.popularity = songs[i].popularity;
    e.owner_artist_id = artist_id(song_owner[i]);
    e.content = song_content[i];
    b.index.emplace(e.id, b.entities.size());
    b.entities.push_back(std::move(e));
  }

  for (const auto& [i, j] : edges) {
    b.relations.push_back(music_task ? RelationEdge{music_id(i), music_id(j)}
                                     : RelationEdge{artist_id(i), artist_id(j)});
  }

  const size_t uw = digits(cfg.n_users);
  for (const auto& [key, count] : play_counts) {
    b.interactions.push_back(InteractionRecord{padded_id('u', key.first, uw),
                                               artist_id(key.second),
                                               static_cast<double>(count)});
  }

  b.split.assign(b.entities.size(), Split::train);
  b.relation_spans_splits.assign(b.relations.size(), false);
  b.validate();
  return b;
}

double realized_long_tail_fraction(const DatasetBundle& bundle, EntityKind kind) {
  std::set<std::string> connected;
  for (const auto& r : bundle.relations) {
    connected.insert(r.src);
    connected.insert(r.dst);
  }
  size_t total = 0, tail = 0;
  for (const auto& e : bundle.entities) {
    if (e.kind != kind) continue;
    ++total;
    if (!connected.count(e.id)) ++tail;
  }
  if (total == 0) return 0.0;
  return static_cast<double>(tail) / static_cast<double>(total);
}

}  // namespace ltfr
