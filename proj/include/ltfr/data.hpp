#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ltfr/matrix.hpp"

namespace ltfr {

enum class EntityKind { artist, music };
enum class Split { train, val, test };

std::string to_string(EntityKind k);
std::string to_string(Split s);

// Popularity is a 5-bucket ordinal tag.
inline constexpr int kPopularityBuckets = 5;

struct EntityRecord {
  std::string id;
  EntityKind kind = EntityKind::artist;
  std::string genre;
  std::string region;
  int popularity = 0;  // bucket 0..4
  std::optional<std::string> owner_artist_id;  // music only
  std::vector<double> content;
};

struct InteractionRecord {
  std::string user_id;
  std::string artist_id;
  double weight = 1.0;
};

struct RelationEdge {
  std::string src;
  std::string dst;
};

// Immutable after construction/splitting; safe to share read-only.
struct DatasetBundle {
  std::vector<EntityRecord> entities;  // catalog order
  std::map<std::string, size_t> index;  // id -> position in entities
  std::vector<InteractionRecord> interactions;
  std::vector<RelationEdge> relations;
  EntityKind task_kind = EntityKind::artist;  // kind the relations connect
  std::vector<Split> split;                   // parallel to entities
  std::vector<bool> relation_spans_splits;    // parallel to relations

  const EntityRecord& entity(const std::string& id) const;
  bool has_entity(const std::string& id) const { return index.count(id) > 0; }
  Split split_of(const std::string& id) const;
  std::vector<std::string> ids_of_kind(EntityKind kind) const;
  std::vector<std::string> task_ids() const { return ids_of_kind(task_kind); }
  std::vector<std::string> task_ids_in_split(Split s) const;
  // Music ids per artist, sorted by id.
  std::vector<std::string> music_of_artist(const std::string& artist_id) const;
  size_t content_dim() const;

  // Checks referential integrity and per-record invariants; throws on
  // violation. Called by load_dataset and the synthetic generator.
  void validate() const;
};

struct DatasetPaths {
  std::string entities;
  std::string content;
  std::string interactions;
  std::string relations;
  static DatasetPaths in_dir(const std::string& dir);
};

DatasetBundle load_dataset(const DatasetPaths& paths);
void write_dataset(const DatasetBundle& bundle, const std::string& dir);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Deterministic per-entity split. Task-kind entities are partitioned by the
// ratios; music inherits its owner's split (artist task); artists default to
// train on the music task. Relations whose endpoints land in different
// splits are flagged, not dropped.
DatasetBundle split_dataset(DatasetBundle bundle, const SplitRatios& ratios, uint64_t seed);

// Ordered id index over a dense embedding block. 64-bit in memory; the file
// format stores 32-bit floats.
struct EmbeddingMatrix {
  std::vector<std::string> ids;
  std::map<std::string, size_t> index;
  Matrix values;  // ids.size() x dim

  static EmbeddingMatrix create(std::vector<std::string> ids, size_t dim);
  size_t dim() const { return values.cols(); }
  size_t count() const { return ids.size(); }
  bool has(const std::string& id) const { return index.count(id) > 0; }
  std::vector<double> row(const std::string& id) const;
  void set_row(const std::string& id, const std::vector<double>& v);
  EmbeddingMatrix subset(const std::vector<std::string>& keep_ids) const;
};

// Binary layout: magic "LTFR", u8 version=1, u32le dim, u32le count, a JSON
// array of ids (UTF-8), then count*dim little-endian f32 values, row-major.
void write_embeddings(const EmbeddingMatrix& m, const std::string& path);
EmbeddingMatrix read_embeddings(const std::string& path);

}  // namespace ltfr
