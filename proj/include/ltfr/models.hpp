#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ltfr/data.hpp"
#include "ltfr/nn.hpp"
#include "ltfr/tape.hpp"

namespace ltfr {

// ---------------------------------------------------------------------------
// Content-based encoder: PReLU MLP from content features to unit embeddings.

struct CbrmConfig {
  size_t content_dim = 32;
  size_t hidden_dim = 64;
  size_t embed_dim = 32;
};

struct CbrmModel {
  CbrmConfig cfg;
  ParameterSet params;
  MlpSpec spec() const { return MlpSpec{{cfg.content_dim, cfg.hidden_dim, cfg.embed_dim}}; }
};

CbrmModel init_cbrm(const CbrmConfig& cfg, uint64_t seed);
// contents: B x content_dim -> B x embed_dim, rows L2-normalized.
Var cbrm_forward(Tape& tape, const CbrmModel& model, Var contents);
Matrix cbrm_encode_batch(const CbrmModel& model, const Matrix& contents);
std::vector<double> cbrm_encode(const CbrmModel& model, const std::vector<double>& content);

// Mean of the min(K, n) most popular songs, ties in popularity broken by
// ascending song id. Returns the plain mean (no normalization).
struct SongEmbedding {
  std::string id;
  std::vector<double> embedding;
  int popularity = 0;
};
std::vector<double> aggregate_artist(std::vector<SongEmbedding> songs, size_t k);

// ---------------------------------------------------------------------------
// User-interaction encoder: one embedding row per catalog artist.

struct UirmModel {
  std::vector<std::string> ids;
  std::map<std::string, size_t> index;
  size_t dim = 32;
  ParameterSet params;  // single tensor "table" of ids.size() x dim
};

UirmModel init_uirm(std::vector<std::string> artist_ids, size_t dim, uint64_t seed);
// Raw table row (training updates it through the loss path).
std::vector<double> uirm_lookup(const UirmModel& model, const std::string& artist_id);
// Gathered rows, L2-normalized, on tape (for training batches).
Var uirm_forward(Tape& tape, const UirmModel& model, const std::vector<size_t>& rows);

// ---------------------------------------------------------------------------
// Metadata embedding: per-field tables with an out-of-vocabulary slot.

struct MetaDims {
  size_t genre = 8;
  size_t region = 8;
  size_t popularity = 8;
  size_t total() const { return genre + region + popularity; }
};

struct MetaEmbedder {
  MetaDims dims;
  std::map<std::string, size_t> genre_vocab;   // OOV slot = genre_vocab.size()
  std::map<std::string, size_t> region_vocab;  // OOV slot = region_vocab.size()

  static MetaEmbedder build(const std::vector<EntityRecord>& catalog, const MetaDims& dims);
  size_t genre_index(const std::string& g) const;
  size_t region_index(const std::string& r) const;
};

// Registers "<prefix>.genre", "<prefix>.region", "<prefix>.pop" tables.
void init_meta_tables(ParameterSet& ps, Rng& rng, const std::string& prefix,
                      const MetaEmbedder& meta);
// Concatenated per-field rows: 1 x dims.total().
Var meta_embed(Tape& tape, const ParameterSet& ps, const std::string& prefix,
               const MetaEmbedder& meta, const EntityRecord& entity);

// ---------------------------------------------------------------------------
// General encoder: token fusion -> field attention -> feature crossing ->
// PReLU head, L2-normalized output.

struct GrmConfig {
  size_t content_dim = 32;      // dim of incoming content embeddings
  size_t interaction_dim = 32;  // dim of incoming interaction embeddings
  MetaDims meta_dims;
  size_t fusion_dim = 32;
  size_t fusion_heads = 2;
  size_t fusion_ff = 64;
  size_t field_count = 4;  // Z
  size_t field_dim = 16;   // F
  size_t field_heads = 2;
  size_t field_ff = 32;
  size_t mlp_hidden = 64;
  size_t out_dim = 64;

  size_t embed_dim() const { return field_count * field_dim; }  // D = Z*F
  AttentionLayerConfig fusion_layer() const { return {fusion_dim, fusion_heads, fusion_ff}; }
  AttentionLayerConfig field_layer() const { return {field_dim, field_heads, field_ff}; }
  void validate() const;
};

struct GrmModel {
  GrmConfig cfg;
  MetaEmbedder meta;
  ParameterSet params;
};

GrmModel init_grm(const GrmConfig& cfg, MetaEmbedder meta, uint64_t seed);

// e_c: 1 x content_dim; e_u: 1 x interaction_dim or absent (the learned
// missing token stands in); e_m: 1 x meta_dims.total().
// Returns 1 x out_dim, L2-normalized.
Var grm_forward(Tape& tape, const GrmModel& model, Var e_c, std::optional<Var> e_u, Var e_m);
// Convenience: embeds the entity's metadata on the same tape.
Var grm_forward_entity(Tape& tape, const GrmModel& model, Var e_c, std::optional<Var> e_u,
                       const EntityRecord& entity);

// Sum over unordered field pairs of elementwise products; test/reference
// path. fields: Z x F -> 1 x F.
Matrix feature_crossing_reference(const Matrix& fields);

// ---------------------------------------------------------------------------
// Catalog encoding (deterministic batch inference).

// Artist task: per-artist aggregation over its songs (then normalized);
// music task: per-song embeddings.
EmbeddingMatrix encode_catalog_cbrm(const CbrmModel& model, const DatasetBundle& bundle,
                                    size_t agg_top_k);
// Normalized table rows for `ids` (defaults to every catalog artist).
EmbeddingMatrix encode_catalog_uirm(const UirmModel& model,
                                    const std::vector<std::string>* ids = nullptr);
// One row per task entity; e_u may be null (music task) and entities absent
// from it use the missing token.
EmbeddingMatrix encode_catalog_grm(const GrmModel& model, const DatasetBundle& bundle,
                                   const EmbeddingMatrix& e_c, const EmbeddingMatrix* e_u);

// ---------------------------------------------------------------------------
// Checkpoints: LTFR container, version 2 — a JSON header (model kind,
// config, vocabularies) followed by named f64 parameter blocks. Exact layout
// in README.md.

void save_cbrm(const CbrmModel& model, const std::string& path);
CbrmModel load_cbrm(const std::string& path);
void save_uirm(const UirmModel& model, const std::string& path);
UirmModel load_uirm(const std::string& path);
void save_grm(const GrmModel& model, const std::string& path);
GrmModel load_grm(const std::string& path);

}  // namespace ltfr
