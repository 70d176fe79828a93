#include "ltfr/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ltfr/binary_io.hpp"
#include "ltfr/error.hpp"

namespace ltfr {

using nlohmann::json;

// ---------------------------------------------------------------------------
// CbRM

CbrmModel init_cbrm(const CbrmConfig& cfg, uint64_t seed) {
  CbrmModel model;
  model.cfg = cfg;
  Rng rng(seed);
  init_mlp(model.params, rng, "proj", model.spec());
  return model;
}

Var cbrm_forward(Tape& tape, const CbrmModel& model, Var contents) {
  Var h = mlp_forward(tape, model.params, "proj", model.spec(), contents);
  return tape.l2_normalize_rows(h);
}

Matrix cbrm_encode_batch(const CbrmModel& model, const Matrix& contents) {
  Tape tape;
  Var out = cbrm_forward(tape, model, tape.leaf(contents));
  return tape.value(out);
}

std::vector<double> cbrm_encode(const CbrmModel& model, const std::vector<double>& content) {
  return cbrm_encode_batch(model, Matrix::row_vector(content)).row(0);
}

std::vector<double> aggregate_artist(std::vector<SongEmbedding> songs, size_t k) {
  if (songs.empty()) throw ValidationError("aggregate_artist: empty song list");
  if (k < 1) throw ValidationError("aggregate_artist: K must be >= 1");
  std::sort(songs.begin(), songs.end(), [](const SongEmbedding& a, const SongEmbedding& b) {
    if (a.popularity != b.popularity) return a.popularity > b.popularity;
    return a.id < b.id;
  });
  const size_t take = std::min(k, songs.size());
  const size_t dim = songs.front().embedding.size();
  std::vector<double> acc(dim, 0.0);
  for (size_t s = 0; s < take; ++s) {
    if (songs[s].embedding.size() != dim) {
      throw DimensionError("aggregate_artist: inconsistent embedding dims");
    }
    for (size_t j = 0; j < dim; ++j) acc[j] += songs[s].embedding[j];
  }
  for (double& v : acc) v /= static_cast<double>(take);
  return acc;
}

// ---------------------------------------------------------------------------
// UiRM

namespace {
Matrix table_init(size_t rows, size_t cols, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(1 + cols));
  Matrix m(rows, cols);
  for (size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-limit, limit);
  return m;
}
}  // namespace

UirmModel init_uirm(std::vector<std::string> artist_ids, size_t dim, uint64_t seed) {
  UirmModel model;
  model.dim = dim;
  model.ids = std::move(artist_ids);
  for (size_t i = 0; i < model.ids.size(); ++i) {
    if (!model.index.emplace(model.ids[i], i).second) {
      throw DuplicateIdError("init_uirm: duplicate artist id '" + model.ids[i] + "'");
    }
  }
  Rng rng(seed);
  model.params.add("table", table_init(model.ids.size(), dim, rng));
  return model;
}

std::vector<double> uirm_lookup(const UirmModel& model, const std::string& artist_id) {
  auto it = model.index.find(artist_id);
  if (it == model.index.end()) {
    throw UnknownIdError("uirm_lookup: unknown artist id '" + artist_id + "'");
  }
  return model.params.value("table").row(it->second);
}

Var uirm_forward(Tape& tape, const UirmModel& model, const std::vector<size_t>& rows) {
  Var table = param(tape, model.params, "table");
  return tape.l2_normalize_rows(tape.gather_rows(table, rows));
}

// ---------------------------------------------------------------------------
// Metadata embedding

MetaEmbedder MetaEmbedder::build(const std::vector<EntityRecord>& catalog, const MetaDims& dims) {
  MetaEmbedder m;
  m.dims = dims;
  for (const auto& e : catalog) {
    m.genre_vocab.emplace(e.genre, m.genre_vocab.size());
    m.region_vocab.emplace(e.region, m.region_vocab.size());
  }
  return m;
}

size_t MetaEmbedder::genre_index(const std::string& g) const {
  auto it = genre_vocab.find(g);
  return it == genre_vocab.end() ? genre_vocab.size() : it->second;
}

size_t MetaEmbedder::region_index(const std::string& r) const {
  auto it = region_vocab.find(r);
  return it == region_vocab.end() ? region_vocab.size() : it->second;
}

void init_meta_tables(ParameterSet& ps, Rng& rng, const std::string& prefix,
                      const MetaEmbedder& meta) {
  ps.add(prefix + ".genre", table_init(meta.genre_vocab.size() + 1, meta.dims.genre, rng));
  ps.add(prefix + ".region", table_init(meta.region_vocab.size() + 1, meta.dims.region, rng));
  ps.add(prefix + ".pop", table_init(kPopularityBuckets, meta.dims.popularity, rng));
}

Var meta_embed(Tape& tape, const ParameterSet& ps, const std::string& prefix,
               const MetaEmbedder& meta, const EntityRecord& entity) {
  Var g = tape.gather_rows(param(tape, ps, prefix + ".genre"), {meta.genre_index(entity.genre)});
  Var r =
      tape.gather_rows(param(tape, ps, prefix + ".region"), {meta.region_index(entity.region)});
  if (entity.popularity < 0 || entity.popularity >= kPopularityBuckets) {
    throw ValidationError("meta_embed: popularity bucket out of range for '" + entity.id + "'");
  }
  Var p = tape.gather_rows(param(tape, ps, prefix + ".pop"),
                           {static_cast<size_t>(entity.popularity)});
  return tape.concat_cols(tape.concat_cols(g, r), p);
}

// ---------------------------------------------------------------------------
// GRM

void GrmConfig::validate() const {
  if (field_count < 2) throw ValidationError("GrmConfig: field_count must be >= 2");
  if (out_dim < 1 || field_dim < 1 || fusion_dim < 1 || mlp_hidden < 1) {
    throw ValidationError("GrmConfig: dims must be >= 1");
  }
  fusion_layer().validate();
  field_layer().validate();
}

GrmModel init_grm(const GrmConfig& cfg, MetaEmbedder meta, uint64_t seed) {
  cfg.validate();
  if (meta.dims.total() != cfg.meta_dims.total()) {
    throw ValidationError("init_grm: meta dims disagree with config");
  }
  GrmModel model;
  model.cfg = cfg;
  model.meta = std::move(meta);
  Rng rng(seed);
  ParameterSet& ps = model.params;

  init_linear(ps, rng, "proj.c", cfg.content_dim, cfg.fusion_dim);
  init_linear(ps, rng, "proj.u", cfg.interaction_dim, cfg.fusion_dim);
  init_linear(ps, rng, "proj.m", cfg.meta_dims.total(), cfg.fusion_dim);
  ps.add("missing_u", table_init(1, cfg.interaction_dim, rng));
  init_encoder_layer(ps, rng, "fuse.0", cfg.fusion_layer());
  init_encoder_layer(ps, rng, "fuse.1", cfg.fusion_layer());
  init_linear(ps, rng, "embed", 3 * cfg.fusion_dim, cfg.embed_dim());
  init_encoder_layer(ps, rng, "fieldenc", cfg.field_layer());
  init_mlp(ps, rng, "out",
           MlpSpec{{cfg.embed_dim() + cfg.field_dim, cfg.mlp_hidden, cfg.out_dim}});
  init_meta_tables(ps, rng, "meta", model.meta);
  return model;
}

Matrix feature_crossing_reference(const Matrix& fields) {
  Matrix out(1, fields.cols());
  for (size_t p = 0; p < fields.rows(); ++p) {
    for (size_t q = p + 1; q < fields.rows(); ++q) {
      for (size_t j = 0; j < fields.cols(); ++j) out(0, j) += fields(p, j) * fields(q, j);
    }
  }
  return out;
}

Var grm_forward(Tape& tape, const GrmModel& model, Var e_c, std::optional<Var> e_u, Var e_m) {
  const GrmConfig& cfg = model.cfg;
  const ParameterSet& ps = model.params;
  if (tape.value(e_c).cols() != cfg.content_dim || tape.value(e_c).rows() != 1) {
    throw DimensionError("grm_forward: e_c must be 1 x content_dim");
  }
  if (e_u && (tape.value(*e_u).cols() != cfg.interaction_dim || tape.value(*e_u).rows() != 1)) {
    throw DimensionError("grm_forward: e_u must be 1 x interaction_dim");
  }
  if (tape.value(e_m).cols() != cfg.meta_dims.total() || tape.value(e_m).rows() != 1) {
    throw DimensionError("grm_forward: e_m must be 1 x meta_dims.total()");
  }

  Var u_input = e_u ? *e_u : param(tape, ps, "missing_u");
  Var tok_c = linear_forward(tape, ps, "proj.c", e_c);
  Var tok_u = linear_forward(tape, ps, "proj.u", u_input);
  Var tok_m = linear_forward(tape, ps, "proj.m", e_m);

  Var tokens = tape.concat_rows({tok_c, tok_u, tok_m});
  tokens = encoder_layer_forward(tape, ps, "fuse.0", cfg.fusion_layer(), tokens);
  tokens = encoder_layer_forward(tape, ps, "fuse.1", cfg.fusion_layer(), tokens);

  Var flat = tape.reshape(tokens, 1, 3 * cfg.fusion_dim);
  Var embed = linear_forward(tape, ps, "embed", flat);  // 1 x D

  Var fields = tape.reshape(embed, cfg.field_count, cfg.field_dim);
  Var weighted = encoder_layer_forward(tape, ps, "fieldenc", cfg.field_layer(), fields);

  // Pairwise crossing via 0.5 * ((sum_p x_p)^2 - sum_p x_p^2).
  Var srow = tape.sum_rows(weighted);
  Var cross =
      tape.scale(tape.sub(tape.hadamard(srow, srow), tape.sum_rows(tape.hadamard(weighted, weighted))),
                 0.5);

  Var flat_fields = tape.reshape(weighted, 1, cfg.embed_dim());
  Var second_order = tape.concat_cols(flat_fields, cross);

  Var out = mlp_forward(tape, ps, "out",
                        MlpSpec{{cfg.embed_dim() + cfg.field_dim, cfg.mlp_hidden, cfg.out_dim}},
                        second_order);
  return tape.l2_normalize_rows(out);
}

Var grm_forward_entity(Tape& tape, const GrmModel& model, Var e_c, std::optional<Var> e_u,
                       const EntityRecord& entity) {
  Var e_m = meta_embed(tape, model.params, "meta", model.meta, entity);
  return grm_forward(tape, model, e_c, e_u, e_m);
}

// ---------------------------------------------------------------------------
// Catalog encoding

EmbeddingMatrix encode_catalog_cbrm(const CbrmModel& model, const DatasetBundle& bundle,
                                    size_t agg_top_k) {
  const std::vector<std::string> ids = bundle.task_ids();
  EmbeddingMatrix out = EmbeddingMatrix::create(ids, model.cfg.embed_dim);

  if (bundle.task_kind == EntityKind::music) {
    for (const auto& id : ids) {
      const EntityRecord& e = bundle.entity(id);
      try {
        out.set_row(id, cbrm_encode(model, e.content));
      } catch (const Error& err) {
        throw Error("encode_catalog_cbrm: entity '" + id + "': " + err.what());
      }
    }
    return out;
  }

  for (const auto& id : ids) {
    std::vector<std::string> songs = bundle.music_of_artist(id);
    std::vector<SongEmbedding> embs;
    embs.reserve(songs.size());
    for (const auto& sid : songs) {
      const EntityRecord& song = bundle.entity(sid);
      embs.push_back(SongEmbedding{sid, cbrm_encode(model, song.content), song.popularity});
    }
    std::vector<double> row;
    if (embs.empty()) {
      // Artist with no songs: fall back to its own content features.
      row = cbrm_encode(model, bundle.entity(id).content);
    } else {
      row = aggregate_artist(std::move(embs), agg_top_k);
    }
    try {
      out.set_row(id, l2_normalized(row));
    } catch (const Error& err) {
      throw Error("encode_catalog_cbrm: entity '" + id + "': " + err.what());
    }
  }
  return out;
}

EmbeddingMatrix encode_catalog_uirm(const UirmModel& model, const std::vector<std::string>* ids) {
  const std::vector<std::string>& keep = ids ? *ids : model.ids;
  EmbeddingMatrix out = EmbeddingMatrix::create(keep, model.dim);
  for (const auto& id : keep) {
    out.set_row(id, l2_normalized(uirm_lookup(model, id)));
  }
  return out;
}

EmbeddingMatrix encode_catalog_grm(const GrmModel& model, const DatasetBundle& bundle,
                                   const EmbeddingMatrix& e_c, const EmbeddingMatrix* e_u) {
  if (e_c.dim() != model.cfg.content_dim) {
    throw DimensionError("encode_catalog_grm: content embedding dim " +
                         std::to_string(e_c.dim()) + " != config content_dim " +
                         std::to_string(model.cfg.content_dim));
  }
  if (e_u && e_u->dim() != model.cfg.interaction_dim) {
    throw DimensionError("encode_catalog_grm: interaction embedding dim mismatch");
  }
  const std::vector<std::string> ids = bundle.task_ids();
  EmbeddingMatrix out = EmbeddingMatrix::create(ids, model.cfg.out_dim);

  // Chunked so parameters are leafed once per tape, not once per entity.
  constexpr size_t kChunk = 128;
  for (size_t start = 0; start < ids.size(); start += kChunk) {
    Tape tape;
    const size_t end = std::min(start + kChunk, ids.size());
    for (size_t i = start; i < end; ++i) {
      const std::string& id = ids[i];
      if (!e_c.has(id)) {
        throw MissingUpstreamError("encode_catalog_grm: no content embedding for '" + id + "'");
      }
      std::optional<Var> u;
      if (e_u && e_u->has(id)) u = tape.leaf(Matrix::row_vector(e_u->row(id)));
      Var ec = tape.leaf(Matrix::row_vector(e_c.row(id)));
      Var eg = grm_forward_entity(tape, model, ec, u, bundle.entity(id));
      out.set_row(id, tape.value(eg).row(0));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[4] = {'L', 'T', 'F', 'R'};
constexpr uint8_t kCheckpointVersion = 2;

json vocab_to_json(const std::map<std::string, size_t>& vocab) {
  // Serialized as an array in index order so reload is exact.
  std::vector<std::string> ordered(vocab.size());
  for (const auto& [k, v] : vocab) ordered[v] = k;
  return json(ordered);
}

std::map<std::string, size_t> vocab_from_json(const json& j) {
  std::map<std::string, size_t> vocab;
  for (size_t i = 0; i < j.size(); ++i) vocab.emplace(j[i].get<std::string>(), i);
  return vocab;
}

void write_checkpoint(const std::string& path, const json& header, const ParameterSet& ps) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(kMagic, 4);
  binio::write_u8(out, kCheckpointVersion);
  const std::string hdr = header.dump();
  binio::write_u32(out, static_cast<uint32_t>(hdr.size()));
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  const auto names = ps.names();
  binio::write_u32(out, static_cast<uint32_t>(names.size()));
  for (const auto& name : names) {
    const Matrix& m = ps.value(name);
    binio::write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::write_u32(out, static_cast<uint32_t>(m.rows()));
    binio::write_u32(out, static_cast<uint32_t>(m.cols()));
    for (size_t i = 0; i < m.size(); ++i) binio::write_f64(out, m[i]);
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

json read_checkpoint(const std::string& path, const std::string& expect_model,
                     ParameterSet& ps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("'" + path + "': bad magic");
  }
  uint8_t version = binio::read_u8(in, "version");
  if (version != kCheckpointVersion) {
    throw ParseError("'" + path + "': unsupported checkpoint version " +
                     std::to_string(version));
  }
  uint32_t hdr_len = binio::read_u32(in, "header length");
  std::string hdr(hdr_len, '\0');
  if (!in.read(hdr.data(), hdr_len)) throw IoError("truncated file reading header");
  json header;
  try {
    header = json::parse(hdr);
  } catch (const json::exception& e) {
    throw ParseError("'" + path + "': bad header: " + e.what());
  }
  if (header.value("model", "") != expect_model) {
    throw ParseError("'" + path + "': checkpoint holds model '" +
                     header.value("model", "?") + "', expected '" + expect_model + "'");
  }
  uint32_t blocks = binio::read_u32(in, "block count");
  for (uint32_t b = 0; b < blocks; ++b) {
    uint32_t name_len = binio::read_u32(in, "block name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoError("truncated file reading block name");
    uint32_t rows = binio::read_u32(in, "block rows");
    uint32_t cols = binio::read_u32(in, "block cols");
    Matrix m(rows, cols);
    for (size_t i = 0; i < m.size(); ++i) m[i] = binio::read_f64(in, "block values");
    ps.add(name, std::move(m));
  }
  return header;
}

json meta_dims_to_json(const MetaDims& d) {
  return json{{"genre", d.genre}, {"region", d.region}, {"popularity", d.popularity}};
}

MetaDims meta_dims_from_json(const json& j) {
  MetaDims d;
  d.genre = j.at("genre").get<size_t>();
  d.region = j.at("region").get<size_t>();
  d.popularity = j.at("popularity").get<size_t>();
  return d;
}

}  // namespace

void save_cbrm(const CbrmModel& model, const std::string& path) {
  json header{{"model", "cbrm"},
              {"config",
               {{"content_dim", model.cfg.content_dim},
                {"hidden_dim", model.cfg.hidden_dim},
                {"embed_dim", model.cfg.embed_dim}}}};
  write_checkpoint(path, header, model.params);
}

CbrmModel load_cbrm(const std::string& path) {
  CbrmModel model;
  json header = read_checkpoint(path, "cbrm", model.params);
  const json& c = header.at("config");
  model.cfg.content_dim = c.at("content_dim").get<size_t>();
  model.cfg.hidden_dim = c.at("hidden_dim").get<size_t>();
  model.cfg.embed_dim = c.at("embed_dim").get<size_t>();
  return model;
}

void save_uirm(const UirmModel& model, const std::string& path) {
  json header{{"model", "uirm"}, {"config", {{"dim", model.dim}}}, {"ids", json(model.ids)}};
  write_checkpoint(path, header, model.params);
}

UirmModel load_uirm(const std::string& path) {
  UirmModel model;
  json header = read_checkpoint(path, "uirm", model.params);
  model.dim = header.at("config").at("dim").get<size_t>();
  model.ids = header.at("ids").get<std::vector<std::string>>();
  for (size_t i = 0; i < model.ids.size(); ++i) model.index.emplace(model.ids[i], i);
  const Matrix& table = model.params.value("table");
  if (table.rows() != model.ids.size() || table.cols() != model.dim) {
    throw ParseError("'" + path + "': table block does not match id list");
  }
  return model;
}

void save_grm(const GrmModel& model, const std::string& path) {
  const GrmConfig& c = model.cfg;
  json header{{"model", "grm"},
              {"config",
               {{"content_dim", c.content_dim},
                {"interaction_dim", c.interaction_dim},
                {"meta_dims", meta_dims_to_json(c.meta_dims)},
                {"fusion_dim", c.fusion_dim},
                {"fusion_heads", c.fusion_heads},
                {"fusion_ff", c.fusion_ff},
                {"field_count", c.field_count},
                {"field_dim", c.field_dim},
                {"field_heads", c.field_heads},
                {"field_ff", c.field_ff},
                {"mlp_hidden", c.mlp_hidden},
                {"out_dim", c.out_dim}}},
              {"genre_vocab", vocab_to_json(model.meta.genre_vocab)},
              {"region_vocab", vocab_to_json(model.meta.region_vocab)}};
  write_checkpoint(path, header, model.params);
}

GrmModel load_grm(const std::string& path) {
  GrmModel model;
  json header = read_checkpoint(path, "grm", model.params);
  const json& c = header.at("config");
  GrmConfig& cfg = model.cfg;
  cfg.content_dim = c.at("content_dim").get<size_t>();
  cfg.interaction_dim = c.at("interaction_dim").get<size_t>();
  cfg.meta_dims = meta_dims_from_json(c.at("meta_dims"));
  cfg.fusion_dim = c.at("fusion_dim").get<size_t>();
  cfg.fusion_heads = c.at("fusion_heads").get<size_t>();
  cfg.fusion_ff = c.at("fusion_ff").get<size_t>();
  cfg.field_count = c.at("field_count").get<size_t>();
  cfg.field_dim = c.at("field_dim").get<size_t>();
  cfg.field_heads = c.at("field_heads").get<size_t>();
  cfg.field_ff = c.at("field_ff").get<size_t>();
  cfg.mlp_hidden = c.at("mlp_hidden").get<size_t>();
  cfg.out_dim = c.at("out_dim").get<size_t>();
  model.meta.dims = cfg.meta_dims;
  model.meta.genre_vocab = vocab_from_json(header.at("genre_vocab"));
  model.meta.region_vocab = vocab_from_json(header.at("region_vocab"));
  cfg.validate();
  return model;
}

}  // namespace ltfr
