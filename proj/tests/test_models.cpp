#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ltfr/error.hpp"
#include "ltfr/losses.hpp"
#include "ltfr/models.hpp"
#include "ltfr/rng.hpp"
#include "ltfr/synthetic.hpp"

using namespace ltfr;
namespace fs = std::filesystem;

namespace {

GrmConfig tiny_grm_config() {
  GrmConfig cfg;
  cfg.content_dim = 6;
  cfg.interaction_dim = 5;
  cfg.meta_dims = MetaDims{2, 2, 2};
  cfg.fusion_dim = 8;
  cfg.fusion_heads = 2;
  cfg.fusion_ff = 12;
  cfg.field_count = 2;
  cfg.field_dim = 4;
  cfg.field_heads = 2;
  cfg.field_ff = 8;
  cfg.mlp_hidden = 10;
  cfg.out_dim = 6;
  return cfg;
}

EntityRecord meta_entity(const std::string& id, const std::string& genre,
                         const std::string& region, int pop) {
  EntityRecord e;
  e.id = id;
  e.kind = EntityKind::artist;
  e.genre = genre;
  e.region = region;
  e.popularity = pop;
  return e;
}

MetaEmbedder small_meta() {
  std::vector<EntityRecord> catalog = {meta_entity("a", "rock", "us", 1),
                                       meta_entity("b", "jazz", "uk", 3)};
  return MetaEmbedder::build(catalog, MetaDims{2, 2, 2});
}

std::vector<double> random_vec(size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

struct TempFile {
  fs::path path;
  explicit TempFile(const char* name) {
    path = fs::temp_directory_path() /
           (std::string(name) + std::to_string(reinterpret_cast<uintptr_t>(this)));
  }
  ~TempFile() { fs::remove(path); }
  std::string str() const { return path.string(); }
};

}  // namespace

TEST_CASE("cbrm outputs unit rows deterministically") {
  CbrmModel model = init_cbrm(CbrmConfig{12, 16, 8}, 3);
  Rng rng(5);
  std::vector<double> content = random_vec(12, rng);
  std::vector<double> e1 = cbrm_encode(model, content);
  std::vector<double> e2 = cbrm_encode(model, content);
  CHECK(e1 == e2);
  CHECK(std::abs(l2_norm(e1) - 1.0) < 1e-12);

  Matrix batch(5, 12);
  for (size_t i = 0; i < 5; ++i) batch.set_row(i, random_vec(12, rng));
  Matrix out = cbrm_encode_batch(model, batch);
  CHECK(out.rows() == 5);
  CHECK(out.cols() == 8);
  for (size_t i = 0; i < 5; ++i) CHECK(std::abs(l2_norm(out.row(i)) - 1.0) < 1e-12);
}

TEST_CASE("cbrm rejects wrong content dims") {
  CbrmModel model = init_cbrm(CbrmConfig{12, 16, 8}, 3);
  CHECK_THROWS_AS(cbrm_encode(model, std::vector<double>(7, 0.0)), DimensionError);
}

TEST_CASE("aggregate_artist takes the mean of the top-K most popular songs") {
  std::vector<SongEmbedding> songs = {
      {"s1", {1, 0}, 5},
      {"s2", {0, 1}, 4},
      {"s3", {9, 9}, 1},
  };
  auto agg = aggregate_artist(songs, 2);
  CHECK(agg == std::vector<double>{0.5, 0.5});

  CHECK(aggregate_artist(songs, 1) == std::vector<double>{1, 0});

  // K larger than the list: plain mean of everything.
  auto all = aggregate_artist(songs, 10);
  CHECK(all[0] == doctest::Approx(10.0 / 3.0));
  CHECK(all[1] == doctest::Approx(10.0 / 3.0));
}

TEST_CASE("aggregate_artist breaks popularity ties by ascending id") {
  std::vector<SongEmbedding> songs = {
      {"s2", {0, 1}, 5},
      {"s1", {1, 0}, 5},
  };
  CHECK(aggregate_artist(songs, 1) == std::vector<double>{1, 0});
}

TEST_CASE("aggregate_artist rejects an empty song list") {
  CHECK_THROWS_AS(aggregate_artist({}, 3), ValidationError);
}

TEST_CASE("uirm lookup returns the current row and rejects unknown ids") {
  UirmModel model = init_uirm({"a", "b"}, 4, 9);
  auto r1 = uirm_lookup(model, "a");
  auto r2 = uirm_lookup(model, "a");
  CHECK(r1 == r2);
  CHECK(r1.size() == 4);
  CHECK(r1 != uirm_lookup(model, "b"));
  CHECK_THROWS_AS(uirm_lookup(model, "zzz"), UnknownIdError);
}

TEST_CASE("meta embedding concatenates per-field rows") {
  MetaEmbedder meta = small_meta();
  ParameterSet ps;
  Rng rng(4);
  init_meta_tables(ps, rng, "meta", meta);

  Tape tape;
  Var a = meta_embed(tape, ps, "meta", meta, meta_entity("x", "rock", "us", 1));
  CHECK(tape.value(a).cols() == 6);  // 2 + 2 + 2

  Var b = meta_embed(tape, ps, "meta", meta, meta_entity("y", "rock", "us", 1));
  CHECK(tape.value(a).values() == tape.value(b).values());

  // Unseen genre goes through the OOV slot without an error.
  Var c = meta_embed(tape, ps, "meta", meta, meta_entity("z", "polka", "us", 1));
  CHECK(tape.value(c).cols() == 6);
  CHECK(tape.value(c).values() != tape.value(a).values());
}

TEST_CASE("feature crossing reference matches the hand example") {
  Matrix fields(2, 2, {1, 2, 3, 4});
  Matrix cf = feature_crossing_reference(fields);
  CHECK(cf(0, 0) == 3);
  CHECK(cf(0, 1) == 8);

  // All-zero fields annihilate the crossing.
  Matrix zero(3, 4);
  Matrix zcf = feature_crossing_reference(zero);
  for (size_t i = 0; i < zcf.size(); ++i) CHECK(zcf[i] == 0.0);
}

TEST_CASE("feature crossing is invariant under field permutation") {
  Rng rng(6);
  Matrix fields(4, 5);
  for (size_t i = 0; i < fields.size(); ++i) fields[i] = rng.normal();
  Matrix ref = feature_crossing_reference(fields);

  Matrix perm(4, 5);
  const size_t order[4] = {2, 0, 3, 1};
  for (size_t i = 0; i < 4; ++i) {
    for (size_t j = 0; j < 5; ++j) perm(i, j) = fields(order[i], j);
  }
  Matrix pref = feature_crossing_reference(perm);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(ref[i] == doctest::Approx(pref[i]));

  // The pairwise sum equals the half-square identity used in the model.
  for (size_t j = 0; j < 5; ++j) {
    double s = 0.0, sq = 0.0;
    for (size_t i = 0; i < 4; ++i) {
      s += fields(i, j);
      sq += fields(i, j) * fields(i, j);
    }
    CHECK(ref(0, j) == doctest::Approx(0.5 * (s * s - sq)));
  }
}

TEST_CASE("grm forward shape, normalization and missing token") {
  GrmConfig cfg = tiny_grm_config();
  GrmModel model = init_grm(cfg, small_meta(), 11);
  Rng rng(13);

  Tape tape;
  Var e_c = tape.leaf(Matrix::row_vector(random_vec(cfg.content_dim, rng)));
  Var e_u = tape.leaf(Matrix::row_vector(random_vec(cfg.interaction_dim, rng)));
  EntityRecord ent = meta_entity("q", "rock", "us", 2);

  Var with_u = grm_forward_entity(tape, model, e_c, e_u, ent);
  CHECK(tape.value(with_u).rows() == 1);
  CHECK(tape.value(with_u).cols() == cfg.out_dim);
  CHECK(std::abs(l2_norm(tape.value(with_u).row(0)) - 1.0) < 1e-12);

  Var without_u = grm_forward_entity(tape, model, e_c, std::nullopt, ent);
  CHECK(tape.value(without_u).values() != tape.value(with_u).values());

  // Same inputs, same outputs on a fresh tape.
  Tape tape2;
  Var e_c2 = tape2.leaf(tape.value(e_c));
  Var again = grm_forward_entity(tape2, model, e_c2, std::nullopt, ent);
  CHECK(tape2.value(again).values() == tape.value(without_u).values());
}

TEST_CASE("grm rejects dimension mismatches") {
  GrmConfig cfg = tiny_grm_config();
  GrmModel model = init_grm(cfg, small_meta(), 11);
  Tape tape;
  Var bad = tape.leaf(Matrix::row_vector({1.0, 2.0}));
  CHECK_THROWS_AS(
      grm_forward_entity(tape, model, bad, std::nullopt, meta_entity("q", "rock", "us", 2)),
      DimensionError);
}

TEST_CASE("grm with multi-relationship loss passes the gradient check at tiny dims") {
  GrmConfig cfg = tiny_grm_config();
  GrmModel model = init_grm(cfg, small_meta(), 19);
  Rng rng(23);

  const size_t batch = 3;
  std::vector<std::vector<double>> contents, interactions;
  std::vector<EntityRecord> ents;
  for (size_t i = 0; i < batch; ++i) {
    contents.push_back(random_vec(cfg.content_dim, rng));
    interactions.push_back(random_vec(cfg.interaction_dim, rng));
    ents.push_back(meta_entity("e" + std::to_string(i), i % 2 ? "rock" : "jazz",
                               i % 2 ? "us" : "uk", static_cast<int>(i % 3)));
  }
  std::vector<int> y_rel = {0, 0, kUnlabeled};
  std::vector<int> y_meta = {0, 1, 2};
  MsHyper h1{2.0, 50.0, 1.0};
  MsHyper h2{2.0, 40.0, 0.5};
  MiningConfig mining;

  // gradcheck perturbs model.params in place; the forward reads from it.
  auto model_fn = [&](ParameterSet& p, bool with_grads) {
    Tape tape;
    std::vector<Var> rows;
    for (size_t i = 0; i < batch; ++i) {
      Var ec = tape.leaf(Matrix::row_vector(contents[i]));
      std::optional<Var> eu;
      if (i != 2) eu = tape.leaf(Matrix::row_vector(interactions[i]));  // one missing token
      rows.push_back(grm_forward_entity(tape, model, ec, eu, ents[i]));
    }
    Var emb = tape.concat_rows(rows);
    Var sim = tape.matmul_nt(emb, emb);
    LossResult r = multi_relationship_loss(tape.value(sim), y_rel, y_meta, h1, h2, mining, 0.4);
    if (with_grads) {
      tape.backward(sim, r.grad_s);
      export_grads(tape, p);
    }
    return r.value;
  };
  double err = gradcheck(model_fn, model.params, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("encode_catalog shapes and determinism on a synthetic artist set") {
  SyntheticConfig scfg;
  scfg.n_artists = 40;
  scfg.n_users = 30;
  scfg.seed = 31;
  DatasetBundle bundle = generate_synthetic(scfg);

  CbrmModel cbrm = init_cbrm(CbrmConfig{scfg.content_dim, 16, 8}, 7);
  EmbeddingMatrix e_c = encode_catalog_cbrm(cbrm, bundle, 5);
  CHECK(e_c.count() == 40);
  CHECK(e_c.dim() == 8);
  for (const auto& id : e_c.ids) {
    CHECK(std::abs(l2_norm(e_c.row(id)) - 1.0) < 1e-12);
  }
  EmbeddingMatrix again = encode_catalog_cbrm(cbrm, bundle, 5);
  CHECK(e_c.values.values() == again.values.values());

  UirmModel uirm = init_uirm(bundle.ids_of_kind(EntityKind::artist), 5, 3);
  EmbeddingMatrix e_u = encode_catalog_uirm(uirm);
  CHECK(e_u.count() == 40);

  GrmConfig gcfg = tiny_grm_config();
  gcfg.content_dim = 8;
  gcfg.interaction_dim = 5;
  GrmModel grm = init_grm(gcfg, MetaEmbedder::build(bundle.entities, gcfg.meta_dims), 5);
  EmbeddingMatrix e_g = encode_catalog_grm(grm, bundle, e_c, &e_u);
  CHECK(e_g.count() == 40);
  CHECK(e_g.dim() == gcfg.out_dim);

  EmbeddingMatrix e_g2 = encode_catalog_grm(grm, bundle, e_c, &e_u);
  CHECK(e_g.values.values() == e_g2.values.values());
}

TEST_CASE("music task encodes with no interaction embeddings at all") {
  SyntheticConfig scfg;
  scfg.n_artists = 25;
  scfg.n_users = 20;
  scfg.task_kind = EntityKind::music;
  scfg.seed = 87;
  DatasetBundle bundle = generate_synthetic(scfg);

  CbrmModel cbrm = init_cbrm(CbrmConfig{scfg.content_dim, 16, 8}, 7);
  EmbeddingMatrix e_c = encode_catalog_cbrm(cbrm, bundle, 5);
  CHECK(e_c.count() == bundle.ids_of_kind(EntityKind::music).size());

  GrmConfig gcfg = tiny_grm_config();
  gcfg.content_dim = 8;
  GrmModel grm = init_grm(gcfg, MetaEmbedder::build(bundle.entities, gcfg.meta_dims), 5);
  EmbeddingMatrix e_g = encode_catalog_grm(grm, bundle, e_c, nullptr);
  CHECK(e_g.count() == e_c.count());
  for (const auto& id : e_g.ids) {
    CHECK(std::abs(l2_norm(e_g.row(id)) - 1.0) < 1e-12);
  }
}

TEST_CASE("checkpoints round-trip bit-exact") {
  TempFile f("ckpt");

  CbrmModel cbrm = init_cbrm(CbrmConfig{12, 16, 8}, 3);
  save_cbrm(cbrm, f.str());
  CbrmModel cbrm2 = load_cbrm(f.str());
  CHECK(cbrm2.cfg.embed_dim == 8);
  for (const auto& name : cbrm.params.names()) {
    CHECK(cbrm.params.value(name).values() == cbrm2.params.value(name).values());
  }

  UirmModel uirm = init_uirm({"a", "b", "c"}, 4, 9);
  save_uirm(uirm, f.str());
  UirmModel uirm2 = load_uirm(f.str());
  CHECK(uirm2.ids == uirm.ids);
  CHECK(uirm2.params.value("table").values() == uirm.params.value("table").values());

  GrmModel grm = init_grm(tiny_grm_config(), small_meta(), 11);
  save_grm(grm, f.str());
  GrmModel grm2 = load_grm(f.str());
  CHECK(grm2.cfg.out_dim == grm.cfg.out_dim);
  CHECK(grm2.meta.genre_vocab == grm.meta.genre_vocab);
  for (const auto& name : grm.params.names()) {
    CHECK(grm.params.value(name).values() == grm2.params.value(name).values());
  }

  // A checkpoint of one model kind will not load as another.
  CHECK_THROWS_AS(load_cbrm(f.str()), ParseError);
}
