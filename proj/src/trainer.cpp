#include "ltfr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ltfr/error.hpp"
#include "ltfr/losses.hpp"
#include "ltfr/nn.hpp"
#include "ltfr/tape.hpp"

namespace ltfr {

using nlohmann::json;

TrainStage parse_stage(const std::string& name) {
  if (name == "cbrm") return TrainStage::cbrm;
  if (name == "uirm") return TrainStage::uirm;
  if (name == "grm") return TrainStage::grm;
  throw ValidationError("unknown stage '" + name + "' (expected cbrm, uirm or grm)");
}

std::string to_string(TrainStage stage) {
  switch (stage) {
    case TrainStage::cbrm: return "cbrm";
    case TrainStage::uirm: return "uirm";
    default: return "grm";
  }
}

std::string TrainLog::to_jsonl() const {
  std::ostringstream os;
  for (const auto& s : steps) {
    os << json{{"type", "step"}, {"step", s.step},   {"epoch", s.epoch},
               {"loss", s.loss}, {"ms", s.ms},       {"prior", s.prior}}
              .dump()
       << '\n';
  }
  for (const auto& v : validations) {
    os << json{{"type", "validation"}, {"epoch", v.epoch}, {"metric", v.metric},
               {"value", v.value}}
              .dump()
       << '\n';
  }
  os << json{{"type", "summary"},
             {"selection_metric", selection_metric},
             {"best_value", best_value},
             {"best_epoch", best_epoch},
             {"wall_seconds", wall_seconds}}
            .dump()
     << '\n';
  return os.str();
}

std::vector<RelationEdge> relations_within(const DatasetBundle& bundle, Split split) {
  std::vector<RelationEdge> out;
  for (const auto& r : bundle.relations) {
    if (bundle.split_of(r.src) == split && bundle.split_of(r.dst) == split) out.push_back(r);
  }
  return out;
}

std::optional<double> validation_hr_at_10(const EmbeddingMatrix& emb,
                                          const DatasetBundle& bundle, Split split) {
  const std::vector<std::string> ids = bundle.task_ids_in_split(split);
  if (ids.size() < 2) return std::nullopt;
  RelevanceMap relevance;
  for (const auto& r : relations_within(bundle, split)) {
    relevance[r.src].insert(r.dst);
    relevance[r.dst].insert(r.src);
  }
  if (relevance.empty()) return std::nullopt;
  EmbeddingMatrix view = emb.subset(ids);
  std::vector<RankedList> ranked;
  ranked.reserve(ids.size());
  for (const auto& id : ids) ranked.push_back(topk_retrieve(view, id, 10));
  return hit_ratio_at_k(ranked, relevance, 10);
}

namespace {

struct LossParts {
  double total = 0.0;
  double ms = 0.0;
  double prior = 0.0;
  Matrix grad_s;
};

// One metric-learning stage: sample a batch, embed it on a fresh tape, push
// the analytic dL/dS back through the tape, take an adaptive-moment step.
struct StageDriver {
  ParameterSet* params = nullptr;
  size_t steps_per_epoch = 1;
  std::function<std::vector<size_t>(Rng&)> sample;
  std::function<Var(Tape&, const std::vector<size_t>&)> embed;
  std::function<LossParts(const Matrix&, const std::vector<size_t>&)> loss;
  // (metric name, value, higher_is_better); nullopt disables selection.
  std::function<std::optional<std::tuple<std::string, double, bool>>()> validate;
};

TrainLog run_loop(StageDriver& driver, const Config& cfg) {
  const auto& tcfg = cfg.trainer;
  if (tcfg.epochs < 1) throw ValidationError("trainer.epochs must be >= 1");
  AdamConfig adam;
  adam.lr = tcfg.lr;

  TrainLog log;
  log.selection_metric = "final";
  Rng batch_rng = Rng(tcfg.seed).fork(0x6261746368ULL);

  const auto t0 = std::chrono::steady_clock::now();
  // Runaway reference: the largest loss seen in the first few steps (single
  // batches can legitimately mine nothing, so the very first value alone is
  // not a usable scale).
  const size_t warmup_steps = std::min<size_t>(10, driver.steps_per_epoch);
  double initial_loss = 0.0;
  size_t runaway_streak = 0;
  size_t step_counter = 0;

  std::optional<ParameterSet> best_params;
  double best_value = 0.0;
  size_t best_epoch = 0;

  for (size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    for (size_t s = 0; s < driver.steps_per_epoch; ++s) {
      const std::vector<size_t> batch = driver.sample(batch_rng);
      LossParts parts;
      try {
        Tape tape;
        Var emb = driver.embed(tape, batch);
        Var sim = tape.matmul_nt(emb, emb);
        parts = driver.loss(tape.value(sim), batch);
        if (!std::isfinite(parts.total)) {
          throw NonFiniteError("loss is not finite");
        }
        tape.backward(sim, parts.grad_s);
        export_grads(tape, *driver.params);
        adam_step(*driver.params, adam);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(std::string("training diverged: ") + e.what());
      }

      if (step_counter < warmup_steps) {
        initial_loss = std::max({initial_loss, parts.total, 1e-6});
      } else if (parts.total > 10.0 * initial_loss) {
        if (++runaway_streak >= 100) {
          throw DivergenceError("training diverged: loss exceeded 10x its initial value for "
                                "100 consecutive steps");
        }
      } else {
        runaway_streak = 0;
      }
      log.steps.push_back({++step_counter, epoch, parts.total, parts.ms, parts.prior});
    }

    const bool last_epoch = epoch == tcfg.epochs;
    if (driver.validate && (epoch % std::max<size_t>(tcfg.val_every, 1) == 0 || last_epoch)) {
      if (auto v = driver.validate()) {
        const auto& [name, value, higher] = *v;
        log.validations.push_back({epoch, name, value});
        const bool improved = !best_params.has_value() ||
                              (higher ? value > best_value : value < best_value);
        if (improved) {
          best_params = *driver.params;
          best_value = value;
          best_epoch = epoch;
          log.selection_metric = name;
        }
      }
    }
  }
  if (best_params) {
    *driver.params = std::move(*best_params);
    log.best_value = best_value;
    log.best_epoch = best_epoch;
  } else {
    log.best_epoch = tcfg.epochs;
    log.best_value = log.steps.empty() ? 0.0 : log.steps.back().loss;
  }
  log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

std::vector<int> labels_for(const LabelAssignment& assignment,
                            const std::vector<std::string>& ids) {
  std::vector<int> out(ids.size(), kUnlabeled);
  for (size_t i = 0; i < ids.size(); ++i) {
    auto it = assignment.labels.find(ids[i]);
    if (it != assignment.labels.end()) out[i] = it->second;
  }
  return out;
}

size_t steps_for_population(size_t population, size_t batch) {
  return std::max<size_t>(1, (population + batch - 1) / batch);
}

// Content embeddings for a specific id set (artists aggregate their songs).
EmbeddingMatrix cbrm_embeddings_for(const CbrmModel& model, const DatasetBundle& bundle,
                                    const std::vector<std::string>& ids, size_t agg_top_k) {
  EmbeddingMatrix out = EmbeddingMatrix::create(ids, model.cfg.embed_dim);
  for (const auto& id : ids) {
    const EntityRecord& e = bundle.entity(id);
    if (e.kind == EntityKind::music) {
      out.set_row(id, cbrm_encode(model, e.content));
      continue;
    }
    std::vector<SongEmbedding> embs;
    for (const auto& sid : bundle.music_of_artist(id)) {
      const EntityRecord& song = bundle.entity(sid);
      embs.push_back(SongEmbedding{sid, cbrm_encode(model, song.content), song.popularity});
    }
    std::vector<double> row = embs.empty()
                                  ? cbrm_encode(model, e.content)
                                  : l2_normalized(aggregate_artist(std::move(embs), agg_top_k));
    out.set_row(id, row);
  }
  return out;
}

StageOutput train_cbrm_stage(const Config& cfg, const DatasetBundle& bundle) {
  // Ground-truth labels over train-split artists feed the "similar artists
  // share content labels" merge; the music task has no artist edges.
  LabelAssignment artist_gt;
  if (bundle.task_kind == EntityKind::artist) {
    artist_gt = build_ground_truth_labels(relations_within(bundle, Split::train),
                                          bundle.ids_of_kind(EntityKind::artist));
  } else {
    artist_gt.kind = 'A';
    for (const auto& id : bundle.ids_of_kind(EntityKind::artist)) artist_gt.unlabeled.insert(id);
  }
  const LabelAssignment y_c = build_content_labels(bundle, artist_gt);

  std::vector<std::string> population;
  for (const auto& e : bundle.entities) {
    if (e.kind == EntityKind::music && bundle.split_of(e.id) == Split::train) {
      population.push_back(e.id);
    }
  }
  if (population.empty()) throw ValidationError("train_stage(cbrm): no train-split music");
  const std::vector<int> labels = labels_for(y_c, population);

  StageOutput out;
  out.cbrm = init_cbrm(cfg.cbrm_config(), Rng(cfg.trainer.seed).fork(0xcb).next_u64());
  CbrmModel& model = *out.cbrm;
  if (bundle.content_dim() != model.cfg.content_dim) {
    throw ValidationError("train_stage(cbrm): dataset content dim " +
                          std::to_string(bundle.content_dim()) + " != config content_dim " +
                          std::to_string(model.cfg.content_dim));
  }

  const size_t batch_size = cfg.trainer.batch_classes * cfg.trainer.per_class;
  StageDriver driver;
  driver.params = &model.params;
  driver.steps_per_epoch = steps_for_population(population.size(), batch_size);
  driver.sample = [&](Rng& rng) {
    return sample_batch(labels, cfg.trainer.batch_classes, cfg.trainer.per_class, 0.0, rng);
  };
  driver.embed = [&](Tape& tape, const std::vector<size_t>& batch) {
    Matrix contents(batch.size(), model.cfg.content_dim);
    for (size_t i = 0; i < batch.size(); ++i) {
      contents.set_row(i, bundle.entity(population[batch[i]]).content);
    }
    return cbrm_forward(tape, model, tape.leaf(std::move(contents)));
  };
  driver.loss = [&](const Matrix& S, const std::vector<size_t>& batch) {
    std::vector<int> y(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) y[i] = labels[batch[i]];
    LossResult r = ms_loss(S, y, cfg.loss.relation, cfg.mining);
    return LossParts{r.value, r.value, 0.0, std::move(r.grad_s)};
  };
  driver.validate = [&]() -> std::optional<std::tuple<std::string, double, bool>> {
    auto ids = bundle.task_ids_in_split(Split::val);
    if (ids.empty()) return std::nullopt;
    EmbeddingMatrix emb = cbrm_embeddings_for(model, bundle, ids, cfg.model.agg_top_k);
    auto hr = validation_hr_at_10(emb, bundle, Split::val);
    if (!hr) return std::nullopt;
    return std::make_tuple(std::string("val_hr@10"), *hr, true);
  };

  out.log = run_loop(driver, cfg);
  out.embeddings = encode_catalog_cbrm(model, bundle, cfg.model.agg_top_k);
  return out;
}

StageOutput train_uirm_stage(const Config& cfg, const DatasetBundle& bundle) {
  const std::vector<std::string> all_artists = bundle.ids_of_kind(EntityKind::artist);
  if (all_artists.empty()) throw ValidationError("train_stage(uirm): no artists in catalog");
  if (bundle.interactions.empty()) {
    throw ValidationError("train_stage(uirm): no interactions to learn from");
  }
  const LabelAssignment y_u =
      build_user_labels(bundle.interactions, all_artists, cfg.co_interaction);

  std::set<std::string> with_interactions;
  for (const auto& r : bundle.interactions) with_interactions.insert(r.artist_id);
  std::vector<std::string> population(with_interactions.begin(), with_interactions.end());
  const std::vector<int> labels = labels_for(y_u, population);

  StageOutput out;
  out.uirm = init_uirm(all_artists, cfg.model.uirm_dim,
                       Rng(cfg.trainer.seed).fork(0xa1).next_u64());
  UirmModel& model = *out.uirm;

  std::vector<size_t> table_row(population.size());
  for (size_t i = 0; i < population.size(); ++i) table_row[i] = model.index.at(population[i]);

  // Deterministic validation batches over val-split artists.
  struct ValBatch {
    std::vector<size_t> rows;
    std::vector<int> labels;
  };
  std::vector<ValBatch> val_batches;
  {
    std::vector<std::string> val_pop;
    for (const auto& id : population) {
      if (bundle.split_of(id) == Split::val) val_pop.push_back(id);
    }
    std::vector<int> val_labels = labels_for(y_u, val_pop);
    bool has_pair = false;
    std::map<int, int> counts;
    for (int l : val_labels) {
      if (l != kUnlabeled && ++counts[l] >= 2) has_pair = true;
    }
    if (has_pair) {
      Rng vrng = Rng(cfg.trainer.seed).fork(0x76616cULL);
      for (int b = 0; b < 4; ++b) {
        auto batch = sample_batch(val_labels, std::min<size_t>(cfg.trainer.batch_classes, 2),
                                  cfg.trainer.per_class, 0.0, vrng);
        ValBatch vb;
        for (size_t idx : batch) {
          vb.rows.push_back(model.index.at(val_pop[idx]));
          vb.labels.push_back(val_labels[idx]);
        }
        val_batches.push_back(std::move(vb));
      }
    }
  }

  const size_t batch_size = cfg.trainer.batch_classes * cfg.trainer.per_class;
  StageDriver driver;
  driver.params = &model.params;
  driver.steps_per_epoch = steps_for_population(population.size(), batch_size);
  driver.sample = [&](Rng& rng) {
    return sample_batch(labels, cfg.trainer.batch_classes, cfg.trainer.per_class, 0.0, rng);
  };
  driver.embed = [&](Tape& tape, const std::vector<size_t>& batch) {
    std::vector<size_t> rows(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) rows[i] = table_row[batch[i]];
    return uirm_forward(tape, model, rows);
  };
  driver.loss = [&](const Matrix& S, const std::vector<size_t>& batch) {
    std::vector<int> y(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) y[i] = labels[batch[i]];
    LossResult r = ms_loss(S, y, cfg.loss.relation, cfg.mining);
    return LossParts{r.value, r.value, 0.0, std::move(r.grad_s)};
  };
  driver.validate = [&]() -> std::optional<std::tuple<std::string, double, bool>> {
    if (val_batches.empty()) return std::nullopt;
    double total = 0.0;
    for (const auto& vb : val_batches) {
      Tape tape;
      Var emb = uirm_forward(tape, model, vb.rows);
      Matrix S = tape.value(tape.matmul_nt(emb, emb));
      total += ms_loss(S, vb.labels, cfg.loss.relation, cfg.mining).value;
    }
    return std::make_tuple(std::string("val_loss"),
                           total / static_cast<double>(val_batches.size()), false);
  };

  out.log = run_loop(driver, cfg);
  out.embeddings = encode_catalog_uirm(model, &population);
  return out;
}

StageOutput train_grm_stage(const Config& cfg, const DatasetBundle& bundle,
                            const EmbeddingMatrix* e_c, const EmbeddingMatrix* e_u) {
  if (!e_c) {
    throw MissingUpstreamError("train_stage(grm): content embeddings (e_c) are required");
  }
  const std::vector<std::string> task_ids = bundle.task_ids();
  for (const auto& id : task_ids) {
    if (!e_c->has(id)) {
      throw MissingUpstreamError("train_stage(grm): content embeddings missing entity '" + id +
                                 "'");
    }
  }
  GrmConfig gcfg = cfg.grm_config();
  if (e_c->dim() != gcfg.content_dim) {
    throw MissingUpstreamError("train_stage(grm): content embedding dim " +
                               std::to_string(e_c->dim()) + " != expected " +
                               std::to_string(gcfg.content_dim));
  }
  if (e_u && e_u->dim() != gcfg.interaction_dim) {
    throw MissingUpstreamError("train_stage(grm): interaction embedding dim mismatch");
  }

  const LabelAssignment y_a = build_ground_truth_labels(relations_within(bundle, Split::train),
                                                        task_ids);
  std::vector<EntityRecord> task_entities;
  for (const auto& id : task_ids) task_entities.push_back(bundle.entity(id));
  const LabelAssignment y_p = build_meta_consistency_labels(task_entities);

  std::vector<std::string> population = bundle.task_ids_in_split(Split::train);
  if (population.empty()) throw ValidationError("train_stage(grm): empty train split");
  const std::vector<int> rel_labels = labels_for(y_a, population);
  const std::vector<int> meta_labels = labels_for(y_p, population);

  StageOutput out;
  out.grm = init_grm(gcfg, MetaEmbedder::build(bundle.entities, gcfg.meta_dims),
                     Rng(cfg.trainer.seed).fork(0x9eULL).next_u64());
  GrmModel& model = *out.grm;

  auto embed_ids = [&](Tape& tape, const std::vector<std::string>& ids) {
    std::vector<Var> rows;
    rows.reserve(ids.size());
    for (const auto& id : ids) {
      Var ec = tape.leaf(Matrix::row_vector(e_c->row(id)));
      std::optional<Var> eu;
      if (e_u && e_u->has(id)) eu = tape.leaf(Matrix::row_vector(e_u->row(id)));
      rows.push_back(grm_forward_entity(tape, model, ec, eu, bundle.entity(id)));
    }
    return tape.concat_rows(rows);
  };

  const size_t batch_size = cfg.trainer.batch_classes * cfg.trainer.per_class;
  StageDriver driver;
  driver.params = &model.params;
  driver.steps_per_epoch = steps_for_population(population.size(), batch_size);
  driver.sample = [&](Rng& rng) {
    return sample_batch(rel_labels, cfg.trainer.batch_classes, cfg.trainer.per_class,
                        cfg.trainer.tail_mix, rng);
  };
  driver.embed = [&](Tape& tape, const std::vector<size_t>& batch) {
    std::vector<std::string> ids(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) ids[i] = population[batch[i]];
    return embed_ids(tape, ids);
  };
  driver.loss = [&](const Matrix& S, const std::vector<size_t>& batch) {
    std::vector<int> y_rel(batch.size()), y_meta(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
      y_rel[i] = rel_labels[batch[i]];
      y_meta[i] = meta_labels[batch[i]];
    }
    LossResult rel = ms_loss(S, y_rel, cfg.loss.relation, cfg.mining);
    if (cfg.loss.lambda == 0.0) {
      return LossParts{rel.value, rel.value, 0.0, std::move(rel.grad_s)};
    }
    LossResult prior = prior_loss(S, y_meta, cfg.loss.prior);
    LossParts parts;
    parts.ms = rel.value;
    parts.prior = prior.value;
    parts.total = rel.value + cfg.loss.lambda * prior.value;
    parts.grad_s = std::move(rel.grad_s);
    add_scaled_in_place(parts.grad_s, prior.grad_s, cfg.loss.lambda);
    return parts;
  };
  driver.validate = [&]() -> std::optional<std::tuple<std::string, double, bool>> {
    auto ids = bundle.task_ids_in_split(Split::val);
    if (ids.empty()) return std::nullopt;
    EmbeddingMatrix emb = EmbeddingMatrix::create(ids, model.cfg.out_dim);
    constexpr size_t kChunk = 128;
    for (size_t start = 0; start < ids.size(); start += kChunk) {
      Tape tape;
      const size_t end = std::min(start + kChunk, ids.size());
      std::vector<std::string> chunk(ids.begin() + start, ids.begin() + end);
      Var rows = embed_ids(tape, chunk);
      for (size_t i = 0; i < chunk.size(); ++i) {
        emb.set_row(chunk[i], tape.value(rows).row(i));
      }
    }
    auto hr = validation_hr_at_10(emb, bundle, Split::val);
    if (!hr) return std::nullopt;
    return std::make_tuple(std::string("val_hr@10"), *hr, true);
  };

  out.log = run_loop(driver, cfg);
  out.embeddings = encode_catalog_grm(model, bundle, *e_c, e_u);
  return out;
}

}  // namespace

StageOutput train_stage(TrainStage stage, const Config& cfg, const DatasetBundle& bundle,
                        const EmbeddingMatrix* e_c, const EmbeddingMatrix* e_u) {
  switch (stage) {
    case TrainStage::cbrm: return train_cbrm_stage(cfg, bundle);
    case TrainStage::uirm: return train_uirm_stage(cfg, bundle);
    default: return train_grm_stage(cfg, bundle, e_c, e_u);
  }
}

std::vector<AblationRow> run_ablation(const DatasetBundle& bundle, const Config& base,
                                      const std::vector<AblationVariant>& variants) {
  const LabelAssignment global_gt =
      build_ground_truth_labels(bundle.relations, bundle.task_ids());
  const std::set<std::string> long_tail = long_tail_flags(global_gt);

  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    Config cfg = base;
    if (variant.tweak) variant.tweak(cfg);

    StageOutput cbrm = train_stage(TrainStage::cbrm, cfg, bundle);
    const EmbeddingMatrix* scored = &cbrm.embeddings;

    std::optional<StageOutput> uirm;
    std::optional<StageOutput> grm;
    if (variant.model == "uirm" || variant.model == "grm") {
      const bool want_uirm =
          bundle.task_kind == EntityKind::artist && !bundle.interactions.empty();
      if (want_uirm) uirm = train_stage(TrainStage::uirm, cfg, bundle);
      if (variant.model == "uirm") {
        if (!uirm) throw ValidationError("run_ablation: uirm variant needs interactions");
        scored = &uirm->embeddings;
      } else {
        grm = train_stage(TrainStage::grm, cfg, bundle, &cbrm.embeddings,
                          uirm ? &uirm->embeddings : nullptr);
        scored = &grm->embeddings;
      }
    } else if (variant.model != "cbrm") {
      throw ValidationError("run_ablation: unknown model '" + variant.model + "'");
    }

    rows.push_back(AblationRow{
        variant.name, evaluate(*scored, bundle, long_tail, cfg.eval.ks,
                               cfg.eval.strict_consistent, Split::test)});
  }
  return rows;
}

std::string ablation_to_table(const std::vector<AblationRow>& rows, size_t k) {
  std::ostringstream os;
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-18s %10s %10s %12s %14s %8s\n", "variant",
                ("hr@" + std::to_string(k)).c_str(), "map",
                ("ndcg@" + std::to_string(k)).c_str(),
                ("cons@" + std::to_string(k)).c_str(), "lt_cons");
  os << buf;
  for (const auto& row : rows) {
    const auto& r = row.report;
    auto get = [&](const std::map<size_t, double>& m) {
      auto it = m.find(k);
      return it == m.end() ? 0.0 : it->second;
    };
    std::snprintf(buf, sizeof buf, "%-18s %10.4f %10.4f %12.4f %14.4f %8.4f\n",
                  row.name.c_str(), get(r.all.hr), r.all.map, get(r.all.ndcg),
                  get(r.all.consistent), get(r.long_tail.consistent));
    os << buf;
  }
  return os.str();
}

}  // namespace ltfr
