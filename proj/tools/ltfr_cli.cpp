// Command-line front end: dataset generation, the three training stages,
// evaluation and similar-item recommendation.
//
// Exit codes: 0 ok, 1 unexpected error, 2 invalid flags, 3 I/O failure,
// 4 missing upstream artifact, 5 training divergence, 6 evaluation coverage
// failure, 7 unknown query id.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ltfr/config.hpp"
#include "ltfr/data.hpp"
#include "ltfr/error.hpp"
#include "ltfr/eval.hpp"
#include "ltfr/models.hpp"
#include "ltfr/relations.hpp"
#include "ltfr/synthetic.hpp"
#include "ltfr/trainer.hpp"

namespace fs = std::filesystem;
using namespace ltfr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitMissingUpstream = 4;
constexpr int kExitDivergence = 5;
constexpr int kExitCoverage = 6;
constexpr int kExitUnknownId = 7;

struct CommonOpts {
  std::string config_path;
  Config load() const {
    return config_path.empty() ? Config{} : load_config_file(config_path);
  }
};

DatasetBundle load_and_split(const std::string& dir, const Config& cfg) {
  DatasetBundle bundle = load_dataset(DatasetPaths::in_dir(dir));
  return split_dataset(std::move(bundle), cfg.data.ratios, cfg.data.split_seed);
}

int run_generate(const std::string& out_dir, size_t n_artists, double long_tail_frac,
                 uint64_t seed, size_t n_users, const std::string& task) {
  if (long_tail_frac < 0.0 || long_tail_frac >= 1.0) {
    std::cerr << "error: --long-tail-frac must be in [0, 1)\n";
    return kExitUsage;
  }
  if (n_artists < 1 || n_users < 1) {
    std::cerr << "error: --n-artists and --n-users must be >= 1\n";
    return kExitUsage;
  }
  if (task != "artist" && task != "music") {
    std::cerr << "error: --task must be artist or music\n";
    return kExitUsage;
  }
  SyntheticConfig cfg;
  cfg.n_artists = n_artists;
  cfg.n_users = n_users;
  cfg.seed = seed;
  cfg.task_kind = task == "music" ? EntityKind::music : EntityKind::artist;
  if (cfg.task_kind == EntityKind::music) {
    cfg.music_long_tail_target = long_tail_frac;
  } else {
    cfg.long_tail_target = long_tail_frac;
  }
  DatasetBundle bundle = generate_synthetic(cfg);
  write_dataset(bundle, out_dir);
  std::printf("generated %zu entities, %zu relations, %zu interactions into %s\n",
              bundle.entities.size(), bundle.relations.size(), bundle.interactions.size(),
              out_dir.c_str());
  std::printf("realized long-tail fraction: %.4f\n",
              realized_long_tail_fraction(bundle, bundle.task_kind));
  return kExitOk;
}

int run_train(const CommonOpts& common, const std::string& stage_name,
              const std::string& data_dir, const std::string& out_dir) {
  Config cfg = common.load();
  TrainStage stage = parse_stage(stage_name);
  DatasetBundle bundle = load_and_split(data_dir, cfg);
  fs::create_directories(out_dir);

  std::optional<EmbeddingMatrix> e_c;
  std::optional<EmbeddingMatrix> e_u;
  if (stage == TrainStage::grm) {
    const std::string e_c_path = out_dir + "/e_c.emb";
    if (!fs::exists(e_c_path)) {
      throw MissingUpstreamError("grm needs content embeddings at '" + e_c_path +
                                 "' (train the cbrm stage first)");
    }
    e_c = read_embeddings(e_c_path);
    const std::string e_u_path = out_dir + "/e_u.emb";
    if (fs::exists(e_u_path)) e_u = read_embeddings(e_u_path);
  }

  StageOutput out = train_stage(stage, cfg, bundle, e_c ? &*e_c : nullptr,
                                e_u ? &*e_u : nullptr);

  std::string ckpt_path = out_dir + "/" + stage_name + ".ckpt";
  std::string emb_path;
  switch (stage) {
    case TrainStage::cbrm:
      save_cbrm(*out.cbrm, ckpt_path);
      emb_path = out_dir + "/e_c.emb";
      break;
    case TrainStage::uirm:
      save_uirm(*out.uirm, ckpt_path);
      emb_path = out_dir + "/e_u.emb";
      break;
    case TrainStage::grm:
      save_grm(*out.grm, ckpt_path);
      emb_path = out_dir + "/e_g.emb";
      break;
  }
  write_embeddings(out.embeddings, emb_path);
  {
    std::ofstream log(out_dir + "/" + stage_name + "_log.jsonl", std::ios::binary);
    if (!log) throw IoError("cannot write training log");
    log << out.log.to_jsonl();
  }
  const double final_loss = out.log.steps.empty() ? 0.0 : out.log.steps.back().loss;
  std::printf("stage=%s steps=%zu final_loss=%.6f selection=%s best_epoch=%zu best=%.6f\n",
              stage_name.c_str(), out.log.steps.size(), final_loss,
              out.log.selection_metric.c_str(), out.log.best_epoch, out.log.best_value);
  return kExitOk;
}

int run_eval(const CommonOpts& common, const std::string& emb_path, const std::string& data_dir,
             const std::string& ks_csv, const std::string& report_path, bool strict) {
  Config cfg = common.load();
  std::vector<size_t> ks;
  if (!ks_csv.empty()) {
    std::stringstream ss(ks_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        ks.push_back(std::stoul(tok));
      } catch (const std::exception&) {
        std::cerr << "error: bad --k value '" << tok << "'\n";
        return kExitUsage;
      }
    }
  } else {
    ks = cfg.eval.ks;
  }

  DatasetBundle bundle = load_and_split(data_dir, cfg);
  EmbeddingMatrix emb = read_embeddings(emb_path);
  const LabelAssignment gt = build_ground_truth_labels(bundle.relations, bundle.task_ids());

  EvalReport report = evaluate(emb, bundle, long_tail_flags(gt), ks,
                               strict || cfg.eval.strict_consistent, Split::test);
  std::cout << report_to_table(report);
  const std::string out_path =
      report_path.empty() ? emb_path + ".report.json" : report_path;
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write report '" + out_path + "'");
  out << report_to_json(report) << '\n';
  std::printf("report written to %s\n", out_path.c_str());
  return kExitOk;
}

int run_recommend(const std::string& emb_path, const std::string& query, size_t k) {
  EmbeddingMatrix emb = read_embeddings(emb_path);
  RankedList ranked = topk_retrieve(emb, query, k);
  for (size_t i = 0; i < ranked.items.size(); ++i) {
    std::printf("%zu,%s,%.6f\n", i + 1, ranked.items[i].first.c_str(),
                ranked.items[i].second);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"long-tail-friendly similarity embeddings: train, evaluate, recommend"};
  app.require_subcommand(1);

  CommonOpts common;

  auto* gen = app.add_subcommand("generate", "write a calibrated synthetic dataset");
  std::string gen_out = "data";
  size_t gen_artists = 1000;
  double gen_tail = 0.3697;
  uint64_t gen_seed = 1;
  size_t gen_users = 1500;
  std::string gen_task = "artist";
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--n-artists", gen_artists, "number of artists");
  gen->add_option("--long-tail-frac", gen_tail, "target long-tail fraction");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--n-users", gen_users, "number of users");
  gen->add_option("--task", gen_task, "relation kind: artist or music");

  auto* train = app.add_subcommand("train", "train one stage (cbrm, uirm or grm)");
  std::string train_stage_name, train_data, train_out = "run";
  train->add_option("--stage", train_stage_name, "cbrm | uirm | grm")->required();
  train->add_option("--config", common.config_path, "JSON config file");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "artifact directory");

  auto* ev = app.add_subcommand("eval", "evaluate an embedding file on the test split");
  std::string eval_emb, eval_data, eval_ks, eval_report;
  bool eval_strict = false;
  ev->add_option("--embeddings", eval_emb, "embedding file")->required();
  ev->add_option("--data", eval_data, "dataset directory")->required();
  ev->add_option("--k", eval_ks, "comma-separated K values (default from config)");
  ev->add_option("--config", common.config_path, "JSON config file");
  ev->add_option("--report", eval_report, "JSON report path (default <embeddings>.report.json)");
  ev->add_flag("--strict-consistent", eval_strict, "full-tuple Consistent@K variant");

  auto* rec = app.add_subcommand("recommend", "print rank,id,score lines for a query");
  std::string rec_emb, rec_query;
  size_t rec_k = 10;
  rec->add_option("--embeddings", rec_emb, "embedding file")->required();
  rec->add_option("--query", rec_query, "query entity id")->required();
  rec->add_option("--k", rec_k, "number of recommendations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      return run_generate(gen_out, gen_artists, gen_tail, gen_seed, gen_users, gen_task);
    }
    if (train->parsed()) {
      return run_train(common, train_stage_name, train_data, train_out);
    }
    if (ev->parsed()) {
      return run_eval(common, eval_emb, eval_data, eval_ks, eval_report, eval_strict);
    }
    if (rec->parsed()) {
      return run_recommend(rec_emb, rec_query, rec_k);
    }
  } catch (const MissingUpstreamError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingUpstream;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const CoverageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitCoverage;
  } catch (const UnknownIdError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUnknownId;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitOk;
}
