#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ltfr/config.hpp"
#include "ltfr/data.hpp"
#include "ltfr/eval.hpp"
#include "ltfr/models.hpp"
#include "ltfr/relations.hpp"

namespace ltfr {

enum class TrainStage { cbrm, uirm, grm };

TrainStage parse_stage(const std::string& name);
std::string to_string(TrainStage stage);

struct TrainLog {
  struct Step {
    size_t step = 0;
    size_t epoch = 0;
    double loss = 0.0;
    double ms = 0.0;     // relation term
    double prior = 0.0;  // prior term (zero outside GRM)
  };
  struct Validation {
    size_t epoch = 0;
    std::string metric;
    double value = 0.0;
  };
  std::vector<Step> steps;
  std::vector<Validation> validations;
  std::string selection_metric;  // "val_hr@10", "val_loss" or "final"
  double best_value = 0.0;
  size_t best_epoch = 0;
  double wall_seconds = 0.0;  // excluded from the per-step records

  // One JSON object per line: the step records, then validation records,
  // then a summary record.
  std::string to_jsonl() const;
};

struct StageOutput {
  std::optional<CbrmModel> cbrm;
  std::optional<UirmModel> uirm;
  std::optional<GrmModel> grm;
  EmbeddingMatrix embeddings;  // encoded catalog from the selected epoch
  TrainLog log;
};

// Trains one stage. CbRM ignores the upstream arguments; GRM requires e_c
// (MissingUpstreamError otherwise) and treats entities absent from e_u as
// having no interaction history (learned missing token).
StageOutput train_stage(TrainStage stage, const Config& cfg, const DatasetBundle& bundle,
                        const EmbeddingMatrix* e_c = nullptr,
                        const EmbeddingMatrix* e_u = nullptr);

// Edges whose endpoints both sit in `split`.
std::vector<RelationEdge> relations_within(const DatasetBundle& bundle, Split split);

// HR@10 over `split` using only that split's edges; nullopt when no query
// has a relevant candidate there.
std::optional<double> validation_hr_at_10(const EmbeddingMatrix& emb,
                                          const DatasetBundle& bundle, Split split);

struct AblationVariant {
  std::string name;
  std::string model;  // "cbrm" | "uirm" | "grm": whose embeddings to score
  std::function<void(Config&)> tweak;  // applied to a copy of the base config
};

struct AblationRow {
  std::string name;
  EvalReport report;
};

// Runs each variant through the full pipeline (same seeds everywhere) and
// evaluates it on the test split.
std::vector<AblationRow> run_ablation(const DatasetBundle& bundle, const Config& base,
                                      const std::vector<AblationVariant>& variants);

std::string ablation_to_table(const std::vector<AblationRow>& rows, size_t k);

}  // namespace ltfr
