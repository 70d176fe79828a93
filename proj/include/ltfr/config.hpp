#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ltfr/data.hpp"
#include "ltfr/losses.hpp"
#include "ltfr/models.hpp"
#include "ltfr/relations.hpp"

namespace ltfr {

// Whole-toolkit configuration. Every key has a default; the JSON config file
// may override any subset, and unknown keys are rejected outright so typos
// fail loudly. Command-line flags override the file.
struct Config {
  struct Data {
    SplitRatios ratios;       // 0.8 / 0.1 / 0.1
    uint64_t split_seed = 13;
  } data;

  struct Model {
    size_t content_dim = 32;  // D_c of ingested content features
    size_t cbrm_hidden = 64;
    size_t embed_dim = 32;    // D_e of content/interaction embeddings
    size_t uirm_dim = 32;
    size_t meta_genre_dim = 8;
    size_t meta_region_dim = 8;
    size_t meta_pop_dim = 8;
    size_t fusion_dim = 32;
    size_t fusion_heads = 2;
    size_t fusion_ff = 64;
    size_t field_count = 4;  // Z
    size_t field_dim = 16;   // F
    size_t field_heads = 2;
    size_t field_ff = 32;
    size_t grm_hidden = 64;
    size_t grm_out_dim = 64;
    size_t agg_top_k = 5;  // songs aggregated per artist
  } model;

  MiningConfig mining;  // delta 0.1, paper_min

  struct Loss {
    MsHyper relation{2.0, 50.0, 1.0};  // alpha1, beta1, gamma1
    MsHyper prior{2.0, 40.0, 0.8};     // alpha2, beta2, gamma2
    double lambda = 0.6;
  } loss;

  struct Trainer {
    size_t epochs = 30;
    double lr = 1e-3;
    size_t batch_classes = 8;  // P
    size_t per_class = 4;      // Q
    double tail_mix = 0.5;
    size_t val_every = 5;  // epochs between validation snapshots
    uint64_t seed = 1;
  } trainer;

  CoInteractionConfig co_interaction;

  struct Eval {
    std::vector<size_t> ks = {10, 50};
    bool strict_consistent = false;
  } eval;

  CbrmConfig cbrm_config() const;
  GrmConfig grm_config() const;
  MetaDims meta_dims() const;
};

// Strict JSON load: unknown sections or keys raise ValidationError naming
// the key; absent keys keep their defaults.
Config load_config_file(const std::string& path);
Config parse_config_json(const std::string& text, const std::string& origin);
// The full default document (useful as a starting point for edits).
std::string config_to_json(const Config& cfg);

}  // namespace ltfr
