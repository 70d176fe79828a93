#include "ltfr/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ltfr/error.hpp"

namespace ltfr {

using nlohmann::json;

CbrmConfig Config::cbrm_config() const {
  CbrmConfig c;
  c.content_dim = model.content_dim;
  c.hidden_dim = model.cbrm_hidden;
  c.embed_dim = model.embed_dim;
  return c;
}

MetaDims Config::meta_dims() const {
  MetaDims d;
  d.genre = model.meta_genre_dim;
  d.region = model.meta_region_dim;
  d.popularity = model.meta_pop_dim;
  return d;
}

GrmConfig Config::grm_config() const {
  GrmConfig g;
  g.content_dim = model.embed_dim;      // consumes CbRM output
  g.interaction_dim = model.uirm_dim;   // consumes UiRM output
  g.meta_dims = meta_dims();
  g.fusion_dim = model.fusion_dim;
  g.fusion_heads = model.fusion_heads;
  g.fusion_ff = model.fusion_ff;
  g.field_count = model.field_count;
  g.field_dim = model.field_dim;
  g.field_heads = model.field_heads;
  g.field_ff = model.field_ff;
  g.mlp_hidden = model.grm_hidden;
  g.out_dim = model.grm_out_dim;
  return g;
}

namespace {

// Pulls a typed value out of `section` if present, erasing the key so that
// leftovers can be reported as unknown.
template <typename T>
void take(json& section, const char* key, T& out) {
  auto it = section.find(key);
  if (it == section.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: bad value for key '") + key + "'");
  }
  section.erase(it);
}

void reject_leftovers(const json& section, const std::string& name) {
  if (section.empty()) return;
  std::string keys;
  for (const auto& [k, v] : section.items()) {
    (void)v;
    keys += (keys.empty() ? "" : ", ") + k;
  }
  throw ValidationError("config: unknown key(s) in '" + name + "': " + keys);
}

}  // namespace

Config parse_config_json(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(origin + ": " + e.what());
  }
  if (!root.is_object()) throw ValidationError(origin + ": config must be a JSON object");

  Config cfg;

  if (root.contains("data")) {
    json s = root["data"];
    take(s, "train_ratio", cfg.data.ratios.train);
    take(s, "val_ratio", cfg.data.ratios.val);
    take(s, "test_ratio", cfg.data.ratios.test);
    take(s, "split_seed", cfg.data.split_seed);
    reject_leftovers(s, "data");
    root.erase("data");
  }
  if (root.contains("model")) {
    json s = root["model"];
    take(s, "content_dim", cfg.model.content_dim);
    take(s, "cbrm_hidden", cfg.model.cbrm_hidden);
    take(s, "embed_dim", cfg.model.embed_dim);
    take(s, "uirm_dim", cfg.model.uirm_dim);
    take(s, "meta_genre_dim", cfg.model.meta_genre_dim);
    take(s, "meta_region_dim", cfg.model.meta_region_dim);
    take(s, "meta_pop_dim", cfg.model.meta_pop_dim);
    take(s, "fusion_dim", cfg.model.fusion_dim);
    take(s, "fusion_heads", cfg.model.fusion_heads);
    take(s, "fusion_ff", cfg.model.fusion_ff);
    take(s, "field_count", cfg.model.field_count);
    take(s, "field_dim", cfg.model.field_dim);
    take(s, "field_heads", cfg.model.field_heads);
    take(s, "field_ff", cfg.model.field_ff);
    take(s, "grm_hidden", cfg.model.grm_hidden);
    take(s, "grm_out_dim", cfg.model.grm_out_dim);
    take(s, "agg_top_k", cfg.model.agg_top_k);
    reject_leftovers(s, "model");
    root.erase("model");
  }
  if (root.contains("mining")) {
    json s = root["mining"];
    take(s, "delta", cfg.mining.delta);
    std::string variant = "paper_min";
    take(s, "variant", variant);
    if (variant == "paper_min") {
      cfg.mining.variant = MiningConfig::Variant::paper_min;
    } else if (variant == "original_max") {
      cfg.mining.variant = MiningConfig::Variant::original_max;
    } else {
      throw ValidationError("config: mining.variant must be paper_min or original_max");
    }
    reject_leftovers(s, "mining");
    root.erase("mining");
  }
  if (root.contains("loss")) {
    json s = root["loss"];
    take(s, "alpha1", cfg.loss.relation.alpha);
    take(s, "beta1", cfg.loss.relation.beta);
    take(s, "gamma1", cfg.loss.relation.gamma);
    take(s, "alpha2", cfg.loss.prior.alpha);
    take(s, "beta2", cfg.loss.prior.beta);
    take(s, "gamma2", cfg.loss.prior.gamma);
    take(s, "lambda", cfg.loss.lambda);
    reject_leftovers(s, "loss");
    root.erase("loss");
  }
  if (root.contains("trainer")) {
    json s = root["trainer"];
    take(s, "epochs", cfg.trainer.epochs);
    take(s, "lr", cfg.trainer.lr);
    take(s, "batch_classes", cfg.trainer.batch_classes);
    take(s, "per_class", cfg.trainer.per_class);
    take(s, "tail_mix", cfg.trainer.tail_mix);
    take(s, "val_every", cfg.trainer.val_every);
    take(s, "seed", cfg.trainer.seed);
    reject_leftovers(s, "trainer");
    root.erase("trainer");
  }
  if (root.contains("co_interaction")) {
    json s = root["co_interaction"];
    std::string mode = "threshold";
    take(s, "mode", mode);
    if (mode == "threshold") {
      cfg.co_interaction.mode = CoInteractionConfig::Mode::threshold;
    } else if (mode == "top_k") {
      cfg.co_interaction.mode = CoInteractionConfig::Mode::top_k;
    } else if (mode == "combined") {
      cfg.co_interaction.mode = CoInteractionConfig::Mode::combined;
    } else {
      throw ValidationError("config: co_interaction.mode must be threshold, top_k or combined");
    }
    take(s, "threshold", cfg.co_interaction.threshold);
    take(s, "k", cfg.co_interaction.k);
    reject_leftovers(s, "co_interaction");
    root.erase("co_interaction");
  }
  if (root.contains("eval")) {
    json s = root["eval"];
    take(s, "ks", cfg.eval.ks);
    take(s, "strict_consistent", cfg.eval.strict_consistent);
    reject_leftovers(s, "eval");
    root.erase("eval");
  }
  reject_leftovers(root, "(top level)");

  if (cfg.eval.ks.empty()) throw ValidationError("config: eval.ks must not be empty");
  if (cfg.loss.lambda < 0.0) throw ValidationError("config: loss.lambda must be >= 0");
  cfg.loss.relation.validate();
  cfg.loss.prior.validate();
  return cfg;
}

Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str(), path);
}

std::string config_to_json(const Config& cfg) {
  json j;
  j["data"] = {{"train_ratio", cfg.data.ratios.train},
               {"val_ratio", cfg.data.ratios.val},
               {"test_ratio", cfg.data.ratios.test},
               {"split_seed", cfg.data.split_seed}};
  j["model"] = {{"content_dim", cfg.model.content_dim},
                {"cbrm_hidden", cfg.model.cbrm_hidden},
                {"embed_dim", cfg.model.embed_dim},
                {"uirm_dim", cfg.model.uirm_dim},
                {"meta_genre_dim", cfg.model.meta_genre_dim},
                {"meta_region_dim", cfg.model.meta_region_dim},
                {"meta_pop_dim", cfg.model.meta_pop_dim},
                {"fusion_dim", cfg.model.fusion_dim},
                {"fusion_heads", cfg.model.fusion_heads},
                {"fusion_ff", cfg.model.fusion_ff},
                {"field_count", cfg.model.field_count},
                {"field_dim", cfg.model.field_dim},
                {"field_heads", cfg.model.field_heads},
                {"field_ff", cfg.model.field_ff},
                {"grm_hidden", cfg.model.grm_hidden},
                {"grm_out_dim", cfg.model.grm_out_dim},
                {"agg_top_k", cfg.model.agg_top_k}};
  j["mining"] = {{"delta", cfg.mining.delta},
                 {"variant", cfg.mining.variant == MiningConfig::Variant::paper_min
                                 ? "paper_min"
                                 : "original_max"}};
  j["loss"] = {{"alpha1", cfg.loss.relation.alpha}, {"beta1", cfg.loss.relation.beta},
               {"gamma1", cfg.loss.relation.gamma}, {"alpha2", cfg.loss.prior.alpha},
               {"beta2", cfg.loss.prior.beta},      {"gamma2", cfg.loss.prior.gamma},
               {"lambda", cfg.loss.lambda}};
  j["trainer"] = {{"epochs", cfg.trainer.epochs},
                  {"lr", cfg.trainer.lr},
                  {"batch_classes", cfg.trainer.batch_classes},
                  {"per_class", cfg.trainer.per_class},
                  {"tail_mix", cfg.trainer.tail_mix},
                  {"val_every", cfg.trainer.val_every},
                  {"seed", cfg.trainer.seed}};
  std::string mode = "threshold";
  if (cfg.co_interaction.mode == CoInteractionConfig::Mode::top_k) mode = "top_k";
  if (cfg.co_interaction.mode == CoInteractionConfig::Mode::combined) mode = "combined";
  j["co_interaction"] = {
      {"mode", mode}, {"threshold", cfg.co_interaction.threshold}, {"k", cfg.co_interaction.k}};
  j["eval"] = {{"ks", cfg.eval.ks}, {"strict_consistent", cfg.eval.strict_consistent}};
  return j.dump(2);
}

}  // namespace ltfr
