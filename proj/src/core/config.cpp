// SPDX-License-Identifier: Apache-2.0

#include "crossmo/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "crossmo/errors.hpp"

namespace crossmo {
namespace {

using Json = nlohmann::ordered_json;

// A section binds JSON keys to struct fields in both directions.
class Section {
 public:
  template <class T>
  Section& field(const std::string& key, T& ref) {
    readers_[key] = [&ref, key](const Json& j) {
      try {
        ref = j.get<T>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("config key '" + key + "' has the wrong type");
      }
    };
    writers_.emplace_back([&ref, key](Json& j) { j[key] = ref; });
    return *this;
  }

  Section& section(const std::string& key, std::function<void(Section&)> bind) {
    readers_[key] = [bind, key](const Json& j) {
      if (!j.is_object()) throw ConfigError("config key '" + key + "' must be an object");
      Section s;
      bind(s);
      s.read(j, key + ".");
    };
    writers_.emplace_back([bind, key](Json& j) {
      Section s;
      bind(s);
      j[key] = s.write();
    });
    return *this;
  }

  void read(const Json& j, const std::string& prefix = "") const {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      auto r = readers_.find(it.key());
      if (r == readers_.end()) throw ConfigError("unknown config key '" + prefix + it.key() + "'");
      r->second(it.value());
    }
  }

  Json write() const {
    Json j = Json::object();
    for (const auto& w : writers_) w(j);
    return j;
  }

 private:
  std::map<std::string, std::function<void(const Json&)>> readers_;
  std::vector<std::function<void(Json&)>> writers_;
};

void bind_schedule(Section& s, StageSchedule& t) {
  s.field("lr", t.lr).field("batch", t.batch).field("steps", t.steps).field("clip_norm", t.clip_norm);
  s.field("final_lr_fraction", t.final_lr_fraction);
}

void bind(Section& root, RunConfig& c) {
  root.field("seed", c.seed);
  root.section("dataset", [&c](Section& s) {
    auto& d = c.dataset;
    s.field("container", d.container).field("seed", d.seed).field("species", d.species);
    s.field("records_per_pair", d.records_per_pair).field("min_length", d.min_length).field("max_length", d.max_length);
    s.field("morph_jitter", d.morph_jitter).field("split_seed", d.split_seed).field("holdout", d.holdout);
    s.field("holdout_count", d.holdout_count);
  });
  root.section("cgae", [&c](Section& s) {
    s.field("latent_dim", c.cgae.latent_dim).field("hidden", c.cgae.hidden).field("cond_proj", c.cgae.cond_proj);
    s.field("beta", c.cgae.beta);
    s.section("train", [&c](Section& t) { bind_schedule(t, c.cgae_train); });
  });
  root.section("ae", [&c](Section& s) {
    s.field("channels", c.ae.channels).field("latent_dim", c.ae.latent_dim).field("res_blocks", c.ae.res_blocks);
    s.field("lambda_morph_recon", c.ae.lambda_morph).field("normalize_inputs", c.ae.normalize_inputs);
    s.section("train", [&c](Section& t) { bind_schedule(t, c.ae_train); });
  });
  root.section("mcm", [&c](Section& s) {
    s.field("hidden", c.mcm.hidden);
    s.section("train", [&c](Section& t) { bind_schedule(t, c.mcm_train); });
  });
  root.section("gen", [&c](Section& s) {
    auto& g = c.gen;
    s.field("blocks", g.blocks).field("heads", g.heads).field("ffn_mult", g.ffn_mult);
    s.field("head_width", g.head_width).field("head_blocks", g.head_blocks).field("head_repeats", g.head_repeats);
    s.field("mask_ratio_min", g.mask_ratio_min).field("mask_ratio_max", g.mask_ratio_max);
    s.field("cond_dropout", g.cond_dropout).field("lambda_morph_guide", g.lambda_morph_guide);
    s.section("train", [&c](Section& t) { bind_schedule(t, c.gen_train); });
  });
  root.section("infer", [&c](Section& s) {
    s.field("rounds", c.infer.rounds).field("steps", c.infer.steps).field("omega", c.infer.omega);
  });
  root.section("matcher", [&c](Section& s) {
    s.field("hidden", c.matcher.hidden).field("feature_dim", c.matcher.feature_dim);
    s.field("temperature", c.matcher.temperature);
    s.section("train", [&c](Section& t) { bind_schedule(t, c.matcher_train); });
  });
  root.section("eval", [&c](Section& s) {
    s.field("pool_size", c.eval.pool_size).field("diversity_pairs", c.eval.diversity_pairs);
    s.field("repeats", c.eval.repeats).field("seed", c.eval.seed).field("max_samples", c.eval.max_samples);
  });
}

void check_schedule(const StageSchedule& s, const char* name) {
  const std::string n(name);
  if (!(s.lr > 0)) throw ConfigError(n + ".train.lr must be > 0");
  if (s.batch == 0) throw ConfigError(n + ".train.batch must be > 0");
  if (s.clip_norm < 0) throw ConfigError(n + ".train.clip_norm must be >= 0");
  if (!(s.final_lr_fraction > 0 && s.final_lr_fraction <= 1)) throw ConfigError(n + ".train.final_lr_fraction must lie in (0, 1]");
}

}  // namespace

void RunConfig::validate() const {
  check_schedule(cgae_train, "cgae");
  check_schedule(ae_train, "ae");
  check_schedule(mcm_train, "mcm");
  check_schedule(gen_train, "gen");
  check_schedule(matcher_train, "matcher");
  if (dataset.species < 2) throw ConfigError("dataset.species must be >= 2");
  if (dataset.min_length > dataset.max_length) throw ConfigError("dataset.min_length exceeds max_length");
  if (dataset.min_length <= 18 || dataset.max_length >= 300) throw ConfigError("dataset lengths must lie in (18, 300)");
  if (dataset.holdout_count >= dataset.species && dataset.holdout.empty()) throw ConfigError("holdout_count leaves no seen species");
  const std::pair<std::size_t, const char*> widths[] = {
      {cgae.latent_dim, "cgae.latent_dim"}, {cgae.hidden, "cgae.hidden"},     {cgae.cond_proj, "cgae.cond_proj"},
      {ae.channels, "ae.channels"},         {ae.latent_dim, "ae.latent_dim"}, {mcm.hidden, "mcm.hidden"},
      {gen.blocks, "gen.blocks"},           {gen.heads, "gen.heads"},         {gen.ffn_mult, "gen.ffn_mult"},
      {gen.head_width, "gen.head_width"},   {gen.head_repeats, "gen.head_repeats"},
      {matcher.hidden, "matcher.hidden"},   {matcher.feature_dim, "matcher.feature_dim"}};
  for (const auto& [value, name] : widths)
    if (value == 0) throw ConfigError(std::string(name) + " must be >= 1");
  if (cgae.beta < 0) throw ConfigError("cgae.beta must be >= 0");
  if (ae.lambda_morph < 0) throw ConfigError("ae.lambda_morph_recon must be >= 0");
  if (gen.lambda_morph_guide < 0) throw ConfigError("gen.lambda_morph_guide must be >= 0");
  if (gen.latent_dim != ae.latent_dim || mcm.latent_dim != ae.latent_dim)
    throw ConfigError("generator and critic widths must match the autoencoder latent width");
  if (gen.latent_dim % gen.heads != 0) throw ConfigError("gen.heads must divide the latent width");
  if (infer.rounds == 0 || infer.steps == 0) throw ConfigError("infer.rounds and infer.steps must be >= 1");
  if (!(gen.mask_ratio_min > 0 && gen.mask_ratio_min <= gen.mask_ratio_max && gen.mask_ratio_max <= 1))
    throw ConfigError("gen mask ratio range must lie in (0, 1]");
  if (!(matcher.temperature > 0)) throw ConfigError("matcher.temperature must be > 0");
  if (eval.pool_size < 2) throw ConfigError("eval.pool_size must be >= 2");
}

RunConfig default_config() { return RunConfig{}; }

RunConfig config_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root;
  bind(root, c);
  root.read(j);
  // Derived widths follow the autoencoder.
  c.gen.latent_dim = c.ae.latent_dim;
  c.mcm.latent_dim = c.ae.latent_dim;
  c.validate();
  return c;
}

std::string config_to_json(const RunConfig& config) {
  RunConfig copy = config;
  Section root;
  bind(root, copy);
  return root.write().dump(2);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

}  // namespace crossmo
