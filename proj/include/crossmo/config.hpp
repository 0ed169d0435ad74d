// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration. Stored as one JSON document; every key is optional and
// falls back to the defaults below, but unknown keys are rejected so typos
// fail loudly.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "crossmo/cgae.hpp"
#include "crossmo/generator.hpp"
#include "crossmo/metrics.hpp"
#include "crossmo/motion_ae.hpp"
#include "crossmo/mcm.hpp"

namespace crossmo {

struct StageSchedule {
  double lr = 1e-3;
  std::size_t batch = 16;
  std::size_t steps = 1000;
  double clip_norm = 1.0;
  /// Final learning rate as a fraction of lr (cosine decay); 1 keeps it flat.
  double final_lr_fraction = 0.1;
};

struct DatasetConfig {
  std::string container;  // empty: generate in memory
  std::uint64_t seed = 0;
  std::size_t species = 8;
  std::size_t records_per_pair = 25;
  std::size_t min_length = 32;
  std::size_t max_length = 96;
  double morph_jitter = 0.08;
  std::uint64_t split_seed = 0;
  /// Held-out species; empty means the last `holdout_count` generated ones.
  std::vector<std::string> holdout;
  std::size_t holdout_count = 2;
};

struct EvalConfig {
  std::size_t pool_size = 32;
  std::size_t diversity_pairs = 100;
  std::size_t repeats = 1;
  /// Cap on generated samples per split.
  std::size_t max_samples = 96;
  std::uint64_t seed = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;

  cgae::CgaeConfig cgae;
  StageSchedule cgae_train{2e-3, 32, 1500, 1.0, 0.1};

  ae::AeConfig ae;
  StageSchedule ae_train{1e-3, 16, 2000, 1.0, 0.1};

  mcm::McmConfig mcm;
  StageSchedule mcm_train{1e-3, 32, 1500, 1.0, 0.1};

  gen::GenConfig gen;
  StageSchedule gen_train{5e-4, 16, 3000, 1.0, 0.1};
  gen::InferConfig infer;

  metrics::MatcherConfig matcher;
  StageSchedule matcher_train{1e-3, 32, 1500, 1.0, 0.1};

  EvalConfig eval;

  /// Throws ConfigError on out-of-range values or inconsistent widths.
  void validate() const;
};

RunConfig default_config();

/// Parses a (possibly partial) config document over the defaults.
RunConfig config_from_json(std::string_view text);
/// Canonical, complete JSON; config_from_json(config_to_json(c)) == c.
std::string config_to_json(const RunConfig& config);

RunConfig load_config(const std::string& path);

}  // namespace crossmo
