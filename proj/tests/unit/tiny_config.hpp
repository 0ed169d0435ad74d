// SPDX-License-Identifier: Apache-2.0
#pragma once

// A run configuration small enough that every stage trains in well under a
// second. Shared by the harness and command-line tests.

#include <string>

namespace crossmo::testing {

inline const std::string kTinyConfigJson = R"({
  "seed": 3,
  "dataset": {"species": 4, "records_per_pair": 2, "min_length": 32, "max_length": 40, "holdout_count": 1},
  "cgae": {"latent_dim": 4, "hidden": 8, "cond_proj": 4, "train": {"steps": 3, "batch": 4}},
  "ae": {"channels": 8, "latent_dim": 8, "res_blocks": 1, "train": {"steps": 3, "batch": 2}},
  "mcm": {"hidden": 8, "train": {"steps": 3, "batch": 4}},
  "gen": {"blocks": 1, "heads": 2, "ffn_mult": 2, "head_width": 16, "head_blocks": 1, "head_repeats": 1,
          "train": {"steps": 3, "batch": 2}},
  "infer": {"rounds": 2, "steps": 2, "omega": 2.0},
  "matcher": {"hidden": 8, "feature_dim": 8, "train": {"steps": 3, "batch": 4}},
  "eval": {"max_samples": 6, "diversity_pairs": 2, "pool_size": 4}
})";

}  // namespace crossmo::testing
