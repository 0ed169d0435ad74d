// SPDX-License-Identifier: Apache-2.0
#pragma once

// Orchestration shared by the CLI and the acceptance runs: dataset
// preparation, the bundle of trainable modules, one deterministic training
// loop per stage, and the generation / transition / evaluation pipeline.
//
// Stage order: CGAE and AE first (independent), then the MCM on AE latents,
// then the generator with the frozen MCM as critic. The matcher is only used
// for evaluation and can be trained at any point.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crossmo/cgae.hpp"
#include "crossmo/checkpoint.hpp"
#include "crossmo/config.hpp"
#include "crossmo/dataset.hpp"
#include "crossmo/generator.hpp"
#include "crossmo/mcm.hpp"
#include "crossmo/metrics.hpp"
#include "crossmo/motion_ae.hpp"

namespace crossmo::harness {

// --- data -----------------------------------------------------------------

struct PreparedData {
  std::vector<MotionRecord> records;
  DatasetSplit split;
  /// Feature statistics of the training split.
  NormStats stats;
  std::vector<std::string> holdout;
  /// Per-species mean of the record bone vectors, the canonical morphology.
  std::map<std::string, BoneLengthVector> species_bones;
};

/// Generates the toy corpus (or reads `config.container`) and splits it.
PreparedData prepare_data(const DatasetConfig& config);
PreparedData prepare_data(std::vector<MotionRecord> records, std::vector<std::string> holdout, std::uint64_t split_seed);

// --- logging --------------------------------------------------------------

/// Run directory: an explicit path wins, then $CROSSMO_RUN_DIR, then "runs".
std::filesystem::path resolve_run_dir(const std::optional<std::filesystem::path>& explicit_dir);

/// JSON-lines sink, one object per call. A default-constructed log discards.
class JsonlLog {
 public:
  JsonlLog() = default;
  explicit JsonlLog(const std::filesystem::path& path);

  void write(const std::string& stage, std::int64_t step, const std::vector<std::pair<std::string, double>>& fields);
  void write_raw(const std::string& json_line);
  bool enabled() const { return out_ != nullptr; }

 private:
  std::shared_ptr<std::ofstream> out_;
};

// --- models ---------------------------------------------------------------

struct StageState {
  std::int64_t steps = 0;
  std::optional<optim::AdamState> adam;
  /// Whether the module block is written to checkpoints.
  bool present = false;
};

class Models {
 public:
  explicit Models(const RunConfig& config);

  RunConfig config;
  cgae::Cgae cgae;
  ae::MotionAe ae;
  mcm::Mcm mcm;
  gen::MaskedGenerator generator;
  metrics::Matcher matcher;
  std::optional<ae::LatentStats> latent_stats;
  std::array<StageState, kModuleCount> stages;

  StageState& stage(ModuleId id) { return stages[static_cast<std::size_t>(id)]; }
  const StageState& stage(ModuleId id) const { return stages[static_cast<std::size_t>(id)]; }
  nn::ParamSet& params(ModuleId id);
  const nn::ParamSet& params(ModuleId id) const;

  Checkpoint to_checkpoint() const;
  /// Rebuilds the bundle from the config snapshot, then restores every
  /// present block.
  static std::unique_ptr<Models> from_checkpoint(const Checkpoint& ckpt);
};

/// Throws ConfigError naming the missing stage.
void require_trained(const Models& models, ModuleId id);

// --- training -------------------------------------------------------------

struct StageReport {
  std::string stage;
  std::size_t steps = 0;
  double first_loss = 0.0;
  /// Mean over the last min(50, steps) steps.
  double final_loss = 0.0;
  double seconds = 0.0;
  std::vector<double> losses;
};

struct TrainOptions {
  /// Overrides the configured step count.
  std::optional<std::size_t> steps;
  JsonlLog* log = nullptr;
};

/// Cosine decay from lr to lr * final_lr_fraction over schedule.steps.
double scheduled_lr(const StageSchedule& schedule, std::int64_t step);

StageReport train_cgae(Models& models, const PreparedData& data, const TrainOptions& options = {});
StageReport train_ae(Models& models, const PreparedData& data, const TrainOptions& options = {});
/// Also fixes the latent statistics when they are not set yet.
StageReport train_mcm(Models& models, const PreparedData& data, const TrainOptions& options = {});
StageReport train_generator(Models& models, const PreparedData& data, const TrainOptions& options = {});
StageReport train_matcher(Models& models, const PreparedData& data, const TrainOptions& options = {});

/// Raw AE latents of the given records.
std::vector<Matrix> encode_records(const Models& models, const PreparedData& data, const std::vector<std::size_t>& ids);

// --- generation -----------------------------------------------------------

struct GenerationRequest {
  std::string caption;
  std::string species;
  std::size_t frames = 64;
  std::uint64_t seed = 0;
  /// Skips the CGAE and conditions on these lengths instead.
  std::optional<BoneLengthVector> bones;
};

struct GeneratedMotion {
  MotionSequence motion;
  Matrix latents;  // standardised, T x d
  BoneLengthVector tpose_bones;
};

GeneratedMotion generate_motion(const Models& models, const GenerationRequest& request);

struct TransitionResult {
  MotionSequence motion;
  Matrix latents;  // standardised, (T_a + G + T_b) x d
  std::size_t prefix_latents = 0;
  std::size_t gap_latents = 0;
  std::size_t suffix_latents = 0;
  bool prefix_identical = false;
  bool suffix_identical = false;
  /// Largest per-frame max joint displacement touching the generated span.
  double seam_jump = 0.0;
  /// Median per-frame max joint displacement inside the two source spans.
  double median_jump = 0.0;
};

/// [encode(a); G masked; encode(b)] with only the gap generated.
TransitionResult cross_species_transition(const Models& models, const MotionSequence& a, const MotionSequence& b,
                                          std::size_t gap, const std::string& caption, const BoneLengthVector& tpose_bones,
                                          std::uint64_t seed);

/// Per-frame max joint displacement between consecutive frames of the
/// root-local skeleton, L - 1 values.
std::vector<double> frame_jumps(const MotionSequence& seq);

// --- evaluation -----------------------------------------------------------

struct EvalReport {
  std::size_t seen_samples = 0;
  std::size_t unseen_samples = 0;
  double recon_mme = 0.0;
  /// Generated seen-species motion against the species' canonical bones.
  double seen_mme = 0.0;
  /// Same motions against the sampled T-pose they were conditioned on.
  double seen_mme_vs_tpose = 0.0;
  double unseen_mme_vs_tpose = 0.0;
  std::vector<double> r_precision;  // top-1..3
  double fid = 0.0;
  double mm_dist = 0.0;
  double diversity = 0.0;
  std::vector<double> real_r_precision;
  double real_mm_dist = 0.0;
  double real_diversity = 0.0;
  double seconds = 0.0;
};

struct EvalOptions {
  std::size_t max_samples = 96;
  std::uint64_t seed = 1;
};

EvalReport evaluate(const Models& models, const PreparedData& data, const EvalOptions& options);
std::string report_to_json(const EvalReport& report);
/// Mean and standard deviation over repeats, as a JSON document.
std::string aggregate_reports_json(const std::vector<EvalReport>& reports);

// --- pipeline -------------------------------------------------------------

struct PipelineResult {
  std::vector<StageReport> stages;
  EvalReport report;
  double seconds = 0.0;
};

/// Trains every stage in order, saves `checkpoint.bin` and
/// `eval_report.json` under `run_dir`, and logs to `log.jsonl`.
PipelineResult run_pipeline(const RunConfig& config, const std::filesystem::path& run_dir);

}  // namespace crossmo::harness
