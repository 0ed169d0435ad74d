// SPDX-License-Identifier: Apache-2.0

#include "crossmo/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "crossmo/embeddings.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/optim.hpp"

namespace crossmo::harness {
namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t module_seed(std::uint64_t seed, ModuleId id) {
  return mix_seed(seed, 0xC0DE00ULL + static_cast<std::uint64_t>(id));
}

Matrix stack(const std::vector<const Matrix*>& parts, std::size_t cols) {
  std::size_t rows = 0;
  for (const Matrix* p : parts) rows += p->rows;
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Matrix* p : parts) {
    if (p->cols != cols) throw ShapeMismatch("stack: column mismatch");
    std::copy(p->data.begin(), p->data.end(), out.row(off));
    off += p->rows;
  }
  return out;
}

Matrix bones_matrix(const std::vector<const BoneLengthVector*>& bones) {
  Matrix m(bones.size(), kNumBones);
  for (std::size_t i = 0; i < bones.size(); ++i) std::copy(bones[i]->lengths.begin(), bones[i]->lengths.end(), m.row(i));
  return m;
}

// Epoch-style sampling without replacement; batches never repeat an index
// unless the pool is smaller than the batch.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, std::size_t batch) : pool_(std::move(pool)), batch_(batch) {
    if (pool_.empty()) throw InvalidInput("training split is empty");
  }

  std::vector<std::size_t> next(Rng& rng) {
    std::vector<std::size_t> out;
    const std::size_t want = std::min(batch_, pool_.size());
    while (out.size() < want) {
      if (pos_ == order_.size()) {
        order_ = pool_;
        rng.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> pool_;
  std::size_t batch_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

using Fields = std::vector<std::pair<std::string, double>>;

// Shared optimisation loop. `step_fn` builds the loss, runs backward and
// returns the logged fields, the first of which is the total loss.
template <class StepFn>
StageReport run_stage(Models& models, ModuleId id, const StageSchedule& schedule, const TrainOptions& options,
                      StepFn step_fn) {
  const auto t0 = Clock::now();
  StageState& st = models.stage(id);
  st.present = true;
  StageReport report;
  report.stage = module_name(id);

  optim::AdamConfig acfg;
  acfg.lr = schedule.lr;
  acfg.clip_norm = schedule.clip_norm;
  optim::Adam adam(models.params(id), acfg);
  if (st.adam) adam.set_state(*st.adam);

  // Resuming continues the stream instead of replaying the first batches.
  Rng rng(mix_seed(module_seed(models.config.seed, id), static_cast<std::uint64_t>(st.steps)));
  const std::size_t steps = options.steps.value_or(schedule.steps);
  for (std::size_t k = 0; k < steps; ++k) {
    adam.config().lr = scheduled_lr(schedule, st.steps);
    Fields fields = step_fn(rng);
    const double grad_norm = adam.step();
    ++st.steps;
    report.losses.push_back(fields.front().second);
    if (options.log && options.log->enabled()) {
      fields.emplace_back("grad_norm", grad_norm);
      fields.emplace_back("lr", adam.config().lr);
      options.log->write(report.stage, st.steps, fields);
    }
  }
  if (adam.state().step > 0) st.adam = adam.state();
  report.steps = steps;
  if (!report.losses.empty()) {
    report.first_loss = report.losses.front();
    const std::size_t tail = std::min<std::size_t>(50, report.losses.size());
    double s = 0.0;
    for (std::size_t i = report.losses.size() - tail; i < report.losses.size(); ++i) s += report.losses[i];
    report.final_loss = s / static_cast<double>(tail);
  }
  report.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

}  // namespace

// --- data -----------------------------------------------------------------

PreparedData prepare_data(std::vector<MotionRecord> records, std::vector<std::string> holdout, std::uint64_t split_seed) {
  PreparedData d;
  d.records = filter_by_length(std::move(records));
  if (d.records.empty()) throw InvalidInput("dataset has no admissible records");
  d.holdout = std::move(holdout);
  d.split = make_splits(d.records, std::set<std::string>(d.holdout.begin(), d.holdout.end()), split_seed);
  if (d.split.train.empty()) throw InvalidInput("training split is empty");

  std::vector<MotionSequence> train;
  for (std::size_t i : d.split.train) train.push_back(d.records[i].motion);
  d.stats = compute_norm_stats(train);

  std::map<std::string, std::pair<BoneLengthVector, std::size_t>> acc;
  for (const auto& r : d.records) {
    auto& [sum, n] = acc[r.species_name];
    for (std::size_t e = 0; e < kNumBones; ++e) sum[e] += r.tpose_bone_lengths[e];
    ++n;
  }
  for (auto& [name, v] : acc) {
    BoneLengthVector mean = v.first;
    for (double& x : mean.lengths) x /= static_cast<double>(v.second);
    d.species_bones[name] = mean;
  }
  return d;
}

PreparedData prepare_data(const DatasetConfig& config) {
  std::vector<MotionRecord> records;
  std::vector<std::string> order;
  if (!config.container.empty()) {
    records = read_container(config.container).records;
    for (const auto& r : records)
      if (std::find(order.begin(), order.end(), r.species_name) == order.end()) order.push_back(r.species_name);
  } else {
    SyntheticDatasetOptions o;
    o.seed = config.seed;
    o.species_count = config.species;
    o.records_per_pair = config.records_per_pair;
    o.min_length = config.min_length;
    o.max_length = config.max_length;
    o.gait.morph_jitter = config.morph_jitter;
    std::vector<SpeciesProfile> species;
    records = generate_dataset(o, &species);
    for (const auto& s : species) order.push_back(s.name);
  }
  std::vector<std::string> holdout = config.holdout;
  if (holdout.empty()) {
    if (config.holdout_count >= order.size()) throw ConfigError("holdout_count leaves no seen species");
    holdout.assign(order.end() - static_cast<std::ptrdiff_t>(config.holdout_count), order.end());
  }
  return prepare_data(std::move(records), std::move(holdout), config.split_seed);
}

// --- logging --------------------------------------------------------------

std::filesystem::path resolve_run_dir(const std::optional<std::filesystem::path>& explicit_dir) {
  if (explicit_dir) return *explicit_dir;
  if (const char* env = std::getenv("CROSSMO_RUN_DIR"); env && *env) return env;
  return "runs";
}

JsonlLog::JsonlLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_ = std::make_shared<std::ofstream>(path, std::ios::app);
  if (!*out_) throw IoError("cannot open log " + path.string());
}

void JsonlLog::write(const std::string& stage, std::int64_t step, const std::vector<std::pair<std::string, double>>& fields) {
  if (!out_) return;
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["step"] = step;
  for (const auto& [k, v] : fields) j[k] = std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
  *out_ << j.dump() << '\n';
  out_->flush();
}

void JsonlLog::write_raw(const std::string& json_line) {
  if (!out_) return;
  *out_ << json_line << '\n';
  out_->flush();
}

// --- models ---------------------------------------------------------------

Models::Models(const RunConfig& cfg)
    : config(cfg),
      cgae(cfg.cgae, module_seed(cfg.seed, ModuleId::kCgae)),
      ae(cfg.ae, module_seed(cfg.seed, ModuleId::kAe)),
      mcm(cfg.mcm, module_seed(cfg.seed, ModuleId::kMcm)),
      generator(cfg.gen, module_seed(cfg.seed, ModuleId::kGenerator)),
      matcher(cfg.matcher, module_seed(cfg.seed, ModuleId::kMatcher)) {
  config.validate();
}

nn::ParamSet& Models::params(ModuleId id) {
  return const_cast<nn::ParamSet&>(static_cast<const Models*>(this)->params(id));
}

const nn::ParamSet& Models::params(ModuleId id) const {
  switch (id) {
    case ModuleId::kCgae: return cgae.params();
    case ModuleId::kAe: return ae.params();
    case ModuleId::kMcm: return mcm.params();
    case ModuleId::kGenerator: return generator.params();
    case ModuleId::kMatcher: return matcher.params();
  }
  throw InvalidInput("unknown module");
}

Checkpoint Models::to_checkpoint() const {
  Checkpoint c;
  c.config_json = config_to_json(config);
  for (std::size_t i = 0; i < kModuleCount; ++i) {
    const auto id = static_cast<ModuleId>(i);
    const StageState& st = stages[i];
    c.step += st.steps;
    if (st.present) c.modules[i] = capture_params(params(id), st.steps, st.adam ? &*st.adam : nullptr);
  }
  if (stage(ModuleId::kAe).present || stage(ModuleId::kMatcher).present) c.norm_stats = ae.stats();
  c.latent_stats = latent_stats;
  return c;
}

std::unique_ptr<Models> Models::from_checkpoint(const Checkpoint& ckpt) {
  auto m = std::make_unique<Models>(config_from_json(ckpt.config_json));
  for (std::size_t i = 0; i < kModuleCount; ++i) {
    if (!ckpt.modules[i]) continue;
    const auto id = static_cast<ModuleId>(i);
    const ParamBlock& b = *ckpt.modules[i];
    restore_params(b, m->params(id));
    StageState& st = m->stages[i];
    st.present = true;
    st.steps = b.stage_steps;
    st.adam = b.adam;
  }
  if (ckpt.norm_stats) {
    m->ae.set_stats(*ckpt.norm_stats);
    m->matcher.set_stats(*ckpt.norm_stats);
  }
  m->latent_stats = ckpt.latent_stats;
  m->generator.trained_steps = m->stage(ModuleId::kGenerator).steps;
  return m;
}

void require_trained(const Models& models, ModuleId id) {
  const StageState& st = models.stage(id);
  if (!st.present || st.steps == 0)
    throw ConfigError(std::string("stage '") + module_name(id) + "' has not been trained; run `train " +
                      (id == ModuleId::kGenerator ? "gen" : module_name(id)) + "` first");
}

// --- training -------------------------------------------------------------

double scheduled_lr(const StageSchedule& schedule, std::int64_t step) {
  if (schedule.steps == 0) return schedule.lr;
  const double p = std::min(1.0, static_cast<double>(step) / static_cast<double>(schedule.steps));
  const double lo = schedule.lr * schedule.final_lr_fraction;
  return lo + 0.5 * (schedule.lr - lo) * (1.0 + std::cos(std::numbers::pi * p));
}

StageReport train_cgae(Models& models, const PreparedData& data, const TrainOptions& options) {
  const auto& sched = models.config.cgae_train;
  std::map<std::string, Matrix> cond_cache;
  for (std::size_t i : data.split.train) {
    const auto& name = data.records[i].species_name;
    if (!cond_cache.count(name)) cond_cache[name] = embed::species_embed(name).vector;
  }
  BatchSampler sampler(data.split.train, sched.batch);
  return run_stage(models, ModuleId::kCgae, sched, options, [&](Rng& rng) {
    const auto idx = sampler.next(rng);
    std::vector<const BoneLengthVector*> bones;
    std::vector<const Matrix*> conds;
    for (std::size_t i : idx) {
      bones.push_back(&data.records[i].tpose_bone_lengths);
      conds.push_back(&cond_cache.at(data.records[i].species_name));
    }
    const Matrix noise = rng.normal_matrix(idx.size(), models.cgae.config().latent_dim);
    const auto l = models.cgae.loss(bones_matrix(bones), stack(conds, models.cgae.config().cond_dim), noise);
    ad::backward(l.total);
    return Fields{{"loss", l.total.item()}, {"recon", l.recon.item()}, {"kl", l.kl.item()}};
  });
}

StageReport train_ae(Models& models, const PreparedData& data, const TrainOptions& options) {
  const auto& sched = models.config.ae_train;
  if (models.stage(ModuleId::kAe).steps == 0) models.ae.set_stats(data.stats);
  std::map<std::size_t, Matrix> frames;
  for (std::size_t i : data.split.train) frames[i] = models.ae.to_model_space(data.records[i].motion);
  const double lambda = models.config.ae.lambda_morph;
  const auto& topo = canonical_topology();
  BatchSampler sampler(data.split.train, sched.batch);
  return run_stage(models, ModuleId::kAe, sched, options, [&](Rng& rng) {
    const auto idx = sampler.next(rng);
    std::vector<const Matrix*> parts;
    std::vector<std::size_t> lengths;
    for (std::size_t i : idx) {
      parts.push_back(&frames.at(i));
      lengths.push_back(frames.at(i).rows);
    }
    const Matrix x = stack(parts, kFeatureDim);
    const ad::Segments segs = ad::pack_segments(lengths);
    ad::Segments lsegs;
    const ad::Tensor z = models.ae.encode_packed(ad::Tensor::constant(x), segs, &lsegs);
    const ad::Tensor xh = models.ae.decode_packed(z, lsegs, lengths);
    const auto l = ae::ae_loss(xh, x, models.ae.model_stats(), lambda, topo);
    ad::backward(l.total);
    return Fields{{"loss", l.total.item()}, {"mse", l.mse.item()}, {"morph", l.morph.item()}};
  });
}

std::vector<Matrix> encode_records(const Models& models, const PreparedData& data, const std::vector<std::size_t>& ids) {
  std::vector<Matrix> out;
  out.reserve(ids.size());
  for (std::size_t i : ids) out.push_back(models.ae.encode(data.records[i].motion));
  return out;
}

namespace {

// Standardised latents of the training split, keyed by record id.
std::map<std::size_t, Matrix> training_latents(Models& models, const PreparedData& data) {
  require_trained(models, ModuleId::kAe);
  const auto raw = encode_records(models, data, data.split.train);
  if (!models.latent_stats) models.latent_stats = ae::compute_latent_stats(raw);
  std::map<std::size_t, Matrix> out;
  for (std::size_t k = 0; k < raw.size(); ++k) out[data.split.train[k]] = models.latent_stats->standardize(raw[k]);
  return out;
}

}  // namespace

StageReport train_mcm(Models& models, const PreparedData& data, const TrainOptions& options) {
  const auto& sched = models.config.mcm_train;
  const auto latents = training_latents(models, data);
  const std::size_t d = models.mcm.config().latent_dim;
  BatchSampler sampler(data.split.train, sched.batch);
  return run_stage(models, ModuleId::kMcm, sched, options, [&](Rng& rng) {
    const auto idx = sampler.next(rng);
    std::vector<const Matrix*> parts;
    std::vector<const BoneLengthVector*> bones;
    std::vector<std::size_t> lengths;
    for (std::size_t i : idx) {
      parts.push_back(&latents.at(i));
      lengths.push_back(latents.at(i).rows);
      bones.push_back(&data.records[i].tpose_bone_lengths);
    }
    const ad::Tensor l = mcm::pretrain_loss(models.mcm, ad::Tensor::constant(stack(parts, d)), ad::pack_segments(lengths),
                                            bones_matrix(bones));
    ad::backward(l);
    return Fields{{"loss", l.item()}};
  });
}

StageReport train_generator(Models& models, const PreparedData& data, const TrainOptions& options) {
  const auto& sched = models.config.gen_train;
  const double lambda = models.config.gen.lambda_morph_guide;
  if (lambda > 0) require_trained(models, ModuleId::kMcm);
  const auto latents = training_latents(models, data);
  const auto& topo = canonical_topology();

  struct Entry {
    gen::GenSample sample;
    std::vector<Matrix> captions;
  };
  std::map<std::size_t, Entry> entries;
  for (std::size_t i : data.split.train) {
    const auto& r = data.records[i];
    Entry e;
    e.sample.latents = latents.at(i);
    e.sample.tpose = gen::flatten_tpose(forward_kinematics_tpose(r.tpose_bone_lengths, topo));
    e.sample.bones = Matrix(1, kNumBones, std::vector<double>(r.tpose_bone_lengths.lengths.begin(), r.tpose_bone_lengths.lengths.end()));
    for (const auto& c : r.captions) e.captions.push_back(embed::text_features(c).tokens());
    if (e.captions.empty()) throw InvalidInput("training record without a caption");
    entries.emplace(i, std::move(e));
  }

  // The critic is a fixed penalty here, never a trainee.
  models.mcm.params().set_trainable(false);
  const mcm::Mcm* critic = lambda > 0 ? &models.mcm : nullptr;
  BatchSampler sampler(data.split.train, sched.batch);
  StageReport report;
  try {
    report = run_stage(models, ModuleId::kGenerator, sched, options, [&](Rng& rng) {
      const auto idx = sampler.next(rng);
      std::vector<gen::GenSample> batch;
      for (std::size_t i : idx) {
        const Entry& e = entries.at(i);
        batch.push_back(e.sample);
        batch.back().text_tokens = e.captions[rng.index(e.captions.size())];
      }
      const auto draws = models.generator.draw(batch, rng);
      const auto l = models.generator.loss(batch, draws, critic);
      ad::backward(l.total);
      ++models.generator.trained_steps;
      Fields f{{"loss", l.total.item()}, {"flow", l.flow.item()}};
      if (l.morph_guide.defined()) f.emplace_back("morph_guide", l.morph_guide.item());
      return f;
    });
  } catch (...) {
    models.mcm.params().set_trainable(true);
    throw;
  }
  models.mcm.params().set_trainable(true);
  return report;
}

StageReport train_matcher(Models& models, const PreparedData& data, const TrainOptions& options) {
  const auto& sched = models.config.matcher_train;
  if (models.stage(ModuleId::kMatcher).steps == 0) models.matcher.set_stats(data.stats);
  std::map<std::size_t, Matrix> frames;
  std::map<std::size_t, std::vector<Matrix>> sentences;
  for (std::size_t i : data.split.train) {
    frames[i] = normalize(data.records[i].motion, models.matcher.stats()).frames;
    for (const auto& c : data.records[i].captions) sentences[i].push_back(embed::text_features(c).sentence);
  }
  const double temperature = models.config.matcher.temperature;
  BatchSampler sampler(data.split.train, sched.batch);
  return run_stage(models, ModuleId::kMatcher, sched, options, [&](Rng& rng) {
    const auto idx = sampler.next(rng);
    std::vector<const Matrix*> parts, texts;
    std::vector<std::size_t> lengths;
    for (std::size_t i : idx) {
      parts.push_back(&frames.at(i));
      lengths.push_back(frames.at(i).rows);
      const auto& s = sentences.at(i);
      texts.push_back(&s[rng.index(s.size())]);
    }
    const ad::Tensor m = models.matcher.encode_motion(ad::Tensor::constant(stack(parts, kFeatureDim)), ad::pack_segments(lengths));
    const ad::Tensor t = models.matcher.encode_text(ad::Tensor::constant(stack(texts, models.matcher.config().text_dim)));
    const ad::Tensor l = metrics::contrastive_loss(m, t, temperature);
    ad::backward(l);
    return Fields{{"loss", l.item()}};
  });
}

}  // namespace crossmo::harness
