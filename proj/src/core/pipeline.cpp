// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>

#include <nlohmann/json.hpp>

#include "crossmo/embeddings.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/harness.hpp"

namespace crossmo::harness {
namespace {

using Clock = std::chrono::steady_clock;
using Json = nlohmann::ordered_json;

const ae::LatentStats& latent_stats_of(const Models& models) {
  if (!models.latent_stats) throw ConfigError("latent statistics missing; train the MCM or generator stage first");
  return *models.latent_stats;
}

bool rows_identical(const Matrix& a, std::size_t a_off, const Matrix& b, std::size_t b_off, std::size_t rows) {
  const std::size_t n = rows * a.cols;
  return std::equal(a.row(a_off), a.row(a_off) + n, b.row(b_off));
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

// Deterministic subset of at most `n` ids.
std::vector<std::size_t> subset(std::vector<std::size_t> ids, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(ids);
  if (ids.size() > n) ids.resize(n);
  return ids;
}

Json curve_json(const std::vector<double>& v) {
  Json j = Json::array();
  for (double x : v) j.push_back(x);
  return j;
}

Json report_json(const EvalReport& r) {
  Json j;
  j["seen_samples"] = r.seen_samples;
  j["unseen_samples"] = r.unseen_samples;
  j["recon_mme"] = r.recon_mme;
  j["seen_mme"] = r.seen_mme;
  j["seen_mme_vs_tpose"] = r.seen_mme_vs_tpose;
  j["unseen_mme_vs_tpose"] = r.unseen_mme_vs_tpose;
  j["unseen_to_seen_ratio"] = r.seen_mme > 0 ? r.unseen_mme_vs_tpose / r.seen_mme : 0.0;
  j["r_precision"] = curve_json(r.r_precision);
  j["fid"] = r.fid;
  j["mm_dist"] = r.mm_dist;
  j["diversity"] = r.diversity;
  j["real_r_precision"] = curve_json(r.real_r_precision);
  j["real_mm_dist"] = r.real_mm_dist;
  j["real_diversity"] = r.real_diversity;
  j["seconds"] = r.seconds;
  return j;
}

}  // namespace

GeneratedMotion generate_motion(const Models& models, const GenerationRequest& request) {
  require_trained(models, ModuleId::kAe);
  require_trained(models, ModuleId::kGenerator);
  if (!request.bones) require_trained(models, ModuleId::kCgae);
  const auto& ls = latent_stats_of(models);
  const std::size_t t = ae::latent_length(request.frames);

  GeneratedMotion out;
  out.tpose_bones = request.bones ? *request.bones
                                  : models.cgae.sample_bones(embed::species_embed(request.species), mix_seed(request.seed, 1));
  const Matrix tpose = gen::flatten_tpose(forward_kinematics_tpose(out.tpose_bones, canonical_topology()));
  const auto text = embed::text_features(request.caption);
  out.latents = models.generator.infer(text, tpose, t, models.config.infer, mix_seed(request.seed, 2));
  out.motion = models.ae.decode(ls.unstandardize(out.latents), request.frames);
  return out;
}

std::vector<double> frame_jumps(const MotionSequence& seq) {
  std::vector<double> out;
  if (seq.length() < 2) return out;
  out.reserve(seq.length() - 1);
  Frame prev = local_frame(seq, 0);
  for (std::size_t t = 1; t < seq.length(); ++t) {
    const Frame cur = local_frame(seq, t);
    double m = 0.0;
    for (std::size_t j = 0; j < kNumJoints; ++j) {
      const double dx = cur[j][0] - prev[j][0], dy = cur[j][1] - prev[j][1], dz = cur[j][2] - prev[j][2];
      m = std::max(m, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    out.push_back(m);
    prev = cur;
  }
  return out;
}

TransitionResult cross_species_transition(const Models& models, const MotionSequence& a, const MotionSequence& b,
                                          std::size_t gap, const std::string& caption, const BoneLengthVector& tpose_bones,
                                          std::uint64_t seed) {
  require_trained(models, ModuleId::kAe);
  require_trained(models, ModuleId::kGenerator);
  if (gap == 0) throw InvalidInput("transition needs at least one gap token");
  const auto& ls = latent_stats_of(models);
  const Matrix za = ls.standardize(models.ae.encode(a));
  const Matrix zb = ls.standardize(models.ae.encode(b));
  const std::size_t d = za.cols;

  TransitionResult r;
  r.prefix_latents = za.rows;
  r.gap_latents = gap;
  r.suffix_latents = zb.rows;
  const std::size_t total = za.rows + gap + zb.rows;
  Matrix z(total, d);
  std::copy(za.data.begin(), za.data.end(), z.row(0));
  std::copy(zb.data.begin(), zb.data.end(), z.row(za.rows + gap));
  std::vector<bool> masked(total, false);
  for (std::size_t i = 0; i < gap; ++i) masked[za.rows + i] = true;

  const Matrix tpose = gen::flatten_tpose(forward_kinematics_tpose(tpose_bones, canonical_topology()));
  r.latents = models.generator.infill(z, masked, embed::text_features(caption), tpose, models.config.infer, seed);
  r.prefix_identical = rows_identical(r.latents, 0, za, 0, za.rows);
  r.suffix_identical = rows_identical(r.latents, za.rows + gap, zb, 0, zb.rows);
  r.motion = models.ae.decode(ls.unstandardize(r.latents), 4 * total);

  // Jump t spans frames t -> t + 1; the seam is every jump touching a
  // generated frame.
  const auto jumps = frame_jumps(r.motion);
  const std::size_t seam_lo = 4 * za.rows - 1;
  const std::size_t seam_hi = 4 * (za.rows + gap);
  std::vector<double> intra;
  for (std::size_t t = 0; t < jumps.size(); ++t) {
    if (t >= seam_lo && t <= seam_hi) r.seam_jump = std::max(r.seam_jump, jumps[t]);
    else intra.push_back(jumps[t]);
  }
  r.median_jump = median(intra);
  return r;
}

EvalReport evaluate(const Models& models, const PreparedData& data, const EvalOptions& options) {
  const auto t0 = Clock::now();
  require_trained(models, ModuleId::kMatcher);
  const auto& topo = canonical_topology();
  const auto& ecfg = models.config.eval;
  EvalReport rep;

  const auto seen = subset(data.split.test, options.max_samples, mix_seed(options.seed, 11));
  const auto unseen = subset(data.split.unseen_test, options.max_samples, mix_seed(options.seed, 12));
  if (seen.size() < ecfg.pool_size) throw InvalidInput("evaluation needs at least pool_size seen test records");
  rep.seen_samples = seen.size();
  rep.unseen_samples = unseen.size();

  std::vector<MotionSequence> generated, real;
  Matrix sentences(seen.size(), embed::kTextDim);
  for (std::size_t k = 0; k < seen.size(); ++k) {
    const auto& rec = data.records[seen[k]];
    const MotionSequence recon = models.ae.decode(models.ae.encode(rec.motion), rec.motion.length());
    rep.recon_mme += metrics::mme(recon, rec.tpose_bone_lengths, topo);

    GenerationRequest req{rec.captions.front(), rec.species_name, rec.motion.length(), mix_seed(options.seed, seen[k]), {}};
    auto g = generate_motion(models, req);
    rep.seen_mme += metrics::mme(g.motion, data.species_bones.at(rec.species_name), topo);
    rep.seen_mme_vs_tpose += metrics::mme(g.motion, g.tpose_bones, topo);
    generated.push_back(std::move(g.motion));
    real.push_back(rec.motion);
    const Matrix s = embed::text_features(rec.captions.front()).sentence;
    std::copy(s.data.begin(), s.data.end(), sentences.row(k));
  }
  const double n_seen = static_cast<double>(seen.size());
  rep.recon_mme /= n_seen;
  rep.seen_mme /= n_seen;
  rep.seen_mme_vs_tpose /= n_seen;

  for (std::size_t i : unseen) {
    const auto& rec = data.records[i];
    GenerationRequest req{rec.captions.front(), rec.species_name, rec.motion.length(), mix_seed(options.seed, i), {}};
    const auto g = generate_motion(models, req);
    rep.unseen_mme_vs_tpose += metrics::mme(g.motion, g.tpose_bones, topo);
  }
  if (!unseen.empty()) rep.unseen_mme_vs_tpose /= static_cast<double>(unseen.size());

  const Matrix gen_feats = models.matcher.motion_features(generated);
  const Matrix real_feats = models.matcher.motion_features(real);
  const Matrix text_feats = models.matcher.text_features(sentences);
  const std::size_t pairs = std::min(ecfg.diversity_pairs, seen.size() / 2);
  {
    Rng rng(mix_seed(options.seed, 21));
    rep.r_precision = metrics::r_precision_curve(gen_feats, text_feats, 3, rng, ecfg.pool_size);
    rep.diversity = metrics::diversity(gen_feats, pairs, rng);
  }
  {
    Rng rng(mix_seed(options.seed, 21));
    rep.real_r_precision = metrics::r_precision_curve(real_feats, text_feats, 3, rng, ecfg.pool_size);
    rep.real_diversity = metrics::diversity(real_feats, pairs, rng);
  }
  rep.mm_dist = metrics::mm_dist(gen_feats, text_feats);
  rep.real_mm_dist = metrics::mm_dist(real_feats, text_feats);
  rep.fid = metrics::fid(gen_feats, real_feats);
  rep.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return rep;
}

std::string report_to_json(const EvalReport& report) { return report_json(report).dump(2); }

std::string aggregate_reports_json(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw InvalidInput("no evaluation reports to aggregate");
  Json runs = Json::array();
  for (const auto& r : reports) runs.push_back(report_json(r));
  Json summary;
  for (const auto& [key, first] : runs.front().items()) {
    if (!first.is_number()) continue;
    double s = 0.0, s2 = 0.0;
    for (const auto& r : runs) {
      const double v = r[key].get<double>();
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(runs.size());
    const double mean = s / n;
    summary[key] = {{"mean", mean}, {"std", std::sqrt(std::max(0.0, s2 / n - mean * mean))}};
  }
  Json j;
  j["repeats"] = reports.size();
  j["summary"] = summary;
  j["runs"] = runs;
  return j.dump(2);
}

PipelineResult run_pipeline(const RunConfig& config, const std::filesystem::path& run_dir) {
  const auto t0 = Clock::now();
  std::filesystem::create_directories(run_dir);
  JsonlLog log(run_dir / "log.jsonl");
  PipelineResult out;
  const PreparedData data = prepare_data(config.dataset);
  Models models(config);
  TrainOptions opts;
  opts.log = &log;
  out.stages.push_back(train_cgae(models, data, opts));
  out.stages.push_back(train_ae(models, data, opts));
  out.stages.push_back(train_mcm(models, data, opts));
  out.stages.push_back(train_generator(models, data, opts));
  out.stages.push_back(train_matcher(models, data, opts));
  save_checkpoint(run_dir / "checkpoint.bin", models.to_checkpoint());

  std::vector<EvalReport> reports;
  for (std::size_t k = 0; k < std::max<std::size_t>(1, config.eval.repeats); ++k)
    reports.push_back(evaluate(models, data, EvalOptions{config.eval.max_samples, mix_seed(config.eval.seed, k)}));
  out.report = reports.front();
  {
    std::ofstream f(run_dir / "eval_report.json");
    if (!f) throw IoError("cannot write eval report in " + run_dir.string());
    f << (reports.size() == 1 ? report_to_json(reports.front()) : aggregate_reports_json(reports)) << '\n';
  }
  out.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

}  // namespace crossmo::harness
