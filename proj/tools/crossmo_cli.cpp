// SPDX-License-Identifier: Apache-2.0
//
// crossmo: command-line front end for dataset preparation, staged training,
// generation, transitions, evaluation, retargeting and plotting.
//
// Exit codes: 0 ok, 2 usage, 3 config, 4 io, 5 numeric, 6 invalid input,
// 1 anything else.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crossmo/checkpoint.hpp"
#include "crossmo/config.hpp"
#include "crossmo/dataset.hpp"
#include "crossmo/embeddings.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/harness.hpp"
#include "crossmo/metrics.hpp"
#include "crossmo/plot.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace crossmo;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kUsage = 2, kConfig = 3, kIo = 4, kNumeric = 5, kInvalid = 6 };

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

Json parse_json_file(const fs::path& p) {
  try {
    return Json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(p.string() + " is not valid JSON: " + e.what());
  }
}

// --- motion files -----------------------------------------------------------

Json bones_json(const BoneLengthVector& b) { return Json(std::vector<double>(b.lengths.begin(), b.lengths.end())); }

BoneLengthVector bones_from_json(const Json& j) {
  if (!j.is_array() || j.size() != kNumBones) throw InvalidInput("bone vector must have 24 entries");
  BoneLengthVector b;
  for (std::size_t e = 0; e < kNumBones; ++e) b[e] = j[e].get<double>();
  return b;
}

void write_motion(const fs::path& path, const MotionSequence& m, Json extra) {
  Json frames = Json::array();
  for (std::size_t t = 0; t < m.length(); ++t) frames.push_back(std::vector<double>(m.frames.row(t), m.frames.row(t) + kFeatureDim));
  extra["length"] = m.length();
  extra["frames"] = std::move(frames);
  write_text(path, extra.dump() + "\n");
}

MotionSequence read_motion(const fs::path& path, Json* doc = nullptr) {
  Json j = parse_json_file(path);
  if (!j.contains("frames") || !j["frames"].is_array()) throw InvalidInput(path.string() + ": missing frames");
  const auto& f = j["frames"];
  Matrix m(f.size(), kFeatureDim);
  for (std::size_t t = 0; t < f.size(); ++t) {
    if (!f[t].is_array() || f[t].size() != kFeatureDim) throw InvalidInput(path.string() + ": frames must be 76 wide");
    for (std::size_t c = 0; c < kFeatureDim; ++c) m(t, c) = f[t][c].get<double>();
  }
  if (doc) *doc = std::move(j);
  return MotionSequence(std::move(m));
}

// --- shared state -----------------------------------------------------------

struct Common {
  std::string run_dir;
  fs::path dir() const { return harness::resolve_run_dir(run_dir.empty() ? std::nullopt : std::optional<fs::path>(run_dir)); }
  harness::JsonlLog log() const { return harness::JsonlLog(dir() / "log.jsonl"); }
};

void log_event(harness::JsonlLog& log, const std::string& command, Json fields) {
  Json j;
  j["command"] = command;
  for (auto& [k, v] : fields.items()) j[k] = v;
  log.write_raw(j.dump());
}

std::unique_ptr<harness::Models> open_models(const fs::path& ckpt, const std::string& config_path) {
  if (fs::exists(ckpt)) return harness::Models::from_checkpoint(load_checkpoint(ckpt));
  if (config_path.empty()) throw IoError("checkpoint " + ckpt.string() + " not found and no --config given");
  return std::make_unique<harness::Models>(load_config(config_path));
}

// --- commands -----------------------------------------------------------

struct DatasetGenArgs {
  std::uint64_t seed = 0;
  std::size_t species = 8;
  std::size_t records_per_pair = 25;
  std::size_t min_length = 32;
  std::size_t max_length = 96;
  std::uint64_t split_seed = 0;
  std::size_t holdout_count = 2;
  std::string out = "toy.umo4";
};

std::string manifest_path_for(const std::string& container) { return container + ".manifest.json"; }

int cmd_dataset_gen(const Common& common, const DatasetGenArgs& a) {
  SyntheticDatasetOptions o;
  o.seed = a.seed;
  o.species_count = a.species;
  o.records_per_pair = a.records_per_pair;
  o.min_length = a.min_length;
  o.max_length = a.max_length;
  std::vector<SpeciesProfile> species;
  auto records = filter_by_length(generate_dataset(o, &species));
  if (a.holdout_count >= species.size()) throw ConfigError("--holdout-count leaves no seen species");
  std::vector<MotionSequence> seqs;
  for (const auto& r : records) seqs.push_back(r.motion);
  write_container(a.out, records, canonical_topology(), compute_norm_stats(seqs));

  SplitManifest m;
  m.container = fs::path(a.out).filename().string();
  m.split_seed = a.split_seed;
  for (std::size_t i = species.size() - a.holdout_count; i < species.size(); ++i) m.holdout_species.push_back(species[i].name);
  m.split = make_splits(records, {m.holdout_species.begin(), m.holdout_species.end()}, a.split_seed);
  write_text(manifest_path_for(a.out), manifest_to_json(m, records.size()) + "\n");

  auto log = common.log();
  log_event(log, "dataset gen", {{"container", a.out}, {"records", records.size()}, {"species", species.size()}});
  std::cout << "wrote " << records.size() << " records to " << a.out << "\n";
  return kOk;
}

int cmd_dataset_split(const Common& common, const std::string& container, std::uint64_t split_seed,
                      std::vector<std::string> holdout, const std::string& out) {
  const auto c = read_container(container);
  SplitManifest m;
  m.container = fs::path(container).filename().string();
  m.split_seed = split_seed;
  m.holdout_species = std::move(holdout);
  m.split = make_splits(c.records, {m.holdout_species.begin(), m.holdout_species.end()}, split_seed);
  const std::string path = out.empty() ? manifest_path_for(container) : out;
  write_text(path, manifest_to_json(m, c.records.size()) + "\n");
  auto log = common.log();
  log_event(log, "dataset split", {{"manifest", path}, {"train", m.split.train.size()}, {"val", m.split.val.size()},
                                   {"test", m.split.test.size()}, {"unseen_test", m.split.unseen_test.size()}});
  std::cout << "wrote " << path << "\n";
  return kOk;
}

int cmd_dataset_inspect(const std::string& container) {
  const auto c = read_container(container);
  std::map<std::string, std::size_t> species;
  std::size_t min_len = SIZE_MAX, max_len = 0, frames = 0;
  for (const auto& r : c.records) {
    ++species[r.species_name];
    min_len = std::min(min_len, r.motion.length());
    max_len = std::max(max_len, r.motion.length());
    frames += r.motion.length();
  }
  Json j;
  j["records"] = c.records.size();
  j["frames"] = frames;
  j["min_length"] = c.records.empty() ? 0 : min_len;
  j["max_length"] = max_len;
  j["joints"] = c.topology.joint_names.size();
  j["species"] = species;
  std::cout << j.dump(2) << "\n";
  return kOk;
}

struct TrainArgs {
  std::string stage;
  std::string config;
  std::string checkpoint;
  std::optional<std::size_t> steps;
};

int cmd_train(const Common& common, const TrainArgs& a) {
  const fs::path ckpt = a.checkpoint.empty() ? common.dir() / "checkpoint.bin" : fs::path(a.checkpoint);
  auto models = open_models(ckpt, a.config);
  const auto data = harness::prepare_data(models->config.dataset);
  auto log = common.log();
  harness::TrainOptions opts;
  opts.steps = a.steps;
  opts.log = &log;
  harness::StageReport r;
  if (a.stage == "cgae") r = harness::train_cgae(*models, data, opts);
  else if (a.stage == "ae") r = harness::train_ae(*models, data, opts);
  else if (a.stage == "mcm") r = harness::train_mcm(*models, data, opts);
  else if (a.stage == "gen") r = harness::train_generator(*models, data, opts);
  else if (a.stage == "matcher") r = harness::train_matcher(*models, data, opts);
  else throw ConfigError("unknown stage " + a.stage);
  save_checkpoint(ckpt, models->to_checkpoint());
  log_event(log, "train " + a.stage, {{"steps", r.steps}, {"first_loss", r.first_loss}, {"final_loss", r.final_loss},
                                      {"seconds", r.seconds}, {"checkpoint", ckpt.string()}});
  std::cout << a.stage << ": " << r.steps << " steps, loss " << r.first_loss << " -> " << r.final_loss << " ("
            << r.seconds << " s)\n";
  return kOk;
}

struct GenerateArgs {
  std::string checkpoint;
  std::string caption;
  std::string species;
  std::size_t frames = 64;
  std::uint64_t seed = 0;
  std::string out = "motion.json";
};

int cmd_generate(const Common& common, const GenerateArgs& a) {
  const fs::path ckpt = a.checkpoint.empty() ? common.dir() / "checkpoint.bin" : fs::path(a.checkpoint);
  const auto models = harness::Models::from_checkpoint(load_checkpoint(ckpt));
  const auto g = harness::generate_motion(*models, {a.caption, a.species, a.frames, a.seed, {}});
  const double err = metrics::mme(g.motion, g.tpose_bones, canonical_topology());
  write_motion(a.out, g.motion, {{"caption", a.caption}, {"species", a.species}, {"seed", a.seed},
                                 {"tpose_bones", bones_json(g.tpose_bones)}, {"mme_vs_tpose", err}});
  auto log = common.log();
  log_event(log, "generate", {{"out", a.out}, {"frames", a.frames}, {"mme_vs_tpose", err}});
  std::cout << "wrote " << a.out << " (" << a.frames << " frames, MME vs T-pose " << err << " m)\n";
  return kOk;
}

struct TransitionArgs {
  std::string checkpoint;
  std::string a, b;
  std::size_t gap = 4;
  std::string caption;
  std::string species;
  std::uint64_t seed = 0;
  std::string out = "transition.json";
};

int cmd_transition(const Common& common, const TransitionArgs& a) {
  const fs::path ckpt = a.checkpoint.empty() ? common.dir() / "checkpoint.bin" : fs::path(a.checkpoint);
  const auto models = harness::Models::from_checkpoint(load_checkpoint(ckpt));
  Json doc_b;
  const MotionSequence ma = read_motion(a.a);
  const MotionSequence mb = read_motion(a.b, &doc_b);
  BoneLengthVector target;
  if (!a.species.empty()) {
    harness::require_trained(*models, ModuleId::kCgae);
    target = models->cgae.sample_bones(embed::species_embed(a.species), mix_seed(a.seed, 1));
  } else if (doc_b.contains("tpose_bones")) {
    target = bones_from_json(doc_b["tpose_bones"]);
  } else {
    throw InvalidInput("transition needs --species or a tpose_bones entry in the second motion");
  }
  const auto r = harness::cross_species_transition(*models, ma, mb, a.gap, a.caption, target, a.seed);
  const std::size_t seam_begin = 4 * r.prefix_latents, seam_end = 4 * (r.prefix_latents + r.gap_latents);
  write_motion(a.out, r.motion, {{"caption", a.caption}, {"seam_begin", seam_begin}, {"seam_end", seam_end},
                                 {"seam_jump", r.seam_jump}, {"median_jump", r.median_jump},
                                 {"tpose_bones", bones_json(target)}});
  auto log = common.log();
  log_event(log, "transition", {{"out", a.out}, {"seam_jump", r.seam_jump}, {"median_jump", r.median_jump},
                                {"prefix_identical", r.prefix_identical}, {"suffix_identical", r.suffix_identical}});
  std::cout << "wrote " << a.out << " (seam jump " << r.seam_jump << ", median jump " << r.median_jump << ")\n";
  return kOk;
}

int cmd_eval(const Common& common, const std::string& checkpoint, std::size_t repeats, const std::string& out) {
  const fs::path ckpt = checkpoint.empty() ? common.dir() / "checkpoint.bin" : fs::path(checkpoint);
  const auto models = harness::Models::from_checkpoint(load_checkpoint(ckpt));
  const auto data = harness::prepare_data(models->config.dataset);
  std::vector<harness::EvalReport> reports;
  for (std::size_t k = 0; k < std::max<std::size_t>(1, repeats); ++k)
    reports.push_back(harness::evaluate(*models, data, {models->config.eval.max_samples, mix_seed(models->config.eval.seed, k)}));
  const std::string text = reports.size() == 1 ? harness::report_to_json(reports.front()) : harness::aggregate_reports_json(reports);
  const fs::path path = out.empty() ? common.dir() / "eval_report.json" : fs::path(out);
  write_text(path, text + "\n");
  auto log = common.log();
  log_event(log, "eval", {{"report", path.string()}, {"repeats", reports.size()}});
  std::cout << text << "\n";
  return kOk;
}

// Input: {"frames": [[[x,y,z] per source joint] per frame],
//         "mapping": [[source, unified], ...], "virtual": [unified...], "scale": s}
int cmd_retarget(const Common& common, const std::string& input, const std::string& out) {
  const Json j = parse_json_file(input);
  JointMapping mapping;
  std::vector<std::vector<Vec3>> frames;
  try {
    for (const auto& p : j.at("mapping")) mapping.source_to_unified.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
    if (j.contains("virtual")) mapping.virtual_joints = j["virtual"].get<std::vector<std::size_t>>();
    for (const auto& f : j.at("frames")) {
      std::vector<Vec3> joints;
      for (const auto& p : f) joints.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
      frames.push_back(std::move(joints));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed retarget input: ") + e.what());
  }
  const double scale = j.value("scale", 1.0);
  GlobalMotion g;
  g.joints_world = retarget_to_unified(frames, mapping, scale);
  // Facing from the hip axis (right hip minus left hip is +x at rest), unwrapped.
  double prev = 0.0;
  for (std::size_t t = 0; t < g.joints_world.size(); ++t) {
    const Vec3& l = g.joints_world[t][6];
    const Vec3& r = g.joints_world[t][10];
    double yaw = std::atan2(-(r[2] - l[2]), r[0] - l[0]);
    if (t > 0) {
      while (yaw - prev > std::numbers::pi) yaw -= 2 * std::numbers::pi;
      while (yaw - prev < -std::numbers::pi) yaw += 2 * std::numbers::pi;
    }
    g.root_yaw.push_back(yaw);
    prev = yaw;
  }
  const MotionSequence m = encode_features(g, canonical_topology());
  write_motion(out, m, {{"source", input}});
  auto log = common.log();
  log_event(log, "retarget", {{"out", out}, {"frames", m.length()}});
  std::cout << "wrote " << out << " (" << m.length() << " frames)\n";
  return kOk;
}

int cmd_export_plot(const Common& common, const std::string& motion_path, std::vector<std::size_t> joints,
                    const std::string& out_dir) {
  Json doc;
  const MotionSequence m = read_motion(motion_path, &doc);
  if (m.length() < 2) throw InvalidInput("plotting needs at least two frames");
  const auto& topo = canonical_topology();
  if (joints.empty()) joints = {5, 9, 13, 17, 21, 24};
  const fs::path dir = out_dir.empty() ? common.dir() / "plots" : fs::path(out_dir);
  std::optional<std::pair<double, double>> seam;
  if (doc.contains("seam_begin") && doc.contains("seam_end"))
    seam = std::make_pair(doc["seam_begin"].get<double>(), doc["seam_end"].get<double>());

  std::vector<std::string> written;
  for (std::size_t j : joints) {
    if (j >= kNumJoints) throw InvalidInput("joint index out of range");
    std::vector<plot::Series> s(3);
    s[0].label = "x";
    s[1].label = "y";
    s[2].label = "z";
    for (std::size_t t = 0; t < m.length(); ++t) {
      const Frame f = local_frame(m, t);
      for (int k = 0; k < 3; ++k) s[k].y.push_back(f[j][k]);
    }
    plot::ChartOptions o;
    o.title = "joint " + std::to_string(j) + " (" + topo.joint_names[j] + "), root-local";
    o.y_label = "metres";
    o.highlight = seam;
    const fs::path p = dir / ("joint_" + std::to_string(j) + "_" + topo.joint_names[j] + ".svg");
    write_text(p, plot::line_chart_svg(s, o));
    written.push_back(p.string());
  }
  const auto jumps = harness::frame_jumps(m);
  std::vector<double> sorted = jumps;
  std::sort(sorted.begin(), sorted.end());
  plot::ChartOptions o;
  o.title = "per-frame max joint displacement";
  o.y_label = "metres";
  o.highlight = seam;
  o.reference = sorted[sorted.size() / 2];
  const fs::path p = dir / "seam_continuity.svg";
  write_text(p, plot::line_chart_svg({{"max joint jump", jumps}}, o));
  written.push_back(p.string());

  auto log = common.log();
  log_event(log, "export-plot", {{"files", written}});
  for (const auto& w : written) std::cout << "wrote " << w << "\n";
  return kOk;
}

int cmd_pipeline(const Common& common, const std::string& config_path) {
  const RunConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
  const auto r = harness::run_pipeline(cfg, common.dir());
  for (const auto& s : r.stages)
    std::cout << s.stage << ": " << s.steps << " steps, loss " << s.first_loss << " -> " << s.final_loss << " (" << s.seconds
              << " s)\n";
  std::cout << harness::report_to_json(r.report) << "\n";
  std::cout << "total " << r.seconds << " s; outputs in " << common.dir().string() << "\n";
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"crossmo: text-driven cross-species motion toolkit"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--run-dir", common.run_dir, "run directory (default $CROSSMO_RUN_DIR, then ./runs)");
  std::function<int()> action;

  auto* dataset = app.add_subcommand("dataset", "synthetic corpus tools");
  dataset->require_subcommand(1);
  DatasetGenArgs gen_args;
  auto* dgen = dataset->add_subcommand("gen", "generate the toy corpus and its split manifest");
  dgen->add_option("--seed", gen_args.seed);
  dgen->add_option("--species", gen_args.species)->check(CLI::Range(2, 1000));
  dgen->add_option("--records-per-pair", gen_args.records_per_pair);
  dgen->add_option("--min-length", gen_args.min_length);
  dgen->add_option("--max-length", gen_args.max_length);
  dgen->add_option("--split-seed", gen_args.split_seed);
  dgen->add_option("--holdout-count", gen_args.holdout_count);
  dgen->add_option("--out,-o", gen_args.out);
  dgen->callback([&] { action = [&] { return cmd_dataset_gen(common, gen_args); }; });

  std::string split_container, split_out;
  std::uint64_t split_seed = 0;
  std::vector<std::string> holdout;
  auto* dsplit = dataset->add_subcommand("split", "write a split manifest for a container");
  dsplit->add_option("--container", split_container)->required();
  dsplit->add_option("--split-seed", split_seed);
  dsplit->add_option("--holdout", holdout, "held-out species names");
  dsplit->add_option("--out,-o", split_out);
  dsplit->callback([&] { action = [&] { return cmd_dataset_split(common, split_container, split_seed, holdout, split_out); }; });

  std::string inspect_container;
  auto* dinspect = dataset->add_subcommand("inspect", "summarise a container");
  dinspect->add_option("container", inspect_container)->required();
  dinspect->callback([&] { action = [&] { return cmd_dataset_inspect(inspect_container); }; });

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train one stage and update the checkpoint");
  train->add_option("stage", train_args.stage)->required()->check(CLI::IsMember({"cgae", "ae", "mcm", "gen", "matcher"}));
  train->add_option("--config,-c", train_args.config, "config used when the checkpoint does not exist yet");
  train->add_option("--checkpoint", train_args.checkpoint, "default <run-dir>/checkpoint.bin");
  train->add_option("--steps", train_args.steps);
  train->callback([&] { action = [&] { return cmd_train(common, train_args); }; });

  GenerateArgs g;
  auto* generate = app.add_subcommand("generate", "generate a motion for a caption and species");
  generate->add_option("--checkpoint", g.checkpoint);
  generate->add_option("--caption", g.caption)->required();
  generate->add_option("--species", g.species)->required();
  generate->add_option("--frames", g.frames)->check(CLI::Range(4, 100000));
  generate->add_option("--seed", g.seed);
  generate->add_option("--out,-o", g.out);
  generate->callback([&] { action = [&] { return cmd_generate(common, g); }; });

  TransitionArgs t;
  auto* transition = app.add_subcommand("transition", "in-fill a transition between two motions");
  transition->add_option("--checkpoint", t.checkpoint);
  transition->add_option("--from", t.a, "first motion file")->required();
  transition->add_option("--to", t.b, "second motion file")->required();
  transition->add_option("--gap", t.gap, "generated latent tokens")->check(CLI::Range(1, 10000));
  transition->add_option("--caption", t.caption)->required();
  transition->add_option("--species", t.species, "sample the target T-pose for this species");
  transition->add_option("--seed", t.seed);
  transition->add_option("--out,-o", t.out);
  transition->callback([&] { action = [&] { return cmd_transition(common, t); }; });

  std::string eval_ckpt, eval_out;
  std::size_t repeats = 1;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test splits");
  eval->add_option("--checkpoint", eval_ckpt);
  eval->add_option("--repeats", repeats);
  eval->add_option("--out,-o", eval_out);
  eval->callback([&] { action = [&] { return cmd_eval(common, eval_ckpt, repeats, eval_out); }; });

  std::string rt_in, rt_out = "retargeted.json";
  auto* retarget = app.add_subcommand("retarget", "map a source skeleton onto the unified skeleton");
  retarget->add_option("input", rt_in)->required();
  retarget->add_option("--out,-o", rt_out);
  retarget->callback([&] { action = [&] { return cmd_retarget(common, rt_in, rt_out); }; });

  std::string plot_in, plot_dir;
  std::vector<std::size_t> plot_joints;
  auto* export_plot = app.add_subcommand("export-plot", "write joint trajectory and seam plots as SVG");
  export_plot->add_option("motion", plot_in)->required();
  export_plot->add_option("--joints", plot_joints);
  export_plot->add_option("--out-dir", plot_dir);
  export_plot->callback([&] { action = [&] { return cmd_export_plot(common, plot_in, plot_joints, plot_dir); }; });

  std::string pipe_config;
  auto* pipeline = app.add_subcommand("pipeline", "train every stage, then evaluate");
  pipeline->add_option("--config,-c", pipe_config);
  pipeline->callback([&] { action = [&] { return cmd_pipeline(common, pipe_config); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  return action ? action() : kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
