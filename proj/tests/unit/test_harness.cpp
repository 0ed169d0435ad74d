// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "crossmo/checkpoint.hpp"
#include "crossmo/config.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/harness.hpp"
#include "crossmo/plot.hpp"
#include "doctest.h"
#include "tiny_config.hpp"

using namespace crossmo;
using namespace crossmo::harness;
namespace fs = std::filesystem;

namespace {

RunConfig tiny() { return config_from_json(testing::kTinyConfigJson); }

const PreparedData& tiny_data() {
  static const PreparedData data = prepare_data(tiny().dataset);
  return data;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crossmo_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::unique_ptr<Models> trained_bundle() {
  auto m = std::make_unique<Models>(tiny());
  train_cgae(*m, tiny_data());
  train_ae(*m, tiny_data());
  train_mcm(*m, tiny_data());
  train_generator(*m, tiny_data());
  train_matcher(*m, tiny_data());
  return m;
}

}  // namespace

TEST_CASE("config round trips through json") {
  const RunConfig c = tiny();
  CHECK(c.gen.latent_dim == 8);
  CHECK(c.mcm.latent_dim == 8);
  CHECK(c.ae_train.steps == 3);
  CHECK(c.ae_train.lr == default_config().ae_train.lr);
  const std::string text = config_to_json(c);
  CHECK(config_to_json(config_from_json(text)) == text);
  CHECK(config_to_json(default_config()) == config_to_json(config_from_json("{}")));
}

TEST_CASE("config rejects unknown keys and bad values") {
  CHECK_THROWS_AS(config_from_json(R"({"ae": {"chanels": 8}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"sed": 1})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"ae": {"latent_dim": 0}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"gen": {"heads": 0}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"gen": {"heads": 5}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"gen": {"mask_ratio_min": 0.9, "mask_ratio_max": 0.5}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"ae": {"channels": "wide"}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/crossmo.json"), IoError);
}

TEST_CASE("learning rate follows a cosine decay") {
  const StageSchedule s{1e-3, 8, 100, 1.0, 0.1};
  CHECK(scheduled_lr(s, 0) == doctest::Approx(1e-3));
  CHECK(scheduled_lr(s, 50) == doctest::Approx(0.55e-3));
  CHECK(scheduled_lr(s, 100) == doctest::Approx(1e-4));
  CHECK(scheduled_lr(s, 500) == doctest::Approx(1e-4));
  for (int t = 1; t <= 100; ++t) CHECK(scheduled_lr(s, t) <= scheduled_lr(s, t - 1));
}

TEST_CASE("run directory precedence") {
  ::unsetenv("CROSSMO_RUN_DIR");
  CHECK(resolve_run_dir(std::nullopt) == fs::path("runs"));
  ::setenv("CROSSMO_RUN_DIR", "/tmp/from_env", 1);
  CHECK(resolve_run_dir(std::nullopt) == fs::path("/tmp/from_env"));
  CHECK(resolve_run_dir(fs::path("/tmp/explicit")) == fs::path("/tmp/explicit"));
  ::unsetenv("CROSSMO_RUN_DIR");
}

TEST_CASE("jsonl log writes one object per line") {
  const fs::path dir = scratch("log");
  {
    JsonlLog log(dir / "log.jsonl");
    log.write("ae", 1, {{"loss", 0.5}, {"lr", 1e-3}});
    log.write("ae", 2, {{"loss", 0.25}});
  }
  std::ifstream in(dir / "log.jsonl");
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["stage"] == "ae");
  CHECK(rows[1]["step"] == 2);
  CHECK(rows[1]["loss"] == 0.25);
  JsonlLog off;
  CHECK_FALSE(off.enabled());
  off.write("x", 0, {});
}

TEST_CASE("prepared data holds out whole species") {
  const auto& d = tiny_data();
  REQUIRE(d.holdout.size() == 1);
  std::set<std::string> train_species;
  for (std::size_t i : d.split.train) train_species.insert(d.records[i].species_name);
  CHECK(train_species.count(d.holdout.front()) == 0);
  CHECK_FALSE(d.split.unseen_test.empty());
  for (std::size_t i : d.split.unseen_test) CHECK(d.records[i].species_name == d.holdout.front());

  // Canonical bones are the per-species mean of the record bones.
  const std::string sp = d.records.front().species_name;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : d.records)
    if (r.species_name == sp) {
      sum += r.tpose_bone_lengths[3];
      ++n;
    }
  CHECK(d.species_bones.at(sp)[3] == doctest::Approx(sum / double(n)).epsilon(1e-14));
}

TEST_CASE("zero training steps leave parameters at their initial values") {
  Models fresh(tiny());
  Models m(tiny());
  TrainOptions zero;
  zero.steps = 0;
  train_cgae(m, tiny_data(), zero);
  train_ae(m, tiny_data(), zero);
  for (ModuleId id : {ModuleId::kCgae, ModuleId::kAe}) CHECK(m.params(id).checksum() == fresh.params(id).checksum());
}

TEST_CASE("stages refuse to run without their prerequisites") {
  Models m(tiny());
  CHECK_THROWS_AS(train_mcm(m, tiny_data()), ConfigError);
  CHECK_THROWS_AS(train_generator(m, tiny_data()), ConfigError);
  CHECK_THROWS_AS(require_trained(m, ModuleId::kMatcher), ConfigError);
  GenerationRequest req;
  req.caption = "a wolf walks";
  req.species = "wolf";
  CHECK_THROWS_AS(generate_motion(m, req), ConfigError);
}

TEST_CASE("training is deterministic and every stage reduces to a checkpoint") {
  const auto a = trained_bundle();
  const auto b = trained_bundle();
  for (std::size_t i = 0; i < kModuleCount; ++i) {
    const auto id = static_cast<ModuleId>(i);
    CHECK(a->params(id).checksum() == b->params(id).checksum());
    CHECK(a->stage(id).steps == 3);
  }
  CHECK(serialize_checkpoint(a->to_checkpoint()) == serialize_checkpoint(b->to_checkpoint()));
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  const auto m = trained_bundle();
  const fs::path dir = scratch("ckpt");
  const Checkpoint ck = m->to_checkpoint();
  CHECK(ck.step == 15);
  save_checkpoint(dir / "a.bin", ck);
  const auto restored = Models::from_checkpoint(load_checkpoint(dir / "a.bin"));
  save_checkpoint(dir / "b.bin", restored->to_checkpoint());
  std::ifstream fa(dir / "a.bin", std::ios::binary), fb(dir / "b.bin", std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(!sa.empty());
  CHECK(sa == sb);
  CHECK(restored->generator.trained_steps == m->generator.trained_steps);

  // A restored bundle generates exactly what the original does.
  GenerationRequest req;
  req.caption = "a wolf runs forward";
  req.species = tiny_data().records.front().species_name;
  req.frames = 16;
  req.seed = 5;
  CHECK(generate_motion(*m, req).motion.frames == generate_motion(*restored, req).motion.frames);
}

TEST_CASE("corrupt checkpoints are rejected with a parse error") {
  Models m(tiny());
  train_cgae(m, tiny_data());
  const auto bytes = serialize_checkpoint(m.to_checkpoint());
  auto bad = bytes;
  bad[0] = 'Z';
  CHECK_THROWS_AS(parse_checkpoint(bad), ParseError);
  bad = bytes;
  bad.resize(bytes.size() / 2);
  CHECK_THROWS_AS(parse_checkpoint(bad), ParseError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(parse_checkpoint(bad), ParseError);
  bad = bytes;
  bad[4] = 9;  // version
  try {
    parse_checkpoint(bad);
    FAIL("expected a version error");
  } catch (const ParseError& e) {
    CHECK(e.kind() == ParseError::Kind::kVersionMismatch);
  }
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), IoError);
}

TEST_CASE("restoring into a differently shaped module fails") {
  Models m(tiny());
  const ParamBlock block = capture_params(m.params(ModuleId::kAe), 0, nullptr);
  CHECK_THROWS_AS(restore_params(block, m.params(ModuleId::kCgae)), ShapeMismatch);
  RunConfig wider = tiny();
  wider.ae.channels = 12;
  Models w(wider);
  CHECK_THROWS_AS(restore_params(block, w.params(ModuleId::kAe)), ShapeMismatch);
}

TEST_CASE("frame jumps of a still pose are zero") {
  const auto& rec = tiny_data().records.front();
  Matrix still(6, kFeatureDim);
  for (std::size_t t = 0; t < 6; ++t) std::copy(rec.motion.frames.row(0), rec.motion.frames.row(0) + kFeatureDim, still.row(t));
  const auto j = frame_jumps(MotionSequence(still));
  CHECK(j.size() == 5);
  for (double v : j) CHECK(v == 0.0);
  const auto moving = frame_jumps(rec.motion);
  CHECK(moving.size() == rec.motion.length() - 1);
  double total = 0.0;
  for (double v : moving) total += v;
  CHECK(total > 0.0);
}

TEST_CASE("svg line charts are well formed") {
  plot::ChartOptions o;
  o.title = "seam <test> & more";
  o.highlight = std::make_pair(2.0, 4.0);
  o.reference = 0.5;
  const std::string svg = plot::line_chart_svg({{"x", {0, 1, 2, 3, 4, 5}}, {"y", {1, 0.5, 0.2, 0.1, 0.3, 0.9}}}, o);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("seam &lt;test&gt; &amp; more") != std::string::npos);
  std::size_t polylines = 0;
  for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++polylines;
  CHECK(polylines == 2);
  CHECK(svg.find("stroke-dasharray") != std::string::npos);
  // Degenerate input still renders.
  CHECK(plot::line_chart_svg({{"flat", {1.0, 1.0}}}, {}).find("<polyline") != std::string::npos);
}

TEST_CASE("evaluation report is complete json") {
  const auto m = trained_bundle();
  const auto r = evaluate(*m, tiny_data(), EvalOptions{6, 2});
  CHECK(r.seen_samples > 0);
  CHECK(r.unseen_samples > 0);
  CHECK(r.r_precision.size() == 3);
  const auto j = nlohmann::json::parse(report_to_json(r));
  for (const char* key : {"recon_mme", "seen_mme", "unseen_mme_vs_tpose", "unseen_to_seen_ratio", "fid", "r_precision"})
    CHECK_MESSAGE(j.contains(key), key);
  const auto agg = nlohmann::json::parse(aggregate_reports_json({r, r}));
  CHECK(agg.dump().find("std") != std::string::npos);
}
