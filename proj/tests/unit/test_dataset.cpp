// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "crossmo/dataset.hpp"
#include "crossmo/errors.hpp"
#include "doctest.h"

using namespace crossmo;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("crossmo_test_" + name);
}

}  // namespace

TEST_CASE("species generation is deterministic and themed") {
  const auto a = generate_synthetic_species(0, 8), b = generate_synthetic_species(0, 8);
  REQUIRE(a.size() == 8);
  std::set<std::string> names;
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(a[i].bones == b[i].bones);
    names.insert(a[i].name);
    for (double v : a[i].bones.lengths) {
      CHECK(v >= 0.0);
      CHECK(v <= 0.8);
    }
    if (a[i].biped)
      for (std::size_t e : kTailBones) CHECK(a[i].bones[e] == 0.0);
  }
  CHECK(names.size() == 8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = i + 1; j < 8; ++j) CHECK(a[i].bones != a[j].bones);
  CHECK(generate_synthetic_species(1, 8)[0].bones != a[0].bones);
  CHECK(generate_synthetic_species(0, 20).size() == 20);
  CHECK_THROWS_AS(generate_synthetic_species(0, 1), InvalidInput);
}

TEST_CASE("every gait is rigid and captioned") {
  const auto& topo = canonical_topology();
  const auto species = generate_synthetic_species(3, 4);
  for (const auto& s : species)
    for (GaitKind g : kAllGaits) {
      const auto rec = generate_gait(s, g, 60, 17);
      const Matrix lens = bone_lengths_per_frame(rec.motion, topo);
      double worst = 0.0;
      for (std::size_t t = 0; t < lens.rows; ++t)
        for (std::size_t e = 0; e < kNumBones; ++e) worst = std::max(worst, std::abs(lens(t, e) - rec.tpose_bone_lengths[e]));
      CHECK_MESSAGE(worst <= 1e-6, s.name << " " << gait_name(g) << " " << worst);
      REQUIRE_FALSE(rec.captions.empty());
      for (const auto& c : rec.captions) CHECK(c.find(s.name) != std::string::npos);
      CHECK(rec.species_name == s.name);
      CHECK(rec.motion.length() == 60);
    }
}

TEST_CASE("gait semantics") {
  const auto s = generate_synthetic_species(0, 2)[0];
  const auto idle = generate_gait(s, GaitKind::kIdle, 40, 1);
  for (std::size_t t = 0; t < 40; ++t) {
    CHECK(std::abs(idle.motion.frames(t, 1)) < 1e-6);
    CHECK(std::abs(idle.motion.frames(t, 2)) < 1e-6);
  }
  const auto turn = generate_gait(s, GaitKind::kTurnLeft, 80, 2);
  const auto g = decode_to_global(turn.motion, 0.0, {0.0, 0.0});
  for (std::size_t t = 1; t < g.root_yaw.size(); ++t) CHECK(g.root_yaw[t] > g.root_yaw[t - 1]);
  const auto right = generate_gait(s, GaitKind::kTurnRight, 80, 2);
  const auto gr = decode_to_global(right.motion, 0.0, {0.0, 0.0});
  CHECK(gr.root_yaw.back() < gr.root_yaw.front());
  const auto run = generate_gait(s, GaitKind::kRun, 40, 3);
  const auto walk = generate_gait(s, GaitKind::kWalk, 40, 3);
  CHECK(run.motion.frames(5, 2) > walk.motion.frames(5, 2));
  CHECK(generate_gait(s, GaitKind::kWalk, 40, 3) == walk);
  CHECK(parse_gait("rear_up") == GaitKind::kRearUp);
  CHECK_FALSE(parse_gait("fly").has_value());
  CHECK_THROWS_AS(generate_gait(s, GaitKind::kWalk, 18, 1), InvalidInput);
  CHECK_THROWS_AS(generate_gait(s, GaitKind::kWalk, 300, 1), InvalidInput);
}

TEST_CASE("length filter keeps the open interval") {
  CHECK(filter_by_length({}).empty());
  std::vector<MotionRecord> recs;
  std::size_t expected = 0;
  for (std::size_t L = 17; L <= 301; L += 1) {
    MotionRecord r;
    r.motion = MotionSequence(Matrix(L, kFeatureDim));
    r.species_name = std::to_string(L);
    recs.push_back(r);
    expected += (L > 18 && L < 300);
  }
  const auto kept = filter_by_length(recs);
  CHECK(kept.size() == expected);
  CHECK(kept.front().motion.length() == 19);
  CHECK(kept.back().motion.length() == 299);
  for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i].motion.length() > kept[i - 1].motion.length());
}

TEST_CASE("splits partition the seen records") {
  std::vector<MotionRecord> recs(130);
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].species_name = i < 100 ? "seen" + std::to_string(i % 4) : "held";
  const auto s = make_splits(recs, {"held"}, 5);
  CHECK(s.train.size() == 80);
  CHECK(s.val.size() == 5);
  CHECK(s.test.size() == 15);
  CHECK(s.unseen_test.size() == 30);
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test, &s.unseen_test})
    for (std::size_t i : *part) CHECK(all.insert(i).second);
  CHECK(all.size() == 130);
  for (std::size_t i : s.unseen_test) CHECK(recs[i].species_name == "held");
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (std::size_t i : *part) CHECK(recs[i].species_name != "held");
  CHECK(make_splits(recs, {"held"}, 5) == s);
  CHECK(make_splits(recs, {"held"}, 6) != s);
  CHECK(make_splits(recs, {}, 5).unseen_test.empty());
  CHECK_THROWS_AS(make_splits(recs, {"dodo"}, 5), InvalidInput);
}

TEST_CASE("container round trip is exact and stable") {
  SyntheticDatasetOptions opts;
  opts.species_count = 2;
  opts.records_per_pair = 1;
  const auto recs = generate_dataset(opts);
  std::vector<MotionSequence> seqs;
  for (const auto& r : recs) seqs.push_back(r.motion);
  const NormStats stats = compute_norm_stats(seqs);
  const auto path = temp_file("container.umo");
  write_container(path, recs, canonical_topology(), stats);
  const auto back = read_container(path);
  CHECK(back.records == recs);
  CHECK(back.stats == stats);
  CHECK(back.topology.parent_index == canonical_topology().parent_index);
  CHECK(back.topology.joint_names == canonical_topology().joint_names);
  CHECK(back.topology.bone_directions == canonical_topology().bone_directions);
  CHECK(serialize_container(recs, canonical_topology(), stats) == serialize_container(back.records, back.topology, back.stats));
  std::filesystem::remove(path);
}

TEST_CASE("container parse errors are categorised") {
  const auto recs = std::vector<MotionRecord>{generate_gait(generate_synthetic_species(0, 2)[1], GaitKind::kRun, 24, 1)};
  const auto bytes = serialize_container(recs, canonical_topology(), identity_stats());
  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      parse_container(std::move(b));
    } catch (const ParseError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == static_cast<int>(ParseError::Kind::kMagicMismatch));
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK(kind_of(bad_version) == static_cast<int>(ParseError::Kind::kVersionMismatch));
  auto cut = bytes;
  cut.resize(cut.size() - 7);
  CHECK(kind_of(cut) == static_cast<int>(ParseError::Kind::kTruncated));
  auto extra = bytes;
  extra.push_back(0);
  CHECK(kind_of(extra) == static_cast<int>(ParseError::Kind::kMalformed));
  CHECK(kind_of(bytes) == -1);
}

TEST_CASE("manifest JSON round trip") {
  SplitManifest m;
  m.container = "toy.umo";
  m.split_seed = 3;
  m.holdout_species = {"wolf"};
  m.split = {{0, 3}, {1}, {4}, {2}};
  const auto back = manifest_from_json(manifest_to_json(m, 6));
  CHECK(back.split == m.split);
  CHECK(back.container == m.container);
  CHECK(back.holdout_species == m.holdout_species);
  CHECK_THROWS_AS(manifest_from_json("{not json"), ParseError);
}

TEST_CASE("toy dataset shape") {
  const auto recs = generate_dataset({});
  CHECK(recs.size() == 8 * 6 * 25);
  for (const auto& r : recs) {
    CHECK(r.motion.length() >= 32);
    CHECK(r.motion.length() <= 96);
  }
  CHECK(generate_dataset({}) == recs);
}
