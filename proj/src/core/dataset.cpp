// SPDX-License-Identifier: Apache-2.0

#include "crossmo/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <nlohmann/json.hpp>

#include "crossmo/binary_io.hpp"
#include "crossmo/errors.hpp"
#include "crossmo/rng.hpp"

namespace crossmo {
namespace {

constexpr double kPi = std::numbers::pi;

// Bone order: spine x3, neck, head, L hip/thigh/shin/foot, R hip/thigh/shin/foot,
// L scapula/upper/fore/hand, R scapula/upper/fore/hand, tail x3.
constexpr std::array<double, kNumBones> kBipedNominal = {
    0.12, 0.12, 0.14, 0.10, 0.12, 0.10, 0.42, 0.40, 0.14, 0.10, 0.42, 0.40,
    0.14, 0.16, 0.28, 0.25, 0.08, 0.16, 0.28, 0.25, 0.08, 0.0,  0.0,  0.0};
constexpr std::array<double, kNumBones> kQuadrupedNominal = {
    0.25, 0.25, 0.25, 0.22, 0.20, 0.10, 0.30, 0.30, 0.10, 0.10, 0.30, 0.30,
    0.10, 0.10, 0.28, 0.28, 0.10, 0.10, 0.28, 0.28, 0.10, 0.20, 0.18, 0.15};

constexpr bool is_limb_bone(std::size_t e) { return e >= 5 && e <= 20; }

const std::vector<std::string>& quadruped_names() {
  static const std::vector<std::string> n = {"tiger", "wolf", "horse", "deer", "bear", "fox", "lion", "cheetah"};
  return n;
}
const std::vector<std::string>& biped_names() {
  static const std::vector<std::string> n = {"human", "gorilla", "ostrich", "penguin", "chimpanzee", "bonobo", "orangutan", "gibbon"};
  return n;
}

Vec3 pitch_dir(double angle_from_up) { return {0.0, std::cos(angle_from_up), std::sin(angle_from_up)}; }
Vec3 hang_dir(double swing) { return {0.0, -std::cos(swing), std::sin(swing)}; }

Vec3 normalized(Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

struct GaitParams {
  double freq = 0.0;       // cycles per frame
  double amp = 0.0;        // limb swing amplitude, rad
  double speed = 0.0;      // m per frame
  double yaw_rate = 0.0;   // rad per frame
  double bob = 0.0;        // fraction of leg length
  bool rear = false;
};

GaitParams gait_params(GaitKind gait, double leg, Rng& rng) {
  const double cadence = rng.uniform(0.9, 1.1);
  const double pace = rng.uniform(0.9, 1.1);
  GaitParams p;
  switch (gait) {
    case GaitKind::kWalk:
    case GaitKind::kTurnLeft:
    case GaitKind::kTurnRight:
      p.freq = cadence / 32.0;
      p.amp = 0.45;
      p.speed = pace * 2.0 * leg * std::sin(p.amp) * 2.0 * p.freq;
      p.bob = 0.015;
      if (gait == GaitKind::kTurnLeft) p.yaw_rate = 0.03 * pace;
      if (gait == GaitKind::kTurnRight) p.yaw_rate = -0.03 * pace;
      break;
    case GaitKind::kRun:
      p.freq = cadence / 18.0;
      p.amp = 0.8;
      p.speed = pace * 3.0 * leg * std::sin(p.amp) * 2.0 * p.freq;
      p.bob = 0.05;
      break;
    case GaitKind::kIdle:
      p.freq = cadence / 60.0;
      p.amp = 0.03;
      p.bob = 0.005;
      break;
    case GaitKind::kRearUp:
      p.freq = cadence / 60.0;
      p.amp = 0.05;
      p.rear = true;
      break;
  }
  return p;
}

// Body-frame (facing +z) unit direction of every bone at one instant.
std::array<Vec3, kNumBones> body_directions(bool biped, const GaitParams& g, double phase, double rear) {
  std::array<Vec3, kNumBones> d{};
  const double swing_l = g.amp * std::sin(phase);
  const double swing_r = g.amp * std::sin(phase + kPi);
  auto leg = [&](std::size_t first, double swing, double side) {
    const double knee = 0.6 * g.amp * std::max(0.0, std::sin(phase + (side > 0 ? kPi : 0.0) + kPi / 2));
    d[first] = {side, 0.0, 0.0};
    d[first + 1] = hang_dir(swing);
    d[first + 2] = hang_dir(swing - knee);
    d[first + 3] = normalized({0.0, -0.3 * std::sin(swing - knee), 1.0});
  };
  leg(5, swing_l, -1.0);
  leg(9, swing_r, 1.0);

  if (biped) {
    const double sway = 0.04 * std::sin(2 * phase);
    d[0] = pitch_dir(sway);
    d[1] = pitch_dir(sway);
    d[2] = pitch_dir(sway);
    d[3] = pitch_dir(0.1 * rear);
    d[4] = pitch_dir(0.05);
    const double raise = 2.6 * rear;
    auto arm = [&](std::size_t first, double swing, double side) {
      d[first] = {side, 0.0, 0.0};
      d[first + 1] = hang_dir(swing + raise);
      d[first + 2] = hang_dir(swing + raise + 0.25);
      d[first + 3] = hang_dir(swing + raise + 0.25);
    };
    arm(13, -0.6 * swing_l, -1.0);
    arm(17, -0.6 * swing_r, 1.0);
  } else {
    const double body = kPi / 2 - 0.05 * std::sin(2 * phase) - 1.1 * rear;
    d[0] = pitch_dir(body);
    d[1] = pitch_dir(body);
    d[2] = pitch_dir(body);
    d[3] = pitch_dir(body - 0.8);
    d[4] = pitch_dir(kPi / 2 - 0.2 * rear);
    const double reach = 1.2 * rear;
    auto foreleg = [&](std::size_t first, double swing, double side) {
      const double knee = 0.5 * g.amp * std::max(0.0, std::sin(phase + (side > 0 ? 0.0 : kPi)));
      d[first] = {side, 0.0, 0.0};
      d[first + 1] = hang_dir(swing + reach);
      d[first + 2] = hang_dir(swing + reach + knee);
      d[first + 3] = normalized({0.0, -0.3, 1.0});
    };
    foreleg(13, g.amp * std::sin(phase + kPi / 2), -1.0);
    foreleg(17, g.amp * std::sin(phase + 3 * kPi / 2), 1.0);
  }
  const double wag = 0.35 * std::sin(2 * kPi * phase / (2 * kPi) + phase * 0.5);
  for (std::size_t k = 0; k < 3; ++k)
    d[21 + k] = normalized({std::sin(wag * static_cast<double>(k + 1)), -0.35, -1.0});
  return d;
}

const std::map<GaitKind, std::vector<std::string>>& caption_templates() {
  static const std::map<GaitKind, std::vector<std::string>> t = {
      {GaitKind::kWalk, {"the {} walks forward", "a {} is walking ahead", "the {} strolls forward at a steady pace"}},
      {GaitKind::kRun, {"the {} runs forward quickly", "a {} is running fast", "the {} sprints ahead"}},
      {GaitKind::kTurnLeft, {"the {} turns to the left", "a {} walks and turns left", "the {} curves leftward while walking"}},
      {GaitKind::kTurnRight, {"the {} turns to the right", "a {} walks and turns right", "the {} curves rightward while walking"}},
      {GaitKind::kIdle, {"the {} stands still", "a {} idles in place", "the {} waits calmly without moving"}},
      {GaitKind::kRearUp, {"the {} rears up", "a {} rises up and lifts its front limbs", "the {} stretches upward"}},
  };
  return t;
}

std::string fill(const std::string& tmpl, const std::string& species) {
  std::string out = tmpl;
  const auto pos = out.find("{}");
  if (pos != std::string::npos) out.replace(pos, 2, species);
  return out;
}

double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

std::string_view gait_name(GaitKind gait) {
  switch (gait) {
    case GaitKind::kWalk: return "walk";
    case GaitKind::kRun: return "run";
    case GaitKind::kTurnLeft: return "turn_left";
    case GaitKind::kTurnRight: return "turn_right";
    case GaitKind::kIdle: return "idle";
    case GaitKind::kRearUp: return "rear_up";
  }
  return "unknown";
}

std::optional<GaitKind> parse_gait(std::string_view name) {
  for (GaitKind g : kAllGaits)
    if (gait_name(g) == name) return g;
  return std::nullopt;
}

bool admissible_length(std::size_t length) { return length > 18 && length < 300; }

std::vector<SpeciesProfile> generate_synthetic_species(std::uint64_t seed, std::size_t species_count) {
  if (species_count < 2) throw InvalidInput("generate_synthetic_species: need at least 2 species");
  Rng rng(mix_seed(seed, 0x5eed5eedULL));
  std::vector<SpeciesProfile> out;
  std::size_t quad = 0, bip = 0;
  for (std::size_t i = 0; i < species_count; ++i) {
    SpeciesProfile s;
    s.biped = (i % 2 == 1);
    const auto& pool = s.biped ? biped_names() : quadruped_names();
    std::size_t& k = s.biped ? bip : quad;
    s.name = pool[k % pool.size()];
    if (k >= pool.size()) s.name += "_" + std::to_string(k / pool.size() + 1);
    ++k;
    const auto& nominal = s.biped ? kBipedNominal : kQuadrupedNominal;
    const double size = rng.uniform(0.6, 1.3);
    const double limb_ratio = rng.uniform(0.75, 1.3);
    for (std::size_t e = 0; e < kNumBones; ++e) {
      if (nominal[e] == 0.0) {
        s.bones[e] = 0.0;
        continue;
      }
      const double theme = is_limb_bone(e) ? limb_ratio : 1.0 / limb_ratio;
      s.bones[e] = std::clamp(nominal[e] * size * theme * rng.uniform(0.85, 1.15), 0.05, 0.8);
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

GaitTrajectory synthesize_gait(const SpeciesProfile& species, GaitKind gait, std::size_t length, Rng& rng,
                               const GaitOptions& options) {
  if (!admissible_length(length)) throw InvalidInput("generate_gait: length must lie in (18, 300)");
  const SkeletonTopology& topo = canonical_topology();

  BoneLengthVector bones = species.bones;
  const double jitter = 1.0 + rng.uniform(-options.morph_jitter, options.morph_jitter);
  for (double& b : bones.lengths) b = quantize(b * jitter);

  const double leg = bones[6] + bones[7];
  const GaitParams g = gait_params(gait, leg, rng);
  const double phase0 = rng.uniform(0.0, 2 * kPi);
  const double yaw0 = rng.uniform(-kPi, kPi);
  const double rear_center = rng.uniform(0.4, 0.6);

  GlobalMotion motion;
  motion.joints_world.resize(length);
  motion.root_yaw.resize(length);
  double x = 0.0, z = 0.0;
  for (std::size_t t = 0; t < length; ++t) {
    const double phase = phase0 + 2 * kPi * g.freq * static_cast<double>(t);
    const double yaw = yaw0 + g.yaw_rate * static_cast<double>(t);
    double rear = 0.0;
    if (g.rear) {
      const double u = static_cast<double>(t) / static_cast<double>(length - 1);
      rear = std::exp(-std::pow((u - rear_center) / 0.22, 2.0));
    }
    const auto dirs = body_directions(species.biped, g, phase, rear);
    Frame& f = motion.joints_world[t];
    const double height = leg * (0.97 + g.bob * std::sin(2 * phase));
    f[0] = {x, height, z};
    for (std::size_t e = 0; e < kNumBones; ++e) {
      const auto p = static_cast<std::size_t>(topo.bone_edges[e].first);
      const auto c = static_cast<std::size_t>(topo.bone_edges[e].second);
      const Vec3 w = rotate_y(dirs[e], yaw);
      for (int k = 0; k < 3; ++k) f[c][k] = f[p][k] + bones[e] * w[k];
    }
    motion.root_yaw[t] = yaw;
    const Vec3 step = rotate_y({0.0, 0.0, g.speed}, yaw);
    x += step[0];
    z += step[2];
  }

  return {std::move(motion), bones};
}

}  // namespace

GaitTrajectory generate_gait_trajectory(const SpeciesProfile& species, GaitKind gait, std::size_t length,
                                        std::uint64_t seed, const GaitOptions& options) {
  Rng rng(seed);
  return synthesize_gait(species, gait, length, rng, options);
}

MotionRecord generate_gait(const SpeciesProfile& species, GaitKind gait, std::size_t length, std::uint64_t seed,
                           const GaitOptions& options) {
  Rng rng(seed);
  const GaitTrajectory traj = synthesize_gait(species, gait, length, rng, options);
  const BoneLengthVector& bones = traj.bones;

  MotionRecord rec;
  rec.motion = encode_features(traj.motion, canonical_topology());
  for (double& v : rec.motion.frames.data) v = quantize(v);
  rec.species_name = species.name;
  rec.tpose_bone_lengths = bones;

  const auto& templates = caption_templates().at(gait);
  std::vector<std::size_t> order(templates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t n_captions = 1 + rng.index(templates.size());
  for (std::size_t i = 0; i < n_captions; ++i) rec.captions.push_back(fill(templates[order[i]], species.name));
  return rec;
}

std::vector<MotionRecord> generate_dataset(const SyntheticDatasetOptions& options,
                                           std::vector<SpeciesProfile>* species_out) {
  if (options.min_length > options.max_length) throw InvalidInput("generate_dataset: min_length > max_length");
  const auto species = generate_synthetic_species(options.seed, options.species_count);
  Rng rng(mix_seed(options.seed, 0xda7aULL));
  std::vector<MotionRecord> out;
  for (const auto& s : species) {
    for (GaitKind gait : kAllGaits) {
      for (std::size_t i = 0; i < options.records_per_pair; ++i) {
        const std::size_t len = options.min_length + rng.index(options.max_length - options.min_length + 1);
        out.push_back(generate_gait(s, gait, len, rng.fork(), options.gait));
      }
    }
  }
  if (species_out) *species_out = species;
  return out;
}

std::vector<MotionRecord> filter_by_length(std::vector<MotionRecord> records) {
  std::vector<MotionRecord> kept;
  kept.reserve(records.size());
  for (auto& r : records)
    if (admissible_length(r.motion.length())) kept.push_back(std::move(r));
  return kept;
}

DatasetSplit make_splits(const std::vector<MotionRecord>& records, const std::set<std::string>& holdout_species,
                         std::uint64_t seed) {
  std::set<std::string> present;
  for (const auto& r : records) present.insert(r.species_name);
  for (const auto& h : holdout_species)
    if (!present.count(h)) throw InvalidInput("holdout species not in dataset: " + h);

  DatasetSplit split;
  std::vector<std::size_t> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (holdout_species.count(records[i].species_name)) split.unseen_test.push_back(i);
    else seen.push_back(i);
  }
  Rng rng(mix_seed(seed, 0x5b17ULL));
  rng.shuffle(seen);
  const std::size_t n = seen.size();
  const auto n_train = static_cast<std::size_t>(std::floor(0.80 * static_cast<double>(n) + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(0.05 * static_cast<double>(n) + 1e-9));
  split.train.assign(seen.begin(), seen.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.assign(seen.begin() + static_cast<std::ptrdiff_t>(n_train),
                   seen.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.assign(seen.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), seen.end());
  return split;
}

std::vector<std::uint8_t> serialize_container(const std::vector<MotionRecord>& records, const SkeletonTopology& topo,
                                              const NormStats& stats) {
  io::ByteWriter w;
  w.raw(std::string_view(kContainerMagic, 4));
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(topo.joint_names.size()));
  for (std::size_t j = 0; j < topo.joint_names.size(); ++j) {
    w.str(topo.joint_names[j]);
    w.i32(topo.parent_index[j]);
  }
  w.u32(static_cast<std::uint32_t>(topo.bone_directions.size()));
  for (const Vec3& d : topo.bone_directions)
    for (double v : d) w.f64(v);
  for (double v : stats.mean) w.f64(v);
  for (double v : stats.std) w.f64(v);
  w.u64(records.size());
  for (const auto& r : records) {
    w.str(r.species_name);
    w.u32(static_cast<std::uint32_t>(r.captions.size()));
    for (const auto& c : r.captions) w.str(c);
    for (double b : r.tpose_bone_lengths.lengths) w.f64(b);
    w.u32(static_cast<std::uint32_t>(r.motion.length()));
    for (double v : r.motion.frames.data) w.f32(static_cast<float>(v));
  }
  return w.bytes();
}

ContainerContents parse_container(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  if (r.remaining() < 4 || r.raw(4) != std::string(kContainerMagic, 4))
    throw ParseError(ParseError::Kind::kMagicMismatch, "not a motion container (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    throw ParseError(ParseError::Kind::kVersionMismatch, "unsupported container version " + std::to_string(version));
  ContainerContents out;
  const std::uint32_t joints = r.u32();
  if (joints != kNumJoints) throw ParseError(ParseError::Kind::kMalformed, "container topology is not 25 joints");
  for (std::uint32_t j = 0; j < joints; ++j) {
    out.topology.joint_names.push_back(r.str());
    out.topology.parent_index.push_back(r.i32());
  }
  const std::uint32_t bones = r.u32();
  if (bones != kNumBones) throw ParseError(ParseError::Kind::kMalformed, "container topology is not 24 bones");
  for (std::uint32_t e = 0; e < bones; ++e) {
    Vec3 d;
    for (double& v : d) v = r.f64();
    out.topology.bone_directions.push_back(d);
  }
  for (std::size_t j = 1; j < kNumJoints; ++j)
    out.topology.bone_edges.emplace_back(out.topology.parent_index[j], static_cast<int>(j));
  for (double& v : out.stats.mean) v = r.f64();
  for (double& v : out.stats.std) v = r.f64();
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    MotionRecord rec;
    rec.species_name = r.str();
    const std::uint32_t n_cap = r.u32();
    for (std::uint32_t c = 0; c < n_cap; ++c) rec.captions.push_back(r.str());
    for (double& b : rec.tpose_bone_lengths.lengths) b = r.f64();
    const std::uint32_t len = r.u32();
    if (static_cast<std::uint64_t>(len) * kFeatureDim * 4 > r.remaining())
      throw ParseError(ParseError::Kind::kTruncated, "truncated frame payload");
    Matrix f(len, kFeatureDim);
    for (double& v : f.data) v = static_cast<double>(r.f32());
    rec.motion = MotionSequence(std::move(f));
    out.records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw ParseError(ParseError::Kind::kMalformed, "trailing bytes after last record");
  return out;
}

void write_container(const std::filesystem::path& path, const std::vector<MotionRecord>& records,
                     const SkeletonTopology& topo, const NormStats& stats) {
  io::write_file(path, serialize_container(records, topo, stats));
}

ContainerContents read_container(const std::filesystem::path& path) { return parse_container(io::read_file(path)); }

std::string manifest_to_json(const SplitManifest& manifest, std::size_t record_count) {
  nlohmann::ordered_json j;
  j["container"] = manifest.container;
  j["split_seed"] = manifest.split_seed;
  j["holdout_species"] = manifest.holdout_species;
  std::vector<std::string> label(record_count, "excluded");
  auto mark = [&](const std::vector<std::size_t>& ids, const char* name) {
    for (std::size_t i : ids) {
      if (i >= record_count) throw InvalidInput("manifest: record id out of range");
      label[i] = name;
    }
  };
  mark(manifest.split.train, "train");
  mark(manifest.split.val, "val");
  mark(manifest.split.test, "test");
  mark(manifest.split.unseen_test, "unseen_test");
  nlohmann::ordered_json recs = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < record_count; ++i) recs[std::to_string(i)] = label[i];
  j["records"] = recs;
  return j.dump(2);
}

SplitManifest manifest_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::kMalformed, std::string("manifest: ") + e.what());
  }
  SplitManifest m;
  try {
    m.container = j.at("container").get<std::string>();
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.holdout_species = j.at("holdout_species").get<std::vector<std::string>>();
    std::vector<std::pair<std::size_t, std::string>> items;
    for (auto it = j.at("records").begin(); it != j.at("records").end(); ++it)
      items.emplace_back(std::stoul(it.key()), it.value().get<std::string>());
    std::sort(items.begin(), items.end());
    for (const auto& [id, name] : items) {
      if (name == "train") m.split.train.push_back(id);
      else if (name == "val") m.split.val.push_back(id);
      else if (name == "test") m.split.test.push_back(id);
      else if (name == "unseen_test") m.split.unseen_test.push_back(id);
      else if (name != "excluded") throw ParseError(ParseError::Kind::kMalformed, "manifest: unknown split " + name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::kMalformed, std::string("manifest: ") + e.what());
  }
  return m;
}

}  // namespace crossmo
