#include "forcelens/cli.h"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <initializer_list>
#include <limits>
#include <memory>

#include "forcelens/errors.h"
#include "forcelens/materials.h"
#include "forcelens/mpm.h"
#include "forcelens/scene_io.h"

namespace forcelens::cli {
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string join(const fs::path& dir, const std::string& file) { return (dir / file).string(); }

void reject_unknown(const Json& j, std::initializer_list<const char*> keys,
                    const std::string& what) {
  if (!j.is_object()) throw ParseError(what + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return key == k; }) ==
        keys.end()) {
      throw ParseError(what + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read_key(const Json& j, const char* key, T& field, const std::string& path) {
  if (j.contains(key)) field = require_as<T>(j, key, path);
}

template <typename T>
void read_key(const Json& j, const char* key, std::optional<T>& field, const std::string& path) {
  if (j.contains(key)) field = require_as<T>(j, key, path);
}

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::is_regular_file(path)) throw InputError("missing input '" + path + "' (" + hint + ")");
}

void write_json(const std::string& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

Json read_json(const std::string& path) { return parse_json_text(read_text_file(path), path); }

// Block geometry shared by every preset: 27 particles at 2.5 cm spacing in a
// 16^3 grid of 5 cm cells, seen by a camera 1.375 m in front.
constexpr double kSpacing = 0.025;
const Vec3 kBlockCenter(0.2, 0.3, 0.3);
const Vec3 kBlockExtent = Vec3::Constant(0.075);

Scene preset_scene(const std::string& material, const Vec3& center, const Vec3& extent) {
  Scene s;
  s.materials.push_back(material_lookup(material));
  s.grid.cell_size = 0.05;
  s.grid.dims = Eigen::Vector3i::Constant(16);
  s.particles = sample_block(s.materials[0], 0, center, extent, kSpacing);
  const Vec3 eye(0.375, 0.375, -1.0);
  s.camera = Camera{800.0, 800.0, 256.0, 256.0, Mat3::Identity(), -eye, 512, 512};
  return s;
}

std::string last_recover_run_dir(const std::string& recover_dir) {
  const RunManifest m = load_manifest(recover_dir);
  for (auto it = m.commands.rbegin(); it != m.commands.rend(); ++it) {
    if (it->command == "recover" && it->config.contains("run_dir")) {
      return it->config.at("run_dir").get<std::string>();
    }
  }
  throw InputError("'" + recover_dir + "' has no recover record in its manifest");
}

Trajectory prefix(const Trajectory& t, std::size_t n) {
  return Trajectory(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(std::min(n, t.size())));
}

}  // namespace

// ---------------------------------------------------------------- presets

std::vector<std::string> preset_names() {
  std::vector<std::string> names{"elastic-constant-wind"};
  for (const char* mat : {"elastic", "elastoplastic", "viscoplastic"}) {
    for (const char* field : {"constant", "sinusoid", "vortex", "point-impulse"}) {
      names.push_back(std::string(mat) + "-" + field);
    }
  }
  names.push_back("free-particle-constant");
  return names;
}

Preset make_preset(const std::string& name) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw UsageError("unknown preset '" + name + "'; valid presets: " + list);
  }
  Preset p;
  p.name = name;
  if (name == "free-particle-constant") {
    p.scene = preset_scene("gelatin", Vec3(0.3, 0.3, 0.3), Vec3::Constant(kSpacing));
    p.field = ConstantSpec{Vec3(1.0, 0.5, 0.3)};
    p.keypoints = 1;
    return p;
  }
  const std::string key = name == "elastic-constant-wind" ? "elastic-constant" : name;
  const auto dash = key.find('-');
  const std::string mat = key.substr(0, dash);
  const std::string field = key.substr(dash + 1);
  const char* material = mat == "elastic" ? "gelatin" : mat == "elastoplastic" ? "modeling_clay"
                                                                               : "toothpaste";
  p.scene = preset_scene(material, kBlockCenter, kBlockExtent);
  if (field == "constant") {
    p.field = ConstantSpec{Vec3(1.0, 0.5, 0.3)};
  } else if (field == "sinusoid") {
    SinusoidSpec s;
    s.base = Vec3(1.0, 0.0, 0.0);
    s.amplitude = 1.0;
    s.axis = Vec3::UnitY();
    s.frequency = 1.5;
    p.field = s;
    p.frames = 20;
  } else if (field == "vortex") {
    VortexSpec s;
    s.center = kBlockCenter;
    s.axis = Vec3::UnitY();
    s.strength = 1.0;
    s.falloff = 2.0;
    p.field = s;
  } else {
    PointImpulseSpec s;
    for (int i = 0; i < 9; ++i) s.particles.push_back(i);
    s.a = Vec3(2.0, 0.0, 0.0);
    s.start_frame = 0;
    s.end_frame = 3;
    p.field = s;
  }
  return p;
}

// ---------------------------------------------------------------- manifest

std::string sha256_file(const std::string& path) {
  const std::string bytes = read_text_file(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw InputError("sha256 failed for '" + path + "'");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::optional<std::string> RunManifest::hash_of(const std::string& file) const {
  for (const auto& [name, hash] : artifacts) {
    if (name == file) return hash;
  }
  return std::nullopt;
}

Json to_json(const RunManifest& m) {
  Json commands = Json::array();
  for (const auto& c : m.commands) {
    commands.push_back({{"command", c.command},
                        {"config", c.config},
                        {"inputs", c.inputs},
                        {"outputs", c.outputs},
                        {"seed", c.seed},
                        {"wall_seconds", c.wall_seconds}});
  }
  Json artifacts = Json::object();
  for (const auto& [name, hash] : m.artifacts) artifacts[name] = hash;
  return {{"version", kManifestVersion}, {"commands", commands}, {"artifacts", artifacts}};
}

RunManifest manifest_from_json(const Json& j) {
  const auto version = require_as<std::string>(j, "version", "manifest.");
  if (version != kManifestVersion) {
    throw VersionError("manifest version '" + version + "', expected '" + kManifestVersion + "'");
  }
  RunManifest m;
  for (const auto& c : require(j, "commands", "manifest.")) {
    CommandRecord r;
    r.command = require_as<std::string>(c, "command", "manifest.commands.");
    r.config = require(c, "config", "manifest.commands.");
    r.inputs = require_as<std::vector<std::string>>(c, "inputs", "manifest.commands.");
    r.outputs = require_as<std::vector<std::string>>(c, "outputs", "manifest.commands.");
    r.seed = require_as<std::uint64_t>(c, "seed", "manifest.commands.");
    r.wall_seconds = require_as<double>(c, "wall_seconds", "manifest.commands.");
    m.commands.push_back(std::move(r));
  }
  for (const auto& [name, hash] : require(j, "artifacts", "manifest.").items()) {
    m.artifacts.emplace_back(name, hash.get<std::string>());
  }
  return m;
}

RunManifest load_manifest(const std::string& dir) {
  const std::string path = join(dir, kManifestFile);
  if (!fs::exists(path)) return {};
  return manifest_from_json(read_json(path));
}

void record_command(const std::string& dir, CommandRecord record) {
  RunManifest m = load_manifest(dir);
  for (const auto& file : record.outputs) {
    const std::string hash = sha256_file(join(dir, file));
    auto it = std::find_if(m.artifacts.begin(), m.artifacts.end(),
                           [&](const auto& a) { return a.first == file; });
    if (it == m.artifacts.end()) {
      m.artifacts.emplace_back(file, hash);
    } else {
      it->second = hash;
    }
  }
  std::sort(m.artifacts.begin(), m.artifacts.end());
  m.commands.push_back(std::move(record));
  write_json(join(dir, kManifestFile), to_json(m));
}

std::vector<std::string> verify_manifest(const std::string& dir) {
  const std::string path = join(dir, kManifestFile);
  require_file(path, "not a run directory");
  const RunManifest m = load_manifest(dir);
  std::vector<std::string> bad;
  for (const auto& [name, hash] : m.artifacts) {
    const std::string file = join(dir, name);
    if (!fs::is_regular_file(file) || sha256_file(file) != hash) bad.push_back(name);
  }
  return bad;
}

// ---------------------------------------------------------------- synth

SynthOptions synth_options_from_json(const Json& j) {
  reject_unknown(j, {"preset", "frames", "keypoints", "pixel_noise", "depth_noise", "seed"},
                 "synth config");
  SynthOptions o;
  read_key(j, "preset", o.preset, "");
  read_key(j, "frames", o.frames, "");
  read_key(j, "keypoints", o.keypoints, "");
  read_key(j, "pixel_noise", o.pixel_noise, "");
  read_key(j, "depth_noise", o.depth_noise, "");
  read_key(j, "seed", o.seed, "");
  return o;
}

SynthResult cmd_synth(const SynthOptions& options, const std::string& out_dir) {
  const auto start = Clock::now();
  SynthResult r;
  r.preset = make_preset(options.preset);
  Preset& p = r.preset;
  if (options.frames) p.frames = *options.frames;
  if (options.keypoints) p.keypoints = *options.keypoints;
  if (options.pixel_noise) p.tracks.pixel_noise = *options.pixel_noise;
  if (options.depth_noise) p.tracks.depth_noise = *options.depth_noise;
  p.tracks.seed = options.seed;
  if (p.frames < 1) throw UsageError("frames must be >= 1, got " + std::to_string(p.frames));
  const int n = static_cast<int>(p.scene.particles.size());
  if (p.keypoints < 1 || p.keypoints > n) {
    throw UsageError("keypoints must be in [1, " + std::to_string(n) + "], got " +
                     std::to_string(p.keypoints));
  }
  if (!(p.tracks.pixel_noise >= 0.0) || !(p.tracks.depth_noise >= 0.0)) {
    throw UsageError("noise levels must be >= 0");
  }
  validate(p.scene);
  validate(p.field, p.frames, n);

  const AnalyticField truth(p.field, p.scene.frame_dt);
  r.trajectory = rollout(initial_state(p.scene), truth, p.scene, p.frames);
  const auto keypoints = farthest_point_keypoints(r.trajectory[0].positions, p.keypoints);
  r.tracks = synth_tracks(r.trajectory, p.scene.camera, keypoints, p.tracks);

  fs::create_directories(out_dir);
  save_scene(p.scene, join(out_dir, files::kScene));
  write_json(join(out_dir, files::kFieldSpec), field_spec_to_json(p.field));
  save_trajectory(r.trajectory, join(out_dir, files::kTrajectory));
  save_tracks(r.tracks, join(out_dir, files::kTracks));

  CommandRecord rec;
  rec.command = "synth";
  rec.config = {{"preset", p.name},
                {"frames", p.frames},
                {"keypoints", p.keypoints},
                {"pixel_noise", p.tracks.pixel_noise},
                {"depth_noise", p.tracks.depth_noise},
                {"seed", options.seed}};
  rec.outputs = {files::kScene, files::kFieldSpec, files::kTrajectory, files::kTracks};
  rec.seed = options.seed;
  rec.wall_seconds = seconds_since(start);
  record_command(out_dir, std::move(rec));
  return r;
}

// ---------------------------------------------------------------- recover

namespace {

Json to_json(const LiftConfig& c) {
  return {{"lambda", c.lambda},         {"knn", c.knn},
          {"max_iterations", c.max_iterations}, {"momentum", c.momentum},
          {"step_tol", c.step_tol},     {"patience", c.patience}};
}

LiftConfig lift_from_json(const Json& j, LiftConfig c) {
  reject_unknown(j, {"lambda", "knn", "max_iterations", "momentum", "step_tol", "patience"},
                 "lift config");
  read_key(j, "lambda", c.lambda, "lift.");
  read_key(j, "knn", c.knn, "lift.");
  read_key(j, "max_iterations", c.max_iterations, "lift.");
  read_key(j, "momentum", c.momentum, "lift.");
  read_key(j, "step_tol", c.step_tol, "lift.");
  read_key(j, "patience", c.patience, "lift.");
  return c;
}

Json to_json(const TriPlaneConfig& c) {
  return {{"resolution", c.resolution},
          {"features", c.features},
          {"encoder_frequencies", c.encoder_frequencies},
          {"encoder_hidden", c.encoder_hidden},
          {"decoder_hidden", c.decoder_hidden}};
}

TriPlaneConfig triplane_from_json(const Json& j, TriPlaneConfig c) {
  reject_unknown(j, {"resolution", "features", "encoder_frequencies", "encoder_hidden",
                     "decoder_hidden"},
                 "triplane config");
  read_key(j, "resolution", c.resolution, "triplane.");
  read_key(j, "features", c.features, "triplane.");
  read_key(j, "encoder_frequencies", c.encoder_frequencies, "triplane.");
  read_key(j, "encoder_hidden", c.encoder_hidden, "triplane.");
  read_key(j, "decoder_hidden", c.decoder_hidden, "triplane.");
  return c;
}

Json to_json(const KPlanesConfig& c) {
  return {{"resolution", c.resolution},
          {"time_resolution", c.time_resolution},
          {"features", c.features},
          {"decoder_hidden", c.decoder_hidden}};
}

KPlanesConfig kplanes_from_json(const Json& j, KPlanesConfig c) {
  reject_unknown(j, {"resolution", "time_resolution", "features", "decoder_hidden"},
                 "kplanes config");
  read_key(j, "resolution", c.resolution, "kplanes.");
  read_key(j, "time_resolution", c.time_resolution, "kplanes.");
  read_key(j, "features", c.features, "kplanes.");
  read_key(j, "decoder_hidden", c.decoder_hidden, "kplanes.");
  return c;
}

Json lift_stats_json(const std::vector<LiftStats>& stats) {
  Json out = Json::array();
  for (const auto& s : stats) {
    out.push_back({{"iterations", s.iterations},
                   {"objective", s.objective},
                   {"reprojection", s.reprojection},
                   {"arap", s.arap}});
  }
  return out;
}

}  // namespace

RecoverOptions recover_options_from_json(const Json& j, RecoverOptions o) {
  reject_unknown(j, {"representation", "targets", "dense_noise", "recovery", "lift", "triplane",
                     "kplanes"},
                 "recover config");
  read_key(j, "representation", o.representation, "");
  read_key(j, "targets", o.targets, "");
  read_key(j, "dense_noise", o.dense_noise, "");
  if (j.contains("recovery")) {
    const Json& r = j.at("recovery");
    if (!r.is_object()) throw ParseError("recovery section must be a JSON object");
    Json merged = forcelens::to_json(o.recovery);
    for (const auto& [key, value] : r.items()) {
      if (!merged.contains(key)) throw ParseError("recovery config: unknown key '" + key + "'");
      merged[key] = value;
    }
    o.recovery = recovery_config_from_json(merged);
  }
  if (j.contains("lift")) o.lift = lift_from_json(j.at("lift"), o.lift);
  if (j.contains("triplane")) o.triplane = triplane_from_json(j.at("triplane"), o.triplane);
  if (j.contains("kplanes")) o.kplanes = kplanes_from_json(j.at("kplanes"), o.kplanes);
  return o;
}

std::unique_ptr<ForceField> make_field(const RecoverOptions& options, const Scene& scene,
                                       int frames) {
  const Box domain{scene.grid.origin, scene.grid.upper()};
  switch (parse_field_kind(options.representation)) {
    case FieldKind::kTriPlane: {
      TriPlaneConfig c = options.triplane;
      c.domain = domain;
      c.frame_dt = scene.frame_dt;
      c.frames = frames;
      c.seed = options.recovery.seed;
      return std::make_unique<CausalTriPlane>(c);
    }
    case FieldKind::kKPlanes: {
      KPlanesConfig c = options.kplanes;
      c.domain = domain;
      c.frame_dt = scene.frame_dt;
      c.frames = frames;
      c.seed = options.recovery.seed;
      return std::make_unique<KPlanesField>(c);
    }
    default:
      return std::make_unique<PointForceField>(static_cast<int>(scene.particles.size()), frames,
                                               scene.frame_dt);
  }
}

RecoverResult cmd_recover(const RecoverOptions& options) {
  const auto start = Clock::now();
  const FieldKind kind = parse_field_kind(options.representation);
  validate(options.recovery);
  const fs::path run(options.run_dir);
  const std::string scene_path = join(run, files::kScene);
  require_file(scene_path, "run synth first");

  const Scene scene = load_scene(scene_path);
  std::vector<Vec3> x0;
  for (const auto& p : scene.particles) x0.push_back(p.x);

  // Targets come from the tracks, or densely from the synthesized trajectory
  // (exact, or with per-particle depth noise along each camera ray).
  TargetSequence targets;
  std::optional<TrackTargets> tt;
  std::string source_path;
  if (options.targets == "tracks") {
    source_path = join(run, files::kTracks);
    require_file(source_path, "run synth first");
    TrackSet tracks = load_tracks(source_path);
    if (tracks.frame_count() < 2) throw InputError("'" + source_path + "' holds fewer than 2 frames");
    tt = targets_from_tracks(tracks, x0, options.lift);
    targets = tt->targets;
  } else if (options.targets == "truth" || options.targets == "dense") {
    source_path = join(run, files::kTrajectory);
    require_file(source_path, "run synth first");
    const Trajectory truth = load_trajectory(source_path);
    if (truth.size() < 2) throw InputError("'" + source_path + "' holds fewer than 2 frames");
    if (options.targets == "truth") {
      for (const auto& f : truth) targets.push_back(f.positions);
    } else {
      if (!(options.dense_noise >= 0.0)) throw UsageError("dense_noise must be >= 0");
      targets = noisy_dense_targets(truth, scene.camera, options.dense_noise, options.recovery.seed);
    }
  } else {
    throw UsageError("unknown target source '" + options.targets +
                     "' (expected tracks, truth or dense)");
  }
  const int frames = static_cast<int>(targets.size()) - 1;
  auto field = make_field(options, scene, frames);

  RecoverResult r;
  r.out_dir = options.out_dir.empty()
                  ? join(run, "recover-" + to_string(kind))
                  : options.out_dir;
  r.sequence = recover_sequence(scene, targets, *field, options.recovery);
  r.sequence.report.field_checkpoint = files::kField;

  Json report = {{"recovery", forcelens::to_json(r.sequence.report, false)},
                 {"targets", options.targets}};
  if (tt) {
    report["lift"] = lift_stats_json(tt->lift);
    report["max_binding_residual_m"] = tt->max_binding_residual;
  }
  const std::string spec_path = join(run, files::kFieldSpec);
  const std::string truth_path = join(run, files::kTrajectory);
  if (fs::is_regular_file(spec_path) && fs::is_regular_file(truth_path)) {
    const AnalyticField truth(field_spec_from_json(read_json(spec_path)), scene.frame_dt);
    const Trajectory gt = load_trajectory(truth_path);
    r.errors = field_errors(*field, truth, gt, scene.frame_dt);
    report["evaluation"] = forcelens::to_json(*r.errors);
    report["committed_rmse_m"] =
        trajectory_rmse(r.sequence.committed, prefix(gt, r.sequence.committed.size()));
  }

  fs::create_directories(r.out_dir);
  save_field(*field, join(r.out_dir, files::kField));
  write_json(join(r.out_dir, files::kReport), report);
  save_targets(targets, join(r.out_dir, files::kTargets));
  save_trajectory(r.sequence.committed, join(r.out_dir, files::kCommitted));

  CommandRecord rec;
  rec.command = "recover";
  rec.config = {{"run_dir", fs::absolute(run).lexically_normal().string()},
                {"representation", to_string(kind)},
                {"targets", options.targets},
                {"recovery", forcelens::to_json(options.recovery)},
                {"lift", to_json(options.lift)}};
  if (kind == FieldKind::kTriPlane) rec.config["triplane"] = to_json(options.triplane);
  if (kind == FieldKind::kKPlanes) rec.config["kplanes"] = to_json(options.kplanes);
  if (options.targets == "dense") rec.config["dense_noise"] = options.dense_noise;
  rec.inputs = {scene_path, source_path};
  rec.outputs = {files::kField, files::kReport, files::kTargets, files::kCommitted};
  rec.seed = options.recovery.seed;
  rec.wall_seconds = seconds_since(start);
  record_command(r.out_dir, std::move(rec));

  if (r.sequence.report.any_divergence()) {
    throw DivergenceError(std::to_string(r.sequence.report.divergent_frames) +
                          " frame(s) diverged; see " + join(r.out_dir, files::kReport));
  }
  return r;
}

// ---------------------------------------------------------------- resim

bool ResimEdits::empty() const {
  return !material && !block_center && !block_extent && !block_spacing && !mass_factor &&
         !field_factor && add_bcs.empty() && remove_bcs.empty() && !clear_bcs;
}

ResimEdits resim_edits_from_json(const Json& j) {
  reject_unknown(j, {"material", "block_center", "block_extent", "block_spacing", "mass_factor",
                     "per_particle_force", "field_factor", "add_bcs", "remove_bcs", "clear_bcs"},
                 "resim edits");
  ResimEdits e;
  read_key(j, "material", e.material, "");
  if (j.contains("block_center")) e.block_center = vec3_from_json(j.at("block_center"), "block_center");
  if (j.contains("block_extent")) e.block_extent = vec3_from_json(j.at("block_extent"), "block_extent");
  read_key(j, "block_spacing", e.block_spacing, "");
  read_key(j, "mass_factor", e.mass_factor, "");
  read_key(j, "per_particle_force", e.per_particle_force, "");
  read_key(j, "field_factor", e.field_factor, "");
  if (j.contains("add_bcs")) {
    const Json& bcs = j.at("add_bcs");
    for (std::size_t i = 0; i < bcs.size(); ++i) {
      e.add_bcs.push_back(bc_from_json(bcs[i], "add_bcs[" + std::to_string(i) + "]."));
    }
  }
  read_key(j, "remove_bcs", e.remove_bcs, "");
  read_key(j, "clear_bcs", e.clear_bcs, "");
  return e;
}

Json to_json(const ResimEdits& e) {
  Json j = Json::object();
  if (e.material) j["material"] = *e.material;
  if (e.block_center) j["block_center"] = forcelens::to_json(*e.block_center);
  if (e.block_extent) j["block_extent"] = forcelens::to_json(*e.block_extent);
  if (e.block_spacing) j["block_spacing"] = *e.block_spacing;
  if (e.mass_factor) j["mass_factor"] = *e.mass_factor;
  if (e.per_particle_force) j["per_particle_force"] = true;
  if (e.field_factor) j["field_factor"] = *e.field_factor;
  if (!e.add_bcs.empty()) {
    Json bcs = Json::array();
    for (const auto& bc : e.add_bcs) bcs.push_back(forcelens::to_json(bc));
    j["add_bcs"] = bcs;
  }
  if (!e.remove_bcs.empty()) j["remove_bcs"] = e.remove_bcs;
  if (e.clear_bcs) j["clear_bcs"] = true;
  return j;
}

Json to_json(const ResimMetrics& m) {
  Json j = {{"frames", m.frames},
            {"particles", m.particles},
            {"constrained", m.constrained},
            {"max_constrained_displacement_m", m.max_constrained_displacement}};
  j["rmse_vs_committed_m"] = m.rmse_vs_committed ? Json(*m.rmse_vs_committed) : Json(nullptr);
  j["rmse_vs_truth_m"] = m.rmse_vs_truth ? Json(*m.rmse_vs_truth) : Json(nullptr);
  return j;
}

namespace {

// Applies the object, mass and boundary edits to `scene` in place and
// returns the per-particle force scale.
StepOptions apply_edits(Scene& scene, const ResimEdits& e) {
  const bool resample = e.block_center || e.block_extent || e.block_spacing;
  if (e.material || resample) {
    const MaterialParams mat = e.material ? material_lookup(*e.material) : scene.materials.at(0);
    if (resample) {
      if (scene.particles.empty()) throw UsageError("swap object: the scene has no particles");
      Vec3 lo = scene.particles[0].x, hi = lo;
      for (const auto& p : scene.particles) {
        lo = lo.cwiseMin(p.x);
        hi = hi.cwiseMax(p.x);
      }
      const double spacing = e.block_spacing.value_or(std::cbrt(scene.particles[0].volume0));
      if (!(spacing > 0.0)) throw UsageError("swap object: block spacing must be > 0");
      const Vec3 center = e.block_center.value_or(0.5 * (lo + hi));
      const Vec3 extent = e.block_extent.value_or((hi - lo).array() + spacing);
      scene.particles = sample_block(mat, 0, center, extent, spacing);
      if (scene.particles.empty()) throw UsageError("swap object: the block holds no particles");
    } else {
      for (auto& p : scene.particles) {
        p.material_id = 0;
        p.mass = mat.density * p.volume0;
      }
    }
    scene.materials = {mat};
  }
  StepOptions step;
  if (e.mass_factor) {
    const double f = *e.mass_factor;
    if (!(f > 0.0) || !std::isfinite(f)) {
      throw UsageError("incompatible edit: mass factor must be finite and > 0, got " +
                       std::to_string(f));
    }
    for (auto& p : scene.particles) p.mass *= f;
    if (e.per_particle_force) step.force_scale.assign(scene.particles.size(), 1.0 / f);
  } else if (e.per_particle_force) {
    throw UsageError("incompatible edit: per-particle force semantics need a mass factor");
  }
  if (e.clear_bcs) {
    scene.bcs.clear();
  } else if (!e.remove_bcs.empty()) {
    std::vector<int> idx = e.remove_bcs;
    std::sort(idx.rbegin(), idx.rend());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    for (int i : idx) {
      if (i < 0 || i >= static_cast<int>(scene.bcs.size())) {
        throw UsageError("incompatible edit: no boundary condition at index " + std::to_string(i));
      }
      scene.bcs.erase(scene.bcs.begin() + i);
    }
  }
  for (const auto& bc : e.add_bcs) scene.bcs.push_back(bc);
  if (e.clear_bcs || !e.remove_bcs.empty()) {
    for (auto& p : scene.particles) p.constrained = false;
  }
  constrain_fixed_particles(scene);
  validate(scene);
  return step;
}

}  // namespace

ResimResult cmd_resim(const ResimOptions& options) {
  const auto start = Clock::now();
  const fs::path rdir(options.recover_dir);
  const std::string field_path = join(rdir, files::kField);
  const std::string committed_path = join(rdir, files::kCommitted);
  require_file(field_path, "run recover first");
  require_file(committed_path, "run recover first");
  const fs::path run(last_recover_run_dir(options.recover_dir));
  const std::string scene_path = join(run, files::kScene);
  require_file(scene_path, "the recovered run's scene is gone");

  const ResimEdits& e = options.edits;
  if (e.field_factor && !std::isfinite(*e.field_factor)) {
    throw UsageError("incompatible edit: field factor must be finite");
  }
  Scene scene = load_scene(scene_path);
  const StepOptions step = apply_edits(scene, e);
  std::shared_ptr<const ForceField> field = load_field(field_path);
  if (e.field_factor) field = std::make_shared<ScaledField>(field, *e.field_factor);

  const Trajectory committed = load_trajectory(committed_path);
  const int frames = static_cast<int>(committed.size()) - 1;
  if (frames < 1) throw InputError("'" + committed_path + "' holds fewer than 2 frames");

  ResimResult r;
  r.out_dir = options.out_dir.empty() ? join(rdir, "resim") : options.out_dir;
  r.trajectory = rollout(initial_state(scene), *field, scene, frames, step);

  ResimMetrics& m = r.metrics;
  m.frames = frames;
  m.particles = static_cast<int>(scene.particles.size());
  const auto same_shape = [&](const Trajectory& t) {
    return t.size() >= r.trajectory.size() &&
           t[0].positions.size() == r.trajectory[0].positions.size();
  };
  if (same_shape(committed)) m.rmse_vs_committed = trajectory_rmse(r.trajectory, committed);
  const std::string truth_path = join(run, files::kTrajectory);
  if (fs::is_regular_file(truth_path)) {
    const Trajectory gt = load_trajectory(truth_path);
    if (same_shape(gt)) m.rmse_vs_truth = trajectory_rmse(r.trajectory, prefix(gt, r.trajectory.size()));
  }
  for (std::size_t p = 0; p < scene.particles.size(); ++p) {
    if (!scene.particles[p].constrained) continue;
    ++m.constrained;
    for (const auto& f : r.trajectory) {
      m.max_constrained_displacement = std::max(
          m.max_constrained_displacement, (f.positions[p] - r.trajectory[0].positions[p]).norm());
    }
  }

  fs::create_directories(r.out_dir);
  save_trajectory(r.trajectory, join(r.out_dir, files::kResimTrajectory));
  write_json(join(r.out_dir, files::kResimMetrics), to_json(m));
  CommandRecord rec;
  rec.command = "resim";
  rec.config = {{"recover_dir", fs::absolute(rdir).lexically_normal().string()},
                {"edits", to_json(e)}};
  rec.inputs = {field_path, committed_path, scene_path};
  rec.outputs = {files::kResimTrajectory, files::kResimMetrics};
  rec.wall_seconds = seconds_since(start);
  record_command(r.out_dir, std::move(rec));
  return r;
}

// ---------------------------------------------------------------- eval

EvalResult cmd_eval(const std::string& run_dir) {
  const auto start = Clock::now();
  const fs::path run(run_dir);
  const std::string scene_path = join(run, files::kScene);
  const std::string spec_path = join(run, files::kFieldSpec);
  const std::string truth_path = join(run, files::kTrajectory);
  for (const auto& p : {scene_path, spec_path, truth_path}) require_file(p, "run synth first");
  const Scene scene = load_scene(scene_path);
  const AnalyticField truth(field_spec_from_json(read_json(spec_path)), scene.frame_dt);
  const Trajectory gt = load_trajectory(truth_path);

  std::string scenario = run.filename().string();
  for (const auto& c : load_manifest(run_dir).commands) {
    if (c.command == "synth" && c.config.contains("preset")) {
      scenario = c.config.at("preset").get<std::string>();
    }
  }

  std::vector<fs::path> dirs;
  if (fs::is_directory(run)) {
    for (const auto& entry : fs::directory_iterator(run)) {
      if (entry.is_directory() && fs::is_regular_file(entry.path() / files::kField) &&
          fs::is_regular_file(entry.path() / files::kCommitted)) {
        dirs.push_back(entry.path());
      }
    }
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw InputError("no recovery artifacts under '" + run_dir + "' (run recover first)");

  EvalResult r;
  Json details = Json::array();
  std::vector<std::string> inputs;
  for (const auto& dir : dirs) {
    const auto field = load_field(join(dir, files::kField));
    const Trajectory committed = load_trajectory(join(dir, files::kCommitted));
    const ForceErrorReport errors = field_errors(*field, truth, gt, scene.frame_dt);
    EvalRow row{scenario, to_string(field->kind()), errors.magnitude, errors.direction,
                trajectory_rmse(committed, prefix(gt, committed.size()))};
    r.rows.push_back(row);
    details.push_back({{"dir", dir.filename().string()},
                       {"row", to_json(row)},
                       {"errors", to_json(errors)}});
    inputs.push_back(join(dir, files::kField));
  }
  r.table = format_table(r.rows);
  Json rows = Json::array();
  for (const auto& row : r.rows) rows.push_back(to_json(row));
  write_json(join(run, files::kEval), {{"rows", rows}, {"details", details}});

  CommandRecord rec;
  rec.command = "eval";
  rec.config = Json::object();
  rec.inputs = std::move(inputs);
  rec.outputs = {files::kEval};
  rec.wall_seconds = seconds_since(start);
  record_command(run_dir, std::move(rec));
  return r;
}

// ---------------------------------------------------------------- gradcheck

Json to_json(const GradCheckConfig& c) {
  return {{"block_per_axis", c.block_per_axis},
          {"grid_nodes", c.grid_nodes},
          {"frames", c.frames},
          {"resolution", c.resolution},
          {"features", c.features},
          {"samples", c.samples},
          {"eps", c.eps},
          {"tolerance", c.tolerance},
          {"required_fraction", c.required_fraction},
          {"seed", c.seed},
          {"corrupt_adjoint", c.corrupt_adjoint}};
}

GradCheckConfig gradcheck_config_from_json(const Json& j) {
  reject_unknown(j, {"block_per_axis", "grid_nodes", "frames", "resolution", "features",
                     "samples", "eps", "tolerance", "required_fraction", "seed",
                     "corrupt_adjoint"},
                 "gradcheck config");
  GradCheckConfig c;
  read_key(j, "block_per_axis", c.block_per_axis, "");
  read_key(j, "grid_nodes", c.grid_nodes, "");
  read_key(j, "frames", c.frames, "");
  read_key(j, "resolution", c.resolution, "");
  read_key(j, "features", c.features, "");
  read_key(j, "samples", c.samples, "");
  read_key(j, "eps", c.eps, "");
  read_key(j, "tolerance", c.tolerance, "");
  read_key(j, "required_fraction", c.required_fraction, "");
  read_key(j, "seed", c.seed, "");
  read_key(j, "corrupt_adjoint", c.corrupt_adjoint, "");
  return c;
}

std::string format_grad_report(const GradReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%8s  %14s  %14s  %10s\n", "index", "adjoint", "finite diff",
                "rel error");
  out += buf;
  for (const auto& e : r.fd_table) {
    std::snprintf(buf, sizeof buf, "%8zu  %14.6e  %14.6e  %10.3e%s\n", e.index, e.analytic,
                  e.numeric, e.rel_error, e.rel_error > r.tolerance ? "  *" : "");
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "worst relative error %.3e; %.1f%% within %.0e (need %.1f%%); %s\n",
                r.worst_rel_error, 100.0 * r.pass_fraction, r.tolerance,
                100.0 * r.required_fraction, r.pass ? "PASS" : "FAIL");
  out += buf;
  for (const auto& w : r.warnings) out += "warning: " + w + "\n";
  return out;
}

}  // namespace forcelens::cli
