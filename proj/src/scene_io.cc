#include "forcelens/scene_io.h"

#include <zlib.h>

#include <sstream>

#include "forcelens/errors.h"

namespace forcelens {
namespace {

template <typename T>
std::vector<T> flat_array(const Json& particles, const std::string& key, std::size_t expected) {
  auto values = require_as<std::vector<T>>(particles, key, "particles.");
  if (values.size() != expected) {
    throw ParseError("field 'particles." + key + "': expected " + std::to_string(expected) +
                     " values, got " + std::to_string(values.size()));
  }
  return values;
}

void push_vec(Json& arr, const Vec3& v) {
  for (int i = 0; i < 3; ++i) arr.push_back(v(i));
}

void push_mat(Json& arr, const Mat3& m) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) arr.push_back(m(r, c));
}

Vec3 read_vec(const std::vector<double>& a, std::size_t i) {
  return Vec3(a[3 * i], a[3 * i + 1], a[3 * i + 2]);
}

Mat3 read_mat(const std::vector<double>& a, std::size_t i) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = a[9 * i + 3 * r + c];
  return m;
}

bool is_gzip_path(const std::string& path) {
  return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

std::vector<double> flatten(const std::vector<Vec3>& vs) {
  std::vector<double> out;
  out.reserve(3 * vs.size());
  for (const auto& v : vs) out.insert(out.end(), {v.x(), v.y(), v.z()});
  return out;
}

std::vector<Vec3> unflatten(const std::vector<double>& a, const std::string& what) {
  if (a.size() % 3 != 0) throw ParseError(what + ": length is not a multiple of 3");
  std::vector<Vec3> out(a.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_vec(a, i);
  return out;
}

}  // namespace

Json scene_to_json(const Scene& scene) {
  Json materials = Json::array();
  for (const auto& m : scene.materials) materials.push_back(to_json(m));

  Json x = Json::array(), v = Json::array(), affine = Json::array(), def = Json::array(),
       cov = Json::array(), cov0 = Json::array(), mass = Json::array(), vol = Json::array(),
       mat = Json::array(), constrained = Json::array(), appearance = Json::array();
  for (const auto& p : scene.particles) {
    push_vec(x, p.x);
    push_vec(v, p.v);
    push_mat(affine, p.affine);
    push_mat(def, p.deformation);
    push_mat(cov, p.covariance);
    push_mat(cov0, p.covariance0);
    mass.push_back(p.mass);
    vol.push_back(p.volume0);
    mat.push_back(p.material_id);
    constrained.push_back(p.constrained);
    appearance.push_back(base64_encode(p.appearance));
  }
  Json particles = {{"count", scene.particles.size()},
                    {"x", x},
                    {"v", v},
                    {"affine", affine},
                    {"deformation", def},
                    {"covariance", cov},
                    {"covariance0", cov0},
                    {"mass", mass},
                    {"volume0", vol},
                    {"material_id", mat},
                    {"constrained", constrained},
                    {"appearance", appearance}};
  Json bcs = Json::array();
  for (const auto& bc : scene.bcs) bcs.push_back(to_json(bc));

  return {{"version", kSceneSchemaVersion},
          {"materials", materials},
          {"particles", particles},
          {"grid", to_json(scene.grid)},
          {"camera", to_json(scene.camera)},
          {"bcs", bcs},
          {"frame_dt", scene.frame_dt},
          {"substeps_per_frame", scene.substeps_per_frame},
          {"gravity", to_json(scene.gravity)}};
}

Scene scene_from_json(const Json& j) {
  auto version = require_as<std::string>(j, "version", "");
  if (version != kSceneSchemaVersion) {
    throw VersionError("unsupported scene schema version '" + version + "' (expected '" +
                       kSceneSchemaVersion + "')");
  }
  Scene scene;
  const Json& materials = require(j, "materials", "");
  if (!materials.is_array()) throw ParseError("field 'materials': expected an array");
  for (std::size_t i = 0; i < materials.size(); ++i) {
    scene.materials.push_back(
        material_from_json(materials[i], "materials[" + std::to_string(i) + "]."));
  }

  const Json& pj = require(j, "particles", "");
  const auto n = require_as<std::size_t>(pj, "count", "particles.");
  auto x = flat_array<double>(pj, "x", 3 * n);
  auto v = flat_array<double>(pj, "v", 3 * n);
  auto affine = flat_array<double>(pj, "affine", 9 * n);
  auto def = flat_array<double>(pj, "deformation", 9 * n);
  auto cov = flat_array<double>(pj, "covariance", 9 * n);
  auto cov0 = flat_array<double>(pj, "covariance0", 9 * n);
  auto mass = flat_array<double>(pj, "mass", n);
  auto vol = flat_array<double>(pj, "volume0", n);
  auto mat = flat_array<int>(pj, "material_id", n);
  auto constrained = flat_array<bool>(pj, "constrained", n);
  auto appearance = flat_array<std::string>(pj, "appearance", n);
  scene.particles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Particle& p = scene.particles[i];
    p.x = read_vec(x, i);
    p.v = read_vec(v, i);
    p.affine = read_mat(affine, i);
    p.deformation = read_mat(def, i);
    p.covariance = read_mat(cov, i);
    p.covariance0 = read_mat(cov0, i);
    p.mass = mass[i];
    p.volume0 = vol[i];
    p.material_id = mat[i];
    p.constrained = constrained[i];
    p.appearance = base64_decode(appearance[i]);
  }

  scene.grid = grid_from_json(require(j, "grid", ""));
  scene.camera = camera_from_json(require(j, "camera", ""));
  const Json& bcs = require(j, "bcs", "");
  if (!bcs.is_array()) throw ParseError("field 'bcs': expected an array");
  for (std::size_t i = 0; i < bcs.size(); ++i) {
    scene.bcs.push_back(bc_from_json(bcs[i], "bcs[" + std::to_string(i) + "]."));
  }
  scene.frame_dt = require_as<double>(j, "frame_dt", "");
  scene.substeps_per_frame = require_as<int>(j, "substeps_per_frame", "");
  scene.gravity = vec3_from_json(require(j, "gravity", ""), "gravity");
  validate(scene);
  return scene;
}

void save_scene(const Scene& scene, const std::string& path) {
  write_text_file(path, scene_to_json(scene).dump(1) + "\n");
}

Scene load_scene(const std::string& path) {
  return scene_from_json(parse_json_text(read_text_file(path), path));
}

void save_trajectory(const Trajectory& traj, const std::string& path) {
  std::string text;
  for (const auto& f : traj) {
    Json rec = {{"frame", f.frame},
                {"positions", flatten(f.positions)},
                {"velocities", flatten(f.velocities)}};
    text += rec.dump();
    text += '\n';
  }
  if (!is_gzip_path(path)) {
    write_text_file(path, text);
    return;
  }
  gzFile gz = gzopen(path.c_str(), "wb");
  if (!gz) throw InputError("cannot write '" + path + "'");
  const int written = text.empty() ? 0 : gzwrite(gz, text.data(), static_cast<unsigned>(text.size()));
  gzclose(gz);
  if (written != static_cast<int>(text.size())) throw InputError("gzip write failed for '" + path + "'");
}

Trajectory load_trajectory(const std::string& path) {
  std::string text;
  if (is_gzip_path(path)) {
    gzFile gz = gzopen(path.c_str(), "rb");
    if (!gz) throw InputError("cannot open '" + path + "'");
    char buf[1 << 16];
    int n = 0;
    while ((n = gzread(gz, buf, sizeof(buf))) > 0) text.append(buf, static_cast<std::size_t>(n));
    gzclose(gz);
    if (n < 0) throw InputError("gzip read failed for '" + path + "'");
  } else {
    text = read_text_file(path);
  }
  Trajectory traj;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    Json rec = parse_json_text(line, path + " line " + std::to_string(lineno));
    TrajectoryFrame f;
    f.frame = require_as<int>(rec, "frame", "");
    f.positions = unflatten(require_as<std::vector<double>>(rec, "positions", ""), "positions");
    f.velocities =
        unflatten(require_as<std::vector<double>>(rec, "velocities", ""), "velocities");
    if (f.positions.size() != f.velocities.size()) {
      throw ParseError(path + " line " + std::to_string(lineno) +
                       ": positions and velocities differ in length");
    }
    traj.push_back(std::move(f));
  }
  return traj;
}

Json field_spec_to_json(const GroundTruthFieldSpec& spec) {
  return std::visit(
      [](const auto& s) -> Json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConstantSpec>) {
          return {{"kind", "constant"}, {"a", to_json(s.a)}};
        } else if constexpr (std::is_same_v<T, SinusoidSpec>) {
          return {{"kind", "sinusoid"},      {"amplitude", s.amplitude},
                  {"axis", to_json(s.axis)}, {"frequency", s.frequency},
                  {"phase", s.phase},        {"base", to_json(s.base)}};
        } else if constexpr (std::is_same_v<T, VortexSpec>) {
          return {{"kind", "vortex"},        {"center", to_json(s.center)},
                  {"axis", to_json(s.axis)}, {"strength", s.strength},
                  {"falloff", s.falloff}};
        } else {
          return {{"kind", "point_impulse"}, {"particles", s.particles},
                  {"a", to_json(s.a)},       {"start_frame", s.start_frame},
                  {"end_frame", s.end_frame}};
        }
      },
      spec);
}

GroundTruthFieldSpec field_spec_from_json(const Json& j) {
  auto kind = require_as<std::string>(j, "kind", "field.");
  if (kind == "constant") {
    return ConstantSpec{vec3_from_json(require(j, "a", "field."), "field.a")};
  }
  if (kind == "sinusoid") {
    SinusoidSpec s;
    s.amplitude = require_as<double>(j, "amplitude", "field.");
    s.axis = vec3_from_json(require(j, "axis", "field."), "field.axis");
    s.frequency = require_as<double>(j, "frequency", "field.");
    s.phase = j.contains("phase") ? require_as<double>(j, "phase", "field.") : 0.0;
    s.base = j.contains("base") ? vec3_from_json(j.at("base"), "field.base") : Vec3::Zero();
    return s;
  }
  if (kind == "vortex") {
    VortexSpec s;
    s.center = vec3_from_json(require(j, "center", "field."), "field.center");
    s.axis = vec3_from_json(require(j, "axis", "field."), "field.axis");
    s.strength = require_as<double>(j, "strength", "field.");
    s.falloff = require_as<double>(j, "falloff", "field.");
    return s;
  }
  if (kind == "point_impulse") {
    PointImpulseSpec s;
    s.particles = require_as<std::vector<int>>(j, "particles", "field.");
    s.a = vec3_from_json(require(j, "a", "field."), "field.a");
    s.start_frame = require_as<int>(j, "start_frame", "field.");
    s.end_frame = require_as<int>(j, "end_frame", "field.");
    return s;
  }
  throw ParseError("field 'field.kind': unknown ground-truth field kind '" + kind + "'");
}

}  // namespace forcelens
