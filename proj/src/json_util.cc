#include "forcelens/json_util.h"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <sstream>

namespace forcelens {

const Json& require(const Json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ParseError("field '" + path + "': expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError("missing field '" + path + key + "'");
  return *it;
}

Json to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Json to_json(const Mat3& m) {
  Json out = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(m(r, c));
  return out;
}

Vec3 vec3_from_json(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ParseError("field '" + path + "': expected 3 floats");
  try {
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  } catch (const Json::exception& e) {
    throw ParseError("field '" + path + "': " + e.what());
  }
}

Mat3 mat3_from_json(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 9) throw ParseError("field '" + path + "': expected 9 floats");
  Mat3 m;
  try {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) m(r, c) = j[3 * r + c].get<double>();
  } catch (const Json::exception& e) {
    throw ParseError("field '" + path + "': " + e.what());
  }
  return m;
}

Json to_json(const MaterialParams& m) {
  Json plast;
  switch (m.plasticity.kind) {
    case PlasticityKind::kElastic:
      plast = {{"kind", "elastic"}};
      break;
    case PlasticityKind::kElastoplastic:
      plast = {{"kind", "elastoplastic"}, {"yield_stress", m.plasticity.yield_stress}};
      break;
    case PlasticityKind::kViscoplastic:
      plast = {{"kind", "viscoplastic"},
               {"yield_stress", m.plasticity.yield_stress},
               {"viscosity", m.plasticity.viscosity}};
      break;
  }
  return {{"name", m.name}, {"rho", m.density}, {"E", m.youngs_modulus},
          {"nu", m.poisson_ratio}, {"plasticity", plast}};
}

MaterialParams material_from_json(const Json& j, const std::string& path) {
  MaterialParams m;
  m.name = require_as<std::string>(j, "name", path);
  m.density = require_as<double>(j, "rho", path);
  m.youngs_modulus = require_as<double>(j, "E", path);
  m.poisson_ratio = require_as<double>(j, "nu", path);
  const Json& p = require(j, "plasticity", path);
  const std::string ppath = path + "plasticity.";
  auto kind = require_as<std::string>(p, "kind", ppath);
  if (kind == "elastic") {
    m.plasticity.kind = PlasticityKind::kElastic;
  } else if (kind == "elastoplastic") {
    m.plasticity.kind = PlasticityKind::kElastoplastic;
    m.plasticity.yield_stress = require_as<double>(p, "yield_stress", ppath);
  } else if (kind == "viscoplastic") {
    m.plasticity.kind = PlasticityKind::kViscoplastic;
    m.plasticity.yield_stress = require_as<double>(p, "yield_stress", ppath);
    m.plasticity.viscosity = require_as<double>(p, "viscosity", ppath);
  } else {
    throw ParseError("field '" + ppath + "kind': unknown plasticity '" + kind + "'");
  }
  return m;
}

Json to_json(const Camera& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
          {"rotation", to_json(c.rotation)}, {"translation", to_json(c.translation)},
          {"width", c.width}, {"height", c.height}};
}

Camera camera_from_json(const Json& j, const std::string& path) {
  Camera c;
  c.fx = require_as<double>(j, "fx", path);
  c.fy = require_as<double>(j, "fy", path);
  c.cx = require_as<double>(j, "cx", path);
  c.cy = require_as<double>(j, "cy", path);
  c.rotation = mat3_from_json(require(j, "rotation", path), path + "rotation");
  c.translation = vec3_from_json(require(j, "translation", path), path + "translation");
  c.width = require_as<int>(j, "width", path);
  c.height = require_as<int>(j, "height", path);
  return c;
}

Json to_json(const GridSpec& g) {
  return {{"origin", to_json(g.origin)},
          {"cell_size", g.cell_size},
          {"dims", Json::array({g.dims.x(), g.dims.y(), g.dims.z()})}};
}

GridSpec grid_from_json(const Json& j, const std::string& path) {
  GridSpec g;
  g.origin = vec3_from_json(require(j, "origin", path), path + "origin");
  g.cell_size = require_as<double>(j, "cell_size", path);
  auto dims = require_as<std::vector<int>>(j, "dims", path);
  if (dims.size() != 3) throw ParseError("field '" + path + "dims': expected 3 ints");
  g.dims = Eigen::Vector3i(dims[0], dims[1], dims[2]);
  return g;
}

Json to_json(const BoundaryCondition& bc) {
  if (const auto* g = std::get_if<GroundPlane>(&bc)) {
    return {{"kind", "ground_plane"},
            {"height", g->height},
            {"mode", g->mode == GroundMode::kSticky ? "sticky" : "separate"}};
  }
  const auto& f = std::get<FixedRegion>(bc);
  return {{"kind", "fixed_region"}, {"lo", to_json(f.lo)}, {"hi", to_json(f.hi)}};
}

BoundaryCondition bc_from_json(const Json& j, const std::string& path) {
  auto kind = require_as<std::string>(j, "kind", path);
  if (kind == "ground_plane") {
    GroundPlane g;
    g.height = require_as<double>(j, "height", path);
    auto mode = require_as<std::string>(j, "mode", path);
    if (mode == "sticky") {
      g.mode = GroundMode::kSticky;
    } else if (mode == "separate") {
      g.mode = GroundMode::kSeparate;
    } else {
      throw ParseError("field '" + path + "mode': unknown ground mode '" + mode + "'");
    }
    return g;
  }
  if (kind == "fixed_region") {
    FixedRegion f;
    f.lo = vec3_from_json(require(j, "lo", path), path + "lo");
    f.hi = vec3_from_json(require(j, "hi", path), path + "hi");
    return f;
  }
  throw ParseError("field '" + path + "kind': unknown boundary condition '" + kind + "'");
}

Json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) {
      if (text[i] == '\n') ++line;
    }
    throw ParseError(what + ": parse error at line " + std::to_string(line) + ": " + e.what());
  }
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("write failed for '" + path + "'");
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) return {};
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                          static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.empty()) return {};
  if (text.size() % 4 != 0) throw ParseError("appearance payload is not valid base64");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                          static_cast<int>(text.size()));
  if (n < 0) throw ParseError("appearance payload is not valid base64");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace forcelens
