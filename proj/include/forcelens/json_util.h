#pragma once

#include "json.hpp"
#include <string>
#include <vector>

#include "forcelens/errors.h"
#include "forcelens/scene.h"

namespace forcelens {

using Json = nlohmann::json;

// Field access that reports the offending key path on failure.
const Json& require(const Json& j, const std::string& key, const std::string& path);

template <typename T>
T require_as(const Json& j, const std::string& key, const std::string& path) {
  const Json& v = require(j, key, path);
  try {
    return v.get<T>();
  } catch (const Json::exception& e) {
    throw ParseError("field '" + path + key + "': " + e.what());
  }
}

Json to_json(const Vec3& v);
Json to_json(const Mat3& m);  // row-major 9 floats
Vec3 vec3_from_json(const Json& j, const std::string& path);
Mat3 mat3_from_json(const Json& j, const std::string& path);

Json to_json(const MaterialParams& m);
MaterialParams material_from_json(const Json& j, const std::string& path = "");

Json to_json(const Camera& c);
Camera camera_from_json(const Json& j, const std::string& path = "camera.");

Json to_json(const GridSpec& g);
GridSpec grid_from_json(const Json& j, const std::string& path = "grid.");

Json to_json(const BoundaryCondition& bc);
BoundaryCondition bc_from_json(const Json& j, const std::string& path);

// Parses text, mapping syntax errors to ParseError with a line number.
Json parse_json_text(const std::string& text, const std::string& what);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace forcelens
