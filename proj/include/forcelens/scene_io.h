#pragma once

#include <string>
#include <vector>

#include "forcelens/json_util.h"
#include "forcelens/scene.h"

namespace forcelens {

Json scene_to_json(const Scene& scene);
// Parses and validates; throws ParseError, VersionError or InvariantError.
Scene scene_from_json(const Json& j);

void save_scene(const Scene& scene, const std::string& path);
Scene load_scene(const std::string& path);

struct TrajectoryFrame {
  int frame = 0;
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;

  bool operator==(const TrajectoryFrame&) const = default;
};
using Trajectory = std::vector<TrajectoryFrame>;

// JSON-lines, one record per frame. Paths ending in ".gz" are gzip-compressed.
void save_trajectory(const Trajectory& traj, const std::string& path);
Trajectory load_trajectory(const std::string& path);

Json field_spec_to_json(const GroundTruthFieldSpec& spec);
GroundTruthFieldSpec field_spec_from_json(const Json& j);

}  // namespace forcelens
