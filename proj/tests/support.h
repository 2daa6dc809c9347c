#pragma once

#include <Eigen/Geometry>
#include <filesystem>
#include <random>
#include <string>

#include "forcelens/materials.h"
#include "forcelens/scene.h"

namespace forcelens::testing {

// 3x3x3 gelatin block at 2.5 cm spacing inside a 16^3 grid of 5 cm cells.
inline Scene block_scene(const std::string& material = "gelatin", int per_axis = 3) {
  Scene s;
  s.materials.push_back(material_lookup(material));
  s.grid.cell_size = 0.05;
  s.grid.dims = Eigen::Vector3i::Constant(16);
  s.particles = sample_block(s.materials[0], 0, Vec3(0.3, 0.3, 0.3),
                             Vec3::Constant(0.025 * per_axis), 0.025);
  s.camera = Camera{800, 800, 256, 256, Mat3::Identity(), Vec3(-0.375, -0.375, 1.0), 512, 512};
  return s;
}

// One particle, far from everything.
inline Scene single_particle_scene() {
  Scene s = block_scene("gelatin", 1);
  return s;
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

// Fresh scratch directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("forcelens_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace forcelens::testing
