#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace forcelens {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec2 = Eigen::Vector2d;

inline constexpr char kSceneSchemaVersion[] = "forcelens.scene/1";

enum class PlasticityKind { kElastic, kElastoplastic, kViscoplastic };

struct Plasticity {
  PlasticityKind kind = PlasticityKind::kElastic;
  double yield_stress = 0.0;  // Pa, elastoplastic and viscoplastic
  double viscosity = 0.0;     // Pa*s, viscoplastic only

  bool operator==(const Plasticity&) const = default;
};

struct MaterialParams {
  std::string name;
  double density = 0.0;        // kg/m^3
  double youngs_modulus = 0.0; // Pa
  double poisson_ratio = 0.0;
  Plasticity plasticity;

  bool operator==(const MaterialParams&) const = default;
};

// Checks the MaterialParams invariants; throws InvariantError naming the
// offending field.
void validate(const MaterialParams& material);

struct Particle {
  Vec3 x = Vec3::Zero();                 // position, m
  Vec3 v = Vec3::Zero();                 // velocity, m/s
  Mat3 affine = Mat3::Zero();            // APIC velocity gradient, 1/s
  Mat3 deformation = Mat3::Identity();   // deformation gradient D
  Mat3 covariance = Mat3::Zero();        // Sigma, m^2
  Mat3 covariance0 = Mat3::Zero();       // Sigma at rest, m^2
  double mass = 0.0;                     // kg
  double volume0 = 0.0;                  // m^3
  int material_id = 0;
  bool constrained = false;
  std::vector<std::uint8_t> appearance;  // opaque payload, never interpreted

  bool operator==(const Particle&) const = default;
};

struct Camera {
  double fx = 1.0, fy = 1.0;  // px
  double cx = 0.0, cy = 0.0;  // px
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();   // m
  int width = 0, height = 0;         // px

  Vec3 center() const { return -rotation.transpose() * translation; }
  bool operator==(const Camera&) const = default;
};

struct GridSpec {
  Vec3 origin = Vec3::Zero();  // position of node (0,0,0), m
  double cell_size = 0.0;      // m
  Eigen::Vector3i dims = Eigen::Vector3i::Constant(4);  // nodes per axis

  // Position of the last node along each axis.
  Vec3 upper() const { return origin + cell_size * (dims.array() - 1).cast<double>().matrix(); }
  bool operator==(const GridSpec&) const = default;
};

enum class GroundMode { kSticky, kSeparate };

// Ground plane normal is +y; nodes at or below `height` are constrained.
struct GroundPlane {
  double height = 0.0;
  GroundMode mode = GroundMode::kSticky;
  bool operator==(const GroundPlane&) const = default;
};

struct FixedRegion {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  bool operator==(const FixedRegion&) const = default;
};

using BoundaryCondition = std::variant<GroundPlane, FixedRegion>;

struct Scene {
  std::vector<Particle> particles;
  std::vector<MaterialParams> materials;
  GridSpec grid;
  Camera camera;
  std::vector<BoundaryCondition> bcs;
  double frame_dt = 1.0 / 30.0;
  int substeps_per_frame = 32;
  Vec3 gravity = Vec3::Zero();

  double substep_dt() const { return frame_dt / substeps_per_frame; }
  bool operator==(const Scene&) const = default;
};

// Validates every Scene invariant (materials, particles, grid fit, camera,
// boundary conditions, time stepping and the CFL bound). Throws
// InvariantError naming the failed invariant.
void validate(const Scene& scene);

// Largest signal speed the CFL check must accommodate: max particle speed or
// the fastest elastic wave speed of any referenced material.
double max_expected_speed(const Scene& scene);

// Regular lattice of particles filling an axis-aligned box. Particle count
// per axis is floor(extent / spacing); samples sit at cell centres.
std::vector<Particle> sample_block(const MaterialParams& material, int material_id,
                                   const Vec3& center, const Vec3& extent,
                                   double spacing);

// Marks every particle inside a FixedRegion boundary condition as constrained
// and zeroes its velocity. Returns the number of particles so marked.
int constrain_fixed_particles(Scene& scene);

// Sum of particle masses.
double total_mass(const std::vector<Particle>& particles);

// Ground-truth specific-force fields used to synthesize observations.
struct ConstantSpec {
  Vec3 a = Vec3::Zero();  // N/kg
};

// a(t) = base + amplitude * axis * sin(2 pi frequency t + phase)
struct SinusoidSpec {
  double amplitude = 0.0;  // N/kg
  Vec3 axis = Vec3::UnitX();
  double frequency = 1.0;  // Hz
  double phase = 0.0;      // rad
  Vec3 base = Vec3::Zero();  // N/kg
};

// Swirl about `axis` through `center`:
// a = strength * exp(-falloff * r) * (axis x r_hat)
struct VortexSpec {
  Vec3 center = Vec3::Zero();
  Vec3 axis = Vec3::UnitY();
  double strength = 0.0;  // N/kg
  double falloff = 0.0;   // 1/m
};

// Constant push on a particle subset during frames [start, end).
struct PointImpulseSpec {
  std::vector<int> particles;
  Vec3 a = Vec3::Zero();  // N/kg
  int start_frame = 0;
  int end_frame = 1;
};

using GroundTruthFieldSpec =
    std::variant<ConstantSpec, SinusoidSpec, VortexSpec, PointImpulseSpec>;

// Throws InvariantError on non-finite strengths or invalid windows.
// `frames` is the sequence length (0 skips the window check).
void validate(const GroundTruthFieldSpec& spec, int frames, int particle_count);

}  // namespace forcelens
