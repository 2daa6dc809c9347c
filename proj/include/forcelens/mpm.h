#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "forcelens/constitutive.h"
#include "forcelens/forcefield.h"
#include "forcelens/scene.h"
#include "forcelens/scene_io.h"

namespace forcelens {

inline constexpr double kMassEpsilon = 1e-12;  // kg

// The per-substep mutable part of a particle.
struct ParticleDyn {
  Vec3 x = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Mat3 affine = Mat3::Zero();
  Mat3 deformation = Mat3::Identity();

  bool operator==(const ParticleDyn&) const = default;
};

struct SimState {
  std::vector<Particle> particles;
  double t = 0.0;
  int frame = 0;
};

SimState initial_state(const Scene& scene);
std::vector<ParticleDyn> dynamics_of(const SimState& state);
TrajectoryFrame snapshot(const SimState& state);

struct StepOptions {
  // Per-particle multiplier on the field output; empty means 1 everywhere.
  std::vector<double> force_scale;
};

// v += dt * scale * field(x, t) for every unconstrained particle.
// Throws SimulationError naming the particle on a non-finite force.
void apply_external_force(SimState& state, const ForceField& field, double substep_dt,
                          const StepOptions& options = {});

// Per-node grid scratch of one substep.
struct GridBuffers {
  std::vector<Eigen::Vector3i> nodes;
  std::vector<double> mass;
  std::vector<Vec3> momentum;
  std::vector<Vec3> velocity;

  Vec3 total_momentum() const;
  double total_mass() const;
};

// Standalone transfers used by property tests. `velocities` overrides the
// particle velocities when non-empty; `kirchhoff` adds stress momentum
// -dt V0 (4/h^2) tau when non-empty.
GridBuffers particle_to_grid(const Scene& scene, std::span<const ParticleDyn> dyn,
                             std::span<const Mat3> kirchhoff = {}, double dt = 0.0);
// Normalizes momentum into velocity (no forces, no boundary conditions).
void grid_velocity_from_momentum(GridBuffers& grid);
// Gathers v and the APIC affine matrix from grid velocities.
void grid_to_particle(const Scene& scene, const GridBuffers& grid,
                      std::span<ParticleDyn> dyn);

// One MLS-MPM substep engine bound to a scene. Keeps scratch buffers between
// calls; not safe for concurrent use.
class Substepper {
 public:
  explicit Substepper(const Scene& scene, StepOptions options = {});
  ~Substepper();
  Substepper(Substepper&&) noexcept;
  Substepper& operator=(Substepper&&) noexcept;

  // Advances dyn by one substep starting at time t of `frame`. `substep` is
  // the global substep index used in diagnostics.
  void forward(std::vector<ParticleDyn>& dyn, const ForceField& field, double t, int frame,
               int substep);

  // Cotangents of the substep outputs on entry, of its inputs on return.
  struct Adjoint {
    std::vector<Vec3> x, v;
    std::vector<Mat3> affine, deformation;

    void resize(std::size_t n);
    void set_zero();
    double norm() const;
    void scale(double s);
    bool all_finite() const;
  };

  struct BackwardOptions {
    bool flip_force_sign = false;  // test hook: corrupts the field-force adjoint
  };

  // Replays the substep from its input `dyn` and propagates `adj` backwards,
  // accumulating field-parameter gradients into grad_params.
  void backward(const std::vector<ParticleDyn>& dyn, const ForceField& field, double t,
                int frame, int substep, Adjoint& adj, std::span<double> grad_params,
                const BackwardOptions& options);
  void backward(const std::vector<ParticleDyn>& dyn, const ForceField& field, double t,
                int frame, int substep, Adjoint& adj, std::span<double> grad_params) {
    backward(dyn, field, t, frame, substep, adj, grad_params, BackwardOptions{});
  }

  const Scene& scene() const;
  double dt() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Runs substeps_per_frame substeps from state; t and frame advance by one frame.
SimState step_frame(const SimState& state, const ForceField& field, const Scene& scene,
                    const StepOptions& options = {});

// Trajectory of `frames` steps; element 0 is the initial state.
Trajectory rollout(const SimState& state, const ForceField& field, const Scene& scene,
                   int frames, const StepOptions& options = {});

// Writes dyn into state.particles and refreshes covariances (Sigma = D Sigma0 D^T).
void commit_dynamics(SimState& state, const std::vector<ParticleDyn>& dyn);

}  // namespace forcelens
