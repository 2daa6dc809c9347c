#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "forcelens/adjoint.h"
#include "forcelens/forcefield.h"
#include "forcelens/json_util.h"
#include "forcelens/mpm.h"
#include "forcelens/tracking.h"

namespace forcelens {

struct RecoveryConfig {
  double lambda_space = 1e-3;  // spatial TV weight
  double lambda_time = 1e-2;   // temporal smoothness weight
  int iterations = 300;        // Adam steps per frame
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_threshold = 1e3;  // adjoint-state L2 bound
  double tol = 1e-4;            // relative improvement over the stop window
  int window = 10;              // iterations
  int max_decays = 3;           // learning-rate cuts on plateaus before stopping
  double decay_factor = 0.2;
  double loss_floor = 1e-10;    // stop once the total loss is this small
  double divergence_factor = 10.0;
  bool warm_start = true;       // false: fresh initialization at every frame
  std::uint64_t seed = 0;
};

// Throws UsageError naming the offending field.
void validate(const RecoveryConfig& config);
Json to_json(const RecoveryConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
RecoveryConfig recovery_config_from_json(const Json& j);

// Mean over particles of |x - target|, in m.
double motion_loss(std::span<const Vec3> positions, std::span<const Vec3> targets);
// d motion_loss / d positions; zero residuals contribute zero.
std::vector<Vec3> motion_loss_grad(std::span<const Vec3> positions,
                                   std::span<const Vec3> targets);

struct LossParts {
  double motion = 0.0;
  double space = 0.0;  // unweighted TV
  double time = 0.0;   // unweighted temporal smoothness
  double total = 0.0;  // motion + lambda_space * space + lambda_time * time
};

// Regularizers the field does not support contribute zero; `warnings`
// receives a note the first time that happens.
LossParts total_loss(const ForceField& field, int frame, std::span<const Vec3> positions,
                     std::span<const Vec3> targets, const RecoveryConfig& config,
                     std::vector<std::string>* warnings = nullptr);

struct FrameReport {
  int frame = 0;
  std::vector<double> motion, space, time, total;  // one entry per iteration run
  int iterations = 0;      // loss evaluations recorded in the curves
  int failed_steps = 0;    // optimizer steps whose simulation failed
  int best_iteration = 0;  // index into the curves
  double initial_loss = 0.0;
  double best_loss = 0.0;
  bool diverged = false;
  double wall_seconds = 0.0;
};

struct RecoveryReport {
  std::string representation;
  std::vector<FrameReport> frames;
  std::vector<std::string> warnings;
  int divergent_frames = 0;
  bool aborted = false;
  double wall_seconds = 0.0;
  std::string field_checkpoint;  // path, filled by the caller that saves it

  bool any_divergence() const { return divergent_frames > 0; }
};

// `include_timing` false drops wall-clock fields so reports compare bitwise.
Json to_json(const RecoveryReport& report, bool include_timing = true);

// Optimizes the field's trainable parameters for the transition out of
// state.frame so that the simulated positions at the next frame match
// `targets`. The field must already be warm-started for that frame. Leaves
// the best iterate in the field.
FrameReport recover_frame(const SimState& state, ForceField& field,
                          std::span<const Vec3> targets, const Scene& scene,
                          const RecoveryConfig& config,
                          std::vector<std::string>* warnings = nullptr);

struct SequenceResult {
  RecoveryReport report;
  Trajectory committed;  // re-simulated rollout under the accepted field
};

// targets[t] holds the frame-t target positions (entry 0 is not used).
// Frames 0..targets.size()-2 are recovered in order.
SequenceResult recover_sequence(const Scene& scene, const TargetSequence& targets,
                                ForceField& field, const RecoveryConfig& config);

// Sparse-track targets: lifts the tracks, binds particles at frame 0 and
// interpolates every frame. Each particle's target is shifted by its frame-0
// reconstruction offset so that targets[0] equals the particle positions.
struct TrackTargets {
  TargetSequence targets;
  std::vector<LiftStats> lift;
  double max_binding_residual = 0.0;  // m
};
TrackTargets targets_from_tracks(TrackSet& tracks, std::span<const Vec3> particles0,
                                 const LiftConfig& lift);

// Dense targets from the true trajectory, each position moved along its
// camera ray by a relative depth error drawn from N(0, relative_noise^2)
// independently per particle and frame. Frame 0 is left exact.
TargetSequence noisy_dense_targets(const Trajectory& truth, const Camera& camera,
                                   double relative_noise, std::uint64_t seed);

}  // namespace forcelens
