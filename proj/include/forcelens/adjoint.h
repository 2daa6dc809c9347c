#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "forcelens/forcefield.h"
#include "forcelens/json_util.h"
#include "forcelens/mpm.h"

namespace forcelens {

// Per-substep checkpoints of a rollout. checkpoints[k] is the input of
// substep k, so there is one more checkpoint than substeps.
struct Tape {
  std::vector<std::vector<ParticleDyn>> checkpoints;
  std::vector<double> times;  // substep start times
  std::vector<int> frames;    // frame index of each substep
  int first_frame = 0;
  int frame_count = 0;
  int substeps_per_frame = 1;
  StepOptions options;

  std::size_t substeps() const { return times.size(); }
};

struct TapeOptions {
  StepOptions step;
  std::size_t memory_budget_bytes = std::size_t{2} << 30;
};

struct TapedRollout {
  Trajectory trajectory;  // frames + 1 entries, element 0 is the initial state
  Tape tape;
  SimState final_state;
};

// Same arithmetic as rollout(); additionally records every substep input.
// Throws UsageError when the tape would exceed the memory budget.
TapedRollout rollout_with_tape(const SimState& state, const ForceField& field,
                               const Scene& scene, int frames, const TapeOptions& options = {});

// Re-runs substep k from checkpoint k.
std::vector<ParticleDyn> replay_substep(const Tape& tape, const ForceField& field,
                                        const Scene& scene, std::size_t k);

struct BackpropOptions {
  double clip_threshold = 1e3;  // L2 bound on the adjoint state per substep
  bool flip_force_sign = false; // test hook
};

struct FdEntry {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradReport {
  std::vector<double> gradient;
  double gradient_norm = 0.0;
  int clip_events = 0;
  std::vector<FdEntry> fd_table;
  double tolerance = 0.0;
  double pass_fraction = 0.0;     // fraction of fd_table within tolerance
  double required_fraction = 0.0;
  double worst_rel_error = 0.0;
  bool pass = true;
  std::vector<std::string> warnings;
};

Json to_json(const GradReport& report, bool include_gradient = false);

// cotangents[f] is d loss / d positions at trajectory frame f (f = 0..frames;
// entry 0 is ignored because the initial state is a constant). Empty inner
// vectors count as zero.
GradReport backprop(const Tape& tape, const ForceField& field, const Scene& scene,
                    const std::vector<std::vector<Vec3>>& cotangents,
                    const BackpropOptions& options = {});

// Loss of a rollout; may also read the field's parameters directly.
using TrajectoryLoss = std::function<double(const Trajectory&, const ForceField&)>;

// Central differences (L(theta + eps e_i) - L(theta - eps e_i)) / (2 eps).
std::vector<double> finite_diff_grad(const SimState& state, const ForceField& field,
                                     const Scene& scene, int frames, const TrajectoryLoss& loss,
                                     std::span<const std::size_t> indices, double eps,
                                     const StepOptions& options = {});

// |a - b| / max(|a|, |b|, floor).
double relative_error(double analytic, double numeric, double floor);

// Fills fd_table, pass_fraction, worst_rel_error and pass. The floor of the
// relative error is floor_scale * max |numeric|.
void compare_gradients(GradReport& report, std::span<const std::size_t> indices,
                       std::span<const double> numeric, double tolerance,
                       double required_fraction, double floor_scale = 1e-6);

struct GradCheckConfig {
  int block_per_axis = 3;    // particles per axis of the test block
  int grid_nodes = 8;        // per axis
  int frames = 3;
  int resolution = 4;
  int features = 2;
  int samples = 128;
  double eps = 1e-6;
  double tolerance = 1e-3;
  double required_fraction = 0.95;
  std::uint64_t seed = 7;
  bool corrupt_adjoint = false;  // flips the sign of the field-force adjoint
  bool empty_index_set = false;  // test hook for the vacuous case
};

GradReport gradient_check(const GradCheckConfig& config);

}  // namespace forcelens
