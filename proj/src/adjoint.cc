#include "forcelens/adjoint.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "forcelens/errors.h"
#include "forcelens/materials.h"

namespace forcelens {

TapedRollout rollout_with_tape(const SimState& state, const ForceField& field,
                               const Scene& scene, int frames, const TapeOptions& options) {
  if (frames < 0) throw UsageError("rollout_with_tape: frames must be >= 0");
  const int S = scene.substeps_per_frame;
  const std::size_t substeps = static_cast<std::size_t>(frames) * S;
  const std::size_t required =
      (substeps + 1) * state.particles.size() * sizeof(ParticleDyn) + substeps * 16;
  if (required > options.memory_budget_bytes) {
    throw UsageError("tape needs " + std::to_string(required) + " bytes but the budget is " +
                     std::to_string(options.memory_budget_bytes));
  }

  TapedRollout out;
  Tape& tape = out.tape;
  tape.first_frame = state.frame;
  tape.frame_count = frames;
  tape.substeps_per_frame = S;
  tape.options = options.step;
  tape.checkpoints.reserve(substeps + 1);
  tape.times.reserve(substeps);
  tape.frames.reserve(substeps);

  Substepper stepper(scene, options.step);
  out.trajectory.push_back(snapshot(state));
  SimState s = state;
  std::vector<ParticleDyn> dyn = dynamics_of(s);
  for (int f = 0; f < frames; ++f) {
    for (int k = 0; k < S; ++k) {
      const double t = s.t + k * stepper.dt();
      tape.checkpoints.push_back(dyn);
      tape.times.push_back(t);
      tape.frames.push_back(s.frame);
      stepper.forward(dyn, field, t, s.frame, s.frame * S + k);
    }
    commit_dynamics(s, dyn);
    s.frame += 1;
    s.t = s.frame * scene.frame_dt;
    out.trajectory.push_back(snapshot(s));
  }
  tape.checkpoints.push_back(dyn);
  out.final_state = std::move(s);
  return out;
}

std::vector<ParticleDyn> replay_substep(const Tape& tape, const ForceField& field,
                                        const Scene& scene, std::size_t k) {
  if (k >= tape.substeps()) throw UsageError("replay_substep: index out of range");
  Substepper stepper(scene, tape.options);
  std::vector<ParticleDyn> dyn = tape.checkpoints[k];
  const int S = tape.substeps_per_frame;
  stepper.forward(dyn, field, tape.times[k], tape.frames[k],
                  tape.frames[k] * S + static_cast<int>(k % S));
  return dyn;
}

GradReport backprop(const Tape& tape, const ForceField& field, const Scene& scene,
                    const std::vector<std::vector<Vec3>>& cotangents,
                    const BackpropOptions& options) {
  const std::size_t n = tape.checkpoints.empty() ? 0 : tape.checkpoints.front().size();
  if (cotangents.size() != static_cast<std::size_t>(tape.frame_count) + 1) {
    throw ShapeError("backprop: expected " + std::to_string(tape.frame_count + 1) +
                     " cotangent frames, got " + std::to_string(cotangents.size()));
  }
  for (const auto& c : cotangents) {
    if (!c.empty() && c.size() != n) throw ShapeError("backprop: cotangent particle count");
    for (const auto& v : c) {
      if (!v.allFinite()) throw UsageError("backprop: non-finite cotangent");
    }
  }

  GradReport report;
  report.gradient.assign(field.num_params(), 0.0);
  if (tape.substeps() == 0) return report;

  Substepper stepper(scene, tape.options);
  Substepper::Adjoint adj;
  adj.resize(n);
  const int S = tape.substeps_per_frame;
  const Substepper::BackwardOptions bopts{options.flip_force_sign};
  for (std::size_t k = tape.substeps(); k-- > 0;) {
    if ((k + 1) % S == 0) {
      const auto& c = cotangents[(k + 1) / S];
      for (std::size_t p = 0; p < c.size(); ++p) adj.x[p] += c[p];
    }
    stepper.backward(tape.checkpoints[k], field, tape.times[k], tape.frames[k],
                     tape.frames[k] * S + static_cast<int>(k % S), adj, report.gradient, bopts);
    const double norm = adj.norm();
    if (norm > options.clip_threshold) {
      adj.scale(options.clip_threshold / norm);
      ++report.clip_events;
    }
    if (!adj.all_finite()) {
      throw SimulationError("non-finite adjoint state at substep " + std::to_string(k));
    }
  }
  double sq = 0.0;
  for (double g : report.gradient) {
    if (!std::isfinite(g)) throw SimulationError("non-finite parameter gradient");
    sq += g * g;
  }
  report.gradient_norm = std::sqrt(sq);
  return report;
}

std::vector<double> finite_diff_grad(const SimState& state, const ForceField& field,
                                     const Scene& scene, int frames, const TrajectoryLoss& loss,
                                     std::span<const std::size_t> indices, double eps,
                                     const StepOptions& options) {
  if (!(eps > 0.0)) throw UsageError("finite_diff_grad: eps must be > 0");
  std::vector<double> out;
  out.reserve(indices.size());
  auto probe = field.clone();
  auto params = probe->params();
  for (std::size_t i : indices) {
    if (i >= params.size()) throw UsageError("finite_diff_grad: index out of range");
    const double orig = params[i];
    params[i] = orig + eps;
    const double up = loss(rollout(state, *probe, scene, frames, options), *probe);
    params[i] = orig - eps;
    const double down = loss(rollout(state, *probe, scene, frames, options), *probe);
    params[i] = orig;
    out.push_back((up - down) / (2.0 * eps));
  }
  return out;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  if (denom == 0.0) return 0.0;
  return std::abs(analytic - numeric) / denom;
}

void compare_gradients(GradReport& report, std::span<const std::size_t> indices,
                       std::span<const double> numeric, double tolerance,
                       double required_fraction, double floor_scale) {
  report.tolerance = tolerance;
  report.required_fraction = required_fraction;
  report.fd_table.clear();
  report.worst_rel_error = 0.0;
  if (indices.empty()) {
    report.pass = true;
    report.pass_fraction = 1.0;
    report.warnings.push_back("empty index set: gradient check passes vacuously");
    return;
  }
  double scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  const double floor = floor_scale * scale;
  std::size_t ok = 0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    FdEntry e{indices[k], report.gradient[indices[k]], numeric[k], 0.0};
    e.rel_error = relative_error(e.analytic, e.numeric, floor);
    report.worst_rel_error = std::max(report.worst_rel_error, e.rel_error);
    if (e.rel_error <= tolerance) ++ok;
    report.fd_table.push_back(e);
  }
  report.pass_fraction = static_cast<double>(ok) / static_cast<double>(indices.size());
  report.pass = report.pass_fraction >= required_fraction;
}

Json to_json(const GradReport& r, bool include_gradient) {
  Json table = Json::array();
  for (const auto& e : r.fd_table) {
    table.push_back({{"index", e.index},
                     {"analytic", e.analytic},
                     {"numeric", e.numeric},
                     {"rel_error", e.rel_error}});
  }
  Json j = {{"num_params", r.gradient.size()},
            {"gradient_norm", r.gradient_norm},
            {"clip_events", r.clip_events},
            {"tolerance", r.tolerance},
            {"pass_fraction", r.pass_fraction},
            {"required_fraction", r.required_fraction},
            {"worst_rel_error", r.worst_rel_error},
            {"pass", r.pass},
            {"warnings", r.warnings},
            {"fd_table", table}};
  if (include_gradient) j["gradient"] = r.gradient;
  return j;
}

GradReport gradient_check(const GradCheckConfig& cfg) {
  if (cfg.block_per_axis < 1 || cfg.block_per_axis > 4) {
    throw UsageError("gradient_check: block_per_axis must be in [1, 4]");
  }
  if (cfg.grid_nodes < 4 || cfg.grid_nodes > 8) {
    throw UsageError("gradient_check: grid_nodes must be in [4, 8]");
  }
  if (cfg.frames < 1 || cfg.frames > 5) throw UsageError("gradient_check: frames must be in [1, 5]");

  Scene scene;
  scene.materials.push_back(material_lookup("gelatin"));
  scene.grid.cell_size = 0.1;
  scene.grid.dims = Eigen::Vector3i::Constant(cfg.grid_nodes);
  const Vec3 center = 0.5 * scene.grid.upper();
  const double spacing = 0.05;
  scene.particles = sample_block(scene.materials[0], 0, center,
                                 Vec3::Constant(spacing * cfg.block_per_axis), spacing);
  scene.camera = Camera{500, 500, 256, 256, Mat3::Identity(), Vec3(0, 0, 1.5), 512, 512};
  validate(scene);

  TriPlaneConfig tc;
  tc.resolution = cfg.resolution;
  tc.features = cfg.features;
  tc.encoder_hidden = 8;
  tc.decoder_hidden = {8, 8};
  tc.domain = {scene.grid.origin, scene.grid.upper()};
  tc.frame_dt = scene.frame_dt;
  tc.frames = cfg.frames;
  tc.seed = cfg.seed;
  CausalTriPlane field(tc);
  for (int f = 0; f < cfg.frames; ++f) field.warm_start(f, cfg.seed + 1);
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 0.5);
  auto params = field.params();
  const ParamRange dec = field.decoder_range();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (i < dec.begin || i >= dec.end) params[i] = normal(rng);
  }
  // Decoder weights keep their seeded init; its biases get random offsets.
  const std::size_t dec_count = dec.size();
  for (std::size_t i = dec.begin + dec_count - 3; i < dec.end; ++i) params[i] = normal(rng);

  const SimState state = initial_state(scene);
  const std::size_t n = scene.particles.size();
  std::vector<std::vector<Vec3>> targets(cfg.frames + 1, std::vector<Vec3>(n));
  std::uniform_real_distribution<double> offset(-0.01, 0.01);
  for (int f = 1; f <= cfg.frames; ++f) {
    for (std::size_t p = 0; p < n; ++p) {
      targets[f][p] = state.particles[p].x + Vec3(offset(rng), offset(rng), offset(rng));
    }
  }
  const auto loss = [&](const Trajectory& traj, const ForceField&) {
    double sum = 0.0;
    for (int f = 1; f <= cfg.frames; ++f) {
      for (std::size_t p = 0; p < n; ++p) {
        sum += 0.5 * (traj[f].positions[p] - targets[f][p]).squaredNorm();
      }
    }
    return sum / static_cast<double>(n);
  };

  const TapedRollout taped = rollout_with_tape(state, field, scene, cfg.frames);
  std::vector<std::vector<Vec3>> cot(cfg.frames + 1);
  for (int f = 1; f <= cfg.frames; ++f) {
    cot[f].resize(n);
    for (std::size_t p = 0; p < n; ++p) {
      cot[f][p] = (taped.trajectory[f].positions[p] - targets[f][p]) / static_cast<double>(n);
    }
  }
  BackpropOptions bopts;
  bopts.flip_force_sign = cfg.corrupt_adjoint;
  GradReport report = backprop(taped.tape, field, scene, cot, bopts);

  std::vector<std::size_t> indices;
  if (!cfg.empty_index_set) {
    indices.resize(field.num_params());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    std::shuffle(indices.begin(), indices.end(), rng);
    indices.resize(std::min<std::size_t>(indices.size(), static_cast<std::size_t>(cfg.samples)));
    std::sort(indices.begin(), indices.end());
  }
  const auto numeric =
      finite_diff_grad(state, field, scene, cfg.frames, loss, indices, cfg.eps);
  compare_gradients(report, indices, numeric, cfg.tolerance, cfg.required_fraction);
  return report;
}

}  // namespace forcelens
