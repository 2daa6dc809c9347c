#include "forcelens/recover.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include "forcelens/errors.h"

namespace forcelens {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_sizes(std::span<const Vec3> a, std::span<const Vec3> b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a.size()) + " positions vs " +
                     std::to_string(b.size()) + " targets");
  }
}

void add_warning(std::vector<std::string>* warnings, const std::string& text) {
  if (!warnings) return;
  if (std::find(warnings->begin(), warnings->end(), text) == warnings->end()) {
    warnings->push_back(text);
  }
}

}  // namespace

void validate(const RecoveryConfig& c) {
  auto fail = [](const std::string& what) { throw UsageError("recovery config: " + what); };
  if (!(c.lambda_space >= 0.0)) fail("lambda_space must be >= 0");
  if (!(c.lambda_time >= 0.0)) fail("lambda_time must be >= 0");
  if (c.iterations < 1) fail("iterations must be >= 1");
  if (!(c.learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(c.adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (!(c.clip_threshold > 0.0)) fail("clip_threshold must be > 0");
  if (!(c.tol >= 0.0)) fail("tol must be >= 0");
  if (c.window < 1) fail("window must be >= 1");
  if (c.max_decays < 0) fail("max_decays must be >= 0");
  if (!(c.decay_factor > 0.0 && c.decay_factor < 1.0)) fail("decay_factor must be in (0, 1)");
  if (!(c.loss_floor >= 0.0)) fail("loss_floor must be >= 0");
  if (!(c.divergence_factor > 1.0)) fail("divergence_factor must be > 1");
}

Json to_json(const RecoveryConfig& c) {
  return {{"lambda_space", c.lambda_space},   {"lambda_time", c.lambda_time},
          {"iterations", c.iterations},       {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},                 {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},           {"clip_threshold", c.clip_threshold},
          {"tol", c.tol},                     {"window", c.window},
          {"max_decays", c.max_decays},       {"decay_factor", c.decay_factor},
          {"loss_floor", c.loss_floor},       {"divergence_factor", c.divergence_factor},
          {"warm_start", c.warm_start},       {"seed", c.seed}};
}

RecoveryConfig recovery_config_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("recovery config must be a JSON object");
  RecoveryConfig c;
  const Json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ParseError("recovery config: unknown key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = require_as<std::decay_t<decltype(field)>>(j, key, "");
  };
  get("lambda_space", c.lambda_space);
  get("lambda_time", c.lambda_time);
  get("iterations", c.iterations);
  get("learning_rate", c.learning_rate);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("clip_threshold", c.clip_threshold);
  get("tol", c.tol);
  get("window", c.window);
  get("max_decays", c.max_decays);
  get("decay_factor", c.decay_factor);
  get("loss_floor", c.loss_floor);
  get("divergence_factor", c.divergence_factor);
  get("warm_start", c.warm_start);
  get("seed", c.seed);
  validate(c);
  return c;
}

double motion_loss(std::span<const Vec3> positions, std::span<const Vec3> targets) {
  check_sizes(positions, targets, "motion_loss");
  if (positions.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t p = 0; p < positions.size(); ++p) sum += (positions[p] - targets[p]).norm();
  return sum / static_cast<double>(positions.size());
}

std::vector<Vec3> motion_loss_grad(std::span<const Vec3> positions,
                                   std::span<const Vec3> targets) {
  check_sizes(positions, targets, "motion_loss_grad");
  std::vector<Vec3> g(positions.size(), Vec3::Zero());
  const double inv = positions.empty() ? 0.0 : 1.0 / static_cast<double>(positions.size());
  for (std::size_t p = 0; p < positions.size(); ++p) {
    const Vec3 r = positions[p] - targets[p];
    const double n = r.norm();
    if (n > 0.0) g[p] = r * (inv / n);
  }
  return g;
}

namespace {

// Fills the regularizer parts and adds their weighted gradients into grad.
void regularizers(const ForceField& field, int frame, const RecoveryConfig& config,
                  LossParts& parts, std::span<double> grad, std::vector<std::string>* warnings) {
  if (field.supports_tv()) {
    parts.space = field.tv_loss(grad, config.lambda_space);
  } else if (config.lambda_space > 0.0) {
    add_warning(warnings, std::string("spatial TV skipped: the ") + to_string(field.kind()) +
                              " field has no feature planes");
  }
  parts.time = field.time_smooth_loss(frame, grad, config.lambda_time);
  parts.total = parts.motion + config.lambda_space * parts.space + config.lambda_time * parts.time;
}

}  // namespace

LossParts total_loss(const ForceField& field, int frame, std::span<const Vec3> positions,
                     std::span<const Vec3> targets, const RecoveryConfig& config,
                     std::vector<std::string>* warnings) {
  LossParts parts;
  parts.motion = motion_loss(positions, targets);
  regularizers(field, frame, config, parts, {}, warnings);
  return parts;
}

FrameReport recover_frame(const SimState& state, ForceField& field,
                          std::span<const Vec3> targets, const Scene& scene,
                          const RecoveryConfig& config, std::vector<std::string>* warnings) {
  validate(config);
  const auto start = Clock::now();
  const int frame = state.frame;
  if (targets.size() != state.particles.size()) {
    throw ShapeError("recover_frame: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(state.particles.size()) + " particles");
  }
  if (!field.has_frame(frame)) {
    throw UsageError("recover_frame: field is not warm-started for frame " +
                     std::to_string(frame));
  }

  std::vector<std::size_t> trainable;
  for (const ParamRange& r : field.trainable_ranges(frame)) {
    for (std::size_t i = r.begin; i < r.end; ++i) trainable.push_back(i);
  }
  std::span<double> params = field.params();
  std::vector<double> m(trainable.size(), 0.0), v(trainable.size(), 0.0);
  std::vector<double> best(trainable.size());
  for (std::size_t k = 0; k < trainable.size(); ++k) best[k] = params[trainable[k]];
  std::vector<double> grad(params.size());
  std::vector<std::vector<Vec3>> cot(2);
  BackpropOptions bopts;
  bopts.clip_threshold = config.clip_threshold;

  FrameReport report;
  report.frame = frame;
  report.best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> best_curve;
  double b1t = 1.0, b2t = 1.0;
  double lr = config.learning_rate;
  int decays = 0;
  int stage_start = 0;  // first iteration at the current learning rate

  // Restarts Adam from the best iterate with a smaller step; false once the
  // decay budget is spent.
  auto back_off = [&](int it) {
    if (decays == config.max_decays) return false;
    ++decays;
    lr *= config.decay_factor;
    stage_start = it;
    for (std::size_t k = 0; k < trainable.size(); ++k) params[trainable[k]] = best[k];
    std::fill(m.begin(), m.end(), 0.0);
    std::fill(v.begin(), v.end(), 0.0);
    b1t = b2t = 1.0;
    return true;
  };
  auto record = [&](const LossParts& parts) {
    report.motion.push_back(parts.motion);
    report.space.push_back(parts.space);
    report.time.push_back(parts.time);
    report.total.push_back(parts.total);
    report.iterations = static_cast<int>(report.total.size());
  };

  for (int it = 0; it < config.iterations; ++it) {
    std::optional<TapedRollout> taped;
    try {
      taped.emplace(rollout_with_tape(state, field, scene, 1));
    } catch (const SimulationError& e) {
      // The starting parameters must simulate; later failures are the
      // optimizer's doing and count as a blowup.
      if (it == 0) throw;
      add_warning(warnings, "frame " + std::to_string(frame) + ": " + e.what());
    }
    LossParts parts;
    if (taped) {
      parts.motion = motion_loss(taped->trajectory[1].positions, targets);
      std::fill(grad.begin(), grad.end(), 0.0);
      regularizers(field, frame, config, parts, grad, warnings);
    }
    if (!taped || !std::isfinite(parts.total)) {
      if (it == 0) {
        throw SimulationError("recover_frame: non-finite initial loss at frame " +
                              std::to_string(frame));
      }
      ++report.failed_steps;
      if (back_off(it)) continue;
      report.diverged = true;
      break;
    }
    record(parts);
    if (it == 0) report.initial_loss = parts.total;
    if (parts.total < report.best_loss) {
      report.best_loss = parts.total;
      report.best_iteration = static_cast<int>(report.total.size()) - 1;
      for (std::size_t k = 0; k < trainable.size(); ++k) best[k] = params[trainable[k]];
    }
    best_curve.push_back(report.best_loss);
    if (parts.total <= config.loss_floor) break;

    const bool blowup = report.initial_loss > 0.0 &&
                        parts.total > config.divergence_factor * report.initial_loss;
    bool plateau = false;
    const int n = static_cast<int>(best_curve.size());
    if (!blowup && it - stage_start >= config.window && n > config.window) {
      const double before = best_curve[n - 1 - config.window];
      plateau = (before - report.best_loss) / std::max(before, 1e-300) < config.tol;
    }
    if (blowup || plateau) {
      if (back_off(it)) continue;
      report.diverged = blowup;
      break;
    }
    if (it + 1 == config.iterations) break;

    cot[1] = motion_loss_grad(taped->trajectory[1].positions, targets);
    GradReport g;
    try {
      g = backprop(taped->tape, field, scene, cot, bopts);
    } catch (const SimulationError& e) {
      add_warning(warnings, "frame " + std::to_string(frame) + ": " + e.what());
      ++report.failed_steps;
      if (back_off(it)) continue;
      report.diverged = true;
      break;
    }
    b1t *= config.beta1;
    b2t *= config.beta2;
    for (std::size_t k = 0; k < trainable.size(); ++k) {
      const std::size_t i = trainable[k];
      const double gi = grad[i] + g.gradient[i];
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * gi;
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * gi * gi;
      const double mh = m[k] / (1.0 - b1t);
      const double vh = v[k] / (1.0 - b2t);
      params[i] -= lr * mh / (std::sqrt(vh) + config.adam_eps);
    }
  }
  for (std::size_t k = 0; k < trainable.size(); ++k) params[trainable[k]] = best[k];
  report.wall_seconds = seconds_since(start);
  return report;
}

SequenceResult recover_sequence(const Scene& scene, const TargetSequence& targets,
                                ForceField& field, const RecoveryConfig& config) {
  validate(config);
  if (targets.size() < 2) throw UsageError("recover_sequence: need targets for at least 2 frames");
  const auto start = Clock::now();
  SequenceResult out;
  RecoveryReport& report = out.report;
  report.representation = to_string(field.kind());
  SimState state = initial_state(scene);
  out.committed.push_back(snapshot(state));
  const int frames = static_cast<int>(targets.size()) - 1;
  int consecutive = 0;
  for (int t = 0; t < frames; ++t) {
    if (config.warm_start) {
      field.warm_start(t, config.seed);
    } else {
      field.fresh_start(t, config.seed);
    }
    FrameReport fr;
    bool failed = false;
    try {
      fr = recover_frame(state, field, targets[t + 1], scene, config, &report.warnings);
      state = step_frame(state, field, scene);
    } catch (const SimulationError& e) {
      // The committed state can no longer be simulated; nothing downstream
      // of this frame is recoverable.
      fr.frame = t;
      fr.diverged = true;
      report.warnings.push_back("frame " + std::to_string(t) + ": " + e.what());
      failed = true;
    }
    const bool diverged = fr.diverged;
    report.frames.push_back(std::move(fr));
    if (failed) {
      ++report.divergent_frames;
      report.aborted = true;
      report.warnings.push_back("aborted at frame " + std::to_string(t) +
                                ": the simulation cannot continue");
      break;
    }
    out.committed.push_back(snapshot(state));
    if (diverged) {
      ++report.divergent_frames;
      if (++consecutive >= 3) {
        report.aborted = true;
        report.warnings.push_back("aborted after 3 consecutive divergent frames at frame " +
                                  std::to_string(t));
        break;
      }
    } else {
      consecutive = 0;
    }
  }
  report.wall_seconds = seconds_since(start);
  return out;
}

Json to_json(const RecoveryReport& r, bool include_timing) {
  Json frames = Json::array();
  for (const auto& f : r.frames) {
    Json jf = {{"frame", f.frame},
               {"iterations", f.iterations},
               {"best_iteration", f.best_iteration},
               {"initial_loss", f.initial_loss},
               {"best_loss", f.best_loss},
               {"diverged", f.diverged},
               {"failed_steps", f.failed_steps},
               {"motion", f.motion},
               {"space", f.space},
               {"time", f.time},
               {"total", f.total}};
    if (include_timing) jf["wall_seconds"] = f.wall_seconds;
    frames.push_back(std::move(jf));
  }
  Json j = {{"representation", r.representation},
            {"frames", frames},
            {"warnings", r.warnings},
            {"divergent_frames", r.divergent_frames},
            {"aborted", r.aborted},
            {"field_checkpoint", r.field_checkpoint}};
  if (include_timing) j["wall_seconds"] = r.wall_seconds;
  return j;
}

TrackTargets targets_from_tracks(TrackSet& tracks, std::span<const Vec3> particles0,
                                 const LiftConfig& lift) {
  TrackTargets out;
  lift_tracks(tracks, lift, &out.lift);
  const BarycentricBinding binding = bind_barycentric(particles0, tracks.lifted[0]);
  for (double r : binding.residuals) out.max_binding_residual = std::max(out.max_binding_residual, r);
  const std::vector<Vec3> recon0 = interpolate_targets(binding, tracks.lifted[0]);
  for (const auto& keypoints : tracks.lifted) {
    std::vector<Vec3> x = interpolate_targets(binding, keypoints);
    for (std::size_t p = 0; p < x.size(); ++p) x[p] += particles0[p] - recon0[p];
    out.targets.push_back(std::move(x));
  }
  return out;
}

TargetSequence noisy_dense_targets(const Trajectory& truth, const Camera& camera,
                                   double relative_noise, std::uint64_t seed) {
  if (!(relative_noise >= 0.0)) throw UsageError("noisy_dense_targets: noise must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vec3 c = camera.center();
  TargetSequence out;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    std::vector<Vec3> x = truth[t].positions;
    if (t > 0) {
      for (auto& p : x) p = c + (p - c) * (1.0 + relative_noise * normal(rng));
    }
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace forcelens
