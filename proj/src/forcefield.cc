#include "forcelens/forcefield.h"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "forcelens/errors.h"

namespace forcelens {

std::string to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::kTriPlane: return "triplane";
    case FieldKind::kKPlanes: return "kplanes";
    case FieldKind::kPoint: return "point";
    case FieldKind::kAnalytic: return "analytic";
  }
  return "unknown";
}

FieldKind parse_field_kind(const std::string& name) {
  if (name == "triplane") return FieldKind::kTriPlane;
  if (name == "kplanes") return FieldKind::kKPlanes;
  if (name == "point") return FieldKind::kPoint;
  throw UsageError("unknown representation '" + name +
                   "'; valid kinds: triplane, kplanes, point");
}

Vec3 ForceField::query(const Vec3& x, double t) const {
  return query(FieldSample{x, t, frame_of(t), -1});
}

void ForceField::query_batch(std::span<const Vec3> x, double t, int frame,
                             std::span<Vec3> out) const {
  if (out.size() != x.size()) throw ShapeError("query_batch: output size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = query(FieldSample{x[i], t, frame, static_cast<int>(i)});
  }
}

void ForceField::backward_batch(std::span<const Vec3>, double, int, std::span<const Vec3>,
                                std::span<double>, std::span<Vec3>) const {
  throw UsageError("field kind '" + to_string(kind()) + "' is not differentiable");
}

void ForceField::scatter(std::span<const double> grads, std::span<double> accum) const {
  const std::size_t n = num_params();
  if (grads.size() != n || accum.size() != n) {
    throw ShapeError("scatter: expected " + std::to_string(n) + " entries, got " +
                     std::to_string(grads.size()) + " and " + std::to_string(accum.size()));
  }
  for (std::size_t i = 0; i < n; ++i) accum[i] += grads[i];
}

int ForceField::frame_of(double t) const {
  return std::max(0, static_cast<int>(std::floor(t / frame_dt() + 1e-9)));
}

double ForceField::tv_loss(std::span<double>, double) const {
  throw UsageError("tv_loss is not applicable to field kind '" + to_string(kind()) + "'");
}

double ForceField::time_smooth_loss(int, std::span<double>, double) const { return 0.0; }

// ---------------------------------------------------------------------------
// PointForceField

PointForceField::PointForceField(int particles, int frames, double frame_dt)
    : particles_(particles), frames_(frames), frame_dt_(frame_dt) {
  if (particles < 0 || frames < 0) throw UsageError("PointForceField: negative dimensions");
  if (!(frame_dt > 0.0)) throw UsageError("PointForceField: frame_dt must be > 0");
  params_.assign(static_cast<std::size_t>(particles) * frames * 3, 0.0);
}

std::unique_ptr<ForceField> PointForceField::clone() const {
  return std::make_unique<PointForceField>(*this);
}

Eigen::Map<Vec3> PointForceField::at(int frame, int particle) {
  return Eigen::Map<Vec3>(params_.data() +
                          (static_cast<std::size_t>(frame) * particles_ + particle) * 3);
}

Eigen::Map<const Vec3> PointForceField::at(int frame, int particle) const {
  return Eigen::Map<const Vec3>(params_.data() +
                                (static_cast<std::size_t>(frame) * particles_ + particle) * 3);
}

Vec3 PointForceField::query(const FieldSample& s) const {
  if (s.frame < 0 || s.frame >= frames_) {
    throw UsageError("point field has no entry for frame " + std::to_string(s.frame));
  }
  if (s.particle < 0 || s.particle >= particles_) return Vec3::Zero();
  return at(s.frame, s.particle);
}

void PointForceField::backward_batch(std::span<const Vec3> x, double, int frame,
                                     std::span<const Vec3> grad_out,
                                     std::span<double> grad_params,
                                     std::span<Vec3> grad_x) const {
  if (grad_params.size() != params_.size()) throw ShapeError("point field: gradient size");
  if (frame < 0 || frame >= frames_) {
    throw UsageError("point field has no entry for frame " + std::to_string(frame));
  }
  const std::size_t n = std::min<std::size_t>(x.size(), particles_);
  for (std::size_t i = 0; i < n; ++i) {
    double* g = grad_params.data() + (static_cast<std::size_t>(frame) * particles_ + i) * 3;
    for (int a = 0; a < 3; ++a) g[a] += grad_out[i](a);
  }
  for (auto& g : grad_x) g.setZero();
}

void PointForceField::warm_start(int frame, std::uint64_t) {
  if (frame < 0 || frame >= frames_) {
    throw UsageError("point field has no entry for frame " + std::to_string(frame));
  }
  for (int p = 0; p < particles_; ++p) {
    const Vec3 prev = frame == 0 ? Vec3::Zero() : Vec3(at(frame - 1, p));
    at(frame, p) = prev;
  }
}

void PointForceField::fresh_start(int frame, std::uint64_t seed) {
  warm_start(frame, seed);
  for (int p = 0; p < particles_; ++p) at(frame, p).setZero();
}

std::vector<ParamRange> PointForceField::trainable_ranges(int frame) const {
  const std::size_t stride = static_cast<std::size_t>(particles_) * 3;
  return {{frame * stride, (frame + 1) * stride}};
}

Json PointForceField::to_json() const {
  return {{"version", kFieldCheckpointVersion},
          {"kind", to_string(kind())},
          {"config", {{"particles", particles_}, {"frames", frames_}, {"frame_dt", frame_dt_}}},
          {"params", params_}};
}

// ---------------------------------------------------------------------------
// AnalyticField

AnalyticField::AnalyticField(GroundTruthFieldSpec spec, double frame_dt, double scale)
    : spec_(std::move(spec)), frame_dt_(frame_dt), scale_(scale) {
  if (!(frame_dt > 0.0)) throw UsageError("AnalyticField: frame_dt must be > 0");
}

std::unique_ptr<ForceField> AnalyticField::clone() const {
  return std::make_unique<AnalyticField>(*this);
}

Vec3 AnalyticField::query(const FieldSample& s) const {
  const Vec3 a = std::visit(
      [&](const auto& f) -> Vec3 {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantSpec>) {
          return f.a;
        } else if constexpr (std::is_same_v<T, SinusoidSpec>) {
          return f.base +
                 f.amplitude * std::sin(2.0 * std::numbers::pi * f.frequency * s.t + f.phase) *
                     f.axis;
        } else if constexpr (std::is_same_v<T, VortexSpec>) {
          const Vec3 axis = f.axis.normalized();
          const Vec3 r = s.x - f.center;
          const Vec3 radial = r - r.dot(axis) * axis;
          const double dist = radial.norm();
          if (dist < 1e-12) return Vec3::Zero();
          return f.strength * std::exp(-f.falloff * dist) * axis.cross(radial / dist);
        } else {
          if (s.frame < f.start_frame || s.frame >= f.end_frame) return Vec3::Zero();
          const bool hit =
              std::find(f.particles.begin(), f.particles.end(), s.particle) != f.particles.end();
          return hit ? f.a : Vec3::Zero();
        }
      },
      spec_);
  return scale_ * a;
}

Json AnalyticField::to_json() const {
  throw UsageError("analytic fields are described by their spec, not checkpointed");
}

// ---------------------------------------------------------------------------
// ScaledField

ScaledField::ScaledField(std::shared_ptr<const ForceField> inner, double factor)
    : inner_(std::move(inner)), factor_(factor) {}

std::unique_ptr<ForceField> ScaledField::clone() const {
  return std::make_unique<ScaledField>(*this);
}

Vec3 ScaledField::query(const FieldSample& s) const { return factor_ * inner_->query(s); }

void ScaledField::query_batch(std::span<const Vec3> x, double t, int frame,
                              std::span<Vec3> out) const {
  inner_->query_batch(x, t, frame, out);
  for (auto& v : out) v *= factor_;
}

Json ScaledField::to_json() const {
  Json j = inner_->to_json();
  j["scale"] = factor_;
  return j;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

Json box_to_json(const Box& b) { return {{"lo", to_json(b.lo)}, {"hi", to_json(b.hi)}}; }

Box box_from_json(const Json& j, const std::string& path) {
  return {vec3_from_json(require(j, "lo", path), path + "lo"),
          vec3_from_json(require(j, "hi", path), path + "hi")};
}

}  // namespace

Json CausalTriPlane::to_json() const {
  const auto& c = config_;
  return {{"version", kFieldCheckpointVersion},
          {"kind", to_string(kind())},
          {"config",
           {{"resolution", c.resolution},
            {"features", c.features},
            {"encoder_frequencies", c.encoder_frequencies},
            {"encoder_hidden", c.encoder_hidden},
            {"decoder_hidden", c.decoder_hidden},
            {"domain", box_to_json(c.domain)},
            {"frame_dt", c.frame_dt},
            {"frames", c.frames},
            {"seed", c.seed}}},
          {"snapshots", snapshots_},
          {"params", params_}};
}

Json KPlanesField::to_json() const {
  const auto& c = config_;
  return {{"version", kFieldCheckpointVersion},
          {"kind", to_string(kind())},
          {"config",
           {{"resolution", c.resolution},
            {"time_resolution", c.time_resolution},
            {"features", c.features},
            {"decoder_hidden", c.decoder_hidden},
            {"domain", box_to_json(c.domain)},
            {"frame_dt", c.frame_dt},
            {"frames", c.frames},
            {"seed", c.seed}}},
          {"params", params_}};
}

std::unique_ptr<ForceField> field_from_json(const Json& j) {
  const auto version = require_as<std::string>(j, "version", "");
  if (version != kFieldCheckpointVersion) {
    throw VersionError("unsupported field checkpoint version '" + version + "'");
  }
  const auto kind_name = require_as<std::string>(j, "kind", "");
  const Json& c = require(j, "config", "");
  auto params = require_as<std::vector<double>>(j, "params", "");
  std::unique_ptr<ForceField> field;
  try {
    switch (parse_field_kind(kind_name)) {
      case FieldKind::kTriPlane: {
        TriPlaneConfig cfg;
        cfg.resolution = require_as<int>(c, "resolution", "config.");
        cfg.features = require_as<int>(c, "features", "config.");
        cfg.encoder_frequencies = require_as<int>(c, "encoder_frequencies", "config.");
        cfg.encoder_hidden = require_as<int>(c, "encoder_hidden", "config.");
        cfg.decoder_hidden = require_as<std::vector<int>>(c, "decoder_hidden", "config.");
        cfg.domain = box_from_json(require(c, "domain", "config."), "config.domain.");
        cfg.frame_dt = require_as<double>(c, "frame_dt", "config.");
        cfg.frames = require_as<int>(c, "frames", "config.");
        cfg.seed = require_as<std::uint64_t>(c, "seed", "config.");
        auto tp = std::make_unique<CausalTriPlane>(cfg);
        tp->set_state(std::move(params), require_as<int>(j, "snapshots", ""));
        field = std::move(tp);
        break;
      }
      case FieldKind::kKPlanes: {
        KPlanesConfig cfg;
        cfg.resolution = require_as<int>(c, "resolution", "config.");
        cfg.time_resolution = require_as<int>(c, "time_resolution", "config.");
        cfg.features = require_as<int>(c, "features", "config.");
        cfg.decoder_hidden = require_as<std::vector<int>>(c, "decoder_hidden", "config.");
        cfg.domain = box_from_json(require(c, "domain", "config."), "config.domain.");
        cfg.frame_dt = require_as<double>(c, "frame_dt", "config.");
        cfg.frames = require_as<int>(c, "frames", "config.");
        cfg.seed = require_as<std::uint64_t>(c, "seed", "config.");
        auto kp = std::make_unique<KPlanesField>(cfg);
        kp->set_params(std::move(params));
        field = std::move(kp);
        break;
      }
      case FieldKind::kPoint: {
        auto pf = std::make_unique<PointForceField>(require_as<int>(c, "particles", "config."),
                                                    require_as<int>(c, "frames", "config."),
                                                    require_as<double>(c, "frame_dt", "config."));
        if (params.size() != pf->num_params()) {
          throw ParseError("point field checkpoint: parameter count mismatch");
        }
        std::copy(params.begin(), params.end(), pf->params().begin());
        field = std::move(pf);
        break;
      }
      case FieldKind::kAnalytic: break;
    }
  } catch (const ShapeError& e) {
    throw ParseError(std::string("field checkpoint: ") + e.what());
  } catch (const UsageError& e) {
    throw ParseError(std::string("field checkpoint: ") + e.what());
  }
  if (j.contains("scale")) {
    return std::make_unique<ScaledField>(std::shared_ptr<const ForceField>(std::move(field)),
                                         require_as<double>(j, "scale", ""));
  }
  return field;
}

void save_field(const ForceField& field, const std::string& path) {
  write_text_file(path, field.to_json().dump() + "\n");
}

std::unique_ptr<ForceField> load_field(const std::string& path) {
  return field_from_json(parse_json_text(read_text_file(path), path));
}

}  // namespace forcelens
