#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "forcelens/json_util.h"
#include "forcelens/scene.h"

namespace forcelens {

inline constexpr char kFieldCheckpointVersion[] = "forcelens.field/1";

// One evaluation point of a force field. `frame` selects the per-frame state
// (time-encoder snapshot, point-force slice) and `particle` is the index used
// by per-particle representations; continuous fields ignore it.
struct FieldSample {
  Vec3 x = Vec3::Zero();
  double t = 0.0;
  int frame = 0;
  int particle = -1;
};

enum class FieldKind { kTriPlane, kKPlanes, kPoint, kAnalytic };

std::string to_string(FieldKind kind);
// Accepts "triplane", "kplanes", "point"; throws UsageError listing the
// valid kinds otherwise.
FieldKind parse_field_kind(const std::string& name);

struct ParamRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

// Time-varying specific-force field (N/kg). Parameters live in one flat
// vector whose ordering each representation documents.
class ForceField {
 public:
  virtual ~ForceField() = default;

  virtual FieldKind kind() const = 0;
  virtual std::unique_ptr<ForceField> clone() const = 0;

  virtual Vec3 query(const FieldSample& sample) const = 0;
  // Frame index is derived from t with the field's frame duration.
  Vec3 query(const Vec3& x, double t) const;

  // Evaluates every point at a shared time; point i uses particle index i.
  virtual void query_batch(std::span<const Vec3> x, double t, int frame,
                           std::span<Vec3> out) const;

  // Reverse mode of query_batch: grad_params += (d out / d theta)^T grad_out
  // and grad_x[i] = (d out_i / d x_i)^T grad_out[i].
  virtual void backward_batch(std::span<const Vec3> x, double t, int frame,
                              std::span<const Vec3> grad_out, std::span<double> grad_params,
                              std::span<Vec3> grad_x) const;

  virtual std::span<double> params() { return {}; }
  virtual std::span<const double> params() const { return {}; }
  std::size_t num_params() const { return params().size(); }

  // Adds `grads` into `accum`; both must match the parameter count.
  void scatter(std::span<const double> grads, std::span<double> accum) const;

  virtual double frame_dt() const = 0;
  int frame_of(double t) const;

  virtual bool has_frame(int frame) const = 0;
  // Prepares per-frame state for optimizing `frame`.
  virtual void warm_start(int frame, std::uint64_t seed) = 0;
  // Like warm_start, but initializes the frame's own parameters afresh
  // instead of copying the previous frame. Defaults to warm_start.
  virtual void fresh_start(int frame, std::uint64_t seed) { warm_start(frame, seed); }
  // Parameters an optimizer may change while fitting `frame`.
  virtual std::vector<ParamRange> trainable_ranges(int frame) const = 0;

  virtual bool supports_tv() const { return false; }
  // Spatial total variation. Adds weight * gradient into `grad` when
  // non-empty. Throws UsageError for fields without feature planes.
  virtual double tv_loss(std::span<double> grad = {}, double weight = 1.0) const;
  // Mean absolute encoder-parameter change between `frame` and `frame - 1`;
  // zero for frame 0 and for representations without a time encoder.
  virtual double time_smooth_loss(int frame, std::span<double> grad = {},
                                  double weight = 1.0) const;

  virtual Json to_json() const = 0;
};

// Loads any checkpoint written by ForceField::to_json. The analytic kind is
// not checkpointable.
std::unique_ptr<ForceField> field_from_json(const Json& j);
void save_field(const ForceField& field, const std::string& path);
std::unique_ptr<ForceField> load_field(const std::string& path);

struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
};

struct TriPlaneConfig {
  int resolution = 32;
  int features = 16;
  int encoder_frequencies = 4;
  int encoder_hidden = 32;
  std::vector<int> decoder_hidden = {64, 64};
  Box domain;
  double frame_dt = 1.0 / 30.0;
  int frames = 1;  // sequence length; time is normalized by frames * frame_dt
  std::uint64_t seed = 0;
};

// Causal tri-plane: f(x, t) = decoder(gamma(x) + phi_k(t_k)), where gamma
// sums bilinear samples of the xy, yz and xz feature planes, k = frame(t),
// phi_k is the time encoder snapshot for frame k and t_k its start time. The
// field is constant in time within a frame.
//
// Flat parameter ordering:
//   [plane xy][plane yz][plane xz]   each R*R*F, index (v * R + u) * F + f
//   [decoder]                        per layer W (out x in, row-major) then b
//   [encoder snapshot 0][snapshot 1]...   same per-layer layout
//
// Planes, encoder output layers and all decoder biases start at zero, so a
// freshly constructed field is exactly zero everywhere.
class CausalTriPlane final : public ForceField {
 public:
  explicit CausalTriPlane(TriPlaneConfig config);

  FieldKind kind() const override { return FieldKind::kTriPlane; }
  std::unique_ptr<ForceField> clone() const override;
  Vec3 query(const FieldSample& sample) const override;
  using ForceField::query;
  void query_batch(std::span<const Vec3> x, double t, int frame,
                   std::span<Vec3> out) const override;
  void backward_batch(std::span<const Vec3> x, double t, int frame,
                      std::span<const Vec3> grad_out, std::span<double> grad_params,
                      std::span<Vec3> grad_x) const override;

  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  double frame_dt() const override { return config_.frame_dt; }
  bool has_frame(int frame) const override;
  void warm_start(int frame, std::uint64_t seed) override;
  void fresh_start(int frame, std::uint64_t seed) override;
  std::vector<ParamRange> trainable_ranges(int frame) const override;
  bool supports_tv() const override { return true; }
  double tv_loss(std::span<double> grad = {}, double weight = 1.0) const override;
  double time_smooth_loss(int frame, std::span<double> grad = {},
                          double weight = 1.0) const override;
  Json to_json() const override;

  const TriPlaneConfig& config() const { return config_; }
  int snapshot_count() const { return snapshots_; }
  std::size_t plane_param_count() const;
  std::size_t decoder_param_count() const;
  std::size_t encoder_param_count() const;  // per snapshot
  ParamRange plane_range(int plane) const;
  ParamRange decoder_range() const;
  ParamRange snapshot_range(int frame) const;

  // Time-encoder output phi_k of length F, evaluated at the normalized
  // start time k / frames of frame k.
  Eigen::VectorXd encode_time(int frame) const;
  // gamma(x), the summed plane features of length F.
  Eigen::VectorXd plane_features(const Vec3& x) const;

  // Loads parameters from a checkpoint (used by field_from_json).
  void set_state(std::vector<double> params, int snapshots);

 private:
  void check_frame(int frame) const;

  TriPlaneConfig config_;
  std::vector<double> params_;
  int snapshots_ = 0;
};

struct KPlanesConfig {
  int resolution = 32;
  int time_resolution = 16;
  int features = 16;
  std::vector<int> decoder_hidden = {64, 64};
  Box domain;
  double frame_dt = 1.0 / 30.0;
  int frames = 1;
  std::uint64_t seed = 0;
};

// K-planes baseline: decoder(product of the six plane samples xy, yz, xz,
// xt, yt, zt). Time planes span [0, frames * frame_dt].
//
// Flat parameter ordering:
//   [xy][yz][xz]   each R*R*F, index (v * R + u) * F + f
//   [xt][yt][zt]   each Rt*R*F, index (t_index * R + u) * F + f
//   [decoder]      per layer W then b; the output layer starts at zero
class KPlanesField final : public ForceField {
 public:
  explicit KPlanesField(KPlanesConfig config);

  FieldKind kind() const override { return FieldKind::kKPlanes; }
  std::unique_ptr<ForceField> clone() const override;
  Vec3 query(const FieldSample& sample) const override;
  using ForceField::query;
  void query_batch(std::span<const Vec3> x, double t, int frame,
                   std::span<Vec3> out) const override;
  void backward_batch(std::span<const Vec3> x, double t, int frame,
                      std::span<const Vec3> grad_out, std::span<double> grad_params,
                      std::span<Vec3> grad_x) const override;

  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  double frame_dt() const override { return config_.frame_dt; }
  bool has_frame(int frame) const override;
  void warm_start(int frame, std::uint64_t seed) override;
  std::vector<ParamRange> trainable_ranges(int frame) const override;
  bool supports_tv() const override { return true; }
  double tv_loss(std::span<double> grad = {}, double weight = 1.0) const override;
  Json to_json() const override;

  const KPlanesConfig& config() const { return config_; }
  void set_params(std::vector<double> params);

 private:
  KPlanesConfig config_;
  std::vector<double> params_;
};

// Per-particle, per-frame force vectors. Flat ordering
// (frame * particles + particle) * 3 + axis.
class PointForceField final : public ForceField {
 public:
  PointForceField(int particles, int frames, double frame_dt);

  FieldKind kind() const override { return FieldKind::kPoint; }
  std::unique_ptr<ForceField> clone() const override;
  Vec3 query(const FieldSample& sample) const override;
  using ForceField::query;
  void backward_batch(std::span<const Vec3> x, double t, int frame,
                      std::span<const Vec3> grad_out, std::span<double> grad_params,
                      std::span<Vec3> grad_x) const override;

  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  double frame_dt() const override { return frame_dt_; }
  bool has_frame(int frame) const override { return frame >= 0 && frame < frames_; }
  void warm_start(int frame, std::uint64_t seed) override;
  void fresh_start(int frame, std::uint64_t seed) override;
  std::vector<ParamRange> trainable_ranges(int frame) const override;
  Json to_json() const override;

  int particles() const { return particles_; }
  int frames() const { return frames_; }
  Eigen::Map<Vec3> at(int frame, int particle);
  Eigen::Map<const Vec3> at(int frame, int particle) const;

 private:
  int particles_;
  int frames_;
  double frame_dt_;
  std::vector<double> params_;
};

// Closed-form ground-truth field built from a GroundTruthFieldSpec. Not
// differentiable and not checkpointable.
class AnalyticField final : public ForceField {
 public:
  AnalyticField(GroundTruthFieldSpec spec, double frame_dt, double scale = 1.0);

  FieldKind kind() const override { return FieldKind::kAnalytic; }
  std::unique_ptr<ForceField> clone() const override;
  Vec3 query(const FieldSample& sample) const override;
  using ForceField::query;
  double frame_dt() const override { return frame_dt_; }
  bool has_frame(int) const override { return true; }
  void warm_start(int, std::uint64_t) override {}
  std::vector<ParamRange> trainable_ranges(int) const override { return {}; }
  Json to_json() const override;

  const GroundTruthFieldSpec& spec() const { return spec_; }

 private:
  GroundTruthFieldSpec spec_;
  double frame_dt_;
  double scale_;
};

// Multiplies another field's output by a constant factor.
class ScaledField final : public ForceField {
 public:
  ScaledField(std::shared_ptr<const ForceField> inner, double factor);

  FieldKind kind() const override { return inner_->kind(); }
  std::unique_ptr<ForceField> clone() const override;
  Vec3 query(const FieldSample& sample) const override;
  using ForceField::query;
  void query_batch(std::span<const Vec3> x, double t, int frame,
                   std::span<Vec3> out) const override;
  double frame_dt() const override { return inner_->frame_dt(); }
  bool has_frame(int frame) const override { return inner_->has_frame(frame); }
  void warm_start(int, std::uint64_t) override {}
  std::vector<ParamRange> trainable_ranges(int) const override { return {}; }
  Json to_json() const override;

 private:
  std::shared_ptr<const ForceField> inner_;
  double factor_;
};

}  // namespace forcelens
