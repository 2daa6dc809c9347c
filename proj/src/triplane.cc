#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "forcelens/errors.h"
#include "forcelens/forcefield.h"
#include "mlp.h"
#include "planes.h"

namespace forcelens {
namespace {

constexpr int kPlaneAxes[3][2] = {{0, 1}, {1, 2}, {0, 2}};  // xy, yz, xz

detail::Mlp decoder_net(const TriPlaneConfig& c) {
  std::vector<int> sizes{c.features};
  sizes.insert(sizes.end(), c.decoder_hidden.begin(), c.decoder_hidden.end());
  sizes.push_back(3);
  return detail::Mlp(std::move(sizes));
}

detail::Mlp encoder_net(const TriPlaneConfig& c) {
  return detail::Mlp({2 * c.encoder_frequencies, c.encoder_hidden, c.features});
}

// Sinusoidal code of the normalized start time of `frame`; the field is
// piecewise constant in time over each frame.
Eigen::VectorXd time_encoding(int frame, const TriPlaneConfig& c) {
  const double tn = std::clamp(static_cast<double>(frame) / c.frames, 0.0, 1.0);
  Eigen::VectorXd e(2 * c.encoder_frequencies);
  for (int j = 0; j < c.encoder_frequencies; ++j) {
    const double w = std::ldexp(std::numbers::pi, j);
    e(2 * j) = std::sin(w * tn);
    e(2 * j + 1) = std::cos(w * tn);
  }
  return e;
}

// Normalized coordinates of x in the domain box.
Vec3 normalized(const Vec3& x, const Box& b) {
  return ((x - b.lo).array() / (b.hi - b.lo).array()).matrix();
}

}  // namespace

CausalTriPlane::CausalTriPlane(TriPlaneConfig config) : config_(std::move(config)) {
  const auto& c = config_;
  if (c.resolution < 2) throw UsageError("triplane: resolution must be >= 2");
  if (c.features < 1) throw UsageError("triplane: features must be >= 1");
  if (c.encoder_frequencies < 1 || c.encoder_hidden < 1) {
    throw UsageError("triplane: encoder sizes must be >= 1");
  }
  if (!((c.domain.hi - c.domain.lo).array() > 0.0).all()) {
    throw UsageError("triplane: domain box must have positive extent");
  }
  if (c.frames < 1 || !(c.frame_dt > 0.0)) {
    throw UsageError("triplane: frames must be >= 1 and frame_dt > 0");
  }
  params_.assign(plane_param_count() + decoder_param_count(), 0.0);
  std::mt19937_64 rng(c.seed);
  const ParamRange dec = decoder_range();
  decoder_net(c).init(std::span<double>(params_).subspan(dec.begin, dec.size()), rng, 1.0);
}

std::unique_ptr<ForceField> CausalTriPlane::clone() const {
  return std::make_unique<CausalTriPlane>(*this);
}

std::size_t CausalTriPlane::plane_param_count() const {
  return 3 * static_cast<std::size_t>(config_.resolution) * config_.resolution *
         config_.features;
}

std::size_t CausalTriPlane::decoder_param_count() const {
  return decoder_net(config_).param_count();
}

std::size_t CausalTriPlane::encoder_param_count() const {
  return encoder_net(config_).param_count();
}

ParamRange CausalTriPlane::plane_range(int plane) const {
  const std::size_t n = plane_param_count() / 3;
  return {plane * n, (plane + 1) * n};
}

ParamRange CausalTriPlane::decoder_range() const {
  return {plane_param_count(), plane_param_count() + decoder_param_count()};
}

ParamRange CausalTriPlane::snapshot_range(int frame) const {
  const std::size_t base = plane_param_count() + decoder_param_count();
  const std::size_t n = encoder_param_count();
  return {base + frame * n, base + (frame + 1) * n};
}

bool CausalTriPlane::has_frame(int frame) const { return frame >= 0 && frame < snapshots_; }

void CausalTriPlane::check_frame(int frame) const {
  if (!has_frame(frame)) {
    throw UsageError("triplane: no time-encoder snapshot for frame " + std::to_string(frame));
  }
}

void CausalTriPlane::warm_start(int frame, std::uint64_t seed) {
  if (frame < 0 || frame > snapshots_) {
    throw UsageError("triplane: warm_start(" + std::to_string(frame) +
                     ") needs the snapshot of frame " + std::to_string(frame - 1));
  }
  if (frame == snapshots_) {
    params_.resize(params_.size() + encoder_param_count(), 0.0);
    ++snapshots_;
  }
  const ParamRange r = snapshot_range(frame);
  auto dst = std::span<double>(params_).subspan(r.begin, r.size());
  if (frame == 0) {
    std::mt19937_64 rng(seed);
    encoder_net(config_).init(dst, rng, 0.0);
  } else {
    const ParamRange p = snapshot_range(frame - 1);
    std::copy(params_.begin() + p.begin, params_.begin() + p.end, dst.begin());
  }
}

void CausalTriPlane::fresh_start(int frame, std::uint64_t seed) {
  warm_start(frame, seed);
  if (frame == 0) return;
  const ParamRange r = snapshot_range(frame);
  std::mt19937_64 rng(seed);
  encoder_net(config_).init(std::span<double>(params_).subspan(r.begin, r.size()), rng, 0.0);
}

std::vector<ParamRange> CausalTriPlane::trainable_ranges(int frame) const {
  check_frame(frame);
  if (frame == 0) return {{0, decoder_range().end}, snapshot_range(0)};
  return {snapshot_range(frame)};
}

Eigen::VectorXd CausalTriPlane::encode_time(int frame) const {
  check_frame(frame);
  const ParamRange r = snapshot_range(frame);
  const Eigen::MatrixXd e = time_encoding(frame, config_);
  return encoder_net(config_).forward(std::span<const double>(params_).subspan(r.begin, r.size()),
                                      e);
}

Eigen::VectorXd CausalTriPlane::plane_features(const Vec3& x) const {
  const int R = config_.resolution, F = config_.features;
  const Vec3 s = normalized(x, config_.domain);
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(F);
  for (int p = 0; p < 3; ++p) {
    const auto look = detail::plane_lookup(s(kPlaneAxes[p][0]), s(kPlaneAxes[p][1]), R, R, F);
    const double* plane = params_.data() + plane_range(p).begin;
    for (int f = 0; f < F; ++f) gamma(f) += look.sample(plane, f);
  }
  return gamma;
}

Vec3 CausalTriPlane::query(const FieldSample& sample) const {
  Vec3 out;
  query_batch(std::span<const Vec3>(&sample.x, 1), sample.t, sample.frame,
              std::span<Vec3>(&out, 1));
  return out;
}

void CausalTriPlane::query_batch(std::span<const Vec3> x, double, int frame,
                                 std::span<Vec3> out) const {
  if (out.size() != x.size()) throw ShapeError("query_batch: output size mismatch");
  const Eigen::VectorXd phi = encode_time(frame);
  Eigen::MatrixXd Z(config_.features, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) Z.col(i) = plane_features(x[i]) + phi;
  const ParamRange dec = decoder_range();
  const Eigen::MatrixXd y = decoder_net(config_).forward(
      std::span<const double>(params_).subspan(dec.begin, dec.size()), Z);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = y.col(i);
}

void CausalTriPlane::backward_batch(std::span<const Vec3> x, double, int frame,
                                    std::span<const Vec3> grad_out,
                                    std::span<double> grad_params,
                                    std::span<Vec3> grad_x) const {
  if (grad_params.size() != params_.size()) throw ShapeError("triplane: gradient size mismatch");
  if (grad_out.size() != x.size() || grad_x.size() != x.size()) {
    throw ShapeError("triplane: backward batch size mismatch");
  }
  check_frame(frame);
  const int R = config_.resolution, F = config_.features;
  const auto n = static_cast<Eigen::Index>(x.size());

  const detail::Mlp enc = encoder_net(config_);
  const ParamRange snap = snapshot_range(frame);
  const auto enc_params = std::span<const double>(params_).subspan(snap.begin, snap.size());
  detail::Mlp::Cache enc_cache;
  const Eigen::VectorXd phi = enc.forward(enc_params, time_encoding(frame, config_), &enc_cache);

  Eigen::MatrixXd Z(F, n);
  for (Eigen::Index i = 0; i < n; ++i) Z.col(i) = plane_features(x[i]) + phi;

  const detail::Mlp dec = decoder_net(config_);
  const ParamRange dr = decoder_range();
  const auto dec_params = std::span<const double>(params_).subspan(dr.begin, dr.size());
  detail::Mlp::Cache dec_cache;
  dec.forward(dec_params, Z, &dec_cache);
  Eigen::MatrixXd G(3, n);
  for (Eigen::Index i = 0; i < n; ++i) G.col(i) = grad_out[i];
  const Eigen::MatrixXd dZ =
      dec.backward(dec_params, dec_cache, G, grad_params.subspan(dr.begin, dr.size()));

  const Vec3 inv_extent = (config_.domain.hi - config_.domain.lo).cwiseInverse();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 s = normalized(x[i], config_.domain);
    Vec3 gx = Vec3::Zero();
    for (int p = 0; p < 3; ++p) {
      const int au = kPlaneAxes[p][0], av = kPlaneAxes[p][1];
      const auto look = detail::plane_lookup(s(au), s(av), R, R, F);
      const ParamRange pr = plane_range(p);
      const double* plane = params_.data() + pr.begin;
      double* gplane = grad_params.data() + pr.begin;
      for (int f = 0; f < F; ++f) {
        const double g = dZ(f, i);
        look.scatter(gplane, f, g);
        gx(au) += g * look.du_sample(plane, f) * inv_extent(au);
        gx(av) += g * look.dv_sample(plane, f) * inv_extent(av);
      }
    }
    grad_x[i] = gx;
  }

  const Eigen::MatrixXd dphi = dZ.rowwise().sum();
  enc.backward(enc_params, enc_cache, dphi, grad_params.subspan(snap.begin, snap.size()));
}

double CausalTriPlane::tv_loss(std::span<double> grad, double weight) const {
  const int R = config_.resolution, F = config_.features;
  if (!grad.empty() && grad.size() != params_.size()) {
    throw ShapeError("tv_loss: gradient size mismatch");
  }
  double sum = 0.0;
  for (int p = 0; p < 3; ++p) {
    const ParamRange r = plane_range(p);
    sum += detail::plane_tv(params_.data() + r.begin, R, R, F,
                            grad.empty() ? nullptr : grad.data() + r.begin, weight);
  }
  return sum;
}

double CausalTriPlane::time_smooth_loss(int frame, std::span<double> grad, double weight) const {
  if (frame == 0) return 0.0;
  check_frame(frame);
  if (!grad.empty() && grad.size() != params_.size()) {
    throw ShapeError("time_smooth_loss: gradient size mismatch");
  }
  const ParamRange cur = snapshot_range(frame);
  const ParamRange prev = snapshot_range(frame - 1);
  const double inv = 1.0 / static_cast<double>(cur.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < cur.size(); ++i) {
    const double d = params_[cur.begin + i] - params_[prev.begin + i];
    sum += std::abs(d);
    if (!grad.empty() && d != 0.0) {
      const double g = weight * inv * (d > 0.0 ? 1.0 : -1.0);
      grad[cur.begin + i] += g;
      grad[prev.begin + i] -= g;
    }
  }
  return sum * inv;
}

void CausalTriPlane::set_state(std::vector<double> params, int snapshots) {
  if (snapshots < 0 ||
      params.size() != plane_param_count() + decoder_param_count() +
                           static_cast<std::size_t>(snapshots) * encoder_param_count()) {
    throw ShapeError("triplane: parameter count does not match the configuration");
  }
  params_ = std::move(params);
  snapshots_ = snapshots;
}

}  // namespace forcelens
