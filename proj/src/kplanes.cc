#include <array>
#include <algorithm>
#include <random>

#include "forcelens/errors.h"
#include "forcelens/forcefield.h"
#include "mlp.h"
#include "planes.h"

namespace forcelens {
namespace {

constexpr int kSpatialAxes[3][2] = {{0, 1}, {1, 2}, {0, 2}};  // xy, yz, xz

detail::Mlp decoder_net(const KPlanesConfig& c) {
  std::vector<int> sizes{c.features};
  sizes.insert(sizes.end(), c.decoder_hidden.begin(), c.decoder_hidden.end());
  sizes.push_back(3);
  return detail::Mlp(std::move(sizes));
}

struct Layout {
  std::size_t spatial;  // one spatial plane
  std::size_t temporal;  // one time plane
  std::size_t plane_offset(int p) const {
    return p < 3 ? p * spatial : 3 * spatial + (p - 3) * temporal;
  }
  std::size_t decoder_offset() const { return 3 * spatial + 3 * temporal; }
};

Layout layout(const KPlanesConfig& c) {
  const auto R = static_cast<std::size_t>(c.resolution);
  return {R * R * c.features, static_cast<std::size_t>(c.time_resolution) * R * c.features};
}

// Lookups for the six planes at one (x, t).
std::array<detail::PlaneLookup, 6> lookups(const KPlanesConfig& c, const Vec3& x, double t) {
  const Vec3 s = ((x - c.domain.lo).array() / (c.domain.hi - c.domain.lo).array()).matrix();
  const double st = t / (c.frames * c.frame_dt);
  const int R = c.resolution, Rt = c.time_resolution, F = c.features;
  std::array<detail::PlaneLookup, 6> out;
  for (int p = 0; p < 3; ++p) {
    out[p] = detail::plane_lookup(s(kSpatialAxes[p][0]), s(kSpatialAxes[p][1]), R, R, F);
    out[3 + p] = detail::plane_lookup(s(p), st, R, Rt, F);
  }
  return out;
}

}  // namespace

KPlanesField::KPlanesField(KPlanesConfig config) : config_(std::move(config)) {
  const auto& c = config_;
  if (c.resolution < 2 || c.time_resolution < 2) {
    throw UsageError("kplanes: resolutions must be >= 2");
  }
  if (c.features < 1) throw UsageError("kplanes: features must be >= 1");
  if (!((c.domain.hi - c.domain.lo).array() > 0.0).all()) {
    throw UsageError("kplanes: domain box must have positive extent");
  }
  if (c.frames < 1 || !(c.frame_dt > 0.0)) {
    throw UsageError("kplanes: frames must be >= 1 and frame_dt > 0");
  }
  const Layout L = layout(c);
  const detail::Mlp dec = decoder_net(c);
  params_.assign(L.decoder_offset() + dec.param_count(), 0.0);
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> uni(0.1, 0.5);
  for (std::size_t i = 0; i < 3 * L.spatial; ++i) params_[i] = uni(rng);
  std::fill(params_.begin() + 3 * L.spatial, params_.begin() + L.decoder_offset(), 1.0);
  dec.init(std::span<double>(params_).subspan(L.decoder_offset()), rng, 0.0);
}

std::unique_ptr<ForceField> KPlanesField::clone() const {
  return std::make_unique<KPlanesField>(*this);
}

bool KPlanesField::has_frame(int frame) const { return frame >= 0; }

void KPlanesField::warm_start(int frame, std::uint64_t) {
  if (frame < 0) throw UsageError("kplanes: negative frame");
}

std::vector<ParamRange> KPlanesField::trainable_ranges(int) const {
  return {{0, params_.size()}};
}

Vec3 KPlanesField::query(const FieldSample& sample) const {
  Vec3 out;
  query_batch(std::span<const Vec3>(&sample.x, 1), sample.t, sample.frame,
              std::span<Vec3>(&out, 1));
  return out;
}

void KPlanesField::query_batch(std::span<const Vec3> x, double t, int,
                               std::span<Vec3> out) const {
  if (out.size() != x.size()) throw ShapeError("query_batch: output size mismatch");
  const Layout L = layout(config_);
  const int F = config_.features;
  Eigen::MatrixXd Z(F, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto look = lookups(config_, x[i], t);
    for (int f = 0; f < F; ++f) {
      double prod = 1.0;
      for (int p = 0; p < 6; ++p) prod *= look[p].sample(params_.data() + L.plane_offset(p), f);
      Z(f, i) = prod;
    }
  }
  const Eigen::MatrixXd y = decoder_net(config_).forward(
      std::span<const double>(params_).subspan(L.decoder_offset()), Z);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = y.col(i);
}

void KPlanesField::backward_batch(std::span<const Vec3> x, double t, int,
                                  std::span<const Vec3> grad_out, std::span<double> grad_params,
                                  std::span<Vec3> grad_x) const {
  if (grad_params.size() != params_.size()) throw ShapeError("kplanes: gradient size mismatch");
  if (grad_out.size() != x.size() || grad_x.size() != x.size()) {
    throw ShapeError("kplanes: backward batch size mismatch");
  }
  const Layout L = layout(config_);
  const int F = config_.features;
  const auto n = static_cast<Eigen::Index>(x.size());

  std::vector<std::array<detail::PlaneLookup, 6>> looks(x.size());
  std::vector<double> samples(x.size() * 6 * F);
  Eigen::MatrixXd Z(F, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    looks[i] = lookups(config_, x[i], t);
    for (int f = 0; f < F; ++f) {
      double prod = 1.0;
      for (int p = 0; p < 6; ++p) {
        const double s = looks[i][p].sample(params_.data() + L.plane_offset(p), f);
        samples[(i * 6 + p) * F + f] = s;
        prod *= s;
      }
      Z(f, i) = prod;
    }
  }

  const detail::Mlp dec = decoder_net(config_);
  const auto dec_params = std::span<const double>(params_).subspan(L.decoder_offset());
  detail::Mlp::Cache cache;
  dec.forward(dec_params, Z, &cache);
  Eigen::MatrixXd G(3, n);
  for (Eigen::Index i = 0; i < n; ++i) G.col(i) = grad_out[i];
  const Eigen::MatrixXd dZ =
      dec.backward(dec_params, cache, G, grad_params.subspan(L.decoder_offset()));

  const Vec3 inv_extent = (config_.domain.hi - config_.domain.lo).cwiseInverse();
  for (Eigen::Index i = 0; i < n; ++i) {
    Vec3 gx = Vec3::Zero();
    for (int f = 0; f < F; ++f) {
      const double* s = &samples[(i * 6) * F];
      for (int p = 0; p < 6; ++p) {
        double others = dZ(f, i);
        for (int q = 0; q < 6; ++q) {
          if (q != p) others *= s[q * F + f];
        }
        const double* plane = params_.data() + L.plane_offset(p);
        looks[i][p].scatter(grad_params.data() + L.plane_offset(p), f, others);
        if (p < 3) {
          const int au = kSpatialAxes[p][0], av = kSpatialAxes[p][1];
          gx(au) += others * looks[i][p].du_sample(plane, f) * inv_extent(au);
          gx(av) += others * looks[i][p].dv_sample(plane, f) * inv_extent(av);
        } else {
          gx(p - 3) += others * looks[i][p].du_sample(plane, f) * inv_extent(p - 3);
        }
      }
    }
    grad_x[i] = gx;
  }
}

double KPlanesField::tv_loss(std::span<double> grad, double weight) const {
  if (!grad.empty() && grad.size() != params_.size()) {
    throw ShapeError("tv_loss: gradient size mismatch");
  }
  const Layout L = layout(config_);
  const int R = config_.resolution, F = config_.features;
  double sum = 0.0;
  for (int p = 0; p < 3; ++p) {
    sum += detail::plane_tv(params_.data() + L.plane_offset(p), R, R, F,
                            grad.empty() ? nullptr : grad.data() + L.plane_offset(p), weight);
  }
  return sum;
}

void KPlanesField::set_params(std::vector<double> params) {
  if (params.size() != params_.size()) {
    throw ShapeError("kplanes: parameter count does not match the configuration");
  }
  params_ = std::move(params);
}

}  // namespace forcelens
