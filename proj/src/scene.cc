#include "forcelens/scene.h"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

#include "forcelens/constitutive.h"
#include "forcelens/errors.h"

namespace forcelens {
namespace {

std::string str(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

void check(bool ok, const std::string& invariant, const std::string& detail) {
  if (!ok) throw InvariantError(invariant, detail);
}

}  // namespace

void validate(const MaterialParams& m) {
  check(!m.name.empty(), "name", "material name is empty");
  check(m.density > 0.0, "density", m.name + ": rho = " + str(m.density));
  check(m.youngs_modulus > 0.0, "youngs_modulus", m.name + ": E = " + str(m.youngs_modulus));
  check(m.poisson_ratio >= 0.0 && m.poisson_ratio < 0.5, "poisson_ratio",
        m.name + ": nu = " + str(m.poisson_ratio));
  if (m.plasticity.kind != PlasticityKind::kElastic) {
    check(m.plasticity.yield_stress > 0.0, "yield_stress",
          m.name + ": yield_stress = " + str(m.plasticity.yield_stress));
  }
  if (m.plasticity.kind == PlasticityKind::kViscoplastic) {
    check(m.plasticity.viscosity > 0.0, "viscosity",
          m.name + ": viscosity = " + str(m.plasticity.viscosity));
  }
}

double max_expected_speed(const Scene& scene) {
  double speed = 0.0;
  for (const auto& p : scene.particles) speed = std::max(speed, p.v.norm());
  std::vector<bool> used(scene.materials.size(), false);
  for (const auto& p : scene.particles) {
    if (p.material_id >= 0 && p.material_id < static_cast<int>(used.size())) {
      used[static_cast<std::size_t>(p.material_id)] = true;
    }
  }
  for (std::size_t i = 0; i < scene.materials.size(); ++i) {
    if (!used[i]) continue;
    const auto& m = scene.materials[i];
    const LameParams lame = lame_params(m.youngs_modulus, m.poisson_ratio);
    speed = std::max(speed, std::sqrt((lame.lambda + 2.0 * lame.mu) / m.density));
  }
  return speed;
}

void validate(const Scene& scene) {
  for (const auto& m : scene.materials) validate(m);

  const GridSpec& g = scene.grid;
  check(g.cell_size > 0.0, "cell_size", "h = " + str(g.cell_size));
  check((g.dims.array() >= 4).all(), "dims", "every grid dimension must be >= 4");

  check(scene.frame_dt > 0.0, "frame_dt", "frame_dt = " + str(scene.frame_dt));
  check(scene.substeps_per_frame >= 1, "substeps_per_frame",
        "substeps_per_frame = " + std::to_string(scene.substeps_per_frame));

  const Camera& c = scene.camera;
  check(c.fx > 0.0 && c.fy > 0.0, "focal_length", "fx, fy must be > 0");
  check(c.width > 0 && c.height > 0, "image_size", "width and height must be > 0");
  check((c.rotation * c.rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9 &&
            std::abs(c.rotation.determinant() - 1.0) <= 1e-9,
        "rotation", "camera rotation is not orthonormal within 1e-9");

  for (const auto& bc : scene.bcs) {
    if (const auto* f = std::get_if<FixedRegion>(&bc)) {
      check((f->hi.array() > f->lo.array()).all(), "fixed_region",
            "fixed region box must have positive extent");
    }
  }

  check(scene.gravity.allFinite(), "gravity", "gravity must be finite");

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (std::size_t i = 0; i < scene.particles.size(); ++i) {
    const Particle& p = scene.particles[i];
    const std::string id = "particle " + std::to_string(i);
    check(p.x.allFinite() && p.v.allFinite(), "finite_state", id + " has non-finite x or v");
    check(p.mass > 0.0, "mass", id + ": m = " + str(p.mass));
    check(p.volume0 > 0.0, "volume0", id + ": volume0 = " + str(p.volume0));
    check(p.material_id >= 0 && p.material_id < static_cast<int>(scene.materials.size()),
          "material_id", id + ": material_id = " + std::to_string(p.material_id));
    check(p.deformation.determinant() > 0.0, "deformation", id + ": det(D) <= 0");
    const double scale = std::max(1.0, p.covariance.cwiseAbs().maxCoeff());
    check((p.covariance - p.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
          "covariance", id + ": covariance is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> eig(p.covariance, Eigen::EigenvaluesOnly);
    check(eig.eigenvalues().minCoeff() >= -1e-12 * scale, "covariance",
          id + ": covariance is not positive semidefinite");
    check(!p.constrained || p.v.isZero(0.0), "constrained", id + " is constrained but moving");
    lo = lo.cwiseMin(p.x);
    hi = hi.cwiseMax(p.x);
  }
  if (!scene.particles.empty()) {
    const double margin = 2.0 * g.cell_size;
    check((lo.array() - margin >= g.origin.array()).all() &&
              (hi.array() + margin <= g.upper().array()).all(),
          "grid_bounds", "particle bounding box plus a 2-cell margin must fit inside the grid");
  }

  const double speed = max_expected_speed(scene);
  check(speed * scene.substep_dt() < g.cell_size, "cfl",
        "max expected speed " + str(speed) + " m/s times substep " + str(scene.substep_dt()) +
            " s exceeds cell size " + str(g.cell_size) + " m");
}

std::vector<Particle> sample_block(const MaterialParams& material, int material_id,
                                   const Vec3& center, const Vec3& extent, double spacing) {
  if (!(spacing > 0.0)) throw UsageError("sample_block: spacing must be > 0");
  if (!(extent.array() > 0.0).all()) throw UsageError("sample_block: extent must be positive");
  if ((extent.array() < spacing).any()) {
    throw UsageError("sample_block: empty block, extent smaller than spacing");
  }
  const Eigen::Vector3i count =
      (extent / spacing).array().unaryExpr([](double r) { return std::floor(r + 1e-9); })
          .cast<int>()
          .matrix();
  const Vec3 corner = center - 0.5 * spacing * count.cast<double>();
  const double volume = spacing * spacing * spacing;
  const double half = 0.5 * spacing;

  std::vector<Particle> out;
  out.reserve(static_cast<std::size_t>(count.prod()));
  for (int i = 0; i < count.x(); ++i) {
    for (int j = 0; j < count.y(); ++j) {
      for (int k = 0; k < count.z(); ++k) {
        Particle p;
        p.x = corner + spacing * Vec3(i + 0.5, j + 0.5, k + 0.5);
        p.mass = material.density * volume;
        p.volume0 = volume;
        p.material_id = material_id;
        p.covariance0 = half * half * Mat3::Identity();
        p.covariance = p.covariance0;
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

int constrain_fixed_particles(Scene& scene) {
  int count = 0;
  for (auto& p : scene.particles) {
    for (const auto& bc : scene.bcs) {
      const auto* region = std::get_if<FixedRegion>(&bc);
      if (region && region->contains(p.x)) {
        p.constrained = true;
        p.v.setZero();
        p.affine.setZero();
        ++count;
        break;
      }
    }
  }
  return count;
}

double total_mass(const std::vector<Particle>& particles) {
  double sum = 0.0;
  for (const auto& p : particles) sum += p.mass;
  return sum;
}

void validate(const GroundTruthFieldSpec& spec, int frames, int particle_count) {
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConstantSpec>) {
          check(s.a.allFinite(), "strength", "constant field must be finite");
        } else if constexpr (std::is_same_v<T, SinusoidSpec>) {
          check(std::isfinite(s.amplitude) && s.axis.allFinite() && s.base.allFinite() &&
                    std::isfinite(s.frequency) && std::isfinite(s.phase),
                "strength", "sinusoid parameters must be finite");
        } else if constexpr (std::is_same_v<T, VortexSpec>) {
          check(std::isfinite(s.strength) && std::isfinite(s.falloff) &&
                    s.center.allFinite() && s.axis.allFinite() && s.axis.norm() > 0.0,
                "strength", "vortex parameters must be finite with a nonzero axis");
        } else {
          check(s.a.allFinite(), "strength", "impulse must be finite");
          check(s.start_frame >= 0 && s.end_frame > s.start_frame &&
                    (frames <= 0 || s.end_frame <= frames),
                "window", "impulse window must lie within the sequence");
          for (int idx : s.particles) {
            check(idx >= 0 && idx < particle_count, "particles",
                  "impulse targets particle " + std::to_string(idx));
          }
        }
      },
      spec);
}

}  // namespace forcelens
