#include "forcelens/constitutive.h"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <sstream>

#include "forcelens/errors.h"

namespace forcelens {
namespace {

Vec3 axial(const Mat3& skew) {
  return Vec3(skew(2, 1), skew(0, 2), skew(1, 0));
}

Mat3 cross_matrix(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

}  // namespace

LameParams lame_params(double youngs_modulus, double poisson_ratio) {
  if (!(youngs_modulus > 0.0)) throw UsageError("lame_params: youngs_modulus must be > 0");
  if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5)) {
    throw UsageError("lame_params: poisson_ratio must lie in [0, 0.5)");
  }
  const double nu = poisson_ratio;
  return {youngs_modulus / (2.0 * (1.0 + nu)),
          youngs_modulus * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))};
}

Polar polar_decompose(const Mat3& F) {
  if (!F.allFinite()) throw SimulationError("polar decomposition of a non-finite matrix");
  Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  Vec3 sig = svd.singularValues();
  if (U.determinant() < 0.0) {
    U.col(2) *= -1.0;
    sig(2) *= -1.0;
  }
  if (V.determinant() < 0.0) {
    V.col(2) *= -1.0;
    sig(2) *= -1.0;
  }
  Polar out;
  out.rotation = U * V.transpose();
  out.stretch = V * sig.asDiagonal() * V.transpose();
  return out;
}

Mat3 update_deformation_gradient(const Mat3& d_prev, const Mat3& grad_v, double dt) {
  Mat3 d = (Mat3::Identity() + dt * grad_v) * d_prev;
  const double det = d.determinant();
  if (!(det > kDetFloor)) {
    std::ostringstream msg;
    msg << "degenerate deformation: det(D) = " << det << " <= " << kDetFloor;
    throw DegenerateDeformationError(msg.str());
  }
  return d;
}

Mat3 corotated_piola(const Mat3& F, const LameParams& lame) {
  const Polar polar = polar_decompose(F);
  const double J = F.determinant();
  return 2.0 * lame.mu * (F - polar.rotation) +
         lame.lambda * (J - 1.0) * J * F.inverse().transpose();
}

Mat3 corotated_kirchhoff(const Mat3& F, const LameParams& lame) {
  const Polar polar = polar_decompose(F);
  const double J = F.determinant();
  return 2.0 * lame.mu * (F - polar.rotation) * F.transpose() +
         lame.lambda * (J - 1.0) * J * Mat3::Identity();
}

Mat3 corotated_kirchhoff_derivative(const Mat3& F, const Polar& polar, const LameParams& lame,
                                    const Mat3& dF) {
  // dR = R [w]x with (tr(S) I - S) w = axial(M - M^T), M = R^T dF.
  const Mat3& R = polar.rotation;
  const Mat3& S = polar.stretch;
  const Mat3 M = R.transpose() * dF;
  const Mat3 G = S.trace() * Mat3::Identity() - S;
  const Vec3 w = G.fullPivLu().solve(axial(M - M.transpose()));
  const Mat3 dR = R * cross_matrix(w);
  const double J = F.determinant();
  const double dJ = J * (F.inverse() * dF).trace();
  return 2.0 * lame.mu * ((dF - dR) * F.transpose() + (F - R) * dF.transpose()) +
         lame.lambda * (2.0 * J - 1.0) * dJ * Mat3::Identity();
}

Mat3 plastic_projection(const Mat3& F, const MaterialParams& material, double dt,
                        bool* active) {
  if (active) *active = false;
  if (material.plasticity.kind == PlasticityKind::kElastic) return F;

  Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sig = svd.singularValues();
  if (!(sig.minCoeff() > 0.0)) {
    throw DegenerateDeformationError("plastic return map: singular deformation");
  }
  const Vec3 eps = sig.array().log().matrix();
  const Vec3 dev = eps - Vec3::Constant(eps.sum() / 3.0);
  const double dev_norm = dev.norm();
  const LameParams lame = lame_params(material.youngs_modulus, material.poisson_ratio);
  double excess = dev_norm - material.plasticity.yield_stress / (2.0 * lame.mu);
  if (excess <= 0.0) return F;
  if (material.plasticity.kind == PlasticityKind::kViscoplastic) {
    excess /= 1.0 + material.plasticity.viscosity / (2.0 * lame.mu * dt);
  }
  if (active) *active = true;
  const Vec3 eps_new = eps - (excess / dev_norm) * dev;
  return svd.matrixU() * eps_new.array().exp().matrix().asDiagonal() *
         svd.matrixV().transpose();
}

StressResult constitutive_stress(const Mat3& D, const MaterialParams& material, double dt) {
  if (!D.allFinite()) throw SimulationError("constitutive_stress: non-finite deformation");
  if (!(D.determinant() > 0.0)) {
    throw DegenerateDeformationError("constitutive_stress: det(D) <= 0");
  }
  StressResult out;
  out.projected = plastic_projection(D, material, dt, &out.plastic_active);
  const LameParams lame = lame_params(material.youngs_modulus, material.poisson_ratio);
  out.stress = corotated_piola(out.projected, lame);
  return out;
}

}  // namespace forcelens
