#pragma once

#include "forcelens/scene.h"

namespace forcelens {

struct LameParams {
  double mu = 0.0;
  double lambda = 0.0;
};

// mu = E / (2(1+nu)), lambda = E nu / ((1+nu)(1-2nu)). Throws UsageError
// outside E > 0, 0 <= nu < 0.5.
LameParams lame_params(double youngs_modulus, double poisson_ratio);

// Polar decomposition F = R S with R a proper rotation and S symmetric.
struct Polar {
  Mat3 rotation;
  Mat3 stretch;
};
// Throws SimulationError on non-finite input.
Polar polar_decompose(const Mat3& F);

inline constexpr double kDetFloor = 1e-8;

// (I + grad_v dt) D_prev. Throws DegenerateDeformationError when the result's
// determinant is at or below kDetFloor.
Mat3 update_deformation_gradient(const Mat3& d_prev, const Mat3& grad_v, double dt);

// Fixed-corotated first Piola-Kirchhoff stress
// P = 2 mu (F - R) + lambda (J - 1) J F^{-T}.
Mat3 corotated_piola(const Mat3& F, const LameParams& lame);

// Kirchhoff stress tau = P F^T, the quantity the grid force scatter uses.
Mat3 corotated_kirchhoff(const Mat3& F, const LameParams& lame);

// Directional derivative of corotated_kirchhoff at F along dF.
Mat3 corotated_kirchhoff_derivative(const Mat3& F, const Polar& polar, const LameParams& lame,
                                    const Mat3& dF);

// Plastic return map. Elastic materials return F unchanged. Elastoplastic
// materials clamp the deviatoric Hencky strain onto the von Mises yield
// surface; viscoplastic materials take only the fraction
// 1 / (1 + viscosity / (2 mu dt)) of that return per substep.
// `active` reports whether the projection changed F.
Mat3 plastic_projection(const Mat3& F, const MaterialParams& material, double dt,
                        bool* active = nullptr);

struct StressResult {
  Mat3 stress;       // first Piola-Kirchhoff, Pa
  Mat3 projected;    // elastic part of D after the return map
  bool plastic_active = false;
};

// Applies the material's return map to D, then evaluates the corotated
// stress at the projected elastic deformation.
StressResult constitutive_stress(const Mat3& D, const MaterialParams& material, double dt);

}  // namespace forcelens
