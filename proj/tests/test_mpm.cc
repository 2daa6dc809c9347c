#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <random>

#include "forcelens/constitutive.h"
#include "forcelens/errors.h"
#include "forcelens/forcefield.h"
#include "forcelens/mpm.h"
#include "forcelens/parallel.h"
#include "support.h"

namespace forcelens {
namespace {

AnalyticField constant_field(const Vec3& a, double frame_dt = 1.0 / 30.0) {
  return AnalyticField(ConstantSpec{a}, frame_dt);
}

Vec3 momentum(const std::vector<Particle>& ps, const std::vector<ParticleDyn>& dyn) {
  Vec3 m = Vec3::Zero();
  for (std::size_t i = 0; i < ps.size(); ++i) m += ps[i].mass * dyn[i].v;
  return m;
}

// A few particles with random velocities and mildly strained deformation
// gradients in the middle of the grid.
Scene random_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Scene s = testing::block_scene(seed % 2 ? "gelatin" : "rubber", 2);
  if (seed % 3 == 0) s.materials[0] = material_lookup("modeling_clay");
  for (auto& p : s.particles) {
    p.x += 0.005 * Vec3(u(rng), u(rng), u(rng));
    p.v = 0.2 * Vec3(u(rng), u(rng), u(rng));
    p.deformation = Mat3::Identity() + 0.05 * Mat3::NullaryExpr([&] { return u(rng); });
    p.mass = s.materials[0].density * p.volume0;
  }
  // Stiff rubber needs a finer substep to stay inside the wave-speed bound.
  if (s.materials[0].name == "rubber") s.substeps_per_frame = 400;
  validate(s);
  return s;
}

TEST(Lame, Examples) {
  auto a = lame_params(1.0, 0.0);
  EXPECT_DOUBLE_EQ(a.mu, 0.5);
  EXPECT_DOUBLE_EQ(a.lambda, 0.0);
  auto b = lame_params(2.6, 0.3);
  EXPECT_NEAR(b.mu, 1.0, 1e-15);
  EXPECT_NEAR(b.lambda, 1.5, 1e-15);
  EXPECT_THROW(lame_params(1.0, 0.5), UsageError);
  EXPECT_THROW(lame_params(0.0, 0.3), UsageError);
}

TEST(DeformationUpdate, Examples) {
  const Mat3 d = Mat3::Identity() + 0.1 * Mat3::Ones();
  EXPECT_EQ(update_deformation_gradient(d, Mat3::Zero(), 0.1), d);
  const Mat3 g = Vec3(1, 0, 0).asDiagonal();
  EXPECT_TRUE(update_deformation_gradient(Mat3::Identity(), g, 0.1)
                  .isApprox(Vec3(1.1, 1, 1).asDiagonal().toDenseMatrix(), 1e-15));
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 0;
  const double dt = 1e-3;
  const Mat3 r = update_deformation_gradient(d, w, dt);
  EXPECT_NEAR(r.determinant(), d.determinant(), 10 * dt * dt);
  EXPECT_THROW(update_deformation_gradient(Mat3::Identity(), -Mat3::Identity(), 1.0),
               DegenerateDeformationError);
}

TEST(Constitutive, RestStateIsStressFree) {
  for (const char* name : {"gelatin", "modeling_clay", "toothpaste"}) {
    const auto r = constitutive_stress(Mat3::Identity(), material_lookup(name), 1e-3);
    EXPECT_EQ(r.stress, Mat3::Zero()) << name;
    EXPECT_EQ(r.projected, Mat3::Identity()) << name;
  }
}

TEST(Constitutive, UniaxialStretchMatchesHandEvaluation) {
  MaterialParams m = material_lookup("gelatin");
  m.youngs_modulus = 1e4;
  m.poisson_ratio = 0.2;
  const Mat3 d = Vec3(1.05, 1.0, 1.0).asDiagonal();
  const auto r = constitutive_stress(d, m, 1e-3);
  // mu = 1e4 / 2.4, lambda = 2e3 / 0.72, J = 1.05, R = I:
  // P00 = 2 mu 0.05 + lambda 0.05 = 5000 / 9, P11 = P22 = lambda 0.05 * 1.05 = 875 / 6.
  Mat3 expected = Mat3::Zero();
  expected(0, 0) = 5000.0 / 9.0;
  expected(1, 1) = expected(2, 2) = 875.0 / 6.0;
  EXPECT_LE((r.stress - expected).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(r.projected, d);
}

TEST(Constitutive, RotationsAreStressFree) {
  std::mt19937_64 rng(11);
  const MaterialParams m = material_lookup("rubber");
  const LameParams lame = lame_params(m.youngs_modulus, m.poisson_ratio);
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = testing::random_rotation(rng);
    EXPECT_LE(corotated_piola(r, lame).norm(), 1e-8 * m.youngs_modulus);
  }
}

TEST(Constitutive, KirchhoffDerivativeMatchesFiniteDifference) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const LameParams lame = lame_params(1e4, 0.3);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat3 F = testing::random_rotation(rng) *
                   (Mat3::Identity() + 0.2 * Mat3::NullaryExpr([&] { return u(rng); }));
    const Mat3 dF = Mat3::NullaryExpr([&] { return u(rng); });
    const double h = 1e-6;
    const Mat3 fd = (corotated_kirchhoff(F + h * dF, lame) - corotated_kirchhoff(F - h * dF, lame)) /
                    (2 * h);
    const Mat3 an = corotated_kirchhoff_derivative(F, polar_decompose(F), lame, dF);
    EXPECT_LE((fd - an).norm(), 1e-5 * (1.0 + an.norm()));
  }
}

TEST(Constitutive, PolarDecomposition) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const Mat3 F = testing::random_rotation(rng) *
                   (Mat3::Identity() + 0.3 * Mat3::NullaryExpr([&] { return u(rng); }));
    if (F.determinant() <= 0.0) continue;
    const Polar p = polar_decompose(F);
    EXPECT_LE((p.rotation * p.stretch - F).norm(), 1e-12);
    EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-12);
    EXPECT_LE((p.stretch - p.stretch.transpose()).norm(), 1e-12);
  }
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = NAN;
  EXPECT_THROW(polar_decompose(bad), SimulationError);
}

TEST(Plasticity, ReturnMapClampsLargeShear) {
  const MaterialParams clay = material_lookup("modeling_clay");
  const MaterialParams gel = material_lookup("gelatin");
  Mat3 F = Mat3::Identity();
  F(0, 1) = 0.5;
  bool active = false;
  EXPECT_EQ(plastic_projection(F, gel, 1e-3, &active), F);
  EXPECT_FALSE(active);
  const Mat3 p = plastic_projection(F, clay, 1e-3, &active);
  EXPECT_TRUE(active);
  // Deviatoric Hencky strain shrinks; the volume ratio is preserved.
  auto dev_norm = [](const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m);
    Vec3 e = svd.singularValues().array().log();
    return (e.array() - e.mean()).matrix().norm();
  };
  EXPECT_LT(dev_norm(p), dev_norm(F));
  EXPECT_NEAR(p.determinant(), F.determinant(), 1e-12);
  // Viscoplastic relaxation takes only part of the return.
  const Mat3 v = plastic_projection(F, material_lookup("toothpaste"), 1e-3, &active);
  EXPECT_TRUE(active);
  EXPECT_LE(dev_norm(v), dev_norm(F));
}

TEST(ExternalForce, ZeroFieldLeavesVelocities) {
  Scene s = testing::block_scene();
  SimState st = initial_state(s);
  st.particles[3].v = Vec3(0.1, 0.2, 0.3);
  const SimState before = st;
  apply_external_force(st, constant_field(Vec3::Zero()), 1e-3);
  for (std::size_t i = 0; i < st.particles.size(); ++i) EXPECT_EQ(st.particles[i].v, before.particles[i].v);
}

TEST(ExternalForce, TelescopingSum) {
  Scene s = testing::single_particle_scene();
  SimState st = initial_state(s);
  const Vec3 a(1.0, -2.0, 0.5);
  const double dt = 1e-3;
  const auto field = constant_field(a);
  for (int k = 0; k < 16; ++k) apply_external_force(st, field, dt);
  EXPECT_LE((st.particles[0].v - 16 * dt * a).norm(), 1e-15);
}

TEST(ExternalForce, ConstrainedParticleStaysPinned) {
  Scene s = testing::block_scene();
  s.particles[0].constrained = true;
  SimState st = initial_state(s);
  apply_external_force(st, constant_field(Vec3(5, 5, 5)), 1e-3);
  EXPECT_EQ(st.particles[0].v, Vec3::Zero());
  EXPECT_NE(st.particles[1].v, Vec3::Zero());
}

TEST(ExternalForce, NonFiniteForceNamesParticle) {
  Scene s = testing::block_scene();
  SimState st = initial_state(s);
  try {
    apply_external_force(st, constant_field(Vec3(NAN, 0, 0)), 1e-3);
    FAIL();
  } catch (const SimulationError& e) {
    EXPECT_NE(std::string(e.what()).find("particle 0"), std::string::npos) << e.what();
  }
}

TEST(StepFrame, RestIsEquilibrium) {
  const Scene s = testing::block_scene();
  const SimState st = initial_state(s);
  const SimState next = step_frame(st, constant_field(Vec3::Zero()), s);
  for (std::size_t i = 0; i < st.particles.size(); ++i) {
    EXPECT_LE((next.particles[i].x - st.particles[i].x).norm(), 1e-12);
    EXPECT_LE(next.particles[i].v.norm(), 1e-12);
  }
  EXPECT_EQ(next.frame, 1);
  EXPECT_NEAR(next.t, s.frame_dt, 1e-15);
}

TEST(StepFrame, BallisticParticleMatchesSymplecticEuler) {
  const Scene s = testing::single_particle_scene();
  const Vec3 a(0.3, 0.2, -0.1);
  const int frames = 30;
  const Trajectory traj = rollout(initial_state(s), constant_field(a), s, frames);
  const double dt = s.substep_dt();
  const Vec3 x0 = s.particles[0].x;
  for (int f = 1; f <= frames; ++f) {
    const double n = static_cast<double>(f) * s.substeps_per_frame;
    const Vec3 x = x0 + dt * dt * a * n * (n + 1) / 2;
    const Vec3 disp = x - x0;
    EXPECT_LE((traj[f].positions[0] - x).norm(), 1e-6 * disp.norm()) << "frame " << f;
    EXPECT_LE((traj[f].velocities[0] - n * dt * a).norm(), 1e-6 * (n * dt * a).norm());
  }
}

TEST(Transfers, PairMomentumAfterP2G) {
  Scene s = testing::block_scene("rubber", 1);
  s.particles.push_back(s.particles[0]);
  s.particles[1].x += Vec3(0.025, 0.0, 0.0);
  s.particles[0].deformation(0, 0) = 1.05;
  s.particles[1].deformation(0, 0) = 1.05;
  s.particles[0].v = Vec3(0.1, 0.0, -0.05);
  s.particles[1].v = Vec3(-0.02, 0.3, 0.0);
  const SimState st = initial_state(s);
  const auto dyn = dynamics_of(st);
  const GridBuffers g = particle_to_grid(s, dyn);
  const Vec3 expected = momentum(st.particles, dyn);
  EXPECT_LE((g.total_momentum() - expected).norm(), 1e-10 * expected.norm());
  EXPECT_NEAR(g.total_mass(), total_mass(st.particles), 1e-12);
}

TEST(Transfers, UniformVelocityRoundTrip) {
  Scene s = testing::block_scene("gelatin", 3);
  const Vec3 v(0.3, -0.1, 0.2);
  for (auto& p : s.particles) p.v = v;
  const SimState st = initial_state(s);
  auto dyn = dynamics_of(st);
  GridBuffers g = particle_to_grid(s, dyn);
  grid_velocity_from_momentum(g);
  grid_to_particle(s, g, dyn);
  for (const auto& d : dyn) {
    EXPECT_LE((d.v - v).norm(), 1e-10);
    EXPECT_LE(d.affine.norm(), 1e-10);
  }
}

class RandomScenes : public ::testing::TestWithParam<int> {};

TEST_P(RandomScenes, SubstepConservesMomentumAndKeepsInvariants) {
  const Scene s = random_scene(static_cast<std::uint64_t>(GetParam()));
  const SimState st = initial_state(s);
  auto dyn = dynamics_of(st);
  const Vec3 before = momentum(st.particles, dyn);
  double scale = 0.0;
  for (std::size_t i = 0; i < dyn.size(); ++i) scale += st.particles[i].mass * dyn[i].v.norm();
  Substepper stepper(s);
  const auto zero = constant_field(Vec3::Zero());
  for (int k = 0; k < 4; ++k) {
    stepper.forward(dyn, zero, k * s.substep_dt(), 0, k);
    EXPECT_LE((momentum(st.particles, dyn) - before).norm(), 1e-9 * scale) << "substep " << k;
  }
  SimState out = st;
  commit_dynamics(out, dyn);
  for (const auto& p : out.particles) {
    EXPECT_GT(p.deformation.determinant(), kDetFloor);
    Eigen::SelfAdjointEigenSolver<Mat3> eig(p.covariance);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
    EXPECT_LE((p.covariance - p.covariance.transpose()).norm(), 1e-18);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomScenes, ::testing::Range(0, 100));

TEST(StepFrame, CflViolationAborts) {
  const Scene s = testing::block_scene();
  SimState st = initial_state(s);
  for (auto& p : st.particles) p.v = Vec3(200.0, 0.0, 0.0);
  EXPECT_THROW(step_frame(st, constant_field(Vec3::Zero()), s), CflError);
}

TEST(StepFrame, FixedRegionHoldsParticles) {
  Scene s = testing::block_scene();
  s.bcs.push_back(FixedRegion{Vec3::Zero(), Vec3(1.0, 0.28, 1.0)});
  ASSERT_EQ(constrain_fixed_particles(s), 9);
  const Trajectory t = rollout(initial_state(s), constant_field(Vec3(1, 0.5, 0.3)), s, 5);
  double pinned = 0.0, free = 0.0;
  for (std::size_t p = 0; p < s.particles.size(); ++p) {
    const double d = (t.back().positions[p] - t[0].positions[p]).norm();
    double& worst = s.particles[p].constrained ? pinned : free;
    worst = std::max(worst, d);
  }
  EXPECT_LE(pinned, 1e-9);
  EXPECT_GT(free, 1e-4);
}

TEST(StepFrame, StickyGroundStopsFall) {
  Scene s = testing::block_scene();
  s.gravity = Vec3(0, -9.81, 0);
  s.bcs.push_back(GroundPlane{0.2, GroundMode::kSticky});
  const Trajectory t = rollout(initial_state(s), constant_field(Vec3::Zero()), s, 15);
  for (const auto& x : t.back().positions) EXPECT_GT(x.y(), 0.15);
}

TEST(StepFrame, ThreadCountDoesNotChangeBits) {
  const Scene s = testing::block_scene("gelatin", 4);
  const auto field = constant_field(Vec3(1, 0.5, 0.3));
  const Trajectory a = with_threads(1, [&] { return rollout(initial_state(s), field, s, 3); });
  const Trajectory b = with_threads(8, [&] { return rollout(initial_state(s), field, s, 3); });
  EXPECT_EQ(a, b);
}

TEST(StepFrame, PerParticleForceScale) {
  const Scene s = testing::single_particle_scene();
  StepOptions half;
  half.force_scale = {0.5};
  const auto field = constant_field(Vec3(1, 0, 0));
  const Trajectory full = rollout(initial_state(s), field, s, 5);
  const Trajectory scaled = rollout(initial_state(s), field, s, 5, half);
  const double d_full = (full.back().positions[0] - full[0].positions[0]).norm();
  const double d_half = (scaled.back().positions[0] - scaled[0].positions[0]).norm();
  EXPECT_NEAR(d_half / d_full, 0.5, 1e-9);
  StepOptions bad;
  bad.force_scale = {1.0, 2.0};
  EXPECT_THROW(rollout(initial_state(s), field, s, 1, bad), ShapeError);
}

}  // namespace
}  // namespace forcelens
