#include <gtest/gtest.h>

#include <cmath>

#include "forcelens/errors.h"
#include "forcelens/evalmetrics.h"
#include "forcelens/recover.h"
#include "support.h"

namespace forcelens {
namespace {

TriPlaneConfig triplane_for(const Scene& s, int frames) {
  TriPlaneConfig c;
  c.domain = {s.grid.origin, s.grid.upper()};
  c.frame_dt = s.frame_dt;
  c.frames = frames;
  return c;
}

TargetSequence exact_targets(const Trajectory& traj) {
  TargetSequence t;
  for (const auto& f : traj) t.push_back(f.positions);
  return t;
}

std::vector<Vec3> positions(const Scene& s) {
  std::vector<Vec3> x;
  for (const auto& p : s.particles) x.push_back(p.x);
  return x;
}

TEST(MotionLoss, Examples) {
  const std::vector<Vec3> x{Vec3(0, 0, 0), Vec3(1, 2, 3), Vec3(-1, 0, 2)};
  EXPECT_EQ(motion_loss(x, x), 0.0);
  std::vector<Vec3> y = x;
  for (auto& p : y) p += Vec3(0.01, 0, 0);
  EXPECT_NEAR(motion_loss(x, y), 0.01, 1e-15);
  const std::vector<Vec3> xr{x[2], x[0], x[1]}, yr{y[2], y[0], y[1]};
  EXPECT_EQ(motion_loss(xr, yr), motion_loss(x, y));
  EXPECT_THROW(motion_loss(x, std::vector<Vec3>(2)), ShapeError);
}

TEST(MotionLoss, GradientMatchesFiniteDifferences) {
  const std::vector<Vec3> x{Vec3(0.1, 0.2, 0.3), Vec3(1, 2, 3)};
  const std::vector<Vec3> t{Vec3(0.0, 0.25, 0.3), Vec3(1, 2, 3)};
  const auto g = motion_loss_grad(x, t);
  EXPECT_EQ(g[1], Vec3::Zero());
  for (int a = 0; a < 3; ++a) {
    auto up = x, down = x;
    up[0](a) += 1e-7;
    down[0](a) -= 1e-7;
    const double fd = (motion_loss(up, t) - motion_loss(down, t)) / 2e-7;
    EXPECT_NEAR(g[0](a), fd, 1e-7);
  }
}

TEST(TotalLoss, ComponentsRecombine) {
  const Scene s = testing::block_scene();
  CausalTriPlane f(triplane_for(s, 2));
  f.warm_start(0, 1);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.1);
  for (double& p : f.params()) p = n(rng);
  f.warm_start(1, 1);
  const auto x = positions(s);
  std::vector<Vec3> y = x;
  for (auto& p : y) p += Vec3(0.0, 0.003, 0.0);
  RecoveryConfig c;
  const LossParts l = total_loss(f, 1, x, y, c);
  EXPECT_EQ(l.time, 0.0);  // a fresh warm start copies the previous snapshot
  EXPECT_NEAR(l.total, l.motion + c.lambda_space * l.space + c.lambda_time * l.time, 1e-15);
  c.lambda_space = c.lambda_time = 0.0;
  EXPECT_EQ(total_loss(f, 1, x, y, c).total, motion_loss(x, y));
}

TEST(TotalLoss, PointFieldSkipsTvWithWarning) {
  const Scene s = testing::block_scene();
  PointForceField f(27, 1, s.frame_dt);
  const auto x = positions(s);
  std::vector<std::string> warnings;
  const LossParts l = total_loss(f, 0, x, x, RecoveryConfig{}, &warnings);
  EXPECT_EQ(l.space, 0.0);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(RecoveryConfig, ValidationAndJson) {
  RecoveryConfig c;
  c.iterations = 0;
  EXPECT_THROW(validate(c), UsageError);
  c = {};
  c.learning_rate = 0.0;
  EXPECT_THROW(validate(c), UsageError);
  c = {};
  c.lambda_time = -1.0;
  EXPECT_THROW(validate(c), UsageError);
  c = {};
  c.iterations = 17;
  c.seed = 99;
  const RecoveryConfig back = recovery_config_from_json(to_json(c));
  EXPECT_EQ(back.iterations, 17);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_THROW(recovery_config_from_json(Json{{"iteratons", 3}}), ParseError);
}

TEST(RecoverFrame, ZeroIterationsRejected) {
  const Scene s = testing::block_scene();
  CausalTriPlane f(triplane_for(s, 1));
  f.warm_start(0, 0);
  RecoveryConfig c;
  c.iterations = 0;
  EXPECT_THROW(recover_frame(initial_state(s), f, positions(s), s, c), UsageError);
}

TEST(RecoverSequence, StaticTargetsRecoverNoForce) {
  const Scene s = testing::block_scene();
  const auto x = positions(s);
  CausalTriPlane f(triplane_for(s, 3));
  RecoveryConfig c;
  c.iterations = 20;
  const SequenceResult r = recover_sequence(s, TargetSequence(4, x), f, c);
  double mean = 0.0;
  for (int t = 0; t < 3; ++t) {
    for (const Vec3& p : x) mean += f.query({p, (t + 0.5) * s.frame_dt, t, -1}).norm();
  }
  EXPECT_LE(mean / (3.0 * x.size()), 1e-3);
  EXPECT_FALSE(r.report.any_divergence());
}

TEST(RecoverSequence, ConstantFieldOnElasticBlock) {
  const Scene s = testing::block_scene();
  const int frames = 2;
  AnalyticField truth(ConstantSpec{Vec3(1.0, 0.5, 0.3)}, s.frame_dt);
  const Trajectory traj = rollout(initial_state(s), truth, s, frames);
  CausalTriPlane f(triplane_for(s, frames));
  const SequenceResult r = recover_sequence(s, exact_targets(traj), f, RecoveryConfig{});
  const ForceErrorReport e = field_errors(f, truth, traj, s.frame_dt);
  EXPECT_LE(e.magnitude, 10.0);
  EXPECT_LE(e.direction, 5.0);
  ASSERT_EQ(r.committed.size(), 3u);
  for (const auto& fr : r.report.frames) {
    EXPECT_EQ(fr.iterations, static_cast<int>(fr.total.size()));
    EXPECT_LE(fr.best_loss, fr.initial_loss);
    EXPECT_EQ(fr.best_loss, fr.total[fr.best_iteration]);
    for (double v : fr.total) EXPECT_GE(v, fr.best_loss);
  }
  // The committed rollout is the accepted field re-simulated.
  EXPECT_EQ(r.committed, rollout(initial_state(s), f, s, frames));
}

TEST(RecoverSequence, DeterministicForFixedSeed) {
  const Scene s = testing::block_scene();
  AnalyticField truth(ConstantSpec{Vec3(0.0, 1.0, 0.0)}, s.frame_dt);
  const auto targets = exact_targets(rollout(initial_state(s), truth, s, 2));
  RecoveryConfig c;
  c.iterations = 15;
  c.seed = 4;
  CausalTriPlane a(triplane_for(s, 2)), b(triplane_for(s, 2));
  const auto ra = recover_sequence(s, targets, a, c);
  const auto rb = recover_sequence(s, targets, b, c);
  EXPECT_EQ(to_json(ra.report, false).dump(), to_json(rb.report, false).dump());
  EXPECT_EQ(ra.committed, rb.committed);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin(), b.params().end()));
}

TEST(RecoverSequence, HugeTemporalWeightFreezesSnapshots) {
  const Scene s = testing::block_scene();
  AnalyticField truth(SinusoidSpec{1.0, Vec3::UnitY(), 1.5, 0.0, Vec3(1, 0, 0)}, s.frame_dt);
  const auto targets = exact_targets(rollout(initial_state(s), truth, s, 3));
  RecoveryConfig c;
  c.iterations = 15;
  c.lambda_time = 1e6;
  CausalTriPlane f(triplane_for(s, 3));
  recover_sequence(s, targets, f, c);
  for (int k = 1; k < 3; ++k) {
    const ParamRange a = f.snapshot_range(k - 1), b = f.snapshot_range(k);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(f.params()[b.begin + i] - f.params()[a.begin + i]);
    EXPECT_LE(diff / a.size(), 1e-6) << "frame " << k;
  }
}

TEST(RecoverSequence, WarmStartBeatsFreshStartOnSmoothField) {
  const Scene s = testing::block_scene();
  const int frames = 8;
  AnalyticField truth(SinusoidSpec{1.0, Vec3::UnitY(), 1.5, 0.0, Vec3(1, 0, 0)}, s.frame_dt);
  const auto targets = exact_targets(rollout(initial_state(s), truth, s, frames));
  RecoveryConfig c;
  c.iterations = 40;
  CausalTriPlane warm(triplane_for(s, frames)), fresh(triplane_for(s, frames));
  const auto rw = recover_sequence(s, targets, warm, c);
  c.warm_start = false;
  const auto rf = recover_sequence(s, targets, fresh, c);
  int better = 0;
  for (int k = 1; k < frames; ++k) {
    if (rw.report.frames[k].initial_loss <= rf.report.frames[k].initial_loss) ++better;
  }
  EXPECT_GE(better, static_cast<int>(std::ceil(0.8 * (frames - 1))));
}

TEST(RecoverSequence, RejectsShortTargets) {
  const Scene s = testing::block_scene();
  CausalTriPlane f(triplane_for(s, 1));
  EXPECT_THROW(recover_sequence(s, TargetSequence(1, positions(s)), f, RecoveryConfig{}), UsageError);
}

TEST(NoisyDenseTargets, FrameZeroExactAndNoiseAlongRays) {
  const Scene s = testing::block_scene();
  AnalyticField truth(ConstantSpec{Vec3(1.0, 0.0, 0.0)}, s.frame_dt);
  const Trajectory traj = rollout(initial_state(s), truth, s, 2);
  const TargetSequence t = noisy_dense_targets(traj, s.camera, 0.05, 3);
  EXPECT_EQ(t[0], traj[0].positions);
  EXPECT_EQ(t, noisy_dense_targets(traj, s.camera, 0.05, 3));
  for (std::size_t p = 0; p < t[1].size(); ++p) {
    const Vec2 a = project(s.camera, t[1][p]), b = project(s.camera, traj[1].positions[p]);
    EXPECT_LE((a - b).norm(), 1e-9);
  }
}

}  // namespace
}  // namespace forcelens
