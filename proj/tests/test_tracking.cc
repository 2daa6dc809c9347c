#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "forcelens/errors.h"
#include "forcelens/tracking.h"
#include "support.h"

namespace forcelens {
namespace {

Camera test_camera() { return testing::block_scene().camera; }

std::vector<Vec3> block_positions() {
  std::vector<Vec3> x;
  for (const auto& p : testing::block_scene().particles) x.push_back(p.x);
  return x;
}

// A trajectory whose frame t is `motion(t, x0)` applied to every particle.
template <typename Motion>
Trajectory scripted(int frames, Motion motion) {
  const auto x0 = block_positions();
  Trajectory traj;
  for (int t = 0; t <= frames; ++t) {
    TrajectoryFrame f;
    f.frame = t;
    for (const Vec3& x : x0) f.positions.push_back(motion(t, x));
    f.velocities.assign(x0.size(), Vec3::Zero());
    traj.push_back(std::move(f));
  }
  return traj;
}

std::vector<int> all_indices(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

TEST(Projection, Examples) {
  const Camera c = test_camera();
  const Vec2 a = project(c, Vec3(0.375, 0.375, 0.0));
  EXPECT_NEAR(a.x(), 256.0, 1e-12);
  EXPECT_NEAR(a.y(), 256.0, 1e-12);
  const Vec2 b = project(c, Vec3(0.475, 0.325, 0.0));
  EXPECT_NEAR(b.x(), 336.0, 1e-12);
  EXPECT_NEAR(b.y(), 216.0, 1e-12);
  EXPECT_NEAR(camera_depth(c, Vec3(0.1, 0.2, 0.3)), 1.3, 1e-15);
  EXPECT_THROW(project(c, Vec3(0.3, 0.3, -1.0)), UsageError);
  EXPECT_THROW(unproject(c, Vec2(10, 10), 0.0), UsageError);
}

TEST(Projection, RoundTripUnderRandomPoses) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int k = 0; k < 50; ++k) {
    Camera c = test_camera();
    c.rotation = testing::random_rotation(rng);
    c.translation = Vec3(u(rng), u(rng), 2.0);
    const Vec3 x = c.rotation.transpose() * (Vec3(u(rng), u(rng), 1.0 + u(rng)) - c.translation);
    const Vec3 back = unproject(c, project(c, x), camera_depth(c, x));
    EXPECT_LE((back - x).norm(), 1e-12);
  }
}

TEST(SynthTracks, NoiselessTracksAreExactProjections) {
  const Trajectory traj = scripted(4, [](int t, const Vec3& x) -> Vec3 { return x + Vec3(0.01 * t, 0, 0); });
  const Camera c = test_camera();
  const std::vector<int> kp{0, 2, 6, 18};
  const TrackSet ts = synth_tracks(traj, c, kp, {});
  ASSERT_EQ(ts.keypoint_count(), 4);
  ASSERT_EQ(ts.frame_count(), 5);
  for (int n = 0; n < 4; ++n) {
    EXPECT_EQ(ts.depths0[n], camera_depth(c, traj[0].positions[kp[n]]));
    for (int t = 0; t < 5; ++t) {
      EXPECT_EQ(ts.pixels[n][t], project(c, traj[t].positions[kp[n]]));
      EXPECT_EQ(ts.visible[n][t], 1);
    }
  }
  EXPECT_NO_THROW(validate(ts, true));
}

TEST(SynthTracks, SeedDeterminesNoise) {
  const Trajectory traj = scripted(3, [](int, const Vec3& x) -> Vec3 { return x; });
  SynthTrackOptions o{0.5, 0.01, 11};
  const auto kp = all_indices(27);
  const TrackSet a = synth_tracks(traj, test_camera(), kp, o);
  const TrackSet b = synth_tracks(traj, test_camera(), kp, o);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.depths0, b.depths0);
  o.seed = 12;
  EXPECT_NE(synth_tracks(traj, test_camera(), kp, o).pixels, a.pixels);
  o.pixel_noise = -1.0;
  EXPECT_THROW(synth_tracks(traj, test_camera(), kp, o), UsageError);
}

TEST(SynthTracks, PixelNoiseHasRequestedSpread) {
  const Trajectory traj = scripted(60, [](int, const Vec3& x) -> Vec3 { return x; });
  const Camera c = test_camera();
  const auto kp = all_indices(27);
  const TrackSet ts = synth_tracks(traj, c, kp, {0.5, 0.0, 5});
  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (int k = 0; k < 27; ++k) {
    for (int t = 0; t <= 60; ++t) {
      const Vec2 d = ts.pixels[k][t] - project(c, traj[t].positions[k]);
      for (double v : {d.x(), d.y()}) {
        sum += v;
        sq += v * v;
        ++n;
      }
    }
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(sd, 0.5, 0.05);
}

TEST(SynthTracks, OffscreenPointsAreInvisible) {
  const Trajectory traj = scripted(2, [](int t, const Vec3& x) -> Vec3 { return x + Vec3(t * 1.0, 0, 0); });
  const TrackSet ts = synth_tracks(traj, test_camera(), std::vector<int>{0}, {});
  EXPECT_EQ(ts.visible[0][0], 1);
  EXPECT_EQ(ts.visible[0][2], 0);
}

TEST(TrackValidation, NeedsFourNonCoplanarKeypoints) {
  const Trajectory traj = scripted(1, [](int, const Vec3& x) -> Vec3 { return x; });
  // Particles 0, 1, 2 and 3..5 sample one z = const layer of the block.
  const TrackSet three = synth_tracks(traj, test_camera(), std::vector<int>{0, 1, 2}, {});
  try {
    validate(three, true);
    FAIL();
  } catch (const InvariantError& e) {
    EXPECT_EQ(e.invariant(), "keypoint_count");
  }
  const auto x = block_positions();
  std::vector<int> layer;
  for (int i = 0; i < 27; ++i) {
    if (x[i].z() == x[0].z()) layer.push_back(i);
  }
  ASSERT_GE(layer.size(), 4u);
  try {
    validate(synth_tracks(traj, test_camera(), layer, {}), true);
    FAIL();
  } catch (const InvariantError& e) {
    EXPECT_EQ(e.invariant(), "keypoint_coplanar");
  }
}

TEST(Keypoints, FarthestPointSampleIsSpreadAndDeterministic) {
  const auto x = block_positions();
  const auto a = farthest_point_keypoints(x, 8);
  EXPECT_EQ(a, farthest_point_keypoints(x, 8));
  EXPECT_EQ(std::set<int>(a.begin(), a.end()).size(), 8u);
  // Seeded at a corner, then its opposite corner; picks never coincide.
  const Vec3 c = Vec3(0.3, 0.3, 0.3);
  EXPECT_NEAR((x[a[0]] - c).norm(), std::sqrt(3.0) * 0.025, 1e-12);
  EXPECT_NEAR((x[a[1]] + x[a[0]] - 2.0 * c).norm(), 0.0, 1e-12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) EXPECT_GE((x[a[i]] - x[a[j]]).norm(), 0.025 - 1e-12);
  }
  EXPECT_THROW(farthest_point_keypoints(x, 0), UsageError);
  EXPECT_THROW(farthest_point_keypoints(x, 28), UsageError);
}

TEST(Arap, Examples) {
  const auto x = block_positions();
  const auto edges = knn_edges(x, 6);
  for (const auto& [i, j] : edges) EXPECT_LT(i, j);
  EXPECT_TRUE(std::is_sorted(edges.begin(), edges.end()));
  std::vector<Vec3> moved = x;
  for (auto& p : moved) p += Vec3(0.3, -0.1, 0.2);
  EXPECT_NEAR(arap_loss(x, moved, edges), 0.0, 1e-12);
  const Mat3 r = Eigen::AngleAxisd(0.3, Vec3::UnitZ()).toRotationMatrix();
  for (std::size_t i = 0; i < x.size(); ++i) moved[i] = r * x[i];
  EXPECT_GT(arap_loss(x, moved, edges), 0.0);
  const double eps = 0.01;
  double rest = 0.0;
  for (const auto& [i, j] : edges) rest += (x[i] - x[j]).norm();
  for (std::size_t i = 0; i < x.size(); ++i) moved[i] = (1.0 + eps) * x[i];
  EXPECT_NEAR(arap_loss(x, moved, edges), eps * rest, 1e-12);
  EXPECT_THROW(arap_loss(x, moved, {}), UsageError);
}

TEST(Arap, TranslationExactOnDyadicLattice) {
  // Binary-representable coordinates and shift: every sum is exact, so the loss must be 0.0.
  std::vector<Vec3> x;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) x.emplace_back(0.25 + 0.03125 * i, 0.25 + 0.03125 * j, 0.25 + 0.03125 * k);
  const auto edges = knn_edges(x, 6);
  std::vector<Vec3> moved = x;
  for (auto& p : moved) p += Vec3(0.125, -0.0625, 0.1875);
  EXPECT_EQ(arap_loss(x, moved, edges), 0.0);
}

TEST(Lifting, RigidTranslationIsRecovered) {
  const Trajectory traj = scripted(5, [](int t, const Vec3& x) -> Vec3 {
    return x + Vec3(0.002 * t, 0.001 * t, 0.0);
  });
  TrackSet ts = synth_tracks(traj, test_camera(), all_indices(27), {});
  std::vector<LiftStats> stats;
  lift_tracks(ts, LiftConfig{}, &stats);
  ASSERT_EQ(ts.lifted.size(), 6u);
  double worst = 0.0;
  for (int t = 0; t <= 5; ++t) {
    for (int n = 0; n < 27; ++n) worst = std::max(worst, (ts.lifted[t][n] - traj[t].positions[n]).norm());
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Lifting, StaticSequenceIsAFixedPoint) {
  const Trajectory traj = scripted(2, [](int, const Vec3& x) -> Vec3 { return x; });
  TrackSet ts = synth_tracks(traj, test_camera(), all_indices(27), {});
  lift_tracks(ts, LiftConfig{});
  for (int n = 0; n < 27; ++n) EXPECT_LE((ts.lifted[2][n] - ts.lifted[0][n]).norm(), 1e-12);
}

TEST(Lifting, ZeroLambdaStillReprojects) {
  const Trajectory traj = scripted(1, [](int, const Vec3& x) -> Vec3 { return x + Vec3(0.01, 0, 0); });
  TrackSet ts = synth_tracks(traj, test_camera(), all_indices(27), {});
  LiftConfig cfg;
  cfg.lambda = 0.0;
  std::vector<LiftStats> stats;
  lift_tracks(ts, cfg, &stats);
  EXPECT_LE(stats[1].reprojection, 1e-12);
  cfg.lambda = -1.0;
  EXPECT_THROW(lift_tracks(ts, cfg), UsageError);
}

TEST(Barycentric, CoincidentKeypointIsOneHot) {
  const auto x = block_positions();
  const std::vector<Vec3> kp{x[0], x[4], x[20], x[26]};
  const auto b = bind_barycentric(std::vector<Vec3>{x[4]}, kp);
  EXPECT_EQ(b.indices[0][0], 1);
  EXPECT_NEAR(b.weights[0](0), 1.0, 1e-10);
  EXPECT_LE(b.residuals[0], 1e-10);
}

TEST(Barycentric, MidpointAndPartitionOfUnity) {
  const std::vector<Vec3> kp{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 3, 0), Vec3(5, 5, 5)};
  const auto mid = bind_barycentric(std::vector<Vec3>{Vec3(0.5, 0, 0)}, kp);
  const std::set<int> used(mid.indices[0].begin(), mid.indices[0].end());
  EXPECT_EQ(used, (std::set<int>{0, 1, 2}));
  for (int a = 0; a < 3; ++a) {
    const int k = mid.indices[0][a];
    EXPECT_NEAR(mid.weights[0](a), k == 2 ? 0.0 : 0.5, 1e-12);
  }
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 2.0);
  std::vector<Vec3> pts(50);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  const auto b = bind_barycentric(pts, kp);
  for (const auto& w : b.weights) EXPECT_NEAR(w.sum(), 1.0, 1e-12);
  EXPECT_THROW(bind_barycentric(pts, std::vector<Vec3>(kp.begin(), kp.begin() + 2)), UsageError);
}

TEST(Barycentric, InterpolationMatchesBruteForceAndTranslates) {
  const auto x = block_positions();
  const auto kpi = farthest_point_keypoints(x, 8);
  std::vector<Vec3> kp0;
  for (int i : kpi) kp0.push_back(x[i]);
  const auto b = bind_barycentric(x, kp0);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.01, 0.01);
  std::vector<Vec3> kp1 = kp0;
  for (auto& k : kp1) k += Vec3(u(rng), u(rng), u(rng));
  const auto y = interpolate_targets(b, kp1);
  for (std::size_t p = 0; p < x.size(); ++p) {
    Vec3 e = Vec3::Zero();
    for (int a = 0; a < 3; ++a) e += b.weights[p](a) * kp1[b.indices[p][a]];
    EXPECT_LE((y[p] - e).norm(), 1e-12);
  }
  const Vec3 shift(0.1, -0.2, 0.05);
  std::vector<Vec3> kp2 = kp1;
  for (auto& k : kp2) k += shift;
  const auto z = interpolate_targets(b, kp2);
  for (std::size_t p = 0; p < x.size(); ++p) EXPECT_LE((z[p] - y[p] - shift).norm(), 1e-12);
}

TEST(TrackIo, RoundTrip) {
  const Trajectory traj = scripted(3, [](int t, const Vec3& x) -> Vec3 { return x + Vec3(0, 0.01 * t, 0); });
  TrackSet ts = synth_tracks(traj, test_camera(), std::vector<int>{0, 8, 18, 26}, {0.3, 0.02, 1});
  const std::string dir = testing::scratch_dir("tracks");
  save_tracks(ts, dir + "/t.json");
  const TrackSet back = load_tracks(dir + "/t.json");
  EXPECT_EQ(back.camera, ts.camera);
  EXPECT_EQ(back.keypoints, ts.keypoints);
  EXPECT_EQ(back.pixels, ts.pixels);
  EXPECT_EQ(back.visible, ts.visible);
  EXPECT_EQ(back.depths0, ts.depths0);

  Json j = tracks_to_json(ts);
  j["version"] = "forcelens.tracks/2";
  EXPECT_THROW(tracks_from_json(j), VersionError);
}

TEST(TargetIo, RoundTrip) {
  const TargetSequence t{{Vec3(0.1, 0.2, 1.0 / 3.0)}, {Vec3(-1e-17, 5.0, 0.0)}};
  const std::string dir = testing::scratch_dir("targets");
  save_targets(t, dir + "/t.jsonl");
  EXPECT_EQ(load_targets(dir + "/t.jsonl"), t);
}

}  // namespace
}  // namespace forcelens
