#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "forcelens/errors.h"
#include "forcelens/forcefield.h"
#include "support.h"

namespace forcelens {
namespace {

const Box kDomain{Vec3::Zero(), Vec3::Constant(0.75)};

TriPlaneConfig small_triplane(int frames = 3) {
  TriPlaneConfig c;
  c.resolution = 4;
  c.features = 2;
  c.encoder_hidden = 5;
  c.decoder_hidden = {6, 6};
  c.domain = kDomain;
  c.frames = frames;
  c.seed = 9;
  return c;
}

void randomize(ForceField& f, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (double& p : f.params()) p = n(rng);
}

std::vector<Vec3> random_points(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.7);
  std::vector<Vec3> x;
  for (int i = 0; i < count; ++i) x.emplace_back(u(rng), u(rng), u(rng));
  return x;
}

TEST(TriPlane, FreshFieldIsZero) {
  CausalTriPlane f(small_triplane());
  f.warm_start(0, 1);
  for (const auto& x : random_points(1, 10)) EXPECT_EQ(f.query({x, 0.01, 0, -1}), Vec3::Zero());
}

TEST(TriPlane, DefaultParameterCount) {
  TriPlaneConfig c;
  c.domain = kDomain;
  CausalTriPlane f(c);
  EXPECT_EQ(f.plane_param_count(), 3u * 32 * 32 * 16);
  EXPECT_EQ(f.decoder_param_count(), 16u * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3);
  EXPECT_EQ(f.encoder_param_count(), 8u * 32 + 32 + 32 * 16 + 16);
  f.warm_start(0, 0);
  EXPECT_EQ(f.num_params(), 49152u + 5443u + 816u);
}

TEST(TriPlane, LinearDecoderWithConstantPlaneGivesConstantField) {
  TriPlaneConfig c = small_triplane(1);
  c.features = 3;
  c.decoder_hidden = {};
  CausalTriPlane f(c);
  f.warm_start(0, 1);
  auto p = f.params();
  std::fill(p.begin(), p.end(), 0.0);
  const ParamRange xy = f.plane_range(0);
  const Vec3 feature(0.7, -0.2, 1.3);
  for (std::size_t i = xy.begin; i < xy.end; ++i) p[i] = feature((i - xy.begin) % 3);
  const ParamRange dec = f.decoder_range();
  for (int r = 0; r < 3; ++r) p[dec.begin + r * 3 + r] = 1.0;  // W = I, b = 0
  for (const auto& x : random_points(2, 20)) {
    EXPECT_LE((f.query({x, 0.0, 0, -1}) - feature).norm(), 1e-14);
  }
}

TEST(TriPlane, QueryIsPure) {
  CausalTriPlane f(small_triplane());
  for (int k = 0; k < 3; ++k) f.warm_start(k, 1);
  randomize(f, 3);
  const Vec3 x(0.2, 0.3, 0.4);
  EXPECT_EQ(f.query({x, 0.05, 1, -1}), f.query({x, 0.05, 1, -1}));
}

TEST(TriPlane, WarmStartCopiesAndSeeds) {
  CausalTriPlane a(small_triplane()), b(small_triplane());
  a.warm_start(0, 42);
  b.warm_start(0, 42);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  randomize(a, 4);
  a.warm_start(1, 42);
  const ParamRange s0 = a.snapshot_range(0), s1 = a.snapshot_range(1);
  for (std::size_t i = 0; i < s0.size(); ++i) EXPECT_EQ(a.params()[s1.begin + i], a.params()[s0.begin + i]);
  EXPECT_EQ(a.time_smooth_loss(1), 0.0);
  EXPECT_THROW(a.warm_start(3, 0), UsageError);
}

TEST(TriPlane, MissingSnapshotNamesFrame) {
  CausalTriPlane f(small_triplane());
  f.warm_start(0, 1);
  try {
    f.query({Vec3::Constant(0.3), 0.05, 1, -1});
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 1"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(f.has_frame(1));
  EXPECT_TRUE(f.has_frame(0));
}

TEST(TriPlane, TvBruteForce) {
  TriPlaneConfig c = small_triplane(1);
  c.resolution = 2;
  c.features = 1;
  CausalTriPlane f(c);
  f.warm_start(0, 1);
  auto p = f.params();
  // xy plane [[0, 1], [0, 1]]: rows are v, columns u.
  const ParamRange xy = f.plane_range(0);
  p[xy.begin + 1] = 1.0;
  p[xy.begin + 3] = 1.0;
  // Four adjacent pairs, two of which differ by 1.
  EXPECT_DOUBLE_EQ(f.tv_loss(), 0.5);
}

TEST(TriPlane, TvConstantAndQuadratic) {
  CausalTriPlane f(small_triplane());
  f.warm_start(0, 1);
  auto p = f.params();
  for (int k = 0; k < 3; ++k) {
    const ParamRange r = f.plane_range(k);
    for (std::size_t i = r.begin; i < r.end; ++i) p[i] = 0.3;
  }
  EXPECT_EQ(f.tv_loss(), 0.0);
  randomize(f, 5);
  const double base = f.tv_loss();
  for (int k = 0; k < 3; ++k) {
    const ParamRange r = f.plane_range(k);
    for (std::size_t i = r.begin; i < r.end; ++i) p[i] *= 3.0;
  }
  EXPECT_NEAR(f.tv_loss(), 9.0 * base, 1e-12 * base);
}

TEST(TriPlane, TvGradientMatchesFiniteDifference) {
  CausalTriPlane f(small_triplane());
  f.warm_start(0, 1);
  randomize(f, 6);
  std::vector<double> g(f.num_params(), 0.0);
  f.tv_loss(g, 2.0);
  const ParamRange r = f.plane_range(1);
  for (std::size_t i = r.begin; i < r.end; i += 5) {
    const double keep = f.params()[i];
    f.params()[i] = keep + 1e-6;
    const double up = f.tv_loss();
    f.params()[i] = keep - 1e-6;
    const double dn = f.tv_loss();
    f.params()[i] = keep;
    EXPECT_NEAR(g[i], 2.0 * (up - dn) / 2e-6, 1e-7);
  }
}

TEST(TriPlane, TimeSmoothLoss) {
  CausalTriPlane f(small_triplane());
  f.warm_start(0, 1);
  randomize(f, 7);
  f.warm_start(1, 1);
  EXPECT_EQ(f.time_smooth_loss(0), 0.0);
  const ParamRange s1 = f.snapshot_range(1);
  const double eps = 0.01;
  f.params()[s1.begin + 3] += eps;
  const double loss = f.time_smooth_loss(1);
  EXPECT_NEAR(loss, eps / static_cast<double>(s1.size()), 1e-15);
  // Swapping the snapshots leaves the loss unchanged.
  const ParamRange s0 = f.snapshot_range(0);
  for (std::size_t i = 0; i < s0.size(); ++i) std::swap(f.params()[s0.begin + i], f.params()[s1.begin + i]);
  EXPECT_DOUBLE_EQ(f.time_smooth_loss(1), loss);
}

TEST(TriPlane, BilinearExactAtTexelCentres) {
  CausalTriPlane f(small_triplane(1));
  f.warm_start(0, 1);
  auto p = f.params();
  std::fill(p.begin(), p.end(), 0.0);
  const ParamRange xy = f.plane_range(0);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (std::size_t i = xy.begin; i < xy.end; ++i) p[i] = n(rng);
  const int R = 4, F = 2;
  for (int v = 0; v < R; ++v) {
    for (int u = 0; u < R; ++u) {
      const Vec3 x(0.75 * (u + 0.5) / R, 0.75 * (v + 0.5) / R, 0.3);
      const auto g = f.plane_features(x);
      for (int k = 0; k < F; ++k) {
        EXPECT_NEAR(g(k), p[xy.begin + (v * R + u) * F + k], 1e-12);
      }
    }
  }
}

TEST(TriPlane, SpatialContinuity) {
  CausalTriPlane f(small_triplane());
  f.warm_start(0, 1);
  randomize(f, 9);
  const Vec3 x(0.31, 0.27, 0.44), u = Vec3(1, 2, -1).normalized();
  const Vec3 f0 = f.query({x, 0.0, 0, -1});
  double prev = INFINITY;
  for (double eps = 1e-2; eps > 1e-7; eps /= 2) {
    const double d = (f.query({Vec3(x + eps * u), 0.0, 0, -1}) - f0).norm();
    EXPECT_LE(d, prev * 0.75 + 1e-14);
    prev = d;
  }
}

// Checks backward_batch against central differences of sum(w . out).
void check_field_gradients(ForceField& f, int frame, double t, double tol) {
  const auto x = random_points(10, 6);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  std::vector<Vec3> w(x.size());
  for (auto& v : w) v = Vec3(n(rng), n(rng), n(rng));
  auto loss = [&](const std::vector<Vec3>& pts) {
    std::vector<Vec3> out(pts.size());
    f.query_batch(pts, t, frame, out);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += w[i].dot(out[i]);
    return s;
  };
  std::vector<double> g(f.num_params(), 0.0);
  std::vector<Vec3> gx(x.size());
  f.backward_batch(x, t, frame, w, g, gx);
  const double h = 1e-5;
  int checked = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = f.params()[i];
    f.params()[i] = keep + h;
    const double up = loss(x);
    f.params()[i] = keep - h;
    const double dn = loss(x);
    f.params()[i] = keep;
    const double fd = (up - dn) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
    EXPECT_LE(std::abs(fd - g[i]) / scale, tol) << "param " << i;
    ++checked;
  }
  EXPECT_GT(checked, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      auto xp = x, xm = x;
      xp[i](a) += h;
      xm[i](a) -= h;
      const double fd = (loss(xp) - loss(xm)) / (2 * h);
      EXPECT_NEAR(gx[i](a), fd, 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(TriPlane, ParameterGradientsMatchFiniteDifferences) {
  CausalTriPlane f(small_triplane());
  for (int k = 0; k < 3; ++k) f.warm_start(k, 1);
  randomize(f, 12);
  check_field_gradients(f, 1, 0.05, 1e-4);
}

TEST(KPlanes, ParameterGradientsMatchFiniteDifferences) {
  KPlanesConfig c;
  c.resolution = 4;
  c.time_resolution = 3;
  c.features = 2;
  c.decoder_hidden = {5};
  c.domain = kDomain;
  c.frames = 4;
  KPlanesField f(c);
  randomize(f, 13);
  check_field_gradients(f, 2, 0.08, 1e-4);
}

TEST(KPlanes, FreshFieldIsZeroAndTvApplies) {
  KPlanesConfig c;
  c.resolution = 4;
  c.time_resolution = 4;
  c.features = 2;
  c.domain = kDomain;
  c.frames = 2;
  KPlanesField f(c);
  f.warm_start(0, 0);
  EXPECT_EQ(f.query({Vec3::Constant(0.3), 0.01, 0, -1}), Vec3::Zero());
  EXPECT_TRUE(f.supports_tv());
  EXPECT_GE(f.tv_loss(), 0.0);
}

TEST(PointField, LookupAndIndicatorGradient) {
  PointForceField f(3, 2, 1.0 / 30.0);
  f.at(1, 2) = Vec3(1, 2, 3);
  EXPECT_EQ(f.query({Vec3::Zero(), 0.04, 1, 2}), Vec3(1, 2, 3));
  EXPECT_EQ(f.query({Vec3::Zero(), 0.04, 1, 7}), Vec3::Zero());
  EXPECT_EQ(f.query({Vec3::Zero(), 0.04, 0, 2}), Vec3::Zero());
  std::vector<Vec3> x(3, Vec3::Zero()), go(3, Vec3::Zero()), gx(3);
  go[2] = Vec3(0.5, -1, 2);
  std::vector<double> g(f.num_params(), 0.0);
  f.backward_batch(x, 0.04, 1, go, g, gx);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const bool hit = i >= (1 * 3 + 2) * 3 && i < (1 * 3 + 2) * 3 + 3;
    EXPECT_EQ(g[i], hit ? go[2](static_cast<int>(i % 3)) : 0.0);
  }
  EXPECT_FALSE(f.supports_tv());
  EXPECT_THROW(f.tv_loss(), UsageError);
}

TEST(FieldParams, ScatterContract) {
  CausalTriPlane f(small_triplane());
  f.warm_start(0, 0);
  std::vector<double> accum(f.num_params(), 1.0);
  const std::vector<double> zeros(f.num_params(), 0.0);
  f.scatter(zeros, accum);
  EXPECT_TRUE(std::all_of(accum.begin(), accum.end(), [](double v) { return v == 1.0; }));
  const std::vector<double> wrong(f.num_params() + 1, 0.0);
  EXPECT_THROW(f.scatter(wrong, accum), ShapeError);
}

TEST(FieldKinds, ParseNames) {
  EXPECT_EQ(parse_field_kind("triplane"), FieldKind::kTriPlane);
  EXPECT_EQ(parse_field_kind("kplanes"), FieldKind::kKPlanes);
  EXPECT_EQ(parse_field_kind("point"), FieldKind::kPoint);
  try {
    parse_field_kind("mesh");
    FAIL();
  } catch (const UsageError& e) {
    const std::string w = e.what();
    EXPECT_NE(w.find("triplane"), std::string::npos);
    EXPECT_NE(w.find("kplanes"), std::string::npos);
    EXPECT_NE(w.find("point"), std::string::npos);
  }
}

TEST(Checkpoint, ExactRoundTripForEveryKind) {
  CausalTriPlane tp(small_triplane());
  for (int k = 0; k < 3; ++k) tp.warm_start(k, 1);
  randomize(tp, 14);
  KPlanesConfig kc;
  kc.resolution = 4;
  kc.time_resolution = 3;
  kc.features = 2;
  kc.domain = kDomain;
  kc.frames = 3;
  KPlanesField kp(kc);
  randomize(kp, 15);
  PointForceField pf(4, 3, 0.05);
  randomize(pf, 16);
  const std::string dir = testing::scratch_dir("checkpoint");
  for (const ForceField* f : std::initializer_list<const ForceField*>{&tp, &kp, &pf}) {
    const std::string path = dir + "/" + to_string(f->kind()) + ".json";
    save_field(*f, path);
    const auto back = load_field(path);
    ASSERT_EQ(back->kind(), f->kind());
    ASSERT_EQ(back->num_params(), f->num_params());
    EXPECT_TRUE(std::equal(f->params().begin(), f->params().end(), back->params().begin()));
    EXPECT_EQ(back->to_json(), f->to_json());
  }
  AnalyticField af(ConstantSpec{Vec3::UnitX()}, 0.05);
  EXPECT_THROW(af.to_json(), UsageError);
}

TEST(Analytic, ClosedForms) {
  const double dt = 0.1;
  AnalyticField c(ConstantSpec{Vec3(1, 2, 3)}, dt);
  EXPECT_EQ(c.query({Vec3::Random(), 0.37, 3, 0}), Vec3(1, 2, 3));
  SinusoidSpec s;
  s.amplitude = 2.0;
  s.axis = Vec3::UnitY();
  s.frequency = 0.25;
  s.base = Vec3(1, 0, 0);
  AnalyticField sf(s, dt);
  EXPECT_LE((sf.query({Vec3::Zero(), 1.0, 10, 0}) - Vec3(1, 2, 0)).norm(), 1e-15);
  VortexSpec v{Vec3::Zero(), Vec3::UnitY(), 2.0, 1.0};
  AnalyticField vf(v, dt);
  // Perpendicular radius 0.5 along +x: y x x = -z.
  EXPECT_LE((vf.query({Vec3(0.5, 7.0, 0.0), 0.0, 0, 0}) - Vec3(0, 0, -2.0 * std::exp(-0.5))).norm(),
            1e-15);
  PointImpulseSpec p{{1}, Vec3(0, 0, 4), 1, 3};
  AnalyticField pfield(p, dt);
  EXPECT_EQ(pfield.query({Vec3::Zero(), 0.15, 1, 1}), Vec3(0, 0, 4));
  EXPECT_EQ(pfield.query({Vec3::Zero(), 0.15, 1, 0}), Vec3::Zero());
  EXPECT_EQ(pfield.query({Vec3::Zero(), 0.35, 3, 1}), Vec3::Zero());
  ScaledField scaled(std::make_shared<AnalyticField>(c), -0.5);
  EXPECT_EQ(scaled.query({Vec3::Zero(), 0.0, 0, 0}), Vec3(-0.5, -1, -1.5));
}

}  // namespace
}  // namespace forcelens
