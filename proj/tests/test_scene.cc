#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "forcelens/errors.h"
#include "forcelens/materials.h"
#include "forcelens/scene.h"
#include "forcelens/scene_io.h"
#include "support.h"

namespace forcelens {
namespace {

TEST(MaterialCatalog, RubberEntry) {
  const MaterialParams m = material_lookup("rubber");
  EXPECT_NEAR(m.density, 1.1e3, 1.0);
  EXPECT_GE(m.youngs_modulus, 1e6);
  EXPECT_LT(m.youngs_modulus, 1e8);
  EXPECT_DOUBLE_EQ(m.poisson_ratio, 0.47);
  EXPECT_EQ(m.plasticity.kind, PlasticityKind::kElastic);
}

TEST(MaterialCatalog, EmptyNameIsUnknown) {
  EXPECT_THROW(material_lookup(""), UnknownMaterialError);
}

TEST(MaterialCatalog, UnknownNameListsNeighbours) {
  try {
    material_lookup("rubbr");
    FAIL() << "expected UnknownMaterialError";
  } catch (const UnknownMaterialError& e) {
    EXPECT_NE(std::string(e.what()).find("rubber"), std::string::npos) << e.what();
  }
  EXPECT_EQ(nearest_material_names("rubbr", 1).front(), "rubber");
}

TEST(MaterialCatalog, LookupIsPure) {
  EXPECT_EQ(material_lookup("steel"), material_lookup("steel"));
  const auto before = material_catalog().size();
  (void)material_lookup("glass");
  EXPECT_EQ(material_catalog().size(), before);
}

TEST(MaterialCatalog, EveryEntryValidAndSourced) {
  ASSERT_GE(material_catalog().size(), 17u);
  for (const auto& e : material_catalog()) {
    EXPECT_NO_THROW(validate(e.params)) << e.params.name;
    EXPECT_FALSE(e.source.empty()) << e.params.name;
  }
}

TEST(MaterialValidate, NamesTheInvariant) {
  MaterialParams m = material_lookup("rubber");
  m.poisson_ratio = 0.6;
  try {
    validate(m);
    FAIL();
  } catch (const InvariantError& e) {
    EXPECT_EQ(e.invariant(), "poisson_ratio");
  }
  m = material_lookup("rubber");
  m.density = 0.0;
  EXPECT_THROW(validate(m), InvariantError);
  m = material_lookup("modeling_clay");
  m.plasticity.yield_stress = -1.0;
  EXPECT_THROW(validate(m), InvariantError);
}

TEST(SampleBlock, EightParticleLattice) {
  const MaterialParams m = material_lookup("rubber");
  const auto ps = sample_block(m, 0, Vec3(0.5, 0.5, 0.5), Vec3::Constant(0.1), 0.05);
  ASSERT_EQ(ps.size(), 8u);
  const double spacing = 0.05;
  for (const auto& p : ps) {
    EXPECT_EQ(p.deformation, Mat3::Identity());
    EXPECT_EQ(p.v, Vec3::Zero());
    EXPECT_TRUE(p.covariance.isApprox(Mat3::Identity() * std::pow(spacing / 2, 2), 1e-15));
    EXPECT_NEAR(p.volume0, std::pow(spacing, 3), 1e-18);
  }
  const double expected = m.density * 8 * std::pow(spacing, 3);
  EXPECT_NEAR(total_mass(ps), expected, 1e-12 * expected);
}

TEST(SampleBlock, Errors) {
  const MaterialParams m = material_lookup("rubber");
  EXPECT_THROW(sample_block(m, 0, Vec3::Zero(), Vec3::Constant(0.01), 0.05), UsageError);
  EXPECT_THROW(sample_block(m, 0, Vec3::Zero(), Vec3::Constant(0.1), 0.0), UsageError);
  EXPECT_THROW(sample_block(m, 0, Vec3::Zero(), Vec3(0.1, -0.1, 0.1), 0.05), UsageError);
}

TEST(SceneValidate, StandardBlockIsValid) { EXPECT_NO_THROW(validate(testing::block_scene())); }

TEST(SceneValidate, NamedFailures) {
  auto expect_invariant = [](const Scene& s, const std::string& name) {
    try {
      validate(s);
      ADD_FAILURE() << "expected " << name;
    } catch (const InvariantError& e) {
      EXPECT_EQ(e.invariant(), name);
    }
  };
  Scene s = testing::block_scene();
  s.particles[0].material_id = 5;
  expect_invariant(s, "material_id");
  s = testing::block_scene();
  s.frame_dt = 0.0;
  expect_invariant(s, "frame_dt");
  s = testing::block_scene();
  s.grid.dims = Eigen::Vector3i(3, 16, 16);
  expect_invariant(s, "dims");
  s = testing::block_scene();
  s.particles[0].x = Vec3(0.01, 0.3, 0.3);
  expect_invariant(s, "grid_bounds");
  s = testing::block_scene();
  s.particles[0].v = Vec3(100.0, 0.0, 0.0);
  expect_invariant(s, "cfl");
  s = testing::block_scene();
  s.camera.rotation(0, 1) = 0.1;
  expect_invariant(s, "rotation");
  s = testing::block_scene();
  s.bcs.push_back(FixedRegion{Vec3::Ones(), Vec3::Ones()});
  expect_invariant(s, "fixed_region");
  s = testing::block_scene();
  s.particles[0].constrained = true;
  s.particles[0].v = Vec3(0.1, 0, 0);
  expect_invariant(s, "constrained");
}

TEST(SceneIo, RoundTripIsLossless) {
  Scene s = testing::block_scene("gelatin", 1);
  s.particles.push_back(s.particles[0]);
  s.particles[1].x += Vec3(0.025, 0.0, 0.0);
  s.particles[1].v = Vec3(0.1, -0.2, 1.0 / 3.0);
  s.particles[1].appearance = {0, 1, 2, 250, 255};
  s.particles[0].appearance = {7};
  s.materials.push_back(material_lookup("bread_dough"));
  s.particles[1].material_id = 1;
  s.bcs.push_back(GroundPlane{0.1, GroundMode::kSeparate});
  s.bcs.push_back(FixedRegion{Vec3(0.1, 0.1, 0.1), Vec3(0.2, 0.2, 0.2)});
  s.gravity = Vec3(0, -9.81, 0);
  const std::string dir = testing::scratch_dir("scene_io");
  save_scene(s, dir + "/s.json");
  EXPECT_EQ(load_scene(dir + "/s.json"), s);
}

TEST(SceneIo, BadPoissonRatioNamesInvariant) {
  Json j = scene_to_json(testing::block_scene());
  j["materials"][0]["nu"] = 0.6;
  try {
    scene_from_json(j);
    FAIL();
  } catch (const InvariantError& e) {
    EXPECT_EQ(e.invariant(), "poisson_ratio");
  }
}

TEST(SceneIo, UnknownVersionRejected) {
  Json j = scene_to_json(testing::block_scene());
  j["version"] = "forcelens.scene/99";
  EXPECT_THROW(scene_from_json(j), VersionError);
}

TEST(SceneIo, SyntaxErrorIsParseError) {
  const std::string dir = testing::scratch_dir("scene_parse");
  write_text_file(dir + "/bad.json", "{\n  \"version\": \n");
  EXPECT_THROW(load_scene(dir + "/bad.json"), ParseError);
  EXPECT_THROW(load_scene(dir + "/missing.json"), InputError);
}

TEST(TrajectoryIo, PlainAndGzipRoundTrip) {
  Trajectory t;
  for (int f = 0; f < 3; ++f) {
    TrajectoryFrame fr;
    fr.frame = f;
    fr.positions = {Vec3(0.1 * f, 1.0 / 3.0, -2.5), Vec3(1e-17, 2, 3)};
    fr.velocities = {Vec3(1, 2, 3), Vec3(0.1, 0.2, 0.3 * f)};
    t.push_back(fr);
  }
  const std::string dir = testing::scratch_dir("traj_io");
  save_trajectory(t, dir + "/t.jsonl");
  save_trajectory(t, dir + "/t.jsonl.gz");
  EXPECT_EQ(load_trajectory(dir + "/t.jsonl"), t);
  EXPECT_EQ(load_trajectory(dir + "/t.jsonl.gz"), t);
}

TEST(FieldSpecIo, RoundTripEveryKind) {
  SinusoidSpec sin;
  sin.amplitude = 2.0;
  sin.axis = Vec3::UnitZ();
  sin.frequency = 0.5;
  sin.phase = 0.25;
  sin.base = Vec3(1, 0, 0);
  const std::vector<GroundTruthFieldSpec> specs{
      ConstantSpec{Vec3(1, 2, 3)}, sin, VortexSpec{Vec3(0.3, 0.3, 0.3), Vec3::UnitY(), 1.5, 2.0},
      PointImpulseSpec{{0, 2}, Vec3(0, 1, 0), 1, 4}};
  for (const auto& s : specs) {
    const Json j = field_spec_to_json(s);
    EXPECT_EQ(field_spec_to_json(field_spec_from_json(j)), j);
  }
}

TEST(FieldSpecValidate, WindowsAndStrengths) {
  EXPECT_NO_THROW(validate(GroundTruthFieldSpec{PointImpulseSpec{{0}, Vec3::UnitX(), 0, 3}}, 3, 1));
  EXPECT_THROW(validate(GroundTruthFieldSpec{PointImpulseSpec{{0}, Vec3::UnitX(), 0, 4}}, 3, 1),
               InvariantError);
  EXPECT_THROW(validate(GroundTruthFieldSpec{ConstantSpec{Vec3(NAN, 0, 0)}}, 3, 1), InvariantError);
}

TEST(ConstrainFixed, MarksParticlesInside) {
  Scene s = testing::block_scene();
  for (auto& p : s.particles) p.v = Vec3(0.1, 0, 0);
  s.bcs.push_back(FixedRegion{Vec3::Zero(), Vec3(1.0, 0.28, 1.0)});
  EXPECT_EQ(constrain_fixed_particles(s), 9);
  for (const auto& p : s.particles) {
    EXPECT_EQ(p.constrained, p.x.y() <= 0.28);
    if (p.constrained) {
      EXPECT_EQ(p.v, Vec3::Zero());
    }
  }
  EXPECT_NO_THROW(validate(s));
}

}  // namespace
}  // namespace forcelens
