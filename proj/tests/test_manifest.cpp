#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "flowdeblur/manifest.hpp"

using namespace flowdeblur;

namespace {

RunManifest sample_manifest() {
  RunManifest m;
  m.command = "deblur";
  m.arguments = {"flowdeblur", "deblur", "--in", "in/*.png", "--out", "out"};
  m.input_pattern = "in/*.png";
  m.inputs = {"in/a.png", "in/b.png"};
  m.output_dir = "out";
  m.params = SolverParams::with_lambda(123.456789012345);
  m.params.mu = {0.1, 1.0 / 3.0};
  m.params.threads = 4;
  m.params.filter_finest_only = true;
  m.seed = 17;
  m.duty = 0.8;
  m.duty_source = "estimated";
  m.duty_per_frame = {0.7, 0.8, 0.9};
  m.levels = 3;
  SceneSpec s = SceneSpec::demo();
  s.objects.push_back(SceneObject{Shape::Disk, {9.0, 0.0}, {20.0, 20.0}, {1.0, 2.0}, 7, 0.2});
  s.background.affine = {0.01, 0.0, 0.0, -0.02};
  m.scene = s;
  m.energy_log = {{0, 0, "entry", 1.5, 2.5, 3.5, 7.5}, {0, 1, "alternation", 1.0, 2.0, 3.0, 6.0}};
  m.metrics = {{"mean_psnr", std::numeric_limits<double>::infinity()},
               {"neg", -std::numeric_limits<double>::infinity()},
               {"x", 0.1 + 0.2}};
  m.timings = {{"total", 1.25}};
  m.outputs = {"restored_000.png"};
  return m;
}

}  // namespace

TEST(Manifest, JsonRoundTripIsLossless) {
  const RunManifest m = sample_manifest();
  const Json j = to_json(m);
  const Json again = to_json(run_manifest_from_json(Json::parse(j.dump())));
  EXPECT_EQ(j.dump(), again.dump());
}

TEST(Manifest, FileRoundTripPreservesValues) {
  const RunManifest m = sample_manifest();
  const auto path = (std::filesystem::temp_directory_path() / "flowdeblur_manifest_test.json").string();
  save_manifest(path, m);
  const RunManifest r = load_manifest(path);
  std::filesystem::remove(path);
  EXPECT_EQ(r.params.lambda, m.params.lambda);
  EXPECT_EQ(r.params.mu, m.params.mu);
  EXPECT_EQ(r.params.nu, m.params.nu);
  EXPECT_TRUE(r.params.filter_finest_only);
  EXPECT_EQ(r.seed, 17u);
  EXPECT_EQ(r.duty, 0.8);
  EXPECT_EQ(r.duty_per_frame, m.duty_per_frame);
  EXPECT_EQ(r.metrics.at("mean_psnr"), std::numeric_limits<double>::infinity());
  EXPECT_EQ(r.metrics.at("neg"), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(r.metrics.at("x"), 0.1 + 0.2);
  ASSERT_TRUE(r.scene.has_value());
  ASSERT_EQ(r.scene->objects.size(), 2u);
  EXPECT_EQ(r.scene->objects[1].shape, Shape::Disk);
  EXPECT_EQ(r.scene->background.affine[3], -0.02);
  ASSERT_EQ(r.energy_log.size(), 2u);
  EXPECT_EQ(r.energy_log[1].stage, "alternation");
  EXPECT_EQ(r.energy_log[1].total, 6.0);
}

TEST(Manifest, NanSurvives) {
  const Json j = number_to_json(std::numeric_limits<double>::quiet_NaN());
  EXPECT_TRUE(std::isnan(number_from_json(Json::parse(j.dump()))));
}

TEST(Manifest, OptionalFieldsMayBeAbsent) {
  RunManifest m;
  m.command = "evaluate";
  const RunManifest r = run_manifest_from_json(to_json(m));
  EXPECT_FALSE(r.seed.has_value());
  EXPECT_FALSE(r.duty.has_value());
  EXPECT_FALSE(r.scene.has_value());
}

TEST(Manifest, TypeErrorsThrow) {
  Json j = to_json(sample_manifest());
  j["levels"] = "three";
  EXPECT_THROW(run_manifest_from_json(j), ManifestError);
  EXPECT_THROW(run_manifest_from_json(Json::array()), ManifestError);
}

TEST(SceneSpecJson, SizeAsNumberOrPair) {
  const Json j = Json::parse(R"({"width": 32, "height": 24, "tau": 0.5,
    "objects": [{"shape": "disk", "size": 6, "position": [10, 10], "velocity": [1, 0]},
                {"shape": "rect", "size": [4, 8], "position": [20, 12], "velocity": [0, 1]}]})");
  const SceneSpec s = scene_spec_from_json(j);
  EXPECT_EQ(s.width, 32);
  EXPECT_EQ(s.tau, 0.5);
  EXPECT_EQ(s.objects[0].shape, Shape::Disk);
  EXPECT_EQ(s.objects[0].size.x, 6.0);
  EXPECT_EQ(s.objects[1].size.y, 8.0);
  EXPECT_EQ(s.frames, SceneSpec{}.frames);
}

TEST(SceneSpecJson, BadShapeThrows) {
  EXPECT_THROW(scene_spec_from_json(Json::parse(R"({"objects": [{"shape": "star"}]})")), ManifestError);
}
