#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "flowdeblur/cli.hpp"

using namespace flowdeblur;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "flowdeblur");
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("flowdeblur_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  [[nodiscard]] std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // Small synthetic sequence in <dir>/scene.
  void synthesize_small() {
    std::ofstream(path("spec.json")) << R"({"width": 20, "height": 20, "frames": 3, "tau": 0.6,
      "background": {"translation": [1, 0]},
      "objects": [{"shape": "rect", "size": [6, 6], "position": [11, 10], "velocity": [-1, 0]}]})";
    const CliResult r = cli({"synthesize", "--spec", path("spec.json"), "--out", path("scene")});
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }

  static std::vector<std::string> fast_flags() {
    return {"--levels", "2", "--outer-iters", "1", "--pd-iters", "3", "--flow-pd-iters", "3", "--warps", "1",
            "--cg-iters", "5"};
  }

  CliResult deblur(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> a{"deblur", "--in", path("scene/blurry_*.png"), "--out", path(out)};
    for (const auto& f : fast_flags()) a.push_back(f);
    a.insert(a.end(), extra.begin(), extra.end());
    return cli(a);
  }

  fs::path dir_;
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Cli, UsageAndUnknownCommand) {
  EXPECT_EQ(cli({}).code, kExitInput);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitInput);
  EXPECT_EQ(cli({"deblur", "--help"}).code, kExitOk);
}

TEST_F(CliTest, MissingInputIsExitTwo) {
  const CliResult r = cli({"deblur", "--in", path("nothing_*.png"), "--out", path("o")});
  EXPECT_EQ(r.code, kExitInput);
  EXPECT_NE(r.err.find("no input frames"), std::string::npos);
  EXPECT_EQ(cli({"deblur", "--out", path("o")}).code, kExitInput);
}

TEST_F(CliTest, SingleFrameIsExitTwo) {
  synthesize_small();
  const CliResult r = cli({"deblur", "--in", path("scene/blurry_000.png"), "--out", path("o")});
  EXPECT_EQ(r.code, kExitInput);
  EXPECT_NE(r.err.find("need"), std::string::npos);
}

TEST_F(CliTest, CorruptInputIsExitTwo) {
  std::ofstream(path("a.png")) << "garbage";
  std::ofstream(path("b.png")) << "garbage";
  EXPECT_EQ(cli({"deblur", "--in", path("*.png"), "--out", path("o")}).code, kExitInput);
}

TEST_F(CliTest, BadOptionValuesAreExitTwo) {
  synthesize_small();
  EXPECT_EQ(deblur("o", {"--duty", "1.5"}).code, kExitInput);
  EXPECT_EQ(deblur("o", {"--mu", "1,2,3"}).code, kExitInput);
  EXPECT_EQ(deblur("o", {"--scale", "2"}).code, kExitInput);
}

TEST_F(CliTest, SynthesizeRecordsDutyCycle) {
  synthesize_small();
  for (const char* f : {"sharp_000.png", "blurry_002.png", "gt_fwd_000.flo", "gt_bwd_002.flo", "scene.json"})
    EXPECT_TRUE(fs::exists(path(std::string("scene/") + f))) << f;
  const RunManifest m = load_manifest(path("scene/manifest.json"));
  EXPECT_EQ(m.command, "synthesize");
  EXPECT_EQ(m.duty, 0.6);
  EXPECT_EQ(m.duty_source, "scene");
  ASSERT_TRUE(m.scene.has_value());
  EXPECT_EQ(m.scene->width, 20);
}

TEST_F(CliTest, DeblurWritesOutputsAndManifest) {
  synthesize_small();
  const CliResult r = deblur("o", {"--duty", "0.6", "--viz-flow", "--log", path("log.jsonl")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const char* f : {"restored_000.png", "restored_002.png", "flow_fwd_000.flo", "flow_fwd_001.flo",
                        "flow_bwd_001.flo", "flow_bwd_002.flo", "flow_fwd_000.png", "manifest.json"})
    EXPECT_TRUE(fs::exists(path(std::string("o/") + f))) << f;
  EXPECT_FALSE(fs::exists(path("o/flow_fwd_002.flo")));
  EXPECT_FALSE(fs::exists(path("o/flow_bwd_000.flo")));
  const RunManifest m = load_manifest(path("o/manifest.json"));
  EXPECT_EQ(m.duty, 0.6);
  EXPECT_EQ(m.duty_source, "user");
  EXPECT_EQ(m.params.pyr_levels, 2);
  EXPECT_EQ(m.params.mu, std::vector<double>(2, 250.0));
  EXPECT_EQ(m.inputs.size(), 3u);
  EXPECT_EQ(m.metrics.at("energy_violations"), 0.0);
  EXPECT_FALSE(slurp(path("log.jsonl")).empty());
}

TEST_F(CliTest, LambdaCouplesDefaults) {
  synthesize_small();
  ASSERT_EQ(deblur("o", {"--lambda", "100", "--no-temporal", "--no-filter"}).code, kExitOk);
  const RunManifest m = load_manifest(path("o/manifest.json"));
  EXPECT_EQ(m.params.lambda, 100.0);
  EXPECT_EQ(m.params.nu, 8.0);
  EXPECT_EQ(m.params.mu, std::vector<double>(2, 100.0));
  EXPECT_FALSE(m.params.temporal_enabled);
  EXPECT_EQ(m.duty_source, "estimated");
}

TEST_F(CliTest, ThreadsFromEnvironment) {
  synthesize_small();
  ::setenv("FLOWDEBLUR_THREADS", "3", 1);
  const CliResult r = deblur("o", {"--duty", "0.6"});
  ::unsetenv("FLOWDEBLUR_THREADS");
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(load_manifest(path("o/manifest.json")).params.threads, 3);
  ASSERT_EQ(deblur("p", {"--duty", "0.6", "--threads", "2"}).code, kExitOk);
  EXPECT_EQ(load_manifest(path("p/manifest.json")).params.threads, 2);
}

TEST_F(CliTest, RepeatedRunsAreByteIdentical) {
  synthesize_small();
  ASSERT_EQ(deblur("a", {"--duty", "0.6"}).code, kExitOk);
  ASSERT_EQ(deblur("b", {"--duty", "0.6"}).code, kExitOk);
  for (const char* f : {"restored_000.png", "restored_001.png", "flow_fwd_000.flo", "flow_bwd_002.flo"})
    EXPECT_EQ(slurp(path(std::string("a/") + f)), slurp(path(std::string("b/") + f))) << f;
}

TEST_F(CliTest, EvaluateIdenticalFramesAndUnitShift) {
  synthesize_small();
  const CliResult r = cli({"evaluate", "--in", path("scene/sharp_*.png"), "--ref", path("scene/sharp_*.png"),
                           "--out", path("ev")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("mean_psnr inf"), std::string::npos) << r.out;
  EXPECT_EQ(load_manifest(path("ev/manifest.json")).metrics.at("mean_psnr"), std::numeric_limits<double>::infinity());

  fs::create_directories(path("f"));
  write_flo(path("f/a.flo"), FlowField(6, 6, 1.0, 0.0));
  write_flo(path("f/g.flo"), FlowField(6, 6));
  const CliResult e = cli({"evaluate", "--flow", path("f/a.flo"), "--gt-flow", path("f/g.flo")});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_NE(e.out.find("mean_epe 1.000000"), std::string::npos) << e.out;
}

TEST_F(CliTest, EvaluateMismatchIsExitTwo) {
  synthesize_small();
  EXPECT_EQ(cli({"evaluate", "--in", path("scene/sharp_00[01].png"), "--ref", path("scene/sharp_*.png")}).code,
            kExitInput);
  EXPECT_EQ(cli({"evaluate", "--in", path("scene/sharp_*.png")}).code, kExitInput);
  EXPECT_EQ(cli({"evaluate"}).code, kExitInput);
}

TEST_F(CliTest, SynthesizeRejectsMalformedSpec) {
  std::ofstream(path("bad.json")) << "{not json";
  EXPECT_EQ(cli({"synthesize", "--spec", path("bad.json"), "--out", path("s")}).code, kExitInput);
  std::ofstream(path("bad2.json")) << R"({"frames": 1})";
  EXPECT_EQ(cli({"synthesize", "--spec", path("bad2.json"), "--out", path("s")}).code, kExitInput);
}
