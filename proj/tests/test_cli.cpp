#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include <Eigen/Geometry>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "handkin/dataset_io.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/renderer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run(const std::string& args) {
  const std::string cmd = std::string(HANDKIN_CLI) + " " + args + " 2>/dev/null";
  CliResult r;
  std::FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "handkin_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run("gen --n 12 --seed 5 --out " + (root_ / "ds").string()).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static std::string path(const std::string& rel) { return (root_ / rel).string(); }

  static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, GenSingleFrameAndSameSeedSameChecksum) {
  ASSERT_EQ(run("gen --n 1 --out " + path("one")).code, 0);
  EXPECT_EQ(std::distance(fs::directory_iterator(path("one/frames")), fs::directory_iterator{}), 1);
  const CliResult a = run("gen --n 3 --seed 9 --out " + path("g1"));
  const CliResult b = run("gen --n 3 --seed 9 --out " + path("g2"));
  EXPECT_EQ(json::parse(a.out)["checksum"], json::parse(b.out)["checksum"]);
  EXPECT_EQ(handkin::read_file(path("g1/annotations.jsonl")), handkin::read_file(path("g2/annotations.jsonl")));
}

TEST_F(Cli, GenInvalidConfigLeavesNoManifest) {
  handkin::write_file(path("bad_gen.json"), R"({"train_fraction": 1.5})");
  const CliResult r = run("gen --n 2 --config " + path("bad_gen.json") + " --out " + path("bad_out"));
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(path("bad_out/manifest.json")));
  EXPECT_EQ(run("gen --n 0 --out " + path("zero")).code, 2);
}

TEST_F(Cli, FkOfReferenceHandIsStraight) {
  const handkin::HandShapeProfile ref = handkin::HandShapeProfile::reference();
  handkin::HandParameters p;
  p.bone_lengths = ref.bone_mean_mm;
  for (int i = 0; i < 4; ++i) p.finger_vectors[static_cast<std::size_t>(i)] = {ref.vector_mean_mm[i].x(), ref.vector_mean_mm[i].y(), ref.vector_mean_mm[i].z()};
  p.wrist_vector = {ref.vector_mean_mm[4].x(), ref.vector_mean_mm[4].y(), ref.vector_mean_mm[4].z()};
  const auto flat = p.flatten();
  handkin::write_file(path("ref.json"), json(std::vector<double>(flat.begin(), flat.end())).dump());
  const CliResult r = run("fk " + path("ref.json") + " --out " + path("runs"));
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  auto at = [&](const char* label) {
    const auto v = j["joints"][label].get<std::vector<double>>();
    return handkin::Vec3(v[0], v[1], v[2]);
  };
  // Zero angles: MCP, PIP, DIP and TIP lie on one line.
  const handkin::Vec3 mcp = at("I_MCP"), pip = at("I_PIP"), tip = at("I_TIP");
  EXPECT_NEAR((tip - mcp).norm(), ref.bone_mean_mm[3] + ref.bone_mean_mm[4] + ref.bone_mean_mm[5], 1e-9);
  EXPECT_NEAR((pip - mcp).normalized().cross((tip - mcp).normalized()).norm(), 0.0, 1e-12);
  EXPECT_EQ(j["joints_mm"].size(), 63u);
}

TEST_F(Cli, FkIkRoundTrip) {
  const auto ann = json::parse(handkin::read_file(path("ds/annotations.jsonl")).substr(0, handkin::read_file(path("ds/annotations.jsonl")).find('\n')));
  handkin::write_file(path("lam.json"), json{{"lambda", ann["lambda"]}}.dump());
  const CliResult fk = run("fk " + path("lam.json") + " --out " + path("runs"));
  ASSERT_EQ(fk.code, 0);
  handkin::write_file(path("joints.json"), fk.out);
  const CliResult ik = run("ik --joints " + path("joints.json") + " --shape " + path("lam.json") + " --out " + path("runs"));
  ASSERT_EQ(ik.code, 0);
  const json r = json::parse(ik.out);
  EXPECT_LT(r["residual_mm"].get<double>(), 1e-6);
  handkin::write_file(path("lam2.json"), json{{"lambda", r["lambda"]}}.dump());
  const CliResult fk2 = run("fk " + path("lam2.json") + " --out " + path("runs"));
  const auto a = json::parse(fk.out)["joints_mm"].get<std::vector<double>>();
  const auto b = json::parse(fk2.out)["joints_mm"].get<std::vector<double>>();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST_F(Cli, MalformedInputIsUsageError) {
  handkin::write_file(path("broken.json"), "[1, 2");
  EXPECT_EQ(run("fk " + path("broken.json")).code, 2);
  handkin::write_file(path("short.json"), "[1, 2, 3]");
  EXPECT_EQ(run("fk " + path("short.json")).code, 2);
  EXPECT_EQ(run("fk " + path("absent.json")).code, 2);
  EXPECT_EQ(run("nosuchcommand").code, 2);
}

TEST_F(Cli, GradcheckPassesAndIsDeterministic) {
  const CliResult a = run("gradcheck --trials 20 --out " + path("runs"));
  EXPECT_EQ(a.code, 0);
  EXPECT_LT(json::parse(a.out)["max_relative_error"].get<double>(), 1e-5);
  EXPECT_EQ(run("gradcheck --trials 20 --out " + path("runs")).out, a.out);
  EXPECT_EQ(run("gradcheck --trials 0").code, 2);
}

TEST_F(Cli, TrainEvalDeterministicAndFinite) {
  handkin::write_file(path("tiny.json"),
                      R"({"train": {"epochs": 2, "batch_size": 4, "learning_rate": 0.001},
                          "network": {"input_size": 16, "conv": [{"features": 2, "kernel": 5, "pool": 4}], "fc": [8]}})");
  const std::string args = "train --dataset " + path("ds") + " --config " + path("tiny.json");
  ASSERT_EQ(run(args + " --out " + path("t1")).code, 0);
  ASSERT_EQ(run(args + " --out " + path("t2")).code, 0);
  EXPECT_EQ(handkin::read_file(path("t1/posenet.hkck")), handkin::read_file(path("t2/posenet.hkck")));
  EXPECT_EQ(handkin::read_file(path("t1/history.csv")), handkin::read_file(path("t2/history.csv")));
  const std::string ev = "eval --checkpoint " + path("t1/posenet.hkck") + " --dataset " + path("ds") + " --split train --out ";
  const CliResult e1 = run(ev + path("e1")), e2 = run(ev + path("e2"));
  ASSERT_EQ(e1.code, 0);
  EXPECT_EQ(e1.out, e2.out);
  const json m = json::parse(e1.out);
  EXPECT_TRUE(std::isfinite(m["e_joint_mm"].get<double>()));
  EXPECT_EQ(m["samples"], handkin::load_dataset(path("ds")).split("train").size());
  EXPECT_NE(run("eval --checkpoint " + path("t1/posenet.hkck") + " --dataset " + path("missing") + " --out " + path("e3")).code, 0);
  EXPECT_EQ(run(args + " --mode curled --out " + path("t4")).code, 2);
}

TEST_F(Cli, PreprocessNormalizeRoundTripAndManifests) {
  ASSERT_EQ(run("preprocess --dataset " + path("ds") + " --split test --images --out " + path("pp")).code, 0);
  const std::string first = handkin::read_file(path("pp/samples.jsonl"));
  const json s = json::parse(first.substr(0, first.find('\n')));
  EXPECT_TRUE(fs::exists(path("pp/images/" + s["id"].get<std::string>() + ".pgm")));
  handkin::write_file(path("pj.json"), json{{"joints_mm", s["joints_mm"]}}.dump());
  handkin::write_file(path("st.json"), s.dump());
  const CliResult n = run("normalize --joints " + path("pj.json") + " --state " + path("st.json") + " --out " + path("pp"));
  ASSERT_EQ(n.code, 0);
  handkin::write_file(path("nj.json"), n.out);
  const CliResult back = run("normalize --inverse --joints " + path("nj.json") + " --state " + path("st.json") + " --out " + path("pp"));
  const auto a = s["joints_mm"].get<std::vector<double>>();
  const auto b = json::parse(back.out)["joints_mm"].get<std::vector<double>>();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);

  // One appended manifest line per run.
  const std::string log = handkin::read_file(path("pp/run_manifest.jsonl"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  const json m = json::parse(log.substr(0, log.find('\n')));
  for (const char* key : {"subcommand", "config", "seed", "input_hash", "outputs", "duration_s"}) {
    EXPECT_TRUE(m.contains(key)) << key;
  }
  EXPECT_EQ(m["subcommand"], "preprocess");

  ASSERT_EQ(run("augment-preview --dataset " + path("ds") + " --index 1 --count 3 --out " + path("av")).code, 0);
  EXPECT_EQ(json::parse(handkin::read_file(path("av/draws.json"))).size(), 3u);
}
