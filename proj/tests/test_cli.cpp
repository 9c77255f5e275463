#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "support.hpp"
#include "vtwin/cli.hpp"

using namespace vtwin;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "vtwin");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(int(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("vtwin_cli_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& rel) const { return (path_ / rel).string(); }
  std::string str() const { return path_.string(); }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> dir_contents(const std::string& dir) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::directory_iterator(dir)) m[e.path().filename().string()] = slurp(e.path().string());
  return m;
}

/// Writes `n` small phantom donors and returns their directory.
std::string make_donors(const TempDir& tmp, std::size_t n = 3) {
  const auto dir = tmp / "donors";
  const auto r = call({"phantom", "--count", std::to_string(n), "--out", dir, "--n-points", "60", "--k", "12"});
  EXPECT_EQ(r.code, 0) << r.err;
  return dir;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"synth", "--no-such-flag"}).code, 2);
  EXPECT_EQ(call({"frobnicate"}).code, 2);
  TempDir tmp("usage");
  EXPECT_EQ(call({"synth", "--count", "3", "--out", tmp / "x"}).code, 2);
  std::ofstream(tmp / "bad.toml") << "seed = 1\nbogus_key = 3\n";
  const auto r = call({"--config", tmp / "bad.toml", "validate", tmp.str()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bogus_key"), std::string::npos) << r.err;
  EXPECT_EQ(call({"--help"}).code, 0);
}

TEST(Cli, BinaryExitCodes) {
  const std::string exe = VTWIN_CLI_PATH;
  EXPECT_EQ(WEXITSTATUS(std::system((exe + " > /dev/null 2>&1").c_str())), 2);
  EXPECT_EQ(WEXITSTATUS(std::system((exe + " --help > /dev/null 2>&1").c_str())), 0);
  EXPECT_EQ(WEXITSTATUS(std::system((exe + " validate /nonexistent/file.json > /dev/null 2>&1").c_str())), 1);
}

TEST(Cli, SynthEmptyAndDeterministic) {
  TempDir tmp("synth");
  const auto donors = make_donors(tmp);
  auto r = call({"synth", "--donors", donors, "--count", "0", "--out", tmp / "empty"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(tmp / "empty/manifest.jsonl"), "");

  const std::vector<std::string> base{"synth", "--donors", donors, "--count", "12", "--target-n", "40", "--target-k", "10"};
  auto with = [&](std::vector<std::string> extra) {
    auto a = base;
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  EXPECT_EQ(call(with({"--out", tmp / "a", "--seed", "7"})).code, 0);
  EXPECT_EQ(call(with({"--out", tmp / "b", "--seed", "7", "--jobs", "3"})).code, 0);
  EXPECT_EQ(call(with({"--out", tmp / "c", "--seed", "8"})).code, 0);
  const auto a = dir_contents(tmp / "a");
  EXPECT_EQ(a.size(), 13u);
  EXPECT_EQ(a, dir_contents(tmp / "b"));
  EXPECT_NE(a, dir_contents(tmp / "c"));

  std::istringstream manifest(a.at("manifest.jsonl"));
  std::string line;
  std::size_t count = 0;
  while (std::getline(manifest, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("donors").size(), 2u);
    EXPECT_TRUE(j.contains("params"));
    EXPECT_TRUE(a.count(j.at("file").get<std::string>()));
    ++count;
  }
  EXPECT_EQ(count, 12u);
  const auto v = call({"validate", tmp / "a"});
  EXPECT_EQ(v.code, 0) << v.out;
}

TEST(Cli, SynthUnreadableDonorNamesPath) {
  TempDir tmp("donor");
  const auto r = call({"synth", "--donors", tmp / "missing.json", "--count", "2", "--out", tmp / "o"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("missing.json"), std::string::npos) << r.err;
}

TEST(Cli, EmittedConfigReproducesRun) {
  TempDir tmp("emit");
  const auto donors = make_donors(tmp);
  const auto r = call({"--seed", "5", "--emit-config", tmp / "run.toml", "synth", "--donors", donors, "--count", "4",
                       "--target-n", "30", "--target-k", "8", "--out", tmp / "first"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto again = call({"--config", tmp / "run.toml", "synth"});
  ASSERT_EQ(again.code, 0) << again.err << slurp(tmp / "run.toml");
  const auto second = tmp / "second";
  fs::rename(tmp / "first", second);
  ASSERT_EQ(call({"--config", tmp / "run.toml", "synth"}).code, 0);
  EXPECT_EQ(dir_contents(tmp / "first"), dir_contents(second));
}

TEST(Cli, ValidateReportsInvariants) {
  TempDir tmp("validate");
  const auto good = vtwin::testing::uniform_tube(10, 1.0, 0.2, 8);
  io::write_twin(tmp / "good.json", good);
  auto j = io::twin_to_json(good);
  j["radii"][3] = -0.1;
  std::ofstream(tmp / "negative.json") << j.dump();
  const auto text = slurp(tmp / "good.json");
  std::ofstream(tmp / "truncated.json") << text.substr(0, text.size() / 2);

  auto r = call({"validate", tmp / "good.json"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  r = call({"validate", tmp / "negative.json"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("radii.positive"), std::string::npos) << r.out;
  r = call({"validate", tmp / "truncated.json"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("parse"), std::string::npos) << r.out;
}

TEST(Cli, GraphFilesValidate) {
  TempDir tmp("graph");
  const auto donors = make_donors(tmp, 2);
  ASSERT_EQ(call({"graph", "--inputs", donors, "--out", tmp / "bin"}).code, 0);
  ASSERT_EQ(call({"graph", "--inputs", donors, "--out", tmp / "json", "--format", "json"}).code, 0);
  EXPECT_EQ(dir_contents(tmp / "bin").size(), 2u);
  const auto r = call({"validate", tmp / "bin/phantom-" + std::to_string(cli::derive_seed(0, "phantom", 0)) + ".graph.bin",
                       tmp / "json"});
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Cli, HemoHealthyTubeAndZeroFlow) {
  TempDir tmp("hemo");
  const auto t = vtwin::testing::uniform_tube(50, 4.0, 0.15, 8);
  io::write_twin(tmp / "tube.json", t);
  auto r = call({"hemo", "--inputs", tmp / "tube.json", "--out", tmp / "h", "--flow", "2.0", "--inlet-mmhg", "90"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = cli::read_csv(tmp / "h/summary.csv");
  ASSERT_EQ(summary.rows.size(), 1u);
  const double min_ffr = std::stod(summary.rows[0][summary.column("min_ffr", "")]);
  const auto geom = hemo::physical_geometry(t);
  const double drop = hemo::healthy_drop(geom.area, geom.dx, 2.0).total();
  EXPECT_NEAR(min_ffr, 1.0 - drop / (90 * hemo::kDynePerMmHg), 1e-8);
  EXPECT_EQ(summary.rows[0][summary.column("lesion_count", "")], "0");
  const auto profile = cli::read_csv(tmp / "h/tube.csv");
  EXPECT_EQ(profile.rows.size(), 50u);
  for (const auto& row : profile.rows) EXPECT_EQ(row[profile.column("segment", "")], "healthy");

  r = call({"hemo", "--inputs", tmp / "tube.json", "--out", tmp / "z", "--flow", "0"});
  ASSERT_EQ(r.code, 0);
  const auto zero = cli::read_csv(tmp / "z/tube.csv");
  for (const auto& row : zero.rows) EXPECT_EQ(std::stod(row[zero.column("ffr", "")]), 1.0);
}

TEST(Cli, HemoLesionCountAndNonPhysiological) {
  TempDir tmp("hemo2");
  std::vector<bool> mask(120, false);
  for (std::size_t i = 20; i < 30; ++i) mask[i] = true;
  for (std::size_t i = 70; i < 85; ++i) mask[i] = true;
  const auto t = vtwin::testing::tube(120, 5.0, [](double s) {
    return vtwin::testing::cosine_stenosis(s, 0.15, 0.5, 0.21, 0.05) * vtwin::testing::cosine_stenosis(s, 1.0, 0.5, 0.65, 0.07);
  }, 8, mask);
  io::write_twin(tmp / "two.json", t);
  auto r = call({"hemo", "--inputs", tmp / "two.json", "--out", tmp / "h"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto s = cli::read_csv(tmp / "h/summary.csv");
  EXPECT_EQ(s.rows[0][s.column("lesion_count", "")], "2");
  // absurd flow drives pressure below zero: flagged, run continues, exit 1
  io::write_twin(tmp / "tube.json", vtwin::testing::uniform_tube(20, 2.0, 0.15, 8));
  r = call({"hemo", "--inputs", tmp / "two.json", tmp / "tube.json", "--out", tmp / "bad", "--flow", "500"});
  EXPECT_EQ(r.code, 1);
  s = cli::read_csv(tmp / "bad/summary.csv");
  ASSERT_EQ(s.rows.size(), 2u);
  EXPECT_EQ(s.rows[0][s.column("status", "")], "non_physiological");
}

TEST(Cli, PretrainZeroEpochsWritesInitialization) {
  TempDir tmp("pretrain");
  const auto donors = make_donors(tmp, 2);
  const auto r = call({"--seed", "3", "pretrain", "--inputs", donors, "--out", tmp / "ck.json", "--epochs", "0", "--d", "4",
                       "--blocks", "2", "--layers-per-block", "1", "--n-centerline", "30", "--window", "10", "--stride",
                       "5", "--k-ca", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ck = nnet::load_checkpoint(tmp / "ck.json");
  auto cfg = ck.config;
  EXPECT_EQ(cfg.seed, cli::derive_seed(3, "init"));
  EXPECT_EQ(nnet::checkpoint_json(cfg, ck.params), nnet::checkpoint_json(cfg, nnet::init_params(cfg)));

  // resuming with a different width names both shapes
  const auto bad = call({"pretrain", "--inputs", donors, "--init", tmp / "ck.json", "--out", tmp / "ck2.json", "--d",
                         "8", "--blocks", "2", "--layers-per-block", "1", "--n-centerline", "30", "--window", "10",
                         "--stride", "5", "--k-ca", "4"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("5x4"), std::string::npos) << bad.err;
  EXPECT_NE(bad.err.find("5x8"), std::string::npos) << bad.err;
}

TEST(Cli, EvalMatchesMetricsModule) {
  TempDir tmp("eval");
  std::vector<cli::Prediction> p;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 30; ++i) p.push_back({"t" + std::to_string(i), i % 3 == 0, u(rng)});
  cli::write_predictions(tmp / "p.csv", p);
  const auto r = call({"eval", "--predictions", tmp / "p.csv", "--out", tmp / "e"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = cli::read_csv(tmp / "e/metrics.csv");
  const auto e = cli::to_eval_set(p);
  EXPECT_NEAR(std::stod(m.rows[0][m.column("auroc", "")]), metrics::auroc(e), 1e-9);
  EXPECT_NEAR(std::stod(m.rows[0][m.column("auprc", "")]), metrics::auprc(e), 1e-9);
  EXPECT_NEAR(std::stod(m.rows[0][m.column("f1", "")]), metrics::confusion_metrics(e).f1, 1e-9);
  EXPECT_NEAR(std::stod(m.rows[0][m.column("accuracy", "")]), metrics::confusion_metrics(e).accuracy, 1e-9);
  EXPECT_TRUE(fs::exists(tmp / "e/roc.csv"));
  EXPECT_TRUE(fs::exists(tmp / "e/decision_curve.csv"));

  // two folds: mean and std rows
  cli::write_predictions(tmp / "q.csv", std::vector<cli::Prediction>(p.begin(), p.begin() + 15));
  ASSERT_EQ(call({"eval", "--predictions", tmp / "p.csv", tmp / "q.csv", "--out", tmp / "f"}).code, 0);
  const auto f = cli::read_csv(tmp / "f/metrics.csv");
  ASSERT_EQ(f.rows.size(), 4u);
  EXPECT_EQ(f.rows[2][0], "mean");
  EXPECT_EQ(f.rows[3][0], "std");
  const double a0 = std::stod(f.rows[0][3]), a1 = std::stod(f.rows[1][3]);
  EXPECT_NEAR(std::stod(f.rows[2][3]), 0.5 * (a0 + a1), 1e-9);
  EXPECT_NEAR(std::stod(f.rows[3][3]), 0.5 * std::abs(a0 - a1), 1e-9);
}

TEST(Cli, ExportPly) {
  TempDir tmp("ply");
  io::write_twin(tmp / "t.json", vtwin::testing::uniform_tube(6, 1.0, 0.2, 5));
  ASSERT_EQ(call({"export-ply", "--input", tmp / "t.json", "--out", tmp / "t.ply", "--scalar", "ffr"}).code, 0);
  const auto text = slurp(tmp / "t.ply");
  EXPECT_EQ(text.rfind("ply\n", 0), 0u);
  EXPECT_NE(text.find("element vertex 30"), std::string::npos);
  EXPECT_NE(text.find("property double ffr"), std::string::npos);
  EXPECT_EQ(call({"export-ply", "--input", tmp / "t.json", "--out", tmp / "u.ply", "--scalar", "nope"}).code, 2);
}

TEST(Cli, DerivedSeedsAreDistinct) {
  EXPECT_NE(cli::derive_seed(1, "synth", 0), cli::derive_seed(1, "synth", 1));
  EXPECT_NE(cli::derive_seed(1, "synth", 0), cli::derive_seed(1, "labeled", 0));
  EXPECT_NE(cli::derive_seed(1, "synth", 0), cli::derive_seed(2, "synth", 0));
  EXPECT_EQ(cli::derive_seed(1, "synth", 4), cli::derive_seed(1, "synth", 4));
  const auto folds = cli::stratified_folds({1, 1, 1, 0, 0, 0, 0, 0, 0, 1}, 2, 3);
  int pos0 = 0, pos1 = 0;
  for (std::size_t i : {0u, 1u, 2u, 9u}) (folds[i] == 0 ? pos0 : pos1)++;
  EXPECT_EQ(pos0, 2);
  EXPECT_EQ(pos1, 2);
}
