#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "resid/io.hpp"
#include "resid_cli.hpp"

using namespace resid;
namespace fs = std::filesystem;

namespace {

const std::string kDemos = RESID_DEMOS_DIR;

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("resid_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string demo(const std::string& name) const { return kDemos + "/" + name; }

  std::string write(const std::string& name, const std::string& text) const {
    write_text_file(path(name), text);
    return path(name);
  }

  Json load(const std::string& name) const { return Json::parse(read_text_file(path(name))); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, FactorizeIdentity) {
  const Outcome r = run({"factorize", "--target", demo("id4.json"), "--depth", "8", "--quiet"});
  EXPECT_EQ(r.code, 0);
  const Json doc = Json::parse(r.out);
  EXPECT_EQ(doc["maxnorm_achieved"].get<double>(), 0.0);
  EXPECT_TRUE(doc["certified"].get<bool>());
}

TEST_F(Cli, FactorizeNegativeDeterminantNamesFlag) {
  const Outcome r = run({"factorize", "--target", demo("negdet.json"), "--depth", "16"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--augment-neg-det"), std::string::npos);

  const Outcome fixed = run({"factorize", "--target", demo("negdet.json"), "--depth", "16",
                         "--augment-neg-det", "--out", path("aug.json")});
  EXPECT_EQ(fixed.code, 0);
  const Outcome verified = run({"verify", "--report", path("aug.json"), "--target", demo("negdet.json"),
                            "--out", path("v.json")});
  EXPECT_EQ(verified.code, 0);
}

TEST_F(Cli, FactorizeDepthTooSmall) {
  const Outcome r = run({"factorize", "--target", demo("r6.json"), "--depth", "4"});
  EXPECT_EQ(r.code, 3);
}

TEST_F(Cli, FactorizeEndToEndVerifies) {
  const Outcome r = run({"factorize", "--target", demo("r6.json"), "--depth", "64", "--out", path("rep.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json rep = load("rep.json");
  std::vector<Mat> layers;
  for (const Json& l : rep["layers"]) layers.push_back(matrix_from_json(l));
  const Mat target = read_matrix(demo("r6.json"));
  const double err =
      oracle::frobenius(oracle::residual_product(layers) - target) / oracle::frobenius(target);
  EXPECT_LE(err, 1e-8);
  EXPECT_EQ(rep["manifest"]["command"], "factorize");

  const Outcome v = run({"verify", "--report", path("rep.json"), "--target", demo("r6.json"), "--quiet"});
  EXPECT_EQ(v.code, 0);
  EXPECT_LE(Json::parse(v.out)["reconstruction_rel_error"].get<double>(), 1e-8);
}

TEST_F(Cli, FactorizeAcceptsCsvTarget) {
  const std::string csv = write("r.csv", "2,0\n0,0.5\n");
  const Outcome r = run({"factorize", "--target", csv, "--depth", "8", "--psd", "--quiet"});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, FactorizeRescaleRecordsScale) {
  const std::string csv = write("r.csv", "8,0\n0,2\n");
  const Outcome r = run({"factorize", "--target", csv, "--depth", "16", "--rescale", "--out", path("s.json")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_DOUBLE_EQ(load("s.json")["scale"].get<double>(), 0.25);
  EXPECT_EQ(run({"verify", "--report", path("s.json"), "--target", csv, "--quiet"}).code, 0);
}

TEST_F(Cli, LandscapeHarness) {
  const Outcome r = run({"landscape", "check-bound", "--target", demo("scalar_target.json"), "--tau", "0.5",
                     "--samples", "1000", "--seed", "3", "--csv", path("b.csv"), "--out", path("b.json")});
  EXPECT_EQ(r.code, 0) << r.err;
  const Json doc = load("b.json");
  EXPECT_GE(doc["min_slack"].get<double>(), 0.0);
  EXPECT_EQ(doc["samples"].size(), 1000u);
  EXPECT_EQ(doc["violations"], 0);
}

TEST_F(Cli, LandscapeZeroSamples) {
  const Outcome r = run({"landscape", "check-bound", "--target", demo("scalar_target.json"), "--tau", "0.5",
                     "--samples", "0", "--csv", path("e.csv"), "--quiet", "--out", path("e.json")});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(read_text_file(path("e.csv")), "sample,lhs,rhs,excess,relative_slack,holds\n");
}

TEST_F(Cli, LandscapeTauOutOfRange) {
  const Outcome r = run({"landscape", "check-bound", "--target", demo("scalar_target.json"), "--tau", "1.2"});
  EXPECT_EQ(r.code, 64);
}

TEST_F(Cli, LandscapeIsReproducible) {
  const std::vector<std::string> args = {"landscape", "check-bound", "--target", demo("scalar_target.json"),
                                         "--tau", "0.9", "--samples", "50", "--depth", "3", "--seed", "8",
                                         "--quiet"};
  auto a = args, b = args;
  a.insert(a.end(), {"--csv", path("a.csv"), "--out", path("a.json")});
  b.insert(b.end(), {"--csv", path("b.csv"), "--out", path("b.json")});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(read_text_file(path("a.csv")), read_text_file(path("b.csv")));
  EXPECT_EQ(load("a.json")["samples"], load("b.json")["samples"]);
}

TEST_F(Cli, TrainResidualDemo) {
  const Outcome r = run({"train", "--config", demo("train_residual.json"), "--trace", path("t.csv"),
                     "--out", path("f.json")});
  EXPECT_EQ(r.code, 0) << r.err;
  const Json doc = load("f.json");
  EXPECT_EQ(doc["termination"], "stop_excess");
  EXPECT_LE(doc["final_excess"].get<double>(), 1e-10);
  const std::string trace = read_text_file(path("t.csv"));
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "step,excess,grad_norm,maxnorm,bound_slack");
}

TEST_F(Cli, TrainStandardDemoIsStuck) {
  const Outcome r = run({"train", "--config", demo("train_standard.json"), "--out", path("f.json")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load("f.json")["termination"], "stuck_critical_point");
}

TEST_F(Cli, TrainMalformedConfig) {
  EXPECT_EQ(run({"train", "--config", write("bad.json", "{\"depth\": 3")}).code, 64);
  EXPECT_EQ(run({"train", "--config", write("bad2.json", "{\"depth\": 3}")}).code, 64);
  EXPECT_EQ(run({"train", "--config",
                 write("bad3.json", "{\"target\": {\"random\": {\"dim\": 2, \"gamma\": 0.1}}, "
                                    "\"depth\": 3, \"init\": \"sideways\"}")})
                .code,
            64);
}

TEST_F(Cli, TrainDiverges) {
  const std::string cfg = write(
      "div.json",
      "{\"target\": {\"R\": {\"rows\": 1, \"cols\": 1, \"data\": [3.0]}}, \"depth\": 3, "
      "\"step_size\": 10.0, \"max_steps\": 100}");
  EXPECT_EQ(run({"train", "--config", cfg, "--quiet", "--out", path("f.json")}).code, 5);
}

TEST_F(Cli, MemorizeTwoPoints) {
  const Outcome r = run({"memorize", "--data", demo("two_points.csv"), "--rho", "auto", "--seed", "1",
                     "--out", path("net.json"), "--report", path("fit.json")});
  EXPECT_EQ(r.code, 0) << r.err;
  const Json fit = load("fit.json");
  EXPECT_EQ(fit["fraction"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(fit["manifest"]["parameters"]["rho"].get<double>(), 2.0);
  EXPECT_EQ(fit["manifest"]["parameters"]["rho_source"], "auto");
  EXPECT_EQ(run({"verify", "--net", path("net.json"), "--data", demo("two_points.csv"), "--quiet",
                 "--out", path("v.json")})
                .code,
            0);
}

TEST_F(Cli, MemorizeDuplicates) {
  const Outcome r = run({"memorize", "--data", demo("duplicates.csv"), "--out", path("n.json")});
  EXPECT_EQ(r.code, 6);
  EXPECT_NE(r.err.find("DuplicatePoints"), std::string::npos);
}

TEST_F(Cli, MemorizeMalformedCsv) {
  EXPECT_EQ(run({"memorize", "--data", write("bad.csv", "1,0,1\n0,x,2\n")}).code, 65);
  EXPECT_EQ(run({"memorize", "--data", write("ragged.csv", "1,0,1\n0,2\n")}).code, 65);
  EXPECT_EQ(run({"memorize", "--data", write("label.csv", "1,0,1.5\n0,1,2\n")}).code, 65);
}

TEST_F(Cli, MemorizeIsReproducible) {
  ASSERT_EQ(run({"memorize", "--data", demo("two_points.csv"), "--seed", "5", "--quiet", "--out", path("a.json")}).code, 0);
  ASSERT_EQ(run({"memorize", "--data", demo("two_points.csv"), "--seed", "5", "--quiet", "--out", path("b.json")}).code, 0);
  Json a = load("a.json"), b = load("b.json");
  a.erase("manifest");
  b.erase("manifest");
  EXPECT_EQ(a.dump(), b.dump());
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 64);
  EXPECT_EQ(run({"factorize", "--depth", "8"}).code, 64);
  EXPECT_EQ(run({"frobnicate"}).code, 64);
  EXPECT_EQ(run({"verify", "--report", "x.json"}).code, 64);
  EXPECT_EQ(run({"factorize", "--target", path("missing.json"), "--depth", "8"}).code, 64);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Io, MatrixRoundTrips) {
  Mat m(2, 3);
  m << 1.0, -2.5, 1e-300, 0.1, 3.0, -0.0;
  EXPECT_EQ(matrix_from_json(matrix_to_json(m)), m);
  EXPECT_EQ(parse_matrix_csv(matrix_to_csv(m)), m);
  EXPECT_EQ(parse_matrix(matrix_to_json(m).dump()), m);
  EXPECT_THROW(matrix_from_json(Json{{"rows", 2}, {"cols", 2}, {"data", {1, 2, 3}}}), Error);
}

TEST(Io, TrainConfigRoundTrips) {
  const Json j = Json::parse(R"({"target": {"random": {"dim": 3, "gamma": 0.4}}, "depth": 5,
      "parameterization": "standard", "init": {"kind": "gaussian", "sigma": 0.1},
      "step_size": 0.01, "max_steps": 10, "stop_excess": 1e-9, "tau_monitor": 0.5, "seed": 4,
      "backtracking": true, "project_tau": 0.7})");
  const TrainConfig c = train_config_from_json(j);
  EXPECT_EQ(c.depth, 5);
  EXPECT_EQ(c.parameterization, Parameterization::Standard);
  EXPECT_EQ(c.init.kind, InitKind::GaussianScale);
  EXPECT_NEAR(c.target.gamma(), 0.4, 1e-12);
  const TrainConfig back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(back.target.R(), c.target.R());
  EXPECT_EQ(back.project_tau, c.project_tau);
  EXPECT_EQ(back.seed, 4u);
}

TEST(Io, NetRoundTrips) {
  const Dataset data = parse_dataset_csv("1,0,1\n0,1,2\n");
  const MemorizerNet net = build_memorizer(data, 3);
  const MemorizerNet back = net_from_json(Json::parse(net_to_json(net).dump()));
  EXPECT_EQ(back.A0, net.A0);
  EXPECT_EQ(back.final_block.V, net.final_block.V);
  EXPECT_EQ(verify_fit(back, data).fraction, 1.0);
}
