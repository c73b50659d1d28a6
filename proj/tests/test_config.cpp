#include "detrend/cli.hpp"
#include "detrend/config.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace detrend;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("detrend_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.rfind("#", 0) == 0) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    rows.push_back(fields);
  }
  return rows;
}

ExperimentConfig small(const std::string& model, const fs::path& out) {
  nlohmann::json user = {{"model", {{"name", model}}},
                         {"simulation", {{"n_paths", 4}, {"n_steps", {16, 32, 64}}}},
                         {"partition", {{"n", 24}}},
                         {"scan", {{"n_samples", 32}, {"endpoint_samples", 2}}},
                         {"verify", {{"n_points", 10}}},
                         {"output", {{"dir", out.string()}}}};
  return config_from_json(user);
}

int run_binary(const std::string& args) {
  const std::string cmd = std::string(DETREND_SDE_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig c;
  const ExperimentConfig back = config_from_json(to_json(c));
  EXPECT_TRUE(back == c);
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, CustomRoundTripAndHash) {
  nlohmann::json user = {{"model", {{"name", "linear"}, {"dim", 2}, {"params", {{"b", {1, 0, 0, 2}}}}}},
                         {"simulation", {{"seed", 9}}},
                         {"transform", {{"quad_nodes", 4}}}};
  const ExperimentConfig c = config_from_json(user);
  EXPECT_EQ(c.dim, 2);
  EXPECT_EQ(c.model_params["b_rate"], 0.0);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_TRUE(config_from_json(to_json(c)) == c);
  EXPECT_EQ(config_hash(c), config_hash(config_from_json(to_json(c))));
  EXPECT_NE(config_hash(c), config_hash(ExperimentConfig{}));
  ExperimentConfig moved = c;
  moved.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(c), config_hash(moved));
  EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(config_from_json({{"modle", {}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"simulation", {{"npaths", 3}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"model", {{"name", "sine"}, {"params", {{"gamma", 1}}}}}}), ConfigError);
  // parameters belong to the chosen model
  EXPECT_THROW(config_from_json({{"model", {{"name", "linear"}, {"params", {{"alpha", 1}}}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"model", {{"name", "cubic"}}}}), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(config_from_json({{"simulation", {{"n_paths", "many"}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"simulation", {{"n_paths", 0}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"partition", {{"kind", "random"}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"transform", {{"flow_tol", -1}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"transform", {{"quad_nodes", 1}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"transform", {{"quad_nodes_sweep", {1, 4}}}}}), ConfigError);
  EXPECT_THROW(config_from_json({{"verify", {{"suite", {"everything"}}}}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, DottedOverrides) {
  nlohmann::json user = nlohmann::json::object();
  apply_override(user, "simulation.n_paths=12");
  apply_override(user, "model.name=linear");
  apply_override(user, "model.params.b=[0.5]");
  apply_override(user, "transform.inversion_mode=full_newton");
  const ExperimentConfig c = config_from_json(user);
  EXPECT_EQ(c.n_paths, 12);
  EXPECT_EQ(c.model_name, "linear");
  EXPECT_EQ(c.model_params["b"], nlohmann::json({0.5}));
  EXPECT_EQ(c.inversion_mode, "full_newton");
  EXPECT_THROW(apply_override(user, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(user, "a..b=1"), ConfigError);
  apply_override(user, "simulation.bogus=1");
  EXPECT_THROW(config_from_json(user), ConfigError);
}

TEST(Config, ModelFromConfig) {
  nlohmann::json user = {{"model", {{"name", "sine"}, {"dim", 2}, {"params", {{"alpha", 0.5}, {"kappa", 0.1}}}}}};
  const ModelSpec m = model_from_config(config_from_json(user));
  EXPECT_EQ(m.dim, 2);
  EXPECT_DOUBLE_EQ(m.drift.m_f, 0.6);
}

TEST(Cli, FormatsNumbersShortestRoundTrip) {
  EXPECT_EQ(cli::fmt(0.1), "0.1");
  EXPECT_EQ(cli::fmt(1.0), "1");
  EXPECT_EQ(cli::fmt(-2.5e-300), "-2.5e-300");
  EXPECT_EQ(std::stod(cli::fmt(1.0 / 3.0)), 1.0 / 3.0);
  EXPECT_EQ(cli::fmt(std::nan("")), "nan");
}

TEST(Cli, TransformSdeZeroDriftGivesZeroDiscrepancy) {
  const fs::path out = scratch("sde_zero");
  EXPECT_EQ(cli::run_command("transform-sde", small("zero_drift", out)), cli::ok);
  const auto rows = read_csv(out / "discrepancy.csv");
  ASSERT_GT(rows.size(), 1u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"n_steps", "step", "t", "max_discrepancy", "mean_discrepancy"}));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i][3], "0");
    EXPECT_EQ(rows[i][4], "0");
  }
  for (const char* f : {"paths.csv", "discrepancy.csv", "convergence.csv"}) {
    const std::string text = slurp(out / f);
    EXPECT_EQ(text.rfind("# detrend-sde " + std::string(kVersion) + " config_hash=", 0), 0u) << f;
    EXPECT_EQ(text.find('\r'), std::string::npos);
  }
  const auto paths = read_csv(out / "paths.csv");
  EXPECT_EQ(paths[0], (std::vector<std::string>{"path_id", "step", "t", "y_1", "scheme"}));
  EXPECT_EQ(paths.size(), 1u + 3u * 4u * 17u);
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(summary["exit_code"], 0);
  EXPECT_TRUE(summary["convergence"]["degenerate"].get<bool>());
}

TEST(Cli, TransformSdeLinearScanHasNoCurvature) {
  const fs::path out = scratch("sde_linear");
  EXPECT_EQ(cli::run_command("transform-sde", small("linear", out)), cli::ok);
  const auto scan = nlohmann::json::parse(slurp(out / "coefficients_scan.json"));
  EXPECT_LE(scan["c_max"].get<double>(), 1e-9);
  EXPECT_TRUE(scan["passed"].get<bool>());
}

TEST(Cli, TransformChainZeroDriftIsBitwiseIdentity) {
  const fs::path out = scratch("chain_zero");
  EXPECT_EQ(cli::run_command("transform-chain", small("zero_drift", out)), cli::ok);
  const auto a = read_csv(out / "chain_original.csv");
  const auto b = read_csv(out / "chain_transformed.csv");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 1; i < a.size(); ++i) {
    EXPECT_EQ(std::vector<std::string>(a[i].begin(), a[i].end() - 1), std::vector<std::string>(b[i].begin(), b[i].end() - 1));
    EXPECT_EQ(a[i].back(), "chain");
    EXPECT_EQ(b[i].back(), "transformed_chain");
  }
  const auto q = read_csv(out / "quadrature.csv");
  EXPECT_EQ(q.size(), 4u);
  const auto res = read_csv(out / "residuals.csv");
  EXPECT_EQ(res.size(), 1u + 4u * 25u);
}

TEST(Cli, TransformChainSineQuadratureColumnDecreases) {
  const fs::path out = scratch("chain_sine");
  ExperimentConfig c = small("sine", out);
  c.partition_n = 64;
  c.n_paths = 2;
  EXPECT_EQ(cli::run_command("transform-chain", c), cli::ok);
  const auto q = read_csv(out / "quadrature.csv");
  ASSERT_EQ(q.size(), 4u);
  EXPECT_GT(std::stod(q[1][1]), std::stod(q[2][1]));
  EXPECT_GT(std::stod(q[2][1]), std::stod(q[3][1]));
}

TEST(Cli, TransformChainCoarsePartitionIsNumericalFailure) {
  const fs::path out = scratch("chain_coarse");
  ExperimentConfig c = small("sine", out);
  c.partition_n = 1;
  EXPECT_EQ(cli::run_command("transform-chain", c), cli::numerical_failure);
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(summary["exit_code"], cli::numerical_failure);
  EXPECT_TRUE(summary.contains("error"));
}

TEST(Cli, VerifyPassesAndDetectsTamperedTolerance) {
  const fs::path out = scratch("verify");
  ExperimentConfig c = small("sine", out);
  EXPECT_EQ(cli::run_command("verify", c), cli::ok);
  const auto report = nlohmann::json::parse(slurp(out / "verify.json"));
  EXPECT_GT(report["checks"].size(), 20u);
  c.flow_tol = 1e-2;
  EXPECT_EQ(cli::run_command("verify", c), cli::numerical_failure);
  const auto bad = nlohmann::json::parse(slurp(out / "verify.json"));
  bool round_trip_failed = false;
  for (const auto& ch : bad["checks"])
    if (ch["name"] == "round_trip") round_trip_failed = !ch["passed"].get<bool>();
  EXPECT_TRUE(round_trip_failed);
}

TEST(Cli, BinaryExitCodes) {
  const fs::path out = scratch("binary");
  fs::create_directories(out);
  EXPECT_EQ(run_binary("list-models"), 0);
  EXPECT_EQ(run_binary("verify --out " + out.string() + " --set model.sigma.scale=0"), 3);
  EXPECT_EQ(run_binary("verify --out " + out.string() + " --set nonsense.key=1"), 2);
  EXPECT_EQ(run_binary("verify --config " + (out / "missing.json").string()), 2);
  {
    std::ofstream bad(out / "bad.json");
    bad << "{ not json";
  }
  EXPECT_EQ(run_binary("verify --config " + (out / "bad.json").string()), 2);
  EXPECT_EQ(run_binary("frobnicate"), 2);
  {
    std::ofstream cfg(out / "cfg.json");
    cfg << R"({"model": {"name": "zero_drift"}, "simulation": {"n_paths": 2, "n_steps": [4, 8, 16]},
               "scan": {"n_samples": 8, "endpoint_samples": 1}})";
  }
  EXPECT_EQ(run_binary("transform-sde --config " + (out / "cfg.json").string() + " --out " + (out / "run").string() +
                       " --seed 5"),
            0);
  const auto summary = nlohmann::json::parse(slurp(out / "run" / "summary.json"));
  EXPECT_EQ(summary["config"]["simulation"]["seed"], 5);
}
