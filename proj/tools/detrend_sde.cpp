// detrend_sde: command-line runner for the trend-exclusion experiments.

#include "detrend/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
  using namespace detrend;

  CLI::App app{"Trend exclusion for SDEs and Markov chains"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  long long seed = -1;
  app.add_option("--config", config_path, "JSON experiment config");
  app.add_option("--set", overrides, "Override a config leaf, e.g. --set simulation.n_paths=200")->take_all();
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--seed", seed, "Simulation seed")->check(CLI::NonNegativeNumber);

  app.add_subcommand("transform-sde", "Simulate the original and trend-free SDE and compare");
  app.add_subcommand("transform-chain", "Transform a Markov chain through its Euler broken line");
  app.add_subcommand("verify", "Run the invariant suite on the configured model");
  app.add_subcommand("list-models", "List built-in models and their parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::config_error;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  if (command == "list-models") {
    std::cout << cli::list_models().dump(2) << '\n';
    return cli::ok;
  }

  ExperimentConfig config;
  try {
    nlohmann::json user = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot open config file '" + config_path + "'");
      user = nlohmann::json::parse(in, nullptr, false);
      if (user.is_discarded()) throw ConfigError("config parse error in '" + config_path + "'");
    }
    for (const auto& s : overrides) apply_override(user, s);
    if (seed >= 0) apply_override(user, "simulation.seed=" + std::to_string(seed));
    if (!out_dir.empty()) user["output"]["dir"] = out_dir;
    config = config_from_json(user);
  } catch (const Error& e) {
    std::cerr << "detrend_sde: " << e.what() << '\n';
    return cli::config_error;
  }
  return cli::run_command(command, config);
}
