#pragma once

#include "detrend/diagnostics.hpp"
#include "detrend/drift_models.hpp"
#include "detrend/partition.hpp"
#include "detrend/types.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace detrend {

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Allowed keys and defaults of model.params per built-in model.
inline nlohmann::json default_model_params(const std::string& name) {
  if (name == "zero_drift") return nlohmann::json::object();
  if (name == "linear") return {{"b", {1.0}}, {"b_rate", 0.0}};
  if (name == "sine") return {{"alpha", 1.0}, {"beta", 1.0}, {"kappa", 0.0}};
  if (name == "scalar_logistic_bounded") return {{"rate", 1.0}, {"weight", 1.0}};
  throw ConfigError("unknown model '" + name + "'");
}

/// Experiment description read from a JSON file. Every key has a default;
/// unknown keys are rejected.
struct ExperimentConfig {
  // model
  std::string model_name = "sine";
  int dim = 1;
  double horizon = 1.0;
  std::vector<double> x0{0.5};
  nlohmann::json model_params = default_model_params("sine");
  std::string m_kind = "cosine";
  double m_value = 0.5;
  std::string sigma_kind = "constant";
  double sigma_scale = 1.0;
  // partition (chain)
  std::string partition_kind = "uniform";
  int partition_n = 128;
  double geometric_c = 1.0;
  // simulation
  int n_paths = 50;
  std::uint64_t seed = 42;
  std::vector<int> n_steps{128, 256, 512};
  std::string innovations = "normal";
  // transform
  double flow_tol = 1e-10;
  int quad_nodes = 8;
  std::vector<int> quad_nodes_sweep{2, 4, 8};
  double inversion_tol = 1e-12;
  std::string inversion_mode = "layered";
  // scan
  ScanPlan scan{};
  // verify
  int verify_points = 100;
  std::vector<std::string> suite{"assumptions", "flow", "transform", "chain"};
  // output
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  return json{
      {"model",
       {{"name", c.model_name},
        {"dim", c.dim},
        {"horizon", c.horizon},
        {"x0", c.x0},
        {"params", c.model_params},
        {"m", {{"kind", c.m_kind}, {"value", c.m_value}}},
        {"sigma", {{"kind", c.sigma_kind}, {"scale", c.sigma_scale}}}}},
      {"partition", {{"kind", c.partition_kind}, {"n", c.partition_n}, {"geometric_c", c.geometric_c}}},
      {"simulation",
       {{"n_paths", c.n_paths}, {"seed", c.seed}, {"n_steps", c.n_steps}, {"innovations", c.innovations}}},
      {"transform",
       {{"flow_tol", c.flow_tol},
        {"quad_nodes", c.quad_nodes},
        {"quad_nodes_sweep", c.quad_nodes_sweep},
        {"inversion_tol", c.inversion_tol},
        {"inversion_mode", c.inversion_mode}}},
      {"scan",
       {{"lo", c.scan.lo},
        {"hi", c.scan.hi},
        {"n_samples", c.scan.n_samples},
        {"endpoint_samples", c.scan.endpoint_samples},
        {"seed", c.scan.seed}}},
      {"verify", {{"n_points", c.verify_points}, {"suite", c.suite}}},
      {"output", {{"dir", c.output_dir}}},
  };
}

namespace detail {

/// Overlays `patch` onto `base`, rejecting keys that `base` does not have.
inline void merge_checked(nlohmann::json& base, const nlohmann::json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("expected an object at '" + path + "'");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (key == "model.params") {
      slot = it.value();  // validated against the model once its name is known
    } else if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

template <class T>
T read(const nlohmann::json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + section + "." + key + "': " + e.what());
  }
}

inline void require_choice(const std::string& value, std::initializer_list<const char*> choices, const char* key) {
  for (const char* c : choices)
    if (value == c) return;
  throw ConfigError(std::string("invalid value '") + value + "' for " + key);
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& user) {
  using detail::read;
  nlohmann::json j = to_json(ExperimentConfig{});
  j["model"]["params"] = nlohmann::json::object();
  detail::merge_checked(j, user, "");

  ExperimentConfig c;
  c.model_name = read<std::string>(j, "model", "name");
  nlohmann::json params = default_model_params(c.model_name);
  const nlohmann::json& given = j["model"]["params"];
  if (!given.is_object()) throw ConfigError("model.params must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    if (!params.contains(it.key()))
      throw ConfigError("unknown config key 'model.params." + it.key() + "' for model " + c.model_name);
    params[it.key()] = it.value();
  }
  c.model_params = params;
  c.dim = read<int>(j, "model", "dim");
  c.horizon = read<double>(j, "model", "horizon");
  c.x0 = read<std::vector<double>>(j, "model", "x0");
  c.m_kind = j["model"]["m"].value("kind", c.m_kind);
  c.m_value = j["model"]["m"].value("value", c.m_value);
  c.sigma_kind = j["model"]["sigma"].value("kind", c.sigma_kind);
  c.sigma_scale = j["model"]["sigma"].value("scale", c.sigma_scale);
  c.partition_kind = read<std::string>(j, "partition", "kind");
  c.partition_n = read<int>(j, "partition", "n");
  c.geometric_c = read<double>(j, "partition", "geometric_c");
  c.n_paths = read<int>(j, "simulation", "n_paths");
  c.seed = read<std::uint64_t>(j, "simulation", "seed");
  c.n_steps = read<std::vector<int>>(j, "simulation", "n_steps");
  c.innovations = read<std::string>(j, "simulation", "innovations");
  c.flow_tol = read<double>(j, "transform", "flow_tol");
  c.quad_nodes = read<int>(j, "transform", "quad_nodes");
  c.quad_nodes_sweep = read<std::vector<int>>(j, "transform", "quad_nodes_sweep");
  c.inversion_tol = read<double>(j, "transform", "inversion_tol");
  c.inversion_mode = read<std::string>(j, "transform", "inversion_mode");
  c.scan.lo = read<double>(j, "scan", "lo");
  c.scan.hi = read<double>(j, "scan", "hi");
  c.scan.n_samples = read<int>(j, "scan", "n_samples");
  c.scan.endpoint_samples = read<int>(j, "scan", "endpoint_samples");
  c.scan.seed = read<std::uint64_t>(j, "scan", "seed");
  c.verify_points = read<int>(j, "verify", "n_points");
  c.suite = read<std::vector<std::string>>(j, "verify", "suite");
  c.output_dir = read<std::string>(j, "output", "dir");

  detail::require_choice(c.m_kind, {"constant", "cosine"}, "model.m.kind");
  detail::require_choice(c.sigma_kind, {"constant", "modulated"}, "model.sigma.kind");
  detail::require_choice(c.partition_kind, {"uniform", "geometric"}, "partition.kind");
  detail::require_choice(c.innovations, {"normal", "rademacher"}, "simulation.innovations");
  detail::require_choice(c.inversion_mode, {"layered", "full_newton"}, "transform.inversion_mode");
  for (const auto& s : c.suite) detail::require_choice(s, {"assumptions", "flow", "transform", "chain"}, "verify.suite");
  if (c.n_paths < 1) throw ConfigError("simulation.n_paths must be >= 1");
  if (c.n_steps.empty()) throw ConfigError("simulation.n_steps must not be empty");
  for (int n : c.n_steps)
    if (n < 1) throw ConfigError("simulation.n_steps entries must be >= 1");
  if (c.partition_n < 1) throw ConfigError("partition.n must be >= 1");
  if (!(c.flow_tol > 0.0)) throw ConfigError("transform.flow_tol must be positive");
  if (!(c.inversion_tol > 0.0)) throw ConfigError("transform.inversion_tol must be positive");
  if (c.quad_nodes < 2) throw ConfigError("transform.quad_nodes must be >= 2");
  for (int q : c.quad_nodes_sweep)
    if (q < 2) throw ConfigError("transform.quad_nodes_sweep entries must be >= 2");
  if (c.verify_points < 1) throw ConfigError("verify.n_points must be >= 1");
  if (c.scan.n_samples < 0 || c.scan.endpoint_samples < 0) throw ConfigError("scan sample counts must be >= 0");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
}

/// Applies "a.b.c=value" to a user config object. The value is parsed as
/// JSON when possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &user;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("empty path segment in override: " + key);
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + key);
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + key);
  (*node)[parts.back()] = value;
}

/// Built-in model described by the config.
inline ModelSpec model_from_config(const ExperimentConfig& c) {
  BuiltinParams p;
  p.dim = c.dim;
  p.horizon = c.horizon;
  p.x0 = c.x0;
  const auto& mp = c.model_params;
  try {
    if (c.model_name == "linear") {
      p.b_const = mp.at("b").get<std::vector<double>>();
      p.b_rate = mp.at("b_rate").get<double>();
    } else if (c.model_name == "sine") {
      p.alpha = mp.at("alpha").get<double>();
      p.beta = mp.at("beta").get<double>();
      p.kappa = mp.at("kappa").get<double>();
    } else if (c.model_name == "scalar_logistic_bounded") {
      p.rate = mp.at("rate").get<double>();
      p.weight = mp.at("weight").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model parameter: ") + e.what());
  }
  p.m_kind = c.m_kind == "constant" ? BoundedDriftKind::constant : BoundedDriftKind::cosine;
  p.m_value = c.m_value;
  p.sigma_kind = c.sigma_kind == "constant" ? SigmaKind::constant : SigmaKind::modulated;
  p.sigma_scale = c.sigma_scale;
  return builtin_model(c.model_name, p);
}

/// 64-bit FNV-1a of the canonical JSON dump, excluding the output location.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("output");
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[i] = hex[h & 0xf];
  return out;
}

}  // namespace detrend
