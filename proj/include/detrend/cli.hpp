#pragma once

#include "detrend/chain.hpp"
#include "detrend/config.hpp"
#include "detrend/diagnostics.hpp"
#include "detrend/sde_transform.hpp"
#include "detrend/verify.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <system_error>
#include <vector>

namespace detrend::cli {

enum ExitCode : int { ok = 0, config_error = 2, assumption_failure = 3, numerical_failure = 4, inversion_failure = 5 };

/// Shortest round-trip decimal form ('.' separator, locale independent).
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

/// CSV writer: a leading "# " metadata line, a header row, LF endings.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& meta, const std::vector<std::string>& header)
      : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error("cannot write " + path.string());
    out_ << "# " << meta << '\n';
    row_strings(header);
  }
  void row_strings(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline nlohmann::json check_json(const CheckResult& c) {
  return {{"group", c.group}, {"name", c.name},     {"value", c.value},
          {"threshold", c.threshold}, {"passed", c.passed}, {"detail", c.detail}};
}

struct Context {
  ExperimentConfig config;
  std::filesystem::path dir;
  std::string meta;
  nlohmann::json summary;

  explicit Context(const ExperimentConfig& c, const std::string& command) : config(c), dir(c.output_dir) {
    std::filesystem::create_directories(dir);
    meta = std::string("detrend-sde ") + kVersion + " config_hash=" + config_hash(c);
    summary = {{"version", kVersion}, {"config_hash", config_hash(c)}, {"command", command},
               {"config", to_json(c)}, {"checks", nlohmann::json::array()}};
    summary["config"].erase("output");
  }
  void add_check(const CheckResult& r) { summary["checks"].push_back(check_json(r)); }
  bool all_passed() const {
    for (const auto& c : summary["checks"])
      if (!c["passed"].get<bool>()) return false;
    return true;
  }
};

inline VerifyOptions verify_options(const ExperimentConfig& c) {
  VerifyOptions o;
  o.flow_tol = c.flow_tol;
  o.n_points = c.verify_points;
  o.lo = c.scan.lo;
  o.hi = c.scan.hi;
  o.seed = c.scan.seed;
  o.geometric_c = c.geometric_c;
  o.inversion_tol = c.inversion_tol;
  return o;
}

/// Records the assumption checks; returns false when any of them fails.
inline bool record_assumptions(Context& ctx, const ModelSpec& model) {
  bool ok = true;
  for (const auto& r : verify_assumptions(model, verify_options(ctx.config))) {
    ctx.add_check(r);
    ok = ok && r.passed;
  }
  return ok;
}

inline std::vector<std::string> path_header(int d) {
  std::vector<std::string> h{"path_id", "step", "t"};
  for (int i = 1; i <= d; ++i) h.push_back("y_" + std::to_string(i));
  h.push_back("scheme");
  return h;
}

inline void write_paths(CsvWriter& w, const PathEnsemble& ens) {
  const std::string scheme = to_string(ens.scheme);
  std::vector<std::string> row;
  for (int p = 0; p < ens.n_paths; ++p)
    for (int k = 0; k <= ens.n_steps(); ++k) {
      row = {std::to_string(p), std::to_string(k), fmt(ens.times[k])};
      for (int i = 0; i < ens.dim; ++i) row.push_back(fmt(ens.state(p, k)(i)));
      row.push_back(scheme);
      w.row_strings(row);
    }
}

inline nlohmann::json scan_json(const ScanReport& rep) {
  nlohmann::json entries = nlohmann::json::array();
  double c_max = 0.0;
  for (const auto& e : rep.entries) {
    nlohmann::json j = {{"quantity", e.quantity}, {"value", e.value}, {"t", e.t}, {"y", vec_json(e.y)},
                        {"passed", e.passed}};
    j["bound"] = std::isnan(e.bound) ? nlohmann::json(nullptr) : nlohmann::json(e.bound);
    entries.push_back(j);
    if (e.quantity == "c") c_max = e.value;
  }
  return {{"flow_tol", rep.flow_tol},
          {"plan",
           {{"lo", rep.plan.lo},
            {"hi", rep.plan.hi},
            {"n_samples", rep.plan.n_samples},
            {"endpoint_samples", rep.plan.endpoint_samples},
            {"seed", rep.plan.seed}}},
          {"all_finite", rep.all_finite},
          {"first_non_finite", rep.first_non_finite},
          {"c_max", c_max},
          {"passed", rep.passed()},
          {"bounds_respected", rep.bounds_respected()},
          {"entries", entries}};
}

inline InnovationKind innovation_kind(const ExperimentConfig& c) {
  return c.innovations == "rademacher" ? InnovationKind::rademacher : InnovationKind::normal;
}

inline int finish(Context& ctx, int code) {
  ctx.summary["exit_code"] = code;
  write_json(ctx.dir / "summary.json", ctx.summary);
  return code;
}

/// Transformed SDE pipeline: coefficient scan, path simulation on each
/// n_steps resolution, pushforward discrepancy and its convergence.
inline int cmd_transform_sde(Context& ctx) {
  const ExperimentConfig& c = ctx.config;
  const ModelSpec model = model_from_config(c);
  if (!record_assumptions(ctx, model)) return finish(ctx, assumption_failure);
  const TransformedCoefficients tc(std::make_shared<const ModelSpec>(model), c.flow_tol);

  const ScanReport scan = boundedness_scan(tc, c.scan);
  write_json(ctx.dir / "coefficients_scan.json", scan_json(scan));
  ctx.add_check({"transform", "coefficients_finite", scan.all_finite ? 0.0 : 1.0, 0.0, scan.all_finite,
                 scan.first_non_finite});
  ctx.add_check({"transform", "declared_bounds", scan.bounds_respected() ? 0.0 : 1.0, 0.0, scan.bounds_respected(),
                 {}});

  std::vector<int> resolutions = c.n_steps;
  std::sort(resolutions.begin(), resolutions.end());
  resolutions.erase(std::unique(resolutions.begin(), resolutions.end()), resolutions.end());

  CsvWriter disc(ctx.dir / "discrepancy.csv", ctx.meta, {"n_steps", "step", "t", "max_discrepancy", "mean_discrepancy"});
  CsvWriter conv(ctx.dir / "convergence.csv", ctx.meta, {"n_steps", "h", "terminal_mean", "terminal_max"});
  std::vector<DiscrepancyTable> tables;
  int flagged = 0;
  double round_trip = 0.0;
  for (std::size_t r = 0; r < resolutions.size(); ++r) {
    const int n = resolutions[r];
    const Partition grid = make_partition(n, PartitionKind::uniform, model.horizon);
    const PathEnsemble original = simulate_original(model, grid, c.n_paths, c.seed);
    const TransformedRun run = simulate_transformed_with_image(tc, grid, c.n_paths, c.seed);
    const DiscrepancyTable tb = discrepancy(original, run.image);
    flagged += tb.flagged;
    for (const auto& row : tb.rows)
      disc.row_strings({std::to_string(n), std::to_string(row.step), fmt(row.t), fmt(row.max), fmt(row.mean)});
    conv.row_strings({std::to_string(n), fmt(model.horizon / n), fmt(tb.terminal().mean), fmt(tb.terminal().max)});
    tables.push_back(tb);
    if (r == 0) {
      CsvWriter paths(ctx.dir / "paths.csv", ctx.meta, path_header(model.dim));
      write_paths(paths, original);
      write_paths(paths, run.transformed);
      write_paths(paths, run.image);
      // g^{-1}(0; t_k, image) must return the transformed states.
      for (int p = 0; p < c.n_paths; ++p) {
        if (run.transformed.flagged[p]) continue;
        for (int k = 0; k <= n; ++k) {
          const Vec back = inverse_flow(model.drift, grid.times[k], run.image.at(p, k), c.flow_tol);
          round_trip = std::max(round_trip, (back - run.transformed.at(p, k)).norm() /
                                                std::max(1.0, run.transformed.at(p, k).norm()));
        }
      }
    }
  }
  ctx.add_check(detail::check_le("transform", "path_round_trip", round_trip, 1e-7));
  ctx.add_check({"transform", "flagged_paths", static_cast<double>(flagged), 0.0, flagged == 0, {}});

  nlohmann::json cj = {{"resolutions", resolutions}};
  if (tables.size() >= 3) {
    const ConvergenceTable order = strong_order_estimate(tables);
    cj["degenerate"] = order.degenerate;
    cj["strong_order"] = order.degenerate ? nlohmann::json(nullptr) : nlohmann::json(order.slope);
    cj["monotone_decreasing"] = order.monotone_decreasing();
  }
  ctx.summary["convergence"] = cj;
  return finish(ctx, ctx.all_passed() ? ok : numerical_failure);
}

/// Markov chain pipeline: simulation, exact pull-back through the broken
/// line, innovation-dependent coefficients and the quadrature sweep.
inline int cmd_transform_chain(Context& ctx) {
  const ExperimentConfig& c = ctx.config;
  const ModelSpec model = model_from_config(c);
  if (!record_assumptions(ctx, model)) return finish(ctx, assumption_failure);
  const PartitionKind kind = c.partition_kind == "geometric" ? PartitionKind::geometric : PartitionKind::uniform;
  const Partition part = make_partition(c.partition_n, kind, model.horizon, c.geometric_c);
  const ChainRun run = simulate_chain(model, part, c.n_paths, c.seed, innovation_kind(c));

  ChainTransformOptions opt;
  opt.quad_nodes = c.quad_nodes;
  opt.inversion.tol = c.inversion_tol;
  opt.inversion.mode = c.inversion_mode == "full_newton" ? InversionMode::full_newton : InversionMode::layered;
  const TransformedChain tchain = transform_chain(model, run, opt);
  const int n = part.n();
  const int d = model.dim;

  {
    CsvWriter w(ctx.dir / "chain_original.csv", ctx.meta, path_header(d));
    write_paths(w, run.states);
  }
  {
    CsvWriter w(ctx.dir / "chain_transformed.csv", ctx.meta, path_header(d));
    write_paths(w, tchain.transformed.states);
  }
  {
    CsvWriter w(ctx.dir / "coefficients.csv", ctx.meta,
                {"step", "t", "h", "sup_m_tilde", "sup_sigma_tilde", "max_identity_residual"});
    for (int k = 0; k < n; ++k) {
      double sm = 0.0, ss = 0.0, ri = 0.0;
      for (int p = 0; p < c.n_paths; ++p) {
        if (run.states.flagged[p]) continue;
        sm = std::max(sm, tchain.m_tilde_at(p, k).norm());
        ss = std::max(ss, op_norm(tchain.sigma_tilde_at(p, k)));
        ri = std::max(ri, tchain.identity_residual[static_cast<std::size_t>(p) * n + k]);
      }
      w.row_strings({std::to_string(k), fmt(part.times[k]), fmt(part.steps[k]), fmt(sm), fmt(ss), fmt(ri)});
    }
  }
  {
    CsvWriter w(ctx.dir / "residuals.csv", ctx.meta,
                {"path_id", "step", "t", "reconstruction_residual", "identity_residual"});
    for (int p = 0; p < c.n_paths; ++p)
      for (int k = 0; k <= n; ++k) {
        const double rr = tchain.reconstruction_residual[static_cast<std::size_t>(p) * (n + 1) + k];
        const std::string ir = k < n ? fmt(tchain.identity_residual[static_cast<std::size_t>(p) * n + k]) : "";
        w.row_strings({std::to_string(p), std::to_string(k), fmt(part.times[k]), fmt(rr), ir});
      }
  }
  {
    CsvWriter w(ctx.dir / "quadrature.csv", ctx.meta, {"quad_nodes", "max_identity_residual"});
    std::vector<int> sweep = c.quad_nodes_sweep;
    std::sort(sweep.begin(), sweep.end());
    sweep.erase(std::unique(sweep.begin(), sweep.end()), sweep.end());
    for (int q : sweep) {
      ChainTransformOptions o = opt;
      o.quad_nodes = q;
      const double r = q == c.quad_nodes ? tchain.max_identity_residual()
                                         : transform_chain(model, run, o).max_identity_residual();
      w.row_strings({std::to_string(q), fmt(r)});
    }
  }

  const ScanReport scan = boundedness_scan(tchain);
  ctx.add_check({"chain", "coefficients_finite", scan.all_finite ? 0.0 : 1.0, 0.0, scan.all_finite,
                 scan.first_non_finite});
  ctx.add_check(detail::check_le("chain", "reconstruction_residual", tchain.max_reconstruction_residual(), 1e-8));
  ctx.add_check(detail::check_le("chain", "identity_residual", tchain.max_identity_residual(), 1e-9));
  ctx.add_check({"chain", "flagged_paths", static_cast<double>(run.states.flagged_count()), 0.0,
                 run.states.flagged_count() == 0, {}});
  ctx.summary["sup_m_tilde"] = scan.entry("m_tilde").value;
  ctx.summary["sup_sigma_tilde"] = scan.entry("sigma_tilde").value;
  return finish(ctx, ctx.all_passed() ? ok : numerical_failure);
}

/// Invariant suite; the report goes to verify.json.
inline int cmd_verify(Context& ctx) {
  const ExperimentConfig& c = ctx.config;
  const ModelSpec model = model_from_config(c);
  const VerifyOptions o = verify_options(c);
  auto selected = [&](const char* g) { return std::find(c.suite.begin(), c.suite.end(), g) != c.suite.end(); };
  bool assumptions_ok = true;
  if (selected("assumptions")) assumptions_ok = record_assumptions(ctx, model);
  if (assumptions_ok) {
    using Group = std::vector<CheckResult> (*)(const ModelSpec&, const VerifyOptions&);
    const std::pair<const char*, Group> groups[] = {
        {"flow", &verify_flow}, {"transform", &verify_transform}, {"chain", &verify_chain}};
    for (const auto& [name, fn] : groups)
      if (selected(name))
        for (const auto& r : fn(model, o)) ctx.add_check(r);
  }
  const int code = !assumptions_ok ? assumption_failure : ctx.all_passed() ? ok : numerical_failure;
  ctx.summary["exit_code"] = code;
  write_json(ctx.dir / "verify.json", ctx.summary);
  return code;
}

inline nlohmann::json list_models() {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& name : builtin_model_names()) out.push_back({{"name", name}, {"params", default_model_params(name)}});
  return out;
}

/// Runs a subcommand and maps failures onto the exit-code taxonomy.
/// When a run aborts, the error is recorded in summary.json (verify.json for verify).
inline int run_command(const std::string& command, const ExperimentConfig& config, std::ostream& err = std::cerr) {
  std::unique_ptr<Context> ctx;
  auto fail = [&](int code, const std::exception& e) {
    err << "detrend_sde: " << e.what() << '\n';
    if (ctx) {
      ctx->summary["error"] = e.what();
      ctx->summary["exit_code"] = code;
      write_json(ctx->dir / (command == "verify" ? "verify.json" : "summary.json"), ctx->summary);
    }
    return code;
  };
  try {
    ctx = std::make_unique<Context>(config, command);
    if (command == "transform-sde") return cmd_transform_sde(*ctx);
    if (command == "transform-chain") return cmd_transform_chain(*ctx);
    if (command == "verify") return cmd_verify(*ctx);
    throw ConfigError("unknown command '" + command + "'");
  } catch (const ConfigError& e) {
    return fail(config_error, e);
  } catch (const ModelError& e) {
    return fail(config_error, e);
  } catch (const AssumptionError& e) {
    return fail(assumption_failure, e);
  } catch (const InversionError& e) {
    return fail(inversion_failure, e);
  } catch (const Error& e) {
    return fail(numerical_failure, e);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(config_error, e);
  }
}

}  // namespace detrend::cli
