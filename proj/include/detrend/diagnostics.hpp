#pragma once

#include "detrend/chain.hpp"
#include "detrend/convergence.hpp"
#include "detrend/drift_models.hpp"
#include "detrend/flow.hpp"
#include "detrend/random.hpp"
#include "detrend/sde_transform.hpp"
#include "detrend/types.hpp"

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

namespace detrend {

/// Quasi-random scan of [0,T] x [lo,hi]^d. The last 2 * endpoint_samples
/// points sit on t = 0 and t = T, where flow norms attain their extremes.
struct ScanPlan {
  double lo = -2.0;
  double hi = 2.0;
  int n_samples = 256;
  int endpoint_samples = 8;
  std::uint64_t seed = 7;

  bool operator==(const ScanPlan&) const = default;
};

struct SupEntry {
  std::string quantity;
  double value = 0.0;
  double t = 0.0;
  Vec y;
  double bound = std::numeric_limits<double>::quiet_NaN();  // NaN: finiteness only
  bool passed = true;
};

struct ScanReport {
  ScanPlan plan;
  double flow_tol = 0.0;
  std::vector<SupEntry> entries;
  bool all_finite = true;
  std::string first_non_finite;

  const SupEntry& entry(const std::string& name) const {
    for (const auto& e : entries)
      if (e.quantity == name) return e;
    throw PreconditionError("no scan entry named " + name);
  }
  /// The scan fails only on non-finite values; declared bounds are reported separately.
  bool passed() const { return all_finite; }
  bool bounds_respected() const {
    for (const auto& e : entries)
      if (!e.passed) return false;
    return true;
  }
};

namespace detail {

struct Tracker {
  SupEntry e;
  bool minimize = false;
  explicit Tracker(std::string name, bool min = false) : minimize(min) {
    e.quantity = std::move(name);
    e.value = min ? std::numeric_limits<double>::infinity() : 0.0;
  }
  void offer(double v, double t, const Vec& y) {
    if (minimize ? v < e.value : v > e.value) {
      e.value = v;
      e.t = t;
      e.y = y;
    }
  }
};

inline bool within(double value, double bound) { return value <= bound * (1.0 + 1e-9) + 1e-12; }

}  // namespace detail

/// Sup-norm scan of the transformed SDE coefficients and the flow quantities
/// that control them. Fails on non-finite values or on a declared bound:
///   |g_*|, |g_*^{-1}| <= exp(M_F T),  det g_* in [exp(-d M_F T), exp(d M_F T)],
///   |m~| <= sup|g_*^{-1}| (sup|m| + d^2/2 sup|c_jk| Lambda),  |sigma~| <= sup|g_*^{-1}| Lambda^{1/2},
///   lambda_min(sigma~ sigma~^T) > 0.
inline ScanReport boundedness_scan(const TransformedCoefficients& tc, const ScanPlan& plan = {}) {
  const ModelSpec& model = tc.source();
  const int d = model.dim;
  const double T = model.horizon;
  ScanReport rep;
  rep.plan = plan;
  rep.flow_tol = tc.flow_tol();

  detail::Tracker m_tilde("m_tilde"), sigma_tilde("sigma_tilde"), g_star("g_star"), g_star_inv("g_star_inv"),
      c_norm("c"), det_min("det_min", true), det_max("det_max"), eig_min("sigma_tilde_eig_min", true),
      eig_max("sigma_tilde_eig_max"), m_sup("m_source");

  const HaltonSequence seq(1 + d, plan.seed);
  const int total = plan.n_samples + 2 * plan.endpoint_samples;
  for (int s = 0; s < total; ++s) {
    const int idx = s < plan.n_samples ? s : plan.n_samples + (s - plan.n_samples) / 2;
    double t = T * seq(idx, 0);
    if (s >= plan.n_samples) t = ((s - plan.n_samples) % 2 == 0) ? 0.0 : T;
    Vec y(d);
    for (int i = 0; i < d; ++i) y(i) = plan.lo + (plan.hi - plan.lo) * seq(idx, 1 + i);

    const TransformedValue v = tc.evaluate(t, y);
    const Mat st = v.sigma_tilde;
    const Vec mv = model.bounded_drift(t, v.jet.g);
    if (!all_finite(v.m_tilde) || !all_finite(st) || !all_finite(v.jet.g_star) || !all_finite(v.jet.g_star_inv)) {
      if (rep.all_finite) rep.first_non_finite = format_point(t, y);
      rep.all_finite = false;
      continue;
    }
    m_tilde.offer(v.m_tilde.norm(), t, y);
    sigma_tilde.offer(op_norm(st), t, y);
    g_star.offer(op_norm(v.jet.g_star), t, y);
    g_star_inv.offer(op_norm(v.jet.g_star_inv), t, y);
    double cmax = 0.0;
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) cmax = std::max(cmax, v.jet.c.fiber(j, k).norm());
    c_norm.offer(cmax, t, y);
    det_min.offer(v.jet.det_g_star, t, y);
    det_max.offer(v.jet.det_g_star, t, y);
    Eigen::SelfAdjointEigenSolver<Mat> es(Mat(st * st.transpose()), Eigen::EigenvaluesOnly);
    eig_min.offer(es.eigenvalues().minCoeff(), t, y);
    eig_max.offer(es.eigenvalues().maxCoeff(), t, y);
    m_sup.offer(mv.norm(), t, y);
  }

  const double mf = model.drift.m_f;
  const double flow_bound = std::exp(mf * T);
  g_star.e.bound = flow_bound;
  g_star_inv.e.bound = flow_bound;
  det_max.e.bound = std::exp(d * mf * T);
  det_min.e.bound = std::exp(-d * mf * T);
  m_tilde.e.bound = g_star_inv.e.value * (m_sup.e.value + 0.5 * d * d * c_norm.e.value * model.lambda);
  sigma_tilde.e.bound = g_star_inv.e.value * std::sqrt(model.lambda);
  eig_min.e.bound = 0.0;

  for (auto* tr : {&g_star, &g_star_inv, &det_max, &m_tilde, &sigma_tilde})
    tr->e.passed = std::isfinite(tr->e.value) && detail::within(tr->e.value, tr->e.bound);
  det_min.e.passed = std::isfinite(det_min.e.value) && det_min.e.value >= det_min.e.bound * (1.0 - 1e-9);
  eig_min.e.passed = eig_min.e.value > 0.0;
  for (auto* tr : {&c_norm, &eig_max, &m_sup}) tr->e.passed = std::isfinite(tr->e.value);

  for (auto* tr : {&m_tilde, &sigma_tilde, &g_star, &g_star_inv, &c_norm, &det_min, &det_max, &eig_min, &eig_max,
                   &m_sup})
    rep.entries.push_back(tr->e);
  return rep;
}

/// Sup-norms of the innovation-dependent chain coefficients over all paths and steps.
inline ScanReport boundedness_scan(const TransformedChain& tchain) {
  ScanReport rep;
  rep.plan.n_samples = 0;
  rep.plan.endpoint_samples = 0;
  detail::Tracker m_tilde("m_tilde"), sigma_tilde("sigma_tilde");
  const auto& part = tchain.transformed.partition;
  for (int p = 0; p < tchain.transformed.states.n_paths; ++p) {
    if (tchain.transformed.states.flagged[p]) continue;
    for (int k = 0; k < tchain.n(); ++k) {
      const Vec m = tchain.m_tilde_at(p, k);
      const Mat s = tchain.sigma_tilde_at(p, k);
      const Vec y = tchain.transformed.states.at(p, k);
      if (!all_finite(m) || !all_finite(s)) {
        if (rep.all_finite) rep.first_non_finite = format_point(part.times[k], y);
        rep.all_finite = false;
        continue;
      }
      m_tilde.offer(m.norm(), part.times[k], y);
      sigma_tilde.offer(op_norm(s), part.times[k], y);
    }
  }
  rep.entries.push_back(m_tilde.e);
  rep.entries.push_back(sigma_tilde.e);
  return rep;
}

struct TestFunction {
  std::string name;
  std::function<double(const Vec&)> f;
};

inline TestFunction first_component() {
  return {"y_1", [](const Vec& y) { return y(0); }};
}
inline TestFunction squared_norm() {
  return {"abs_y_squared", [](const Vec& y) { return y.squaredNorm(); }};
}

enum class NoiseMode { shared, independent };

struct WeakErrorRow {
  std::string name;
  double mean_original = 0.0;
  double mean_mapped_back = 0.0;
  double std_error = 0.0;
  double z_score = 0.0;
  double strong_discrepancy = std::numeric_limits<double>::quiet_NaN();  // shared noise only
};

/// Seed used for the transformed run when the noise is independent.
inline std::uint64_t independent_seed(std::uint64_t seed) { return seed ^ 0x9E3779B97F4A7C15ull; }

/// Terminal-time means of each test function under the original Euler scheme
/// and under the back-mapped transformed scheme, with z = diff / SE(diff).
/// Flagged paths are excluded from both samples.
inline std::vector<WeakErrorRow> weak_error_compare(const ModelSpec& model, const TransformedCoefficients& tc,
                                                    int n_steps, int n_paths, std::uint64_t seed,
                                                    const std::vector<TestFunction>& functions,
                                                    NoiseMode mode = NoiseMode::independent) {
  const Partition grid = make_partition(n_steps, PartitionKind::uniform, model.horizon);
  const PathEnsemble original = simulate_original(model, grid, n_paths, seed);
  const std::uint64_t tseed = mode == NoiseMode::shared ? seed : independent_seed(seed);
  const TransformedRun run = simulate_transformed_with_image(tc, grid, n_paths, tseed);
  const int n = grid.n();

  std::vector<WeakErrorRow> rows;
  for (const auto& fn : functions) {
    auto moments = [&](const PathEnsemble& ens) {
      double s = 0.0, ss = 0.0;
      int cnt = 0;
      for (int p = 0; p < ens.n_paths; ++p) {
        if (ens.flagged[p]) continue;
        const double v = fn.f(ens.at(p, n));
        s += v;
        ss += v * v;
        ++cnt;
      }
      const double mean = s / cnt;
      const double var = cnt > 1 ? (ss - cnt * mean * mean) / (cnt - 1) : 0.0;
      return std::tuple<double, double, int>(mean, std::max(0.0, var), cnt);
    };
    const auto [mo, vo, no] = moments(original);
    const auto [mm, vm, nm] = moments(run.image);
    WeakErrorRow row;
    row.name = fn.name;
    row.mean_original = mo;
    row.mean_mapped_back = mm;
    row.std_error = std::sqrt(vo / no + vm / nm);
    const double diff = mo - mm;
    row.z_score = diff == 0.0 ? 0.0 : diff / row.std_error;
    if (mode == NoiseMode::shared) {
      double sum = 0.0;
      int cnt = 0;
      for (int p = 0; p < n_paths; ++p) {
        if (original.flagged[p] || run.image.flagged[p]) continue;
        sum += (original.state(p, n) - run.image.state(p, n)).norm();
        ++cnt;
      }
      row.strong_discrepancy = sum / cnt;
    }
    rows.push_back(row);
  }
  return rows;
}

/// Convergence of the mean terminal discrepancy against the step size.
inline ConvergenceTable strong_order_estimate(const std::vector<DiscrepancyTable>& tables) {
  std::vector<ConvergenceRow> rows;
  for (const auto& tb : tables) {
    const double h = tb.terminal().t / tb.n_steps;
    rows.push_back({static_cast<double>(tb.n_steps), h, tb.terminal().mean});
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.resolution < b.resolution; });
  return fit_convergence(std::move(rows));
}

}  // namespace detrend
