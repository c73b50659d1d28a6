#pragma once

#include "detrend/chain.hpp"
#include "detrend/diagnostics.hpp"
#include "detrend/drift_models.hpp"
#include "detrend/flow.hpp"
#include "detrend/partition.hpp"
#include "detrend/random.hpp"
#include "detrend/sde_transform.hpp"
#include "detrend/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace detrend {

struct CheckResult {
  std::string group;
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  double flow_tol = kDefaultFlowTol;
  int n_points = 100;
  double lo = -2.0;
  double hi = 2.0;
  std::uint64_t seed = 7;
  double geometric_c = 1.0;
  double inversion_tol = 1e-12;
};

namespace detail {

inline CheckResult check_le(std::string group, std::string name, double value, double threshold,
                            std::string detail = {}) {
  const bool ok = std::isfinite(value) && value <= threshold;
  return {std::move(group), std::move(name), value, threshold, ok, std::move(detail)};
}

/// Quasi-random points (t, y) in [t_lo, t_hi] x [lo, hi]^d.
struct PointSampler {
  HaltonSequence seq;
  int d;
  double lo, hi;
  PointSampler(int dim, const VerifyOptions& o, std::uint64_t salt)
      : seq(1 + dim, o.seed ^ salt), d(dim), lo(o.lo), hi(o.hi) {}
  double t(int i, double t_lo, double t_hi) const { return t_lo + (t_hi - t_lo) * seq(i, 0); }
  Vec y(int i) const {
    Vec v(d);
    for (int k = 0; k < d; ++k) v(k) = lo + (hi - lo) * seq(i, 1 + k);
    return v;
  }
};

inline double rel(double err, double scale) { return scale > 0.0 ? err / scale : err; }

}  // namespace detail

inline std::vector<CheckResult> verify_assumptions(const ModelSpec& model, const VerifyOptions& o) {
  SamplingPlan plan;
  plan.lo = o.lo;
  plan.hi = o.hi;
  plan.seed = o.seed;
  const AssumptionReport rep = check_assumptions(model, plan);
  auto item = [&](const char* name, bool ok, double value) {
    CheckResult r{"assumptions", name, value, 0.0, ok, {}};
    for (const auto& f : rep.failures)
      if (f.rfind(std::string(name).substr(0, 2), 0) == 0) {
        r.detail = f;
        break;
      }
    return r;
  };
  std::vector<CheckResult> out;
  out.push_back(item("A1", rep.a1, rep.lambda_measured));
  out.push_back(item("A2", rep.a2, std::max(rep.jac_sup, rep.hess_sup)));
  out.push_back(item("A3", rep.a3, rep.m_sup));
  CheckResult dc{"assumptions", "derivatives_consistent", rep.jac_fd_excess, 0.0, rep.derivatives_consistent, {}};
  if (!rep.derivatives_consistent && !rep.failures.empty()) dc.detail = rep.failures.back();
  out.push_back(dc);
  return out;
}

/// Flow identities: round trip, semigroup, Liouville, time derivatives,
/// inverse-Jacobian identity, c symmetry and the Gronwall bounds.
inline std::vector<CheckResult> verify_flow(const ModelSpec& model, const VerifyOptions& o) {
  const DriftSpec& F = model.drift;
  const double T = model.horizon;
  const int d = model.dim;
  const double tol = o.flow_tol;
  const int n = o.n_points;
  std::vector<CheckResult> out;

  {  // g(t; 0, g^{-1}(0; t, y)) = y
    const detail::PointSampler s(d, o, 0x11);
    double worst = 0.0;
    for (int i = 0; i < std::max(n, 200); ++i) {
      const double t = s.t(i, 0.0, T);
      const Vec y = s.y(i);
      const Vec x = inverse_flow(F, t, y, tol);
      const Vec back = advance_flow(F, 0.0, t, x, tol);
      worst = std::max(worst, (back - y).norm());
    }
    out.push_back(detail::check_le("flow", "round_trip", worst, 1e-7));
  }
  {  // g(t; s, g(s; t0, x)) = g(t; t0, x)
    const detail::PointSampler s(d, o, 0x22);
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      const double a = s.t(i, 0.0, T);
      const double b = s.seq(i + 7919, 0) * T;
      const double t0 = std::min(a, b), t1 = std::max(a, b), mid = 0.5 * (t0 + t1);
      const Vec x = s.y(i);
      const Vec two = advance_flow(F, mid, t1, advance_flow(F, t0, mid, x, tol), tol);
      worst = std::max(worst, (two - advance_flow(F, t0, t1, x, tol)).norm());
    }
    out.push_back(detail::check_le("flow", "semigroup", worst, 1e-7));
  }
  {  // det g_* = exp int trace F_*
    const detail::PointSampler s(d, o, 0x33);
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      const double t = s.t(i, 0.0, T);
      const LiouvilleDeterminant ld = liouville_determinant(F, 0.0, t, s.y(i), tol);
      worst = std::max(worst, std::abs(ld.det_direct - ld.det_liouville) / std::abs(ld.det_direct));
    }
    out.push_back(detail::check_le("flow", "liouville", worst, 1e-7));
  }
  {  // d/dt0 g(t; t0, x) and d/dt g^{-1}(0; t, y) against centered differences
    const detail::PointSampler s(d, o, 0x44);
    const double delta = 1e-5;
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
      const double t0 = s.t(i, 0.05 * T, 0.45 * T);
      const double t = s.seq(i + 104729, 0) * 0.4 * T + 0.55 * T;
      const Vec x = s.y(i);
      const FlowTimeDerivatives td = flow_time_derivatives(F, t0, t, x, tol);
      const Vec fd0 =
          (advance_flow(F, t0 + delta, t, x, tol) - advance_flow(F, t0 - delta, t, x, tol)) / (2.0 * delta);
      const Vec y = advance_flow(F, t0, t, x, tol);
      const Vec fd1 = (inverse_flow(F, t + delta, y, tol) - inverse_flow(F, t - delta, y, tol)) / (2.0 * delta);
      worst = std::max(worst, detail::rel((td.d_t0_g - fd0).norm(), std::max(td.d_t0_g.norm(), 1e-8)));
      worst = std::max(worst, detail::rel((td.d_t_ginv - fd1).norm(), std::max(td.d_t_ginv.norm(), 1e-8)));
    }
    out.push_back(detail::check_le("flow", "time_derivatives", worst, 1e-4));
  }
  {  // Jacobian of y -> g^{-1}(0; t, y) equals g_*^{-1}(t; 0, g^{-1}(0; t, y))
    const detail::PointSampler s(d, o, 0x55);
    const double delta = 1e-5;
    double worst_fd = 0.0, worst_inv = 0.0, worst_sym = 0.0, sup_g = 0.0, sup_ginv = 0.0;
    const int m = std::max(1, n / 5);
    for (int i = 0; i < n; ++i) {
      const double t = s.t(i, 0.0, T);
      const Vec y = s.y(i);
      const Vec x = inverse_flow(F, t, y, tol);
      const FlowJet jet = flow_jet(F, 0.0, t, x, tol);
      const Mat eye = Mat::Identity(d, d);
      worst_inv = std::max(worst_inv, op_norm(jet.g_star_inv * jet.g_star - eye));
      sup_g = std::max(sup_g, op_norm(jet.g_star));
      sup_ginv = std::max(sup_ginv, op_norm(jet.g_star_inv));
      for (int l = 0; l < d; ++l) {
        const double scale = std::max(1.0, jet.c[l].cwiseAbs().maxCoeff());
        worst_sym = std::max(worst_sym, (jet.c[l] - jet.c[l].transpose()).cwiseAbs().maxCoeff() / scale);
      }
      if (i < m) {
        Mat fd(d, d);
        for (int k = 0; k < d; ++k) {
          Vec yp = y, ym = y;
          yp(k) += delta;
          ym(k) -= delta;
          fd.col(k) = (inverse_flow(F, t, yp, tol) - inverse_flow(F, t, ym, tol)) / (2.0 * delta);
        }
        worst_fd = std::max(worst_fd, op_norm(fd - jet.g_star_inv) / std::max(1.0, op_norm(jet.g_star_inv)));
      }
    }
    out.push_back(detail::check_le("flow", "inverse_jacobian_fd", worst_fd, 1e-5));
    out.push_back(detail::check_le("flow", "inverse_jacobian_product", worst_inv, 1e-9));
    out.push_back(detail::check_le("flow", "c_symmetry", worst_sym, 1e-7));
    const double bound = std::exp(F.m_f * T) * (1.0 + 1e-9);
    out.push_back(detail::check_le("flow", "gronwall_g_star", sup_g, bound));
    out.push_back(detail::check_le("flow", "gronwall_g_star_inv", sup_ginv, bound));
  }
  return out;
}

/// Boundedness scan of the transformed coefficients.
inline std::vector<CheckResult> verify_transform(const ModelSpec& model, const VerifyOptions& o) {
  const TransformedCoefficients tc(std::make_shared<const ModelSpec>(model), o.flow_tol);
  ScanPlan plan;
  plan.lo = o.lo;
  plan.hi = o.hi;
  plan.seed = o.seed;
  const ScanReport rep = boundedness_scan(tc, plan);
  std::vector<CheckResult> out;
  CheckResult fin{"transform", "coefficients_finite", rep.all_finite ? 0.0 : 1.0, 0.0, rep.all_finite,
                  rep.first_non_finite};
  out.push_back(fin);
  for (const auto& e : rep.entries) {
    if (std::isnan(e.bound)) continue;
    CheckResult r{"transform", "bound_" + e.quantity, e.value, e.bound, e.passed, format_point(e.t, e.y)};
    out.push_back(r);
  }
  return out;
}

/// Broken-line identities on uniform and geometric partitions.
inline std::vector<CheckResult> verify_chain(const ModelSpec& model, const VerifyOptions& o) {
  const DriftSpec& F = model.drift;
  const double T = model.horizon;
  const int d = model.dim;
  const double gronwall = std::sqrt(static_cast<double>(d)) * std::exp(F.m_f * T) * (1.0 + 1e-9);
  const detail::PointSampler s(d, o, 0x66);
  double tele = 0.0, inv = 0.0, gr = 0.0, gr_ratio = 0.0, invb_ratio = 0.0, recon = 0.0;
  int point = 0;
  for (PartitionKind kind : {PartitionKind::uniform, PartitionKind::geometric}) {
    for (int n : {10, 100, 1000, 10000}) {
      const Partition part = make_partition(n, kind, T, o.geometric_c);
      const Vec x = s.y(point++);
      const BrokenLine bl = broken_line(F, part, x);
      const double mj = max_jacobian_norm(bl);
      gr = std::max(gr, mj);
      gr_ratio = std::max(gr_ratio, mj / gronwall);
      if (n <= 1000) {
        for (int k : {n / 3, n / 2, n}) {
          const Mat prod = product_jacobian(bl, k);
          tele = std::max(tele, op_norm(bl.jacobians[k] - prod) / std::max(1.0, op_norm(prod)));
          const Mat direct = bl.jacobians[k].partialPivLu().inverse();
          const Mat ip = inverse_jacobian_product(bl, k);
          inv = std::max(inv, op_norm(ip - direct) / std::max(1.0, op_norm(direct)));
        }
      }
      const double hm = part.max_step() * F.m_f;
      if (hm <= 0.5) {
        const double bound = std::pow(1.0 + 2.0 * hm, n) * (1.0 + 1e-9);
        double worst = 0.0;
        for (int k : {n / 2, n}) worst = std::max(worst, op_norm(inverse_jacobian_product(bl, k)));
        invb_ratio = std::max(invb_ratio, worst / bound);
      }
      if (n <= 100 && hm <= 0.5) {
        InversionOptions io;
        io.tol = o.inversion_tol;
        for (int k : {1, n / 2, n}) {
          const Vec y = s.y(point++);
          recon = std::max(recon, invert_broken_line(F, part, k, y, io).residual);
        }
      }
    }
  }
  std::vector<CheckResult> out;
  out.push_back(detail::check_le("chain", "recursion_vs_product", tele, 1e-12));
  out.push_back(detail::check_le("chain", "inverse_product", inv, 1e-10));
  out.push_back(detail::check_le("chain", "discrete_gronwall", gr_ratio, 1.0,
                                 "max |g^_*| = " + std::to_string(gr)));
  out.push_back(detail::check_le("chain", "inverse_bound", invb_ratio, 1.0));
  out.push_back(detail::check_le("chain", "inversion_residual", recon, o.inversion_tol));
  {
    // t on every dyadic grid, so phi^n(t) = t and only the Jacobian error remains.
    const Vec x = s.y(point++);
    const double t = 0.75 * T;
    const ConvergenceTable tb = jacobian_limit_check(F, x, t, T, {64, 128, 256, 512}, o.flow_tol);
    if (tb.degenerate) {
      out.push_back({"chain", "jacobian_limit_order", 0.0, 0.0, true, "exact at every resolution"});
    } else {
      CheckResult r{"chain", "jacobian_limit_order", tb.slope, 0.8, tb.slope >= 0.8 && tb.slope <= 1.2, {}};
      r.detail = "expected order in [0.8, 1.2]";
      // F_* independent of x at constant speed gives an error of pure rounding.
      if (tb.rows.back().error < 1e-12) {
        r.passed = true;
        r.detail = "errors at rounding level";
      }
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace detrend
