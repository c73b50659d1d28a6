#pragma once

#include "detrend/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace detrend::ode {

struct IntegratorOptions {
  double tol = 1e-10;  // absolute and relative tolerance of the local error
  int fixed_steps = 0;  // > 0 selects fixed-step mode with this many steps
  long max_steps = 2'000'000;
};

struct IntegrationStats {
  long accepted = 0;
  long rejected = 0;
  long evaluations = 0;
};

/// Explicit Runge-Kutta 5(4) pair of Dormand and Prince with a PI step-size
/// controller (Hairer, Norsett & Wanner, Solving ODEs I, II.4 and IV.2).
/// `rhs(t, y, dy)` writes dy/dt into `dy`. Integrates y in place from t0 to
/// t1; t1 < t0 integrates backwards. y is left untouched when t1 == t0.
template <class Rhs>
IntegrationStats integrate(Rhs&& rhs, double t0, double t1, Eigen::VectorXd& y,
                           const IntegratorOptions& opt = {}) {
  IntegrationStats stats;
  if (t1 == t0) return stats;

  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                          a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                          e6 = 22.0 / 525, e7 = -1.0 / 40;

  const Eigen::Index n = y.size();
  Eigen::VectorXd k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ys(n), ynew(n);
  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double span = std::abs(t1 - t0);

  auto stage_step = [&](double t, double h) {
    ys = y + h * (a21 * k1);
    rhs(t + c2 * h, ys, k2);
    ys = y + h * (a31 * k1 + a32 * k2);
    rhs(t + c3 * h, ys, k3);
    ys = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    rhs(t + c4 * h, ys, k4);
    ys = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    rhs(t + c5 * h, ys, k5);
    ys = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    rhs(t + h, ys, k6);
    ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    stats.evaluations += 5;
  };

  double t = t0;
  rhs(t, y, k1);
  ++stats.evaluations;

  if (opt.fixed_steps > 0) {
    const double h = (t1 - t0) / opt.fixed_steps;
    for (int s = 0; s < opt.fixed_steps; ++s) {
      const double ts = t0 + s * h;
      stage_step(ts, h);
      y = ynew;
      ++stats.accepted;
      const double tn = s + 1 == opt.fixed_steps ? t1 : t0 + (s + 1) * h;
      rhs(tn, y, k1);
      ++stats.evaluations;
    }
    return stats;
  }

  const double tol = opt.tol;
  auto scaled_norm = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& ref) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = tol + tol * std::abs(ref(i));
      acc += (v(i) / sc) * (v(i) / sc);
    }
    return std::sqrt(acc / static_cast<double>(n));
  };

  // Initial step guess.
  double h;
  {
    const double dnf = scaled_norm(k1, y);
    const double dny = scaled_norm(y, y);
    h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * dny / dnf;
    h = std::min(h, span);
    ys = y + dir * h * k1;
    rhs(t + dir * h, ys, k2);
    ++stats.evaluations;
    const double der2 = scaled_norm(Eigen::VectorXd(k2 - k1), y) / h;
    const double der12 = std::max(std::abs(der2), dnf);
    const double h1 = der12 <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der12, 0.2);
    h = std::min({100.0 * h, h1, span});
  }

  constexpr double kBeta = 0.04;
  constexpr double kExpo = 0.2 - kBeta * 0.75;
  constexpr double kSafe = 0.9;
  constexpr double kFacMin = 0.2;   // h shrinks by at most 5x
  constexpr double kFacMax = 10.0;  // h grows by at most 10x
  double fac_old = 1e-4;
  bool last_rejected = false;

  while (true) {
    if (stats.accepted + stats.rejected >= opt.max_steps)
      throw IntegrationError("step budget exhausted at t=" + std::to_string(t), t);
    if (h < 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)))
      throw IntegrationError("step size underflow at t=" + std::to_string(t), t);

    const double remaining = std::abs(t1 - t);
    bool last = false;
    if (h >= remaining) {
      h = remaining;
      last = true;
    }
    const double hs = dir * h;
    stage_step(t, hs);
    rhs(t + hs, ynew, k7);
    ++stats.evaluations;

    ys = hs * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double err = 0.0;
    {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double sc = tol + tol * std::max(std::abs(y(i)), std::abs(ynew(i)));
        acc += (ys(i) / sc) * (ys(i) / sc);
      }
      err = std::sqrt(acc / static_cast<double>(n));
    }
    if (!std::isfinite(err)) {
      ++stats.rejected;
      h *= kFacMin;
      last_rejected = true;
      continue;
    }

    const double fac11 = std::pow(err, kExpo);
    if (err <= 1.0) {
      double fac = fac11 / std::pow(fac_old, kBeta);
      fac = std::clamp(fac / kSafe, 1.0 / kFacMax, 1.0 / kFacMin);
      double hnew = h / fac;
      fac_old = std::max(err, 1e-4);
      ++stats.accepted;
      y = ynew;
      k1 = k7;
      if (last) {
        return stats;
      }
      t += hs;
      if (last_rejected) hnew = std::min(hnew, h);
      last_rejected = false;
      h = hnew;
    } else {
      ++stats.rejected;
      h /= std::min(1.0 / kFacMin, fac11 / kSafe);
      last_rejected = true;
    }
  }
}

}  // namespace detrend::ode
