#pragma once

#include "detrend/types.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace detrend {

struct QuadratureRule {
  std::vector<double> nodes;    // on [0, 1]
  std::vector<double> weights;  // sum to 1
};

/// n-point Gauss-Legendre rule mapped to [0, 1]. Roots of P_n by Newton
/// iteration from the Chebyshev-like initial guesses.
inline QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw PreconditionError("quadrature needs at least one node");
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      const double p = std::legendre(n, x);
      const double pm = n > 1 ? std::legendre(n - 1, x) : 1.0;
      dp = n * (x * p - pm) / (x * x - 1.0);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    {
      const double p = std::legendre(n, x);
      const double pm = n > 1 ? std::legendre(n - 1, x) : 1.0;
      dp = n * (x * p - pm) / (x * x - 1.0);
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[n - 1 - i] = 0.5 * (1.0 + x);
    rule.weights[n - 1 - i] = 0.5 * w;
  }
  return rule;
}

}  // namespace detrend
