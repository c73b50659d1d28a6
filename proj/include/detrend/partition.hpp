#pragma once

#include "detrend/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace detrend {

enum class PartitionKind { uniform, geometric };

/// Time grid 0 = t_0 < ... < t_n = T with steps h_k = t_{k+1} - t_k.
/// ratio_c is the realized max/min step ratio (the A4 comparability constant).
struct Partition {
  std::vector<double> times;
  std::vector<double> steps;
  double ratio_c = 1.0;

  int n() const { return static_cast<int>(steps.size()); }
  double horizon() const { return times.back(); }
  double max_step() const { return *std::max_element(steps.begin(), steps.end()); }

  /// Index of the largest grid point <= t (phi^n(t)); t is clamped to [0, T].
  int floor_index(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0;
    return static_cast<int>(std::distance(times.begin(), it)) - 1;
  }
};

inline Partition partition_from_weights(const std::vector<double>& weights, double horizon) {
  Partition p;
  const int n = static_cast<int>(weights.size());
  double total = 0.0;
  for (double w : weights) total += w;
  p.times.resize(n + 1);
  p.times[0] = 0.0;
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    acc += weights[k];
    p.times[k + 1] = horizon * (acc / total);
  }
  p.times[n] = horizon;
  p.steps.resize(n);
  for (int k = 0; k < n; ++k) p.steps[k] = p.times[k + 1] - p.times[k];
  const auto [lo, hi] = std::minmax_element(p.steps.begin(), p.steps.end());
  p.ratio_c = *hi / *lo;
  return p;
}

/// uniform: equal steps. geometric: h_k proportional to r^k with
/// r = 1 + c/n, so max/min step ratio stays below e^c for every n.
inline Partition make_partition(int n, PartitionKind kind, double horizon, double geometric_c = 1.0) {
  if (n < 1) throw ModelError("partition needs n >= 1");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ModelError("partition horizon must be positive");
  if (kind == PartitionKind::uniform) {
    Partition p;
    p.times.resize(n + 1);
    for (int k = 0; k <= n; ++k) p.times[k] = horizon * k / n;
    p.times[n] = horizon;
    p.steps.resize(n);
    for (int k = 0; k < n; ++k) p.steps[k] = p.times[k + 1] - p.times[k];
    const auto [lo, hi] = std::minmax_element(p.steps.begin(), p.steps.end());
    p.ratio_c = *hi / *lo;
    return p;
  }
  if (!(geometric_c > 0.0) || !std::isfinite(geometric_c))
    throw ModelError("geometric partition needs c > 0 for an n-independent step ratio");
  const double r = 1.0 + geometric_c / n;
  std::vector<double> w(n);
  for (int k = 0; k < n; ++k) w[k] = std::pow(r, k);
  return partition_from_weights(w, horizon);
}

inline std::string to_string(PartitionKind kind) { return kind == PartitionKind::uniform ? "uniform" : "geometric"; }

}  // namespace detrend
