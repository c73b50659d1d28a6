#pragma once

#include "detrend/types.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace detrend {

struct ConvergenceRow {
  double resolution = 0.0;  // n or n_steps
  double h = 0.0;           // mesh size
  double error = 0.0;
};

/// Errors against mesh size with the least-squares slope of log(error) on
/// log(h). A table whose errors are all zero is degenerate and has no slope.
struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double fit_residual = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
  int non_monotone_steps = 0;  // rows whose error did not decrease under refinement

  bool monotone_decreasing() const { return non_monotone_steps == 0; }
};

/// Rows must be ordered by increasing resolution; at least three are required.
inline ConvergenceTable fit_convergence(std::vector<ConvergenceRow> rows) {
  if (rows.size() < 3) throw PreconditionError("convergence table needs at least 3 rows");
  ConvergenceTable table;
  table.rows = std::move(rows);
  bool all_zero = true;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (table.rows[i].error != 0.0) all_zero = false;
    if (i > 0 && !(table.rows[i].error < table.rows[i - 1].error)) ++table.non_monotone_steps;
  }
  if (all_zero) {
    table.degenerate = true;
    table.non_monotone_steps = 0;
    return table;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (const auto& r : table.rows) {
    if (!(r.error > 0.0) || !std::isfinite(r.error)) continue;
    const double lx = std::log(r.h);
    const double ly = std::log(r.error);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++m;
  }
  if (m < 2) {
    table.degenerate = true;
    return table;
  }
  const double denom = m * sxx - sx * sx;
  table.slope = (m * sxy - sx * sy) / denom;
  const double intercept = (sy - table.slope * sx) / m;
  double ss = 0.0;
  for (const auto& r : table.rows) {
    if (!(r.error > 0.0) || !std::isfinite(r.error)) continue;
    const double res = std::log(r.error) - (intercept + table.slope * std::log(r.h));
    ss += res * res;
  }
  table.fit_residual = std::sqrt(ss / m);
  return table;
}

}  // namespace detrend
