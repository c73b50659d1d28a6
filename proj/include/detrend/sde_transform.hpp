#pragma once

#include "detrend/drift_models.hpp"
#include "detrend/flow.hpp"
#include "detrend/parallel.hpp"
#include "detrend/partition.hpp"
#include "detrend/random.hpp"
#include "detrend/types.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace detrend {

/// Coefficients of the trend-free SDE for Y~_t = g^{-1}(0; t, Y_t):
///   m~(t,y)     = g_*^{-1}(t;0,y) { m(t, g) - 1/2 sum_ij c_ij(t;0,y) a_ij(t, g) }
///   sigma~(t,y) = g_*^{-1}(t;0,y) sigma(t, g),       g = g(t; 0, y), a = sigma sigma^T.
/// The curvature term enters with a minus sign because the Hessian of the
/// inverse flow is -g_*^{-1} c_jk.
struct TransformedValue {
  Vec m_tilde;
  Mat sigma_tilde;
  FlowJet jet;
};

class TransformedCoefficients {
 public:
  TransformedCoefficients(std::shared_ptr<const ModelSpec> model, double flow_tol)
      : model_(std::move(model)), flow_tol_(flow_tol) {}

  TransformedValue evaluate(double t, const Vec& y) const {
    TransformedValue out;
    try {
      out.jet = flow_jet(model_->drift, 0.0, t, y, flow_tol_);
    } catch (const IntegrationError& e) {
      throw IntegrationError(std::string(e.what()) + " while transforming " + format_point(t, y), e.last_time());
    }
    const Vec& g = out.jet.g;
    const Mat sig = model_->sigma(t, g);
    const Mat a = sig * sig.transpose();
    const int d = model_->dim;
    Vec drift = model_->bounded_drift(t, g);
    for (int l = 0; l < d; ++l) drift(l) -= 0.5 * out.jet.c[l].cwiseProduct(a).sum();
    out.m_tilde = out.jet.g_star_inv * drift;
    out.sigma_tilde = out.jet.g_star_inv * sig;
    return out;
  }

  Vec m_tilde(double t, const Vec& y) const { return evaluate(t, y).m_tilde; }
  Mat sigma_tilde(double t, const Vec& y) const { return evaluate(t, y).sigma_tilde; }

  const ModelSpec& source() const { return *model_; }
  std::shared_ptr<const ModelSpec> source_ptr() const { return model_; }
  double flow_tol() const { return flow_tol_; }

 private:
  std::shared_ptr<const ModelSpec> model_;
  double flow_tol_;
};

/// Requires the model to pass check_assumptions (default sampling plan).
inline TransformedCoefficients make_transform(const ModelSpec& model, double flow_tol = kDefaultFlowTol) {
  const AssumptionReport rep = check_assumptions(model);
  if (!rep.passed())
    throw AssumptionError(rep.failures.empty() ? "model violates assumptions" : rep.failures.front());
  return TransformedCoefficients(std::make_shared<const ModelSpec>(model), flow_tol);
}

enum class Scheme { original, transformed, mapped_back, chain, transformed_chain };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::original: return "original";
    case Scheme::transformed: return "transformed";
    case Scheme::mapped_back: return "mapped_back";
    case Scheme::chain: return "chain";
    case Scheme::transformed_chain: return "transformed_chain";
  }
  return "unknown";
}

/// Seeded set of trajectories on a common time grid, stored path-major.
/// A flagged path overflowed; its states from the failing step on are NaN.
struct PathEnsemble {
  std::vector<double> times;
  int n_paths = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  Scheme scheme = Scheme::original;
  std::vector<double> data;
  std::vector<std::uint8_t> flagged;

  PathEnsemble() = default;
  PathEnsemble(std::vector<double> grid, int paths, int d, std::uint64_t s, Scheme sc)
      : times(std::move(grid)), n_paths(paths), dim(d), seed(s), scheme(sc),
        data(static_cast<std::size_t>(paths) * times.size() * d, 0.0), flagged(paths, 0) {}

  int n_steps() const { return static_cast<int>(times.size()) - 1; }

  Eigen::Map<Eigen::VectorXd> state(int path, int step) {
    return {data.data() + offset(path, step), dim};
  }
  Eigen::Map<const Eigen::VectorXd> state(int path, int step) const {
    return {data.data() + offset(path, step), dim};
  }
  Vec at(int path, int step) const { return state(path, step); }

  int flagged_count() const {
    int n = 0;
    for (auto f : flagged) n += f;
    return n;
  }

 private:
  std::size_t offset(int path, int step) const {
    return (static_cast<std::size_t>(path) * times.size() + static_cast<std::size_t>(step)) * dim;
  }
};

/// Byte-level equality of grid, flags and states.
inline bool bitwise_equal(const PathEnsemble& a, const PathEnsemble& b) {
  auto same = [](const auto& x, const auto& y) {
    return x.size() == y.size() && (x.empty() || std::memcmp(x.data(), y.data(), x.size() * sizeof(x[0])) == 0);
  };
  return a.n_paths == b.n_paths && a.dim == b.dim && same(a.times, b.times) && same(a.data, b.data) &&
         same(a.flagged, b.flagged);
}

/// One explicit Euler step y + h drift + sqrt(h) sigma xi. Shared by the
/// diffusion schemes and the Markov chain so identical inputs give identical bits.
inline Vec euler_step(const Vec& y, const Vec& drift, const Mat& sigma, double h, const Vec& xi) {
  return y + h * drift + std::sqrt(h) * (sigma * xi);
}

namespace detail {

inline void flag_path(PathEnsemble& ens, int path, int from_step) {
  ens.flagged[path] = 1;
  for (int k = from_step; k <= ens.n_steps(); ++k) ens.state(path, k).setConstant(std::numeric_limits<double>::quiet_NaN());
}

/// Euler recursion driven by `coeffs(path, k, t_k, y_k) -> pair<Vec, Mat>`.
template <class Coeffs>
PathEnsemble euler_paths(const Partition& grid, const Vec& x0, int n_paths, const NoiseStream& noise,
                         std::uint64_t seed, Scheme scheme, Coeffs&& coeffs) {
  if (n_paths < 1) throw PreconditionError("n_paths must be >= 1");
  const int d = static_cast<int>(x0.size());
  PathEnsemble ens(grid.times, n_paths, d, seed, scheme);
  parallel_for(static_cast<std::size_t>(n_paths), [&](std::size_t pi) {
    const int p = static_cast<int>(pi);
    Vec y = x0;
    ens.state(p, 0) = y;
    for (int k = 0; k < grid.n(); ++k) {
      const double t = grid.times[k];
      const auto c = coeffs(p, k, t, y);
      const Vec xi = noise.draw(static_cast<std::uint64_t>(p), static_cast<std::uint32_t>(k), d);
      y = euler_step(y, c.first, c.second, grid.steps[k], xi);
      if (!all_finite(y)) {
        flag_path(ens, p, k + 1);
        return;
      }
      ens.state(p, k + 1) = y;
    }
  });
  return ens;
}

}  // namespace detail

/// Euler-Maruyama for dY = {F + m} dt + sigma dW on the given grid.
inline PathEnsemble simulate_original(const ModelSpec& model, const Partition& grid, int n_paths,
                                      std::uint64_t seed, InnovationKind innovations = InnovationKind::normal) {
  const NoiseStream noise(seed, innovations);
  return detail::euler_paths(
      grid, model.x0, n_paths, noise, seed, Scheme::original,
      [&](int, int, double t, const Vec& y) {
        return std::pair<Vec, Mat>(model.drift.f(t, y) + model.bounded_drift(t, y), model.sigma(t, y));
      });
}

inline PathEnsemble simulate_original(const ModelSpec& model, int n_steps, int n_paths, std::uint64_t seed) {
  if (n_steps < 1) throw PreconditionError("n_steps must be >= 1");
  return simulate_original(model, make_partition(n_steps, PartitionKind::uniform, model.horizon), n_paths, seed);
}

struct TransformedRun {
  PathEnsemble transformed;
  /// g(t_k; 0, Y~_k) taken from the flow jets evaluated during simulation.
  PathEnsemble image;
};

/// Euler-Maruyama for dY~ = m~ dt + sigma~ dW with the same noise convention
/// as simulate_original. Also returns the pushed-forward states.
inline TransformedRun simulate_transformed_with_image(const TransformedCoefficients& tc, const Partition& grid,
                                                      int n_paths, std::uint64_t seed) {
  const ModelSpec& model = tc.source();
  const NoiseStream noise(seed);
  PathEnsemble image(grid.times, n_paths, model.dim, seed, Scheme::mapped_back);
  struct Eval {
    const TransformedCoefficients& tc;
    PathEnsemble& image;
    std::pair<Vec, Mat> operator()(int p, int k, double t, const Vec& y) const {
      const TransformedValue v = tc.evaluate(t, y);
      image.state(p, k) = v.jet.g;
      return {v.m_tilde, v.sigma_tilde};
    }
  };
  TransformedRun run;
  run.transformed = detail::euler_paths(grid, model.x0, n_paths, noise, seed, Scheme::transformed,
                                        Eval{tc, image});
  const int n = grid.n();
  parallel_for(static_cast<std::size_t>(n_paths), [&](std::size_t pi) {
    const int p = static_cast<int>(pi);
    if (run.transformed.flagged[p]) {
      detail::flag_path(image, p, 0);
      return;
    }
    image.state(p, n) = advance_flow(model.drift, 0.0, grid.times[n], run.transformed.at(p, n), tc.flow_tol());
  });
  run.image = std::move(image);
  return run;
}

inline PathEnsemble simulate_transformed(const TransformedCoefficients& tc, const Partition& grid, int n_paths,
                                         std::uint64_t seed) {
  const NoiseStream noise(seed);
  return detail::euler_paths(
      grid, tc.source().x0, n_paths, noise, seed, Scheme::transformed,
      [&](int, int, double t, const Vec& y) {
        TransformedValue v = tc.evaluate(t, y);
        return std::pair<Vec, Mat>(std::move(v.m_tilde), std::move(v.sigma_tilde));
      });
}

inline PathEnsemble simulate_transformed(const TransformedCoefficients& tc, int n_steps, int n_paths,
                                         std::uint64_t seed) {
  if (n_steps < 1) throw PreconditionError("n_steps must be >= 1");
  return simulate_transformed(tc, make_partition(n_steps, PartitionKind::uniform, tc.source().horizon), n_paths,
                              seed);
}

/// Applies y -> g(t_k; 0, y) to every state.
inline PathEnsemble map_back(const TransformedCoefficients& tc, const PathEnsemble& ens) {
  PathEnsemble out = ens;
  out.scheme = Scheme::mapped_back;
  const DriftSpec& drift = tc.source().drift;
  parallel_for(static_cast<std::size_t>(ens.n_paths), [&](std::size_t pi) {
    const int p = static_cast<int>(pi);
    if (ens.flagged[p]) return;
    for (int k = 1; k <= ens.n_steps(); ++k)
      out.state(p, k) = advance_flow(drift, 0.0, ens.times[k], ens.at(p, k), tc.flow_tol());
  });
  return out;
}

struct DiscrepancyRow {
  int step = 0;
  double t = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

struct DiscrepancyTable {
  int n_steps = 0;
  int n_paths = 0;
  int flagged = 0;  // paths flagged in either simulation (excluded from statistics)
  std::vector<DiscrepancyRow> rows;

  const DiscrepancyRow& terminal() const { return rows.back(); }
};

/// |Y_k - g(t_k; 0, Y~_k)| statistics for paths sharing their noise.
inline DiscrepancyTable discrepancy(const PathEnsemble& original, const PathEnsemble& image) {
  DiscrepancyTable table;
  table.n_steps = original.n_steps();
  table.n_paths = original.n_paths;
  std::vector<int> live;
  for (int p = 0; p < original.n_paths; ++p) {
    if (original.flagged[p] || image.flagged[p])
      ++table.flagged;
    else
      live.push_back(p);
  }
  for (int k = 0; k <= original.n_steps(); ++k) {
    DiscrepancyRow row;
    row.step = k;
    row.t = original.times[k];
    double sum = 0.0;
    for (int p : live) {
      const double e = (original.state(p, k) - image.state(p, k)).norm();
      row.max = std::max(row.max, e);
      sum += e;
    }
    row.mean = live.empty() ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(live.size());
    table.rows.push_back(row);
  }
  return table;
}

inline DiscrepancyTable pushforward_discrepancy(const ModelSpec& model, const TransformedCoefficients& tc,
                                                int n_steps, int n_paths, std::uint64_t seed) {
  if (n_steps < 1) throw PreconditionError("n_steps must be >= 1");
  const Partition grid = make_partition(n_steps, PartitionKind::uniform, model.horizon);
  const PathEnsemble original = simulate_original(model, grid, n_paths, seed);
  const TransformedRun run = simulate_transformed_with_image(tc, grid, n_paths, seed);
  return discrepancy(original, run.image);
}

}  // namespace detrend
