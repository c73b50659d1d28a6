#pragma once

#include "detrend/convergence.hpp"
#include "detrend/drift_models.hpp"
#include "detrend/flow.hpp"
#include "detrend/parallel.hpp"
#include "detrend/partition.hpp"
#include "detrend/quadrature.hpp"
#include "detrend/random.hpp"
#include "detrend/sde_transform.hpp"
#include "detrend/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace detrend {

/// Euler broken line g^(t_k; 0, x) of x' = F(t, x) on a partition:
///   values[k+1]    = values[k] + h_k F(t_k, values[k])
///   jacobians[k+1] = I + sum_{j<=k} h_j F_*(t_j, values[j]) jacobians[j]
///   factors[k]     = I + h_k F_*(t_k, values[k])
/// so that jacobians[k] = factors[k-1] ... factors[0].
struct BrokenLine {
  Vec base;
  std::vector<Vec> values;
  std::vector<Mat> jacobians;
  std::vector<Mat> factors;

  int n() const { return static_cast<int>(factors.size()); }
};

inline BrokenLine broken_line(const DriftSpec& drift, const Partition& partition, const Vec& x) {
  const int d = static_cast<int>(x.size());
  const int n = partition.n();
  BrokenLine bl;
  bl.base = x;
  bl.values.reserve(n + 1);
  bl.jacobians.reserve(n + 1);
  bl.factors.reserve(n);
  bl.values.push_back(x);
  bl.jacobians.push_back(Mat::Identity(d, d));
  Mat sum = Mat::Zero(d, d);
  const Mat eye = Mat::Identity(d, d);
  for (int k = 0; k < n; ++k) {
    const double t = partition.times[k];
    const double h = partition.steps[k];
    const Vec& v = bl.values[k];
    const Mat jac = drift.jac(t, v);
    Vec next = v + h * drift.f(t, v);
    if (!all_finite(next) || !all_finite(jac))
      throw IntegrationError("non-finite broken line at " + format_point(t, v), t);
    sum += h * (jac * bl.jacobians[k]);
    bl.factors.push_back(eye + h * jac);
    bl.jacobians.push_back(eye + sum);
    bl.values.push_back(std::move(next));
  }
  return bl;
}

/// Product form factors[k-1] * ... * factors[0] of the broken-line Jacobian.
inline Mat product_jacobian(const BrokenLine& bl, int k) {
  const int d = static_cast<int>(bl.base.size());
  Mat p = Mat::Identity(d, d);
  for (int j = 0; j < k; ++j) p = bl.factors[j] * p;
  return p;
}

/// factors[0]^{-1} * ... * factors[k-1]^{-1}, the inverse of jacobians[k].
inline Mat inverse_jacobian_product(const BrokenLine& bl, int k) {
  if (k < 0 || k > bl.n()) throw PreconditionError("level out of range");
  const int d = static_cast<int>(bl.base.size());
  Mat p = Mat::Identity(d, d);
  for (int j = k - 1; j >= 0; --j) p = bl.factors[j].partialPivLu().inverse() * p;
  return p;
}

inline double max_jacobian_norm(const BrokenLine& bl) {
  double m = 0.0;
  for (const auto& j : bl.jacobians) m = std::max(m, op_norm(j));
  return m;
}

enum class InversionMode { layered, full_newton };

struct InversionOptions {
  double tol = 1e-12;
  InversionMode mode = InversionMode::layered;
  int max_iterations = 100;
};

struct InversionResult {
  Vec x;
  Vec image;  // g^(t_k; 0, x) evaluated forward
  double residual = 0.0;
  int iterations = 0;
};

/// The per-step map x -> x + h F(t, x) is a contraction perturbation of the
/// identity when h M_F <= 1/2, which makes every layer uniquely invertible.
inline void require_invertible_steps(const DriftSpec& drift, const Partition& partition) {
  const double worst = partition.max_step() * drift.m_f;
  if (!(worst <= 0.5))
    throw PreconditionError("broken line not invertible: max h * M_F = " + std::to_string(worst) + " > 1/2");
}

namespace detail {

/// Solves x + h F(t, x) = z by damped Newton, iterating to the rounding floor.
inline Vec invert_layer(const DriftSpec& drift, double t, double h, const Vec& z, int max_iterations,
                        int* iterations = nullptr) {
  const int d = static_cast<int>(z.size());
  const Mat eye = Mat::Identity(d, d);
  Vec x = z - h * drift.f(t, z);
  Vec r = x + h * drift.f(t, x) - z;
  double rn = r.norm();
  const double floor = 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + z.norm());
  int it = 0;
  for (; it < max_iterations && rn > floor; ++it) {
    const Mat a = eye + h * drift.jac(t, x);
    const Vec dx = a.partialPivLu().solve(r);
    double lambda = 1.0;
    bool improved = false;
    for (int damp = 0; damp < 30; ++damp) {
      const Vec xn = x - lambda * dx;
      const Vec rn_vec = xn + h * drift.f(t, xn) - z;
      const double rnn = rn_vec.norm();
      if (rnn < rn) {
        x = xn;
        r = rn_vec;
        rn = rnn;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!improved) break;  // rounding floor reached
  }
  if (!(rn <= 1e-6 * (1.0 + z.norm())) || !all_finite(x))
    throw InversionError("layer inversion failed at " + format_point(t, z), rn);
  if (iterations) *iterations += it;
  return x;
}

struct LayeredInverse {
  Vec x;
  Mat inverse_jacobian;  // (g^_*)^{-1}(t_k; 0, x)
};

/// Backward sweep through the layers k-1, ..., 0. When `with_jacobian` is
/// set, accumulates the product of inverse step factors at the recovered
/// layer points, i.e. the inverse Jacobian of the broken line at x.
inline LayeredInverse invert_layers(const DriftSpec& drift, const Partition& partition, int k, const Vec& y,
                                    bool with_jacobian, int max_iterations, int* iterations = nullptr) {
  const int d = static_cast<int>(y.size());
  const Mat eye = Mat::Identity(d, d);
  LayeredInverse out;
  out.x = y;
  if (with_jacobian) out.inverse_jacobian = eye;
  for (int j = k - 1; j >= 0; --j) {
    const double t = partition.times[j];
    const double h = partition.steps[j];
    out.x = invert_layer(drift, t, h, out.x, max_iterations, iterations);
    if (with_jacobian) {
      const Mat factor = eye + h * drift.jac(t, out.x);
      out.inverse_jacobian = factor.partialPivLu().solve(out.inverse_jacobian);
    }
  }
  return out;
}

inline Vec forward_to(const DriftSpec& drift, const Partition& partition, int k, const Vec& x) {
  Vec v = x;
  for (int j = 0; j < k; ++j) v = v + partition.steps[j] * drift.f(partition.times[j], v);
  return v;
}

}  // namespace detail

/// Finds x with g^(t_k; 0, x) = y to within opt.tol. The layered mode
/// inverts one Euler step at a time; the full-map mode runs Newton on the
/// composed map with the broken-line Jacobian. Layered results that miss the
/// tolerance are polished with full-map Newton.
inline InversionResult invert_broken_line(const DriftSpec& drift, const Partition& partition, int k, const Vec& y,
                                          const InversionOptions& opt = {}) {
  if (k < 0 || k > partition.n()) throw PreconditionError("level out of range");
  require_invertible_steps(drift, partition);
  InversionResult res;
  res.x = y;
  if (opt.mode == InversionMode::layered)
    res.x = detail::invert_layers(drift, partition, k, y, false, opt.max_iterations, &res.iterations).x;
  res.image = detail::forward_to(drift, partition, k, res.x);
  res.residual = (res.image - y).norm();
  int newton = 0;
  while (res.residual > opt.tol) {
    if (newton++ >= opt.max_iterations)
      throw InversionError("broken-line inversion did not converge", res.residual);
    const BrokenLine bl = broken_line(drift, partition, res.x);
    const Vec dx = bl.jacobians[k].partialPivLu().solve(Vec(bl.values[k] - y));
    double lambda = 1.0;
    bool improved = false;
    for (int damp = 0; damp < 30; ++damp) {
      const Vec xn = res.x - lambda * dx;
      const Vec img = detail::forward_to(drift, partition, k, xn);
      const double r = (img - y).norm();
      if (r < res.residual) {
        res.x = xn;
        res.image = img;
        res.residual = r;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    ++res.iterations;
    if (!improved) throw InversionError("broken-line inversion stalled", res.residual);
  }
  return res;
}

/// Markov chain X(t_{k+1}) = X(t_k) + h_k {F + m}(t_k, X(t_k)) + sqrt(h_k) sigma(t_k, X(t_k)) eps(t_{k+1}).
/// innovations(p, k) is eps(t_{k+1}), the noise of step k.
struct ChainRun {
  Partition partition;
  PathEnsemble states;
  std::vector<double> innovations;  // n_paths x n x d
  std::uint64_t seed = 0;
  InnovationKind kind = InnovationKind::normal;

  Eigen::Map<const Eigen::VectorXd> innovation(int path, int step) const {
    return {innovations.data() + (static_cast<std::size_t>(path) * partition.n() + step) * states.dim,
            states.dim};
  }
};

inline ChainRun simulate_chain(const ModelSpec& model, const Partition& partition, int n_paths, std::uint64_t seed,
                               InnovationKind kind = InnovationKind::normal) {
  ChainRun run;
  run.partition = partition;
  run.seed = seed;
  run.kind = kind;
  run.states = simulate_original(model, partition, n_paths, seed, kind);
  run.states.scheme = Scheme::chain;
  const int d = model.dim;
  const int n = partition.n();
  run.innovations.resize(static_cast<std::size_t>(n_paths) * n * d);
  const NoiseStream noise(seed, kind);
  for (int p = 0; p < n_paths; ++p)
    for (int k = 0; k < n; ++k) {
      const Vec e = noise.draw(static_cast<std::uint64_t>(p), static_cast<std::uint32_t>(k), d);
      std::copy(e.data(), e.data() + d, run.innovations.data() + (static_cast<std::size_t>(p) * n + k) * d);
    }
  return run;
}

/// Trend-free chain X~(t_k) = g^{-1}(0; t_k, X(t_k)) with innovation-dependent
/// coefficients
///   m~     = ( int_0^1 (g^_*)^{-1}(0; t_{k+1}, Psi_u) du ) m(t_k, g^(t_k; 0, X~(t_k)))
///   sigma~ = ( same integral ) sigma(t_k, g^(t_k; 0, X~(t_k)))
/// where Psi_u runs along the segment from g^(t_{k+1}; 0, X~(t_k)) to X(t_{k+1}).
struct TransformedChain {
  ChainRun transformed;
  int quad_nodes = 0;
  std::vector<double> m_tilde;                  // n_paths x n x d
  std::vector<double> sigma_tilde;              // n_paths x n x d x d, column-major blocks
  std::vector<double> reconstruction_residual;  // n_paths x (n+1): |g^(t_k;0,X~) - X(t_k)|
  std::vector<double> identity_residual;        // n_paths x n: residual of the X~ update identity

  int n() const { return transformed.partition.n(); }
  int dim() const { return transformed.states.dim; }

  Vec m_tilde_at(int path, int step) const {
    const int d = dim();
    return Eigen::Map<const Eigen::VectorXd>(m_tilde.data() + (static_cast<std::size_t>(path) * n() + step) * d, d);
  }
  Mat sigma_tilde_at(int path, int step) const {
    const int d = dim();
    return Eigen::Map<const Eigen::MatrixXd>(
        sigma_tilde.data() + (static_cast<std::size_t>(path) * n() + step) * d * d, d, d);
  }
  double max_reconstruction_residual() const { return max_finite(reconstruction_residual); }
  double max_identity_residual() const { return max_finite(identity_residual); }

 private:
  static double max_finite(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v)
      if (std::isfinite(x)) m = std::max(m, x);
    return m;
  }
};

struct ChainTransformOptions {
  int quad_nodes = 8;
  InversionOptions inversion{};
};

inline TransformedChain transform_chain(const ModelSpec& model, const ChainRun& run,
                                        const ChainTransformOptions& opt = {}) {
  if (opt.quad_nodes < 2) throw PreconditionError("quad_nodes must be >= 2");
  const Partition& part = run.partition;
  require_invertible_steps(model.drift, part);
  const int n = part.n();
  const int d = model.dim;
  const int n_paths = run.states.n_paths;
  const QuadratureRule rule = gauss_legendre(opt.quad_nodes);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  TransformedChain out;
  out.quad_nodes = opt.quad_nodes;
  out.transformed = run;
  out.transformed.states.scheme = Scheme::transformed_chain;
  out.m_tilde.assign(static_cast<std::size_t>(n_paths) * n * d, nan);
  out.sigma_tilde.assign(static_cast<std::size_t>(n_paths) * n * d * d, nan);
  out.reconstruction_residual.assign(static_cast<std::size_t>(n_paths) * (n + 1), nan);
  out.identity_residual.assign(static_cast<std::size_t>(n_paths) * n, nan);

  parallel_for(static_cast<std::size_t>(n_paths), [&](std::size_t pi) {
    const int p = static_cast<int>(pi);
    if (run.states.flagged[p]) return;
    std::vector<Vec> pulled(n + 1);
    std::vector<Vec> images(n + 1);
    for (int k = 0; k <= n; ++k) {
      const Vec y = run.states.at(p, k);
      InversionResult inv;
      try {
        inv = invert_broken_line(model.drift, part, k, y, opt.inversion);
      } catch (const InversionError& e) {
        throw InversionError(std::string(e.what()) + " (path " + std::to_string(p) + ", step " + std::to_string(k) + ")",
                             e.residual());
      }
      pulled[k] = inv.x;
      images[k] = inv.image;
      out.transformed.states.state(p, k) = inv.x;
      out.reconstruction_residual[static_cast<std::size_t>(p) * (n + 1) + k] = inv.residual;
    }
    for (int k = 0; k < n; ++k) {
      const double t = part.times[k];
      const double h = part.steps[k];
      const double sq = std::sqrt(h);
      const Vec& xk = images[k];
      const Vec eps = run.innovation(p, k);
      const Vec mk = model.bounded_drift(t, xk);
      const Mat sk = model.sigma(t, xk);
      const Vec start = xk + h * model.drift.f(t, xk);
      const Vec incr = h * mk + sq * (sk * eps);
      // The weights sum to one, so the rule is applied to the deviation from I;
      // this keeps Q = I exact when the inverse Jacobian is the identity.
      const Mat eye = Mat::Identity(d, d);
      Mat q = eye;
      for (std::size_t node = 0; node < rule.nodes.size(); ++node) {
        const Vec psi = start + rule.nodes[node] * incr;
        const auto li = detail::invert_layers(model.drift, part, k + 1, psi, true, opt.inversion.max_iterations);
        q += rule.weights[node] * (li.inverse_jacobian - eye);
      }
      const Vec mt = q * mk;
      const Mat st = q * sk;
      const std::size_t idx = static_cast<std::size_t>(p) * n + k;
      std::copy(mt.data(), mt.data() + d, out.m_tilde.data() + idx * d);
      std::copy(st.data(), st.data() + d * d, out.sigma_tilde.data() + idx * d * d);
      const Vec res = pulled[k + 1] - pulled[k] - h * mt - sq * (st * eps);
      out.identity_residual[idx] = res.norm();
    }
  });
  return out;
}

/// |g^_*(phi^n(t); 0, x) - g_*(t; 0, x)| on uniform partitions of [0, horizon].
inline ConvergenceTable jacobian_limit_check(const DriftSpec& drift, const Vec& x, double t, double horizon,
                                             const std::vector<int>& n_list, double flow_tol = kDefaultFlowTol) {
  const Mat exact = flow_jet(drift, 0.0, t, x, flow_tol).g_star;
  std::vector<ConvergenceRow> rows;
  for (int n : n_list) {
    const Partition part = make_partition(n, PartitionKind::uniform, horizon);
    const BrokenLine bl = broken_line(drift, part, x);
    const int k = part.floor_index(t);
    rows.push_back({static_cast<double>(n), horizon / n, op_norm(bl.jacobians[k] - exact)});
  }
  return fit_convergence(std::move(rows));
}

}  // namespace detrend
