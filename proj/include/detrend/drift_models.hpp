#pragma once

#include "detrend/random.hpp"
#include "detrend/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace detrend {

using VecField = std::function<Vec(double, const Vec&)>;
using MatField = std::function<Mat(double, const Vec&)>;
using TensorField = std::function<Tensor3(double, const Vec&)>;

/// Unbounded drift component F together with its spatial derivatives.
/// jac(t,x)(i,k) = dF_i/dx_k, hess(t,x)(i,j,k) = d^2F_i/dx_j dx_k.
/// m_f bounds the operator norms of jac and of every Hessian slice; the same
/// constant serves as the step-growth constant K of the broken-line estimates.
struct DriftSpec {
  VecField f;
  MatField jac;
  TensorField hess;
  double m_f = 0.0;
  int dim = 1;
  bool hess_from_fd = false;
};

inline std::string format_point(double t, const Vec& x) {
  std::ostringstream os;
  os.precision(17);
  os << "t=" << t << ", x=[";
  for (int i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
  os << "]";
  return os.str();
}

/// Centered finite-difference Hessian built from the analytic Jacobian,
/// step cbrt(eps) * max(1, |x|). The result is symmetrized in (j,k).
inline Tensor3 fd_hessian(const MatField& jac, double t, const Vec& x) {
  const int d = static_cast<int>(x.size());
  const double h = std::cbrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, x.norm());
  std::array<Mat, kMaxDim> djac;
  for (int k = 0; k < d; ++k) {
    Vec xp = x;
    Vec xm = x;
    xp(k) += h;
    xm(k) -= h;
    djac[k] = (jac(t, xp) - jac(t, xm)) / (2.0 * h);
  }
  Tensor3 out(d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) out(i, j, k) = 0.5 * (djac[k](i, j) + djac[j](i, k));
  return out;
}

/// Installs the finite-difference Hessian fallback when none is supplied.
inline DriftSpec with_fd_hessian(DriftSpec drift) {
  if (!drift.hess) {
    drift.hess = [jac = drift.jac](double t, const Vec& x) { return fd_hessian(jac, t, x); };
    drift.hess_from_fd = true;
  }
  return drift;
}

/// Full model: dY = {F(t,Y) + m(t,Y)} dt + sigma(t,Y) dW, Y_0 = x0, t in [0,T].
struct ModelSpec {
  std::string name;
  DriftSpec drift;
  VecField bounded_drift;
  MatField sigma;
  double lambda = 1.0;
  int dim = 1;
  double horizon = 1.0;
  Vec x0;
};

enum class BoundedDriftKind { constant, cosine };
enum class SigmaKind { constant, modulated };

/// Parameters of the built-in models. Only the fields relevant to the chosen
/// model are read.
struct BuiltinParams {
  int dim = 1;
  double horizon = 1.0;
  std::vector<double> x0{0.5};  // one entry is broadcast to all components

  // sine: F_i = alpha sin(beta x_i) + kappa x_{(i+1) mod d}
  double alpha = 1.0;
  double beta = 1.0;
  double kappa = 0.0;

  // linear: F = b(t) x. b_fn takes precedence over b_const + t * b_rate.
  std::function<Mat(double)> b_fn;
  std::vector<double> b_const{1.0};  // 1 entry -> multiple of I, d*d entries -> row-major matrix
  double b_rate = 0.0;               // b(t) = b_const + t * b_rate * I

  // scalar_logistic_bounded: F = rate x + weight / (1 + exp(-x))
  double rate = 1.0;
  double weight = 1.0;

  BoundedDriftKind m_kind = BoundedDriftKind::cosine;
  double m_value = 0.5;
  SigmaKind sigma_kind = SigmaKind::constant;
  double sigma_scale = 1.0;
};

inline const std::vector<std::string>& builtin_model_names() {
  static const std::vector<std::string> names{"zero_drift", "linear", "sine", "scalar_logistic_bounded"};
  return names;
}

namespace detail {

inline Vec broadcast_start(const std::vector<double>& x0, int dim) {
  if (x0.size() == 1) return broadcast(x0[0], dim);
  if (static_cast<int>(x0.size()) != dim) throw ModelError("x0 must have 1 or dim entries");
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v(i) = x0[i];
  return v;
}

inline Mat matrix_from(const std::vector<double>& entries, int dim) {
  if (entries.size() == 1) return entries[0] * Mat::Identity(dim, dim);
  if (static_cast<int>(entries.size()) != dim * dim) throw ModelError("b must have 1 or dim*dim entries");
  Mat m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) m(i, j) = entries[i * dim + j];
  return m;
}

inline DriftSpec zero_drift(int d) {
  DriftSpec s;
  s.dim = d;
  s.m_f = 0.0;
  s.f = [d](double, const Vec&) { return Vec(Vec::Zero(d)); };
  s.jac = [d](double, const Vec&) { return Mat(Mat::Zero(d, d)); };
  s.hess = [d](double, const Vec&) { return Tensor3(d); };
  return s;
}

inline DriftSpec linear_drift(std::function<Mat(double)> b, int d, double horizon) {
  DriftSpec s;
  s.dim = d;
  double sup = 0.0;
  constexpr int kSamples = 1000;
  for (int i = 0; i <= kSamples; ++i) {
    const Mat bt = b(horizon * i / kSamples);
    if (bt.rows() != d || bt.cols() != d) throw ModelError("b(t) must be dim x dim");
    sup = std::max(sup, op_norm(bt));
  }
  s.m_f = sup;
  s.f = [b](double t, const Vec& x) { return Vec(b(t) * x); };
  s.jac = [b](double t, const Vec&) { return Mat(b(t)); };
  s.hess = [d](double, const Vec&) { return Tensor3(d); };
  return s;
}

inline DriftSpec sine_drift(double alpha, double beta, double kappa, int d) {
  DriftSpec s;
  s.dim = d;
  s.m_f = std::max(std::abs(alpha * beta) + std::abs(kappa), std::abs(alpha) * beta * beta);
  s.f = [=](double, const Vec& x) {
    Vec out(d);
    for (int i = 0; i < d; ++i) out(i) = alpha * std::sin(beta * x(i)) + kappa * x((i + 1) % d);
    return out;
  };
  s.jac = [=](double, const Vec& x) {
    Mat out = Mat::Zero(d, d);
    for (int i = 0; i < d; ++i) {
      out(i, i) += alpha * beta * std::cos(beta * x(i));
      out(i, (i + 1) % d) += kappa;
    }
    return out;
  };
  s.hess = [=](double, const Vec& x) {
    Tensor3 out(d);
    for (int i = 0; i < d; ++i) out(i, i, i) = -alpha * beta * beta * std::sin(beta * x(i));
    return out;
  };
  return s;
}

inline DriftSpec logistic_drift(double rate, double weight) {
  DriftSpec s;
  s.dim = 1;
  s.m_f = std::max(std::abs(rate) + std::abs(weight) / 4.0, std::abs(weight) * std::sqrt(3.0) / 18.0);
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  s.f = [=](double, const Vec& x) { return Vec(Vec::Constant(1, rate * x(0) + weight * sig(x(0)))); };
  s.jac = [=](double, const Vec& x) {
    const double v = sig(x(0));
    return Mat(Mat::Constant(1, 1, rate + weight * v * (1.0 - v)));
  };
  s.hess = [=](double, const Vec& x) {
    const double v = sig(x(0));
    Tensor3 out(1);
    out(0, 0, 0) = weight * v * (1.0 - v) * (1.0 - 2.0 * v);
    return out;
  };
  return s;
}

}  // namespace detail

/// Builds one of the named models: zero_drift, linear, sine,
/// scalar_logistic_bounded. Throws ModelError for unknown names or shapes and
/// AssumptionError for parameters that break ellipticity.
inline ModelSpec builtin_model(const std::string& name, const BuiltinParams& p = {}) {
  const int d = p.dim;
  if (d < 1 || d > kMaxDim) throw ModelError("dimension must be in [1, " + std::to_string(kMaxDim) + "]");
  if (!(p.horizon > 0.0) || !std::isfinite(p.horizon)) throw ModelError("horizon must be positive");

  ModelSpec model;
  model.name = name;
  model.dim = d;
  model.horizon = p.horizon;
  model.x0 = detail::broadcast_start(p.x0, d);

  if (name == "zero_drift") {
    model.drift = detail::zero_drift(d);
  } else if (name == "linear") {
    std::function<Mat(double)> b = p.b_fn;
    if (!b) {
      const Mat b0 = detail::matrix_from(p.b_const, d);
      const double rate = p.b_rate;
      b = [b0, rate, d](double t) { return Mat(b0 + t * rate * Mat::Identity(d, d)); };
    }
    model.drift = detail::linear_drift(std::move(b), d, p.horizon);
  } else if (name == "sine") {
    if (!std::isfinite(p.alpha) || !std::isfinite(p.beta) || !std::isfinite(p.kappa))
      throw AssumptionError("sine parameters must be finite");
    model.drift = detail::sine_drift(p.alpha, p.beta, p.kappa, d);
  } else if (name == "scalar_logistic_bounded") {
    if (d != 1) throw ModelError("scalar_logistic_bounded requires dim = 1");
    model.drift = detail::logistic_drift(p.rate, p.weight);
  } else {
    throw ModelError("unknown model '" + name + "'");
  }

  if (!std::isfinite(p.m_value)) throw AssumptionError("bounded drift must be finite");
  const double mv = p.m_value;
  if (p.m_kind == BoundedDriftKind::constant) {
    model.bounded_drift = [mv, d](double, const Vec&) { return Vec(Vec::Constant(d, mv)); };
  } else {
    model.bounded_drift = [mv, d](double, const Vec& x) {
      Vec out(d);
      for (int i = 0; i < d; ++i) out(i) = mv * std::cos(x(i));
      return out;
    };
  }

  const double s = p.sigma_scale;
  if (!(std::abs(s) > 0.0) || !std::isfinite(s)) throw AssumptionError("A1: sigma must be non-degenerate");
  if (p.sigma_kind == SigmaKind::constant) {
    model.sigma = [s, d](double, const Vec&) { return Mat(s * Mat::Identity(d, d)); };
    model.lambda = std::max(s * s, 1.0 / (s * s));
  } else {
    model.sigma = [s, d](double, const Vec& x) {
      Mat out = Mat::Zero(d, d);
      for (int i = 0; i < d; ++i) out(i, i) = s * (1.0 + 0.5 * std::sin(x(i)));
      return out;
    };
    model.lambda = std::max(2.25 * s * s, 4.0 / (s * s));
  }
  return model;
}

/// Quasi-random sampling plan over [0,T] x [lo,hi]^d.
struct SamplingPlan {
  double lo = -2.0;
  double hi = 2.0;
  int n_samples = 1000;
  std::uint64_t seed = 1;
};

struct AssumptionReport {
  SamplingPlan plan;
  double eig_min = std::numeric_limits<double>::infinity();
  double eig_max = 0.0;
  double lambda_declared = 1.0;
  double lambda_measured = 1.0;  // smallest L with L^-1 <= eig_min, eig_max <= L
  double jac_sup = 0.0;
  double hess_sup = 0.0;
  double m_f = 0.0;
  double k_constant = 0.0;  // K = M_F
  double m_sup = 0.0;
  double hess_asymmetry = 0.0;
  double jac_fd_excess = 0.0;  // worst (|jac - FD| - allowance), <= 0 when consistent
  bool hess_from_fd = false;
  bool a1 = true;
  bool a2 = true;
  bool a3 = true;
  bool derivatives_consistent = true;
  std::vector<std::string> failures;

  bool passed() const { return a1 && a2 && a3 && derivatives_consistent; }
};

/// Sampling-based check of ellipticity (A1), derivative bounds (A2) and
/// boundedness of m (A3). Violations beyond 1e-9 fail; a non-finite
/// coefficient fails its assumption and records the location.
inline AssumptionReport check_assumptions(const ModelSpec& model, const SamplingPlan& plan = {}) {
  if (plan.n_samples < 1) throw PreconditionError("sampling plan is empty");
  if (!(plan.hi >= plan.lo)) throw PreconditionError("sampling box is empty");
  constexpr double kTol = 1e-9;
  const int d = model.dim;
  AssumptionReport rep;
  rep.plan = plan;
  rep.lambda_declared = model.lambda;
  rep.m_f = model.drift.m_f;
  rep.k_constant = model.drift.m_f;
  rep.hess_from_fd = model.drift.hess_from_fd;
  const DriftSpec drift = with_fd_hessian(model.drift);

  auto fail = [&](bool& flag, const std::string& msg) {
    flag = false;
    if (rep.failures.size() < 32) rep.failures.push_back(msg);
  };

  const HaltonSequence seq(1 + d, plan.seed);
  for (int s = 0; s < plan.n_samples; ++s) {
    const double t = model.horizon * seq(s, 0);
    Vec x(d);
    for (int i = 0; i < d; ++i) x(i) = plan.lo + (plan.hi - plan.lo) * seq(s, 1 + i);
    const std::string where = format_point(t, x);

    const Mat sig = model.sigma(t, x);
    if (sig.rows() != d || sig.cols() != d) throw ModelError("sigma must be dim x dim");
    if (!all_finite(sig)) {
      fail(rep.a1, "A1: non-finite sigma at " + where);
    } else {
      const Mat a = sig * sig.transpose();
      Eigen::SelfAdjointEigenSolver<Mat> es(a, Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().minCoeff();
      const double hi = es.eigenvalues().maxCoeff();
      rep.eig_min = std::min(rep.eig_min, lo);
      rep.eig_max = std::max(rep.eig_max, hi);
      if (lo < 1.0 / model.lambda - kTol || hi > model.lambda + kTol || lo <= 0.0)
        fail(rep.a1, "A1: eigenvalues of sigma sigma^T outside [1/Lambda, Lambda] at " + where);
    }

    const Vec fx = drift.f(t, x);
    const Mat jx = drift.jac(t, x);
    const Tensor3 hx = drift.hess(t, x);
    if (!all_finite(fx) || !all_finite(jx)) {
      fail(rep.a2, "A2: non-finite drift or Jacobian at " + where);
    } else {
      const double jn = op_norm(jx);
      rep.jac_sup = std::max(rep.jac_sup, jn);
      if (jn > model.drift.m_f + kTol) fail(rep.a2, "A2: |F_*| exceeds M_F at " + where);
      for (int i = 0; i < d; ++i) {
        if (!all_finite(hx[i])) {
          fail(rep.a2, "A2: non-finite Hessian at " + where);
          continue;
        }
        const double hn = op_norm(hx[i]);
        rep.hess_sup = std::max(rep.hess_sup, hn);
        rep.hess_asymmetry = std::max(rep.hess_asymmetry, (hx[i] - hx[i].transpose()).cwiseAbs().maxCoeff());
        if (hn > model.drift.m_f + kTol) fail(rep.a2, "A2: |D^2 F| exceeds M_F at " + where);
      }
      // Jacobian against centered differences of F.
      const double h = 1e-5 * std::max(1.0, x.norm());
      for (int k = 0; k < d; ++k) {
        Vec xp = x;
        Vec xm = x;
        xp(k) += h;
        xm(k) -= h;
        const Vec col = (drift.f(t, xp) - drift.f(t, xm)) / (2.0 * h);
        for (int i = 0; i < d; ++i) {
          const double allowance = std::max(1e-6, 1e-4 * std::abs(jx(i, k)));
          const double excess = std::abs(col(i) - jx(i, k)) - allowance;
          rep.jac_fd_excess = std::max(rep.jac_fd_excess, excess);
          if (excess > 0.0) fail(rep.derivatives_consistent, "Jacobian disagrees with finite differences at " + where);
        }
      }
    }
    if (rep.hess_asymmetry > 1e-12 * std::max(1.0, rep.hess_sup))
      fail(rep.derivatives_consistent, "Hessian not symmetric at " + where);

    const Vec mx = model.bounded_drift(t, x);
    if (!all_finite(mx)) {
      fail(rep.a3, "A3: non-finite bounded drift at " + where);
    } else {
      rep.m_sup = std::max(rep.m_sup, mx.norm());
    }
  }
  // Smallest Lambda consistent with the observed eigenvalues.
  if (rep.eig_max > 0.0 && rep.eig_min > 0.0)
    rep.lambda_measured = std::max({1.0, rep.eig_max, 1.0 / rep.eig_min});
  else
    rep.lambda_measured = std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace detrend
