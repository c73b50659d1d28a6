#pragma once

#include "detrend/drift_models.hpp"
#include "detrend/ode.hpp"
#include "detrend/quadrature.hpp"
#include "detrend/types.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace detrend {

inline constexpr double kDefaultFlowTol = 1e-10;

/// First- and second-order jet of the phase flow g(t; t0, x) of x' = F(t, x).
///   g_star(i,k)          = dg_i/dx_k
///   g_star_inv           = inverse of g_star (co-integrated adjoint)
///   second_variation(i,j,k) = d^2 g_i / dx_j dx_k
///   c(i,j,k)             = sum_{l,p} d z_il/dx_p z^pj z^lk, i.e. c^i = M^T H^i M
/// so that the Hessian of the inverse map y -> g^{-1} is -g_star_inv * c_jk.
struct FlowJet {
  Vec g;
  Mat g_star;
  Mat g_star_inv;
  double det_g_star = 1.0;
  Tensor3 second_variation;
  Tensor3 c;
  double t0 = 0.0;
  double t = 0.0;
  Vec x;
};

inline ode::IntegratorOptions flow_options(double tol) {
  ode::IntegratorOptions opt;
  opt.tol = tol;
  return opt;
}

/// g(t1; t0, x). t1 < t0 integrates backwards; g(t0; t0, x) = x exactly.
inline Vec advance_flow(const DriftSpec& drift, double t0, double t1, const Vec& x,
                        const ode::IntegratorOptions& opt) {
  const int d = static_cast<int>(x.size());
  Eigen::VectorXd y = x;
  ode::integrate(
      [&](double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) {
        const Vec state = s;
        ds = drift.f(t, state);
      },
      t0, t1, y, opt);
  Vec out(d);
  out = y;
  return out;
}

inline Vec advance_flow(const DriftSpec& drift, double t0, double t1, const Vec& x,
                        double tol = kDefaultFlowTol) {
  return advance_flow(drift, t0, t1, x, flow_options(tol));
}

/// Integrates the flow together with its first variation, the adjoint
/// (inverse Jacobian) equation dM/dt = -M F_*, and the second variation
/// dH^i/dt = sum_l F_*il H^l + G^T D^2F_i G. The tensor c is assembled from
/// H and M at the end point.
inline FlowJet flow_jet(const DriftSpec& drift_in, double t0, double t1, const Vec& x,
                        const ode::IntegratorOptions& opt) {
  const DriftSpec drift = with_fd_hessian(drift_in);
  const int d = static_cast<int>(x.size());
  const int dd = d * d;
  const int off_g = 0, off_G = d, off_M = d + dd, off_H = d + 2 * dd;
  Eigen::VectorXd y = Eigen::VectorXd::Zero(d + 2 * dd + d * dd);
  y.segment(off_g, d) = x;
  for (int i = 0; i < d; ++i) {
    y(off_G + i * d + i) = 1.0;
    y(off_M + i * d + i) = 1.0;
  }

  auto rhs = [&](double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) {
    const Vec g = s.segment(off_g, d);
    const Eigen::Map<const Eigen::MatrixXd> G(s.data() + off_G, d, d);
    const Eigen::Map<const Eigen::MatrixXd> M(s.data() + off_M, d, d);
    const Vec f = drift.f(t, g);
    const Mat J = drift.jac(t, g);
    const Tensor3 D2 = drift.hess(t, g);
    ds.segment(off_g, d) = f;
    Eigen::Map<Eigen::MatrixXd>(ds.data() + off_G, d, d).noalias() = J * G;
    Eigen::Map<Eigen::MatrixXd>(ds.data() + off_M, d, d).noalias() = -M * J;
    const Mat Gm = G;
    for (int i = 0; i < d; ++i) {
      Mat acc = Gm.transpose() * D2[i] * Gm;
      for (int l = 0; l < d; ++l) {
        if (J(i, l) == 0.0) continue;
        acc += J(i, l) * Eigen::Map<const Eigen::MatrixXd>(s.data() + off_H + l * dd, d, d);
      }
      Eigen::Map<Eigen::MatrixXd>(ds.data() + off_H + i * dd, d, d) = acc;
    }
  };
  ode::integrate(rhs, t0, t1, y, opt);

  FlowJet jet;
  jet.t0 = t0;
  jet.t = t1;
  jet.x = x;
  jet.g = y.segment(off_g, d);
  jet.g_star = Eigen::Map<const Eigen::MatrixXd>(y.data() + off_G, d, d);
  jet.g_star_inv = Eigen::Map<const Eigen::MatrixXd>(y.data() + off_M, d, d);
  jet.det_g_star = jet.g_star.determinant();
  if (!std::isfinite(jet.det_g_star) || std::abs(jet.det_g_star) < 1e-12)
    throw SingularityError("flow Jacobian is numerically singular at " + format_point(t1, x));
  jet.second_variation = Tensor3(d);
  jet.c = Tensor3(d);
  for (int i = 0; i < d; ++i) {
    jet.second_variation[i] = Eigen::Map<const Eigen::MatrixXd>(y.data() + off_H + i * dd, d, d);
    jet.c[i] = jet.g_star_inv.transpose() * jet.second_variation[i] * jet.g_star_inv;
  }
  return jet;
}

inline FlowJet flow_jet(const DriftSpec& drift, double t0, double t1, const Vec& x,
                        double tol = kDefaultFlowTol) {
  return flow_jet(drift, t0, t1, x, flow_options(tol));
}

/// Psi(t, y) = g^{-1}(0; t, y): the point at time 0 whose trajectory reaches y at t.
inline Vec inverse_flow(const DriftSpec& drift, double t, const Vec& y, double tol = kDefaultFlowTol) {
  return advance_flow(drift, t, 0.0, y, tol);
}

struct FlowTimeDerivatives {
  Vec d_t0_g;    // d/dt0 g(t; t0, x) = -g_*(t; t0, x) F(t0, x)
  Vec d_t_ginv;  // d/dt g^{-1}(0; t, y) = -g_*^{-1}(t; 0, g^{-1}(0; t, y)) F(t, y), y = g(t; t0, x)
};

inline FlowTimeDerivatives flow_time_derivatives(const DriftSpec& drift, double t0, double t, const Vec& x,
                                                 double tol = kDefaultFlowTol) {
  const FlowJet forward = flow_jet(drift, t0, t, x, tol);
  FlowTimeDerivatives out;
  out.d_t0_g = -(forward.g_star * drift.f(t0, x));
  const Vec& y = forward.g;
  const Vec base = inverse_flow(drift, t, y, tol);
  const FlowJet back = flow_jet(drift, 0.0, t, base, tol);
  out.d_t_ginv = -(back.g_star_inv * drift.f(t, y));
  return out;
}

struct LiouvilleDeterminant {
  double det_direct = 1.0;
  double det_liouville = 1.0;
};

/// det g_* from the integrated first variation, and exp of the trace of F_*
/// integrated along the trajectory by composite Gauss-Legendre quadrature.
inline LiouvilleDeterminant liouville_determinant(const DriftSpec& drift, double t0, double t, const Vec& x,
                                                  double tol = kDefaultFlowTol) {
  LiouvilleDeterminant out;
  out.det_direct = flow_jet(drift, t0, t, x, tol).det_g_star;
  if (t == t0) return out;

  constexpr int kPanels = 16;
  static const QuadratureRule rule = gauss_legendre(8);
  const double width = (t - t0) / kPanels;
  double integral = 0.0;
  double s_prev = t0;
  Vec g = x;
  for (int p = 0; p < kPanels; ++p) {
    const double a = t0 + p * width;
    double panel = 0.0;
    for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
      const double s = a + rule.nodes[q] * width;
      g = advance_flow(drift, s_prev, s, g, tol);
      s_prev = s;
      panel += rule.weights[q] * drift.jac(s, g).trace();
    }
    integral += panel * width;
  }
  out.det_liouville = std::exp(integral);
  return out;
}

}  // namespace detrend
