#include "detrend/convergence.hpp"
#include "detrend/diagnostics.hpp"
#include "detrend/sde_transform.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>

using namespace detrend;

namespace {

Vec vec1(double a) { return Vec::Constant(1, a); }

ModelSpec model(const std::string& name, BuiltinParams p = {}) { return builtin_model(name, p); }

BuiltinParams linear_params(double b, double m, double s) {
  BuiltinParams p;
  p.b_const = {b};
  p.m_kind = BoundedDriftKind::constant;
  p.m_value = m;
  p.sigma_scale = s;
  return p;
}

ModelSpec without_noise(ModelSpec m) {
  const int d = m.dim;
  m.sigma = [d](double, const Vec&) { return Mat(Mat::Zero(d, d)); };
  return m;
}

TransformedCoefficients transform_unchecked(const ModelSpec& m) {
  return TransformedCoefficients(std::make_shared<const ModelSpec>(m), kDefaultFlowTol);
}

struct ThreadsEnv {
  explicit ThreadsEnv(const char* n) { setenv("DETREND_SDE_THREADS", n, 1); }
  ~ThreadsEnv() { unsetenv("DETREND_SDE_THREADS"); }
};

}  // namespace

TEST(TransformedCoefficients, ZeroDriftLeavesCoefficientsUnchanged) {
  BuiltinParams p;
  p.dim = 2;
  p.sigma_kind = SigmaKind::modulated;
  const ModelSpec m = model("zero_drift", p);
  const TransformedCoefficients tc = make_transform(m);
  Vec y(2);
  y << 0.4, -1.3;
  EXPECT_EQ(tc.m_tilde(0.6, y), m.bounded_drift(0.6, y));
  EXPECT_EQ(tc.sigma_tilde(0.6, y), m.sigma(0.6, y));
}

TEST(TransformedCoefficients, LinearScalarExample) {
  const TransformedCoefficients tc = make_transform(model("linear", linear_params(1.0, 1.0, 1.0)));
  const TransformedValue v = tc.evaluate(std::log(2.0), vec1(0.8));
  EXPECT_NEAR(v.m_tilde(0), 0.5, 1e-9);
  EXPECT_NEAR(v.sigma_tilde(0, 0), 0.5, 1e-9);
}

TEST(TransformedCoefficients, LinearMatrixClosedForm) {
  BuiltinParams p;
  p.dim = 2;
  p.b_const = {0.3, -0.4, 0.2, 0.1};
  p.b_rate = 0.2;
  const ModelSpec m = model("linear", p);
  const TransformedCoefficients tc = make_transform(m);
  for (double t : {0.25, 0.8}) {
    Vec y(2);
    y << 1.1, -0.6;
    const FlowJet jet = flow_jet(m.drift, 0.0, t, Vec(Vec::Zero(2)), 1e-12);  // Phi(t), point independent
    const Mat phi_inv = jet.g_star.inverse();
    const Vec x = jet.g_star * y;
    const TransformedValue v = tc.evaluate(t, y);
    EXPECT_LE((v.m_tilde - phi_inv * m.bounded_drift(t, x)).norm(), 1e-8);
    EXPECT_LE(op_norm(v.sigma_tilde - phi_inv * m.sigma(t, x)), 1e-8);
    EXPECT_LE(v.jet.c.max_abs(), 1e-9);
  }
}

// Independent oracle: for Psi(t, y) = g^{-1}(0; t, y), Ito's formula gives the
// drift Psi_t + Psi_y (F + m) + 1/2 Psi_yy sigma^2, with Psi_t + Psi_y F = 0
// along the flow. Derivatives of Psi are taken by finite differences of the
// separately integrated inverse flow.
TEST(TransformedCoefficients, SineMatchesItoFiniteDifferenceOracle) {
  BuiltinParams p;
  p.m_kind = BoundedDriftKind::constant;
  p.m_value = 0.0;
  const ModelSpec m = model("sine", p);
  const TransformedCoefficients tc = make_transform(m);
  const double t = 0.5, yt = 0.2;
  const double y = advance_flow(m.drift, 0.0, t, vec1(yt), 1e-13)(0);
  auto psi = [&](double s, double z) { return inverse_flow(m.drift, s, vec1(z), 1e-13)(0); };
  const double h = 1e-3, dt = 1e-4;
  const double psi_y = (psi(t, y + h) - psi(t, y - h)) / (2 * h);
  const double psi_yy = (psi(t, y + h) - 2 * psi(t, y) + psi(t, y - h)) / (h * h);
  const double psi_t = (psi(t + dt, y) - psi(t - dt, y)) / (2 * dt);
  const double ito_drift = psi_t + psi_y * std::sin(y) + 0.5 * psi_yy;
  EXPECT_NEAR(psi_t + psi_y * std::sin(y), 0.0, 1e-7);
  const TransformedValue v = tc.evaluate(t, vec1(yt));
  EXPECT_NEAR(v.m_tilde(0), ito_drift, 1e-6);
  EXPECT_NEAR(v.sigma_tilde(0, 0), psi_y, 1e-7);
  // The same value composed from the jet pieces: -1/2 g_*^{-1} c a.
  EXPECT_NEAR(v.m_tilde(0), -0.5 * v.jet.g_star_inv(0, 0) * v.jet.c(0, 0, 0), 1e-14);
}

TEST(TransformedCoefficients, ItoOracleInDimensionTwo) {
  BuiltinParams p;
  p.dim = 2;
  p.kappa = 0.4;
  p.sigma_kind = SigmaKind::modulated;
  p.sigma_scale = 0.8;
  const ModelSpec m = model("sine", p);
  const TransformedCoefficients tc = make_transform(m);
  const double t = 0.7;
  Vec yt(2);
  yt << 0.3, -0.8;
  const Vec y = advance_flow(m.drift, 0.0, t, yt, 1e-13);
  auto psi = [&](const Vec& z) { return inverse_flow(m.drift, t, z, 1e-13); };
  const double h = 1e-3;
  Mat jac(2, 2);
  for (int k = 0; k < 2; ++k) {
    Vec e = Vec::Zero(2);
    e(k) = h;
    jac.col(k) = (psi(y + e) - psi(y - e)) / (2 * h);
  }
  const Mat sig = m.sigma(t, y);
  const Mat a = sig * sig.transpose();
  Vec second = Vec::Zero(2);
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k) {
      Vec ej = Vec::Zero(2), ek = Vec::Zero(2);
      ej(j) = h;
      ek(k) = h;
      const Vec d2 = (psi(y + ej + ek) - psi(y + ej - ek) - psi(y - ej + ek) + psi(y - ej - ek)) / (4 * h * h);
      second += 0.5 * a(j, k) * d2;
    }
  const Vec expected = jac * m.bounded_drift(t, y) + second;
  const TransformedValue v = tc.evaluate(t, yt);
  EXPECT_LE((v.m_tilde - expected).norm(), 1e-5);
  EXPECT_LE(op_norm(v.sigma_tilde - jac * sig), 1e-7);
}

TEST(MakeTransform, RejectsModelsFailingAssumptions) {
  ModelSpec m = model("sine");
  m.drift.m_f = 0.1;
  EXPECT_THROW(make_transform(m), AssumptionError);
}

TEST(SimulateOriginal, ConstantPathsWithoutDriftOrNoise) {
  BuiltinParams p;
  p.m_kind = BoundedDriftKind::constant;
  p.m_value = 0.0;
  p.x0 = {0.25};
  const PathEnsemble e = simulate_original(without_noise(model("zero_drift", p)), 16, 3, 1);
  for (int path = 0; path < 3; ++path)
    for (int k = 0; k <= 16; ++k) EXPECT_EQ(e.at(path, k)(0), 0.25);
}

TEST(SimulateOriginal, DeterministicCompoundGrowth) {
  BuiltinParams p = linear_params(1.0, 0.0, 1.0);
  p.x0 = {1.0};
  const ModelSpec m = without_noise(model("linear", p));
  const int n = 40;
  const PathEnsemble e = simulate_original(m, n, 2, 3);
  const double h = 1.0 / n;
  EXPECT_EQ(e.times.back(), 1.0);
  for (int k = 0; k <= n; ++k) EXPECT_NEAR(e.at(1, k)(0), std::pow(1 + h, k), 1e-14 * std::pow(1 + h, k));

  const PathEnsemble tr = simulate_transformed(transform_unchecked(m), n, 2, 3);
  const PathEnsemble back = map_back(transform_unchecked(m), tr);
  for (int k = 0; k <= n; ++k) {
    EXPECT_NEAR(tr.at(0, k)(0), 1.0, 1e-15);  // no trend left to follow
    EXPECT_NEAR(back.at(0, k)(0), std::exp(e.times[k]), 1e-9);
  }
}

TEST(SimulateOriginal, LinearTerminalMeanMatchesMomentOde) {
  // dY = (Y + 1) dt + dW, Y_0 = 0.5: E Y_T solves e' = e + 1.
  BuiltinParams p = linear_params(1.0, 1.0, 1.0);
  const ModelSpec m = model("linear", p);
  const int n_paths = 10000, n = 1000;
  const PathEnsemble e = simulate_original(m, n, n_paths, 2024);
  double s = 0, ss = 0;
  for (int i = 0; i < n_paths; ++i) {
    const double v = e.at(i, n)(0);
    s += v;
    ss += v * v;
  }
  const double mean = s / n_paths;
  const double se = std::sqrt((ss / n_paths - mean * mean) / (n_paths - 1));
  double ref = 0.5;  // RK4 on the moment ODE, 10^4 steps
  const int steps = 10000;
  const double h = 1.0 / steps;
  for (int i = 0; i < steps; ++i) {
    const double k1 = ref + 1, k2 = ref + h / 2 * k1 + 1, k3 = ref + h / 2 * k2 + 1, k4 = ref + h * k3 + 1;
    ref += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  EXPECT_NEAR(ref, 1.5 * std::exp(1.0) - 1.0, 1e-12);
  EXPECT_LE(std::abs(mean - ref), 3 * se);
}

TEST(SimulateTransformed, LinearTerminalMeanMatchesSchemeExpectation) {
  // Transformed Euler for the linear model: E Y~_N = x0 + sum_k h e^{-t_k} m,
  // mapped back by e^T.
  const ModelSpec m = model("linear", linear_params(1.0, 1.0, 1.0));
  const TransformedCoefficients tc = make_transform(m);
  const int n_paths = 10000, n = 32;
  const TransformedRun run = simulate_transformed_with_image(tc, make_partition(n, PartitionKind::uniform, 1.0),
                                                             n_paths, 77);
  double s = 0, ss = 0;
  for (int i = 0; i < n_paths; ++i) {
    const double v = run.image.at(i, n)(0);
    s += v;
    ss += v * v;
  }
  const double mean = s / n_paths;
  const double se = std::sqrt((ss / n_paths - mean * mean) / (n_paths - 1));
  double expected = 0.5;
  for (int k = 0; k < n; ++k) expected += (1.0 / n) * std::exp(-static_cast<double>(k) / n);
  expected *= std::exp(1.0);
  EXPECT_LE(std::abs(mean - expected), 3 * se);
}

TEST(Simulation, SharedSeedsGiveBitwiseEqualEnsembles) {
  BuiltinParams p;
  p.dim = 2;
  p.kappa = 0.2;
  const ModelSpec m = model("sine", p);
  const TransformedCoefficients tc = make_transform(m);
  EXPECT_TRUE(bitwise_equal(simulate_original(m, 32, 20, 5), simulate_original(m, 32, 20, 5)));
  EXPECT_FALSE(bitwise_equal(simulate_original(m, 32, 20, 5), simulate_original(m, 32, 20, 6)));
  PathEnsemble serial, threaded;
  {
    ThreadsEnv env("1");
    serial = simulate_transformed(tc, 32, 20, 5);
  }
  {
    ThreadsEnv env("3");
    threaded = simulate_transformed(tc, 32, 20, 5);
  }
  EXPECT_TRUE(bitwise_equal(serial, threaded));
  EXPECT_TRUE(bitwise_equal(serial, simulate_transformed(tc, 32, 20, 5)));
}

TEST(Simulation, ZeroDriftOriginalAndTransformedCoincide) {
  BuiltinParams p;
  p.dim = 2;
  p.sigma_kind = SigmaKind::modulated;
  const ModelSpec m = model("zero_drift", p);
  const TransformedCoefficients tc = make_transform(m);
  const PathEnsemble a = simulate_original(m, 50, 10, 9);
  PathEnsemble b = simulate_transformed(tc, 50, 10, 9);
  EXPECT_EQ(a.data, b.data);
  const PathEnsemble back = map_back(tc, b);
  EXPECT_EQ(back.data, b.data);
  EXPECT_EQ(back.scheme, Scheme::mapped_back);
  const DiscrepancyTable d = pushforward_discrepancy(m, tc, 50, 10, 9);
  for (const auto& row : d.rows) EXPECT_EQ(row.max, 0.0);
}

TEST(Simulation, StartPointAndGrid) {
  const ModelSpec m = model("sine");
  const PathEnsemble e = simulate_original(m, 8, 4, 1);
  for (int p = 0; p < 4; ++p) EXPECT_EQ(e.at(p, 0)(0), m.x0(0));
  for (std::size_t k = 1; k < e.times.size(); ++k) EXPECT_GT(e.times[k], e.times[k - 1]);
  EXPECT_EQ(e.times.back(), m.horizon);
  EXPECT_THROW(simulate_original(m, 0, 4, 1), PreconditionError);
  EXPECT_THROW(simulate_original(m, 4, 0, 1), PreconditionError);
}

TEST(Simulation, OverflowFlagsPathAndContinues) {
  ModelSpec m = model("sine");
  m.drift.f = [](double, const Vec& x) { return Vec(x.array().cube()); };
  m.x0 = vec1(10.0);
  const PathEnsemble e = simulate_original(m, 50, 3, 1);
  EXPECT_EQ(e.flagged_count(), 3);
  EXPECT_TRUE(std::isnan(e.at(0, 50)(0)));
  EXPECT_EQ(e.at(0, 0)(0), 10.0);
}

TEST(MapBack, LinearAndRoundTrip) {
  const ModelSpec m = model("linear", linear_params(1.0, 0.5, 1.0));
  const TransformedCoefficients tc = make_transform(m);
  const PathEnsemble tr = simulate_transformed(tc, 16, 5, 4);
  const PathEnsemble back = map_back(tc, tr);
  for (int p = 0; p < 5; ++p)
    for (int k = 0; k <= 16; ++k) {
      EXPECT_NEAR(back.at(p, k)(0), std::exp(tr.times[k]) * tr.at(p, k)(0), 1e-9);
      EXPECT_NEAR(inverse_flow(m.drift, tr.times[k], back.at(p, k))(0), tr.at(p, k)(0), 1e-7);
    }
}

TEST(Pushforward, DeterministicDiscrepancyShrinksWithSteps) {
  BuiltinParams p;
  p.m_kind = BoundedDriftKind::constant;
  p.m_value = 0.0;
  const ModelSpec m = without_noise(model("sine", p));
  const TransformedCoefficients tc = transform_unchecked(m);
  std::vector<DiscrepancyTable> tables;
  for (int n : {16, 32, 64, 128}) tables.push_back(pushforward_discrepancy(m, tc, n, 2, 1));
  // Transformed paths stay at x0, so the image is the exact flow and the
  // discrepancy is the Euler error of the ODE alone.
  const double exact = advance_flow(m.drift, 0.0, 1.0, m.x0, 1e-12)(0);
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const PathEnsemble euler = simulate_original(m, tables[i].n_steps, 1, 1);
    EXPECT_NEAR(tables[i].terminal().max, std::abs(euler.at(0, tables[i].n_steps)(0) - exact), 1e-9);
  }
  const ConvergenceTable order = strong_order_estimate(tables);
  EXPECT_TRUE(order.monotone_decreasing());
  EXPECT_NEAR(order.slope, 1.0, 0.1);  // Euler for the ODE is first order
}

TEST(Pushforward, SineDiscrepancyDecreasesUnderRefinement) {
  const ModelSpec m = model("sine");
  const TransformedCoefficients tc = make_transform(m);
  std::vector<DiscrepancyTable> tables;
  for (int n : {32, 64, 128, 256}) tables.push_back(pushforward_discrepancy(m, tc, n, 200, 11));
  const ConvergenceTable order = strong_order_estimate(tables);
  EXPECT_TRUE(order.monotone_decreasing());
  EXPECT_GE(order.slope, 0.4);
  EXPECT_EQ(tables.front().flagged, 0);
}
