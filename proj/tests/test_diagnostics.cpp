#include "detrend/convergence.hpp"
#include "detrend/diagnostics.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace detrend;

namespace {

ModelSpec model(const std::string& name, BuiltinParams p = {}) { return builtin_model(name, p); }

BuiltinParams constant_m(double value) {
  BuiltinParams p;
  p.m_kind = BoundedDriftKind::constant;
  p.m_value = value;
  return p;
}

}  // namespace

TEST(BoundednessScan, ZeroDriftUnitCoefficients) {
  const TransformedCoefficients tc = make_transform(model("zero_drift", constant_m(1.0)));
  const ScanReport rep = boundedness_scan(tc);
  EXPECT_TRUE(rep.passed());
  EXPECT_TRUE(rep.bounds_respected());
  EXPECT_EQ(rep.entry("m_tilde").value, 1.0);
  EXPECT_EQ(rep.entry("sigma_tilde").value, 1.0);
  EXPECT_EQ(rep.entry("c").value, 0.0);
}

TEST(BoundednessScan, LinearScalarExtremesAtEndpoints) {
  BuiltinParams p;
  p.b_const = {1.0};
  const TransformedCoefficients tc = make_transform(model("linear", p));
  const ScanReport rep = boundedness_scan(tc);
  EXPECT_NEAR(rep.entry("g_star_inv").value, 1.0, 1e-12);
  EXPECT_NEAR(rep.entry("g_star").value, std::exp(1.0), 1e-8);
  EXPECT_EQ(rep.entry("g_star").t, 1.0);
  EXPECT_LE(rep.entry("c").value, 1e-9);
  EXPECT_TRUE(rep.bounds_respected());
}

TEST(BoundednessScan, SineDeterminantWithinLiouvilleBounds) {
  const TransformedCoefficients tc = make_transform(model("sine"));
  const ScanReport rep = boundedness_scan(tc);
  EXPECT_TRUE(rep.all_finite);
  EXPECT_GE(rep.entry("det_min").value, std::exp(-1.0));
  EXPECT_LE(rep.entry("det_max").value, std::exp(1.0));
  EXPECT_GT(rep.entry("sigma_tilde_eig_min").value, 0.0);
  for (const auto& e : rep.entries) EXPECT_TRUE(std::isfinite(e.value)) << e.quantity;
  EXPECT_TRUE(rep.bounds_respected());
}

TEST(BoundednessScan, ReportedSupIsAttainedAtRecordedPoint) {
  BuiltinParams p;
  p.dim = 2;
  p.kappa = 0.3;
  const TransformedCoefficients tc = make_transform(model("sine", p));
  const ScanReport a = boundedness_scan(tc);
  const ScanReport b = boundedness_scan(tc);
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].value, b.entries[i].value);
    EXPECT_EQ(a.entries[i].y, b.entries[i].y);
  }
  const SupEntry& e = a.entry("m_tilde");
  EXPECT_EQ(tc.m_tilde(e.t, e.y).norm(), e.value);
}

TEST(BoundednessScan, NonFiniteCoefficientFailsWithLocation) {
  ModelSpec m = model("sine");
  m.bounded_drift = [](double, const Vec& x) { return Vec(Vec::Constant(1, x(0) > 1.5 ? INFINITY : 0.0)); };
  const TransformedCoefficients tc(std::make_shared<const ModelSpec>(m), kDefaultFlowTol);
  const ScanReport rep = boundedness_scan(tc);
  EXPECT_FALSE(rep.passed());
  EXPECT_NE(rep.first_non_finite.find("t="), std::string::npos);
}

TEST(BoundednessScan, ChainCoefficientsFinite) {
  const ModelSpec m = model("sine");
  const ChainRun run = simulate_chain(m, make_partition(32, PartitionKind::uniform, 1.0), 4, 2);
  const ScanReport rep = boundedness_scan(transform_chain(m, run));
  EXPECT_TRUE(rep.passed());
  EXPECT_GT(rep.entry("m_tilde").value, 0.0);
  EXPECT_GT(rep.entry("sigma_tilde").value, 0.0);
}

TEST(WeakError, ZeroDriftSharedNoiseIsExact) {
  const ModelSpec m = model("zero_drift");
  const TransformedCoefficients tc = make_transform(m);
  const auto rows = weak_error_compare(m, tc, 20, 200, 4, {first_component(), squared_norm()}, NoiseMode::shared);
  for (const auto& r : rows) {
    EXPECT_EQ(r.z_score, 0.0);
    EXPECT_EQ(r.mean_original, r.mean_mapped_back);
    EXPECT_EQ(r.strong_discrepancy, 0.0);
  }
}

TEST(WeakError, LinearMeansAgreeWithMomentOde) {
  const ModelSpec m = model("linear", constant_m(1.0));
  const TransformedCoefficients tc = make_transform(m);
  const auto rows = weak_error_compare(m, tc, 128, 4000, 19, {first_component()});
  ASSERT_EQ(rows.size(), 1u);
  const double exact = 1.5 * std::exp(1.0) - 1.0;  // e' = e + 1, e(0) = 0.5
  EXPECT_LE(std::abs(rows[0].z_score), 3.0);
  EXPECT_LE(std::abs(rows[0].mean_original - exact), 4 * rows[0].std_error);
  EXPECT_LE(std::abs(rows[0].mean_mapped_back - exact), 4 * rows[0].std_error);
  EXPECT_TRUE(std::isnan(rows[0].strong_discrepancy));
}

TEST(StrongOrder, DeterministicLinearIsFirstOrder) {
  BuiltinParams p = constant_m(0.0);
  p.b_const = {1.0};
  ModelSpec m = model("linear", p);
  m.sigma = [](double, const Vec&) { return Mat(Mat::Zero(1, 1)); };
  const TransformedCoefficients tc(std::make_shared<const ModelSpec>(m), kDefaultFlowTol);
  std::vector<DiscrepancyTable> tables;
  for (int n : {32, 64, 128, 256}) tables.push_back(pushforward_discrepancy(m, tc, n, 1, 1));
  const ConvergenceTable t = strong_order_estimate(tables);
  EXPECT_NEAR(t.slope, 1.0, 0.05);
  EXPECT_TRUE(t.monotone_decreasing());
}

TEST(StrongOrder, ZeroDriftIsDegenerate) {
  const ModelSpec m = model("zero_drift");
  const TransformedCoefficients tc = make_transform(m);
  std::vector<DiscrepancyTable> tables;
  for (int n : {8, 16, 32}) tables.push_back(pushforward_discrepancy(m, tc, n, 10, 1));
  const ConvergenceTable t = strong_order_estimate(tables);
  EXPECT_TRUE(t.degenerate);
  EXPECT_TRUE(std::isnan(t.slope));
}

TEST(FitConvergence, RecoversPowerLawAndCountsNonMonotoneSteps) {
  std::vector<ConvergenceRow> rows;
  for (int n : {10, 20, 40, 80}) rows.push_back({double(n), 1.0 / n, 3.0 * std::pow(1.0 / n, 1.5)});
  const ConvergenceTable t = fit_convergence(rows);
  EXPECT_NEAR(t.slope, 1.5, 1e-12);
  EXPECT_NEAR(t.fit_residual, 0.0, 1e-12);
  EXPECT_TRUE(t.monotone_decreasing());
  rows[2].error = rows[1].error * 1.1;
  EXPECT_EQ(fit_convergence(rows).non_monotone_steps, 1);
  rows.resize(2);
  EXPECT_THROW(fit_convergence(rows), PreconditionError);
}
