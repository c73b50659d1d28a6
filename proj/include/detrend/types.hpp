#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace detrend {

inline constexpr const char* kVersion = "0.1.0";

/// Largest state dimension supported. Vectors and matrices are dynamically
/// sized up to this bound but never touch the heap.
inline constexpr int kMaxDim = 6;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

/// Rank-3 array indexed [i][j][k], stored as d slices of d x d matrices.
/// Used for Hessians of the drift (slice i = D^2 F_i) and for the
/// second-variation and curvature tensors of the flow.
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(int dim) : dim_(dim) {
    for (int i = 0; i < dim; ++i) slices_[i] = Mat::Zero(dim, dim);
  }

  int dim() const { return dim_; }
  Mat& operator[](int i) { return slices_[i]; }
  const Mat& operator[](int i) const { return slices_[i]; }
  double& operator()(int i, int j, int k) { return slices_[i](j, k); }
  double operator()(int i, int j, int k) const { return slices_[i](j, k); }

  /// Vector c_jk = (T(0,j,k), ..., T(d-1,j,k)).
  Vec fiber(int j, int k) const {
    Vec v(dim_);
    for (int i = 0; i < dim_; ++i) v(i) = slices_[i](j, k);
    return v;
  }

  double max_abs() const {
    double m = 0.0;
    for (int i = 0; i < dim_; ++i) m = std::max(m, slices_[i].cwiseAbs().maxCoeff());
    return m;
  }

 private:
  int dim_ = 0;
  std::array<Mat, kMaxDim> slices_{};
};

// Error taxonomy. The CLI maps each family onto a fixed exit code.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model data violates ellipticity, smoothness or boundedness requirements.
class AssumptionError : public Error {
 public:
  using Error::Error;
};

/// Malformed request: unknown model, bad dimension, bad partition.
class ModelError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// ODE integration could not reach the requested time.
class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double last_time)
      : Error(what), last_time_(last_time) {}
  double last_time() const { return last_time_; }

 private:
  double last_time_;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

class InversionError : public Error {
 public:
  InversionError(const std::string& what, double residual) : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Spectral (operator 2-) norm.
inline double op_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  if (a.rows() == 1 && a.cols() == 1) return std::abs(a(0, 0));
  Mat ata = a.transpose() * a;
  Eigen::SelfAdjointEigenSolver<Mat> es(ata, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline Vec broadcast(double value, int dim) { return Vec::Constant(dim, value); }

}  // namespace detrend
