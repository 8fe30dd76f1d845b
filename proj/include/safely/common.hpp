#pragma once

#include <Eigen/Core>

#include <limits>
#include <stdexcept>
#include <string>

namespace safely {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Raised for malformed inputs: dimension mismatches, invalid parameters,
/// matrices that violate their declared structure.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine cannot produce a meaningful result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Mat& m);

/// Throws ConfigError unless `m` is square, symmetric to 1e-9 (relative) and
/// has eigenvalues >= -tol.
void require_psd(const Mat& m, const std::string& what, double tol = 1e-10);

/// Symmetric square root factor S with S*S^T = m for a PSD matrix (clips tiny
/// negative eigenvalues to zero).
Mat psd_sqrt(const Mat& m);

/// Axis-aligned box; infinite entries mean "unbounded on that side".
struct Box {
  Vec lower;
  Vec upper;

  static Box unbounded(int n) {
    return {Vec::Constant(n, -kInf), Vec::Constant(n, kInf)};
  }
  int dim() const { return static_cast<int>(lower.size()); }
  bool contains(const Vec& x, double tol = 0.0) const;
  Vec clamp(const Vec& x) const;
};

}  // namespace safely
