#include "safely/common.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace safely {

double min_eigenvalue(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

void require_psd(const Mat& m, const std::string& what, double tol) {
  if (m.rows() != m.cols()) throw ConfigError(what + ": matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw ConfigError(what + ": matrix is not symmetric");
  if (min_eigenvalue(m) < -tol)
    throw ConfigError(what + ": matrix is not positive semidefinite");
}

Mat psd_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

bool Box::contains(const Vec& x, double tol) const {
  for (int i = 0; i < x.size(); ++i) {
    if (x(i) < lower(i) - tol || x(i) > upper(i) + tol) return false;
  }
  return true;
}

Vec Box::clamp(const Vec& x) const {
  Vec out = x;
  for (int i = 0; i < x.size(); ++i)
    out(i) = std::min(std::max(x(i), lower(i)), upper(i));
  return out;
}

}  // namespace safely
