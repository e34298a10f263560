#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace uavsec {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Cplx = std::complex<double>;
using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;

inline bool all_finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

inline Vec2 horizontal(const Vec3& v) { return Vec2(v.x(), v.y()); }

// Max entrywise deviation from Hermitian symmetry.
inline double hermitian_error(const MatC& a) {
  return (a - a.adjoint()).cwiseAbs().maxCoeff();
}

// Real part of Tr(A B); exact for Hermitian pairs where the trace is real.
inline double re_trace(const MatC& a, const MatC& b) {
  return (a * b).trace().real();
}

// Sorted descending eigenvalues of a Hermitian matrix.
inline VecX hermitian_eigenvalues(const MatC& a) {
  Eigen::SelfAdjointEigenSolver<MatC> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().reverse();
}

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace uavsec
