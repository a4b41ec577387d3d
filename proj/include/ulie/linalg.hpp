// Copyright 2026 The ulie Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ulie {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline constexpr Complex kI{0.0, 1.0};

/// Raised when an operation is called outside its domain (shape, symmetry,
/// dimension).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The iterative eigensolver did not reach its convergence criterion.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A matrix that must be invertible was (numerically) rank deficient.
class SingularMatrixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical thresholds used by the checks in this header.
struct LinalgTolerances {
  double hermitian = 1e-10;     // relative ||H - H^†||_F
  double skew_hermitian = 1e-10;  // relative to max(1, ||L||_F)
  double real_eigenvalue = 1e-12;
  double unitarity = 1e-10;     // ||U^† U - I||_F
  double polar_rank = 1e-12;    // sigma_min / sigma_max
};

inline constexpr LinalgTolerances kDefaultTolerances{};

struct EigenDecomposition {
  ComplexMatrix vectors;  // unitary, eigenvectors as columns
  ComplexVector values;
};

struct PolarFactors {
  ComplexMatrix unitary;
  ComplexMatrix positive;
};

struct SkewExponential {
  ComplexMatrix unitary;
  EigenDecomposition eig;  // of the skew-Hermitian argument (imaginary values)
};

namespace detail {

inline std::string shape_of(const ComplexMatrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

inline void require_square(const ComplexMatrix& m, const char* what) {
  if (m.rows() < 1 || m.rows() != m.cols()) {
    throw PreconditionError(std::string(what) + ": expected a non-empty square matrix, got " +
                            shape_of(m));
  }
}

// Rotate each column so that its first non-negligible entry is real positive,
// then order columns by eigenvalue with ties broken lexicographically on the
// normalized columns. Makes decompositions reproducible across runs.
inline void canonicalize(EigenDecomposition& eig, double tie_tolerance) {
  const Eigen::Index n = eig.vectors.cols();
  for (Eigen::Index k = 0; k < n; ++k) {
    auto col = eig.vectors.col(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mag = std::abs(col(i));
      if (mag > 1e-10) {
        col *= std::conj(col(i)) / mag;
        col(i) = Complex(std::abs(col(i)), 0.0);
        break;
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto lex_less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Complex x = eig.vectors(i, a);
      const Complex y = eig.vectors(i, b);
      if (x.real() != y.real()) return x.real() < y.real();
      if (x.imag() != y.imag()) return x.imag() < y.imag();
    }
    return false;
  };
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    const double da = eig.values(a).real();
    const double db = eig.values(b).real();
    if (std::abs(da - db) > tie_tolerance) return da < db;
    return lex_less(a, b);
  });
  EigenDecomposition sorted{ComplexMatrix(n, n), ComplexVector(n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    sorted.vectors.col(k) = eig.vectors.col(order[static_cast<std::size_t>(k)]);
    sorted.values(k) = eig.values(order[static_cast<std::size_t>(k)]);
  }
  eig = std::move(sorted);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plumbing: thin checked wrappers over Eigen so shape errors surface as
// exceptions in release builds too.

inline ComplexMatrix matmul(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.cols() != b.rows()) {
    throw PreconditionError("matmul: shape mismatch " + detail::shape_of(a) + " * " +
                            detail::shape_of(b));
  }
  return a * b;
}

inline ComplexMatrix conj_transpose(const ComplexMatrix& a) { return a.adjoint(); }

inline double frobenius_norm(const ComplexMatrix& a) { return a.norm(); }

/// outer_product(u, v)_{ij} = u_i v_j (no conjugation).
inline ComplexMatrix outer_product(const ComplexVector& u, const ComplexVector& v) {
  return u * v.transpose();
}

inline bool all_finite(const ComplexMatrix& a) { return a.allFinite(); }

inline double unitarity_error(const ComplexMatrix& u) {
  detail::require_square(u, "unitarity_error");
  return (u.adjoint() * u - ComplexMatrix::Identity(u.rows(), u.cols())).norm();
}

inline bool is_unitary(const ComplexMatrix& u, double tol = kDefaultTolerances.unitarity) {
  return u.rows() == u.cols() && unitarity_error(u) < tol;
}

inline double skew_hermitian_defect(const ComplexMatrix& l) {
  return (l + l.adjoint()).norm();
}

// ---------------------------------------------------------------------------

/// Eigendecomposition of a Hermitian matrix, eigenvalues nondecreasing.
inline EigenDecomposition hermitian_eig(const ComplexMatrix& h,
                                        const LinalgTolerances& tol = kDefaultTolerances) {
  detail::require_square(h, "hermitian_eig");
  if (!h.allFinite()) throw PreconditionError("hermitian_eig: non-finite entries");
  const double norm = h.norm();
  const double defect = (h - h.adjoint()).norm();
  if (defect > tol.hermitian * norm) {
    std::ostringstream os;
    os << "hermitian_eig: matrix is not Hermitian (||H - H^dag||_F = " << defect
       << ", ||H||_F = " << norm << ")";
    throw PreconditionError(os.str());
  }
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> solver(h, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    std::ostringstream os;
    os << "hermitian_eig: no convergence for " << h.rows() << "x" << h.cols()
       << " matrix with ||H||_F = " << norm << " after "
       << Eigen::SelfAdjointEigenSolver<ComplexMatrix>::m_maxIterations * h.rows()
       << " QL iterations";
    throw ConvergenceError(os.str());
  }
  EigenDecomposition eig{solver.eigenvectors(), solver.eigenvalues().cast<Complex>()};
  detail::canonicalize(eig, tol.real_eigenvalue * std::max(1.0, norm));
  return eig;
}

/// exp(L) for skew-Hermitian L, via the eigendecomposition of the Hermitian
/// matrix iL. The returned decomposition is that of L itself: L = W diag(d) W^†
/// with purely imaginary d, so exp(L) = W diag(e^d) W^†.
inline SkewExponential exp_skew_hermitian(const ComplexMatrix& l,
                                          const LinalgTolerances& tol = kDefaultTolerances) {
  detail::require_square(l, "exp_skew_hermitian");
  if (!l.allFinite()) throw PreconditionError("exp_skew_hermitian: non-finite entries");
  const double defect = skew_hermitian_defect(l);
  if (defect > tol.skew_hermitian * std::max(1.0, l.norm())) {
    std::ostringstream os;
    os << "exp_skew_hermitian: matrix is not skew-Hermitian (||L + L^dag||_F = " << defect
       << ")";
    throw PreconditionError(os.str());
  }
  // Symmetrize away rounding before handing iL to the Hermitian solver.
  const ComplexMatrix h = 0.5 * (kI * l + (kI * l).adjoint());
  EigenDecomposition eig = hermitian_eig(h, tol);
  // iL = W diag(mu) W^†  =>  L = W diag(-i mu) W^†
  eig.values = (-kI) * eig.values.real().cast<Complex>();
  const ComplexVector phases = eig.values.array().exp();
  ComplexMatrix u = eig.vectors * phases.asDiagonal() * eig.vectors.adjoint();
  return {std::move(u), std::move(eig)};
}

/// Polar decomposition A = U P; U is the Frobenius-closest unitary to A.
inline PolarFactors polar_project(const ComplexMatrix& a,
                                  const LinalgTolerances& tol = kDefaultTolerances) {
  detail::require_square(a, "polar_project");
  if (!a.allFinite()) throw PreconditionError("polar_project: non-finite entries");
  Eigen::JacobiSVD<ComplexMatrix> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const RealVector& sigma = svd.singularValues();
  const double largest = sigma(0);
  const double smallest = sigma(sigma.size() - 1);
  if (!(largest > 0.0) || smallest <= tol.polar_rank * largest) {
    std::ostringstream os;
    os << "polar_project: rank-deficient matrix (sigma_min = " << smallest
       << ", sigma_max = " << largest << "); closest unitary is not unique";
    throw SingularMatrixError(os.str());
  }
  const ComplexMatrix& left = svd.matrixU();
  const ComplexMatrix& right = svd.matrixV();
  PolarFactors out;
  out.unitary = left * right.adjoint();
  out.positive = right * sigma.cast<Complex>().asDiagonal() * right.adjoint();
  return out;
}

}  // namespace ulie
