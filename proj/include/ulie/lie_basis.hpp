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

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ulie/linalg.hpp"
#include "ulie/random.hpp"

namespace ulie {

// The canonical basis of u(n), in the fixed global order used by every
// coefficient vector in this library:
//
//   [0, n)                      diagonal i at (a, a)
//   [n, n + n(n-1)/2)           symmetric imaginary, i at (r, s) and (s, r)
//   [n + n(n-1)/2, n^2)         antisymmetric real, 1 at (r, s), -1 at (s, r)
//
// with (r, s), r < s, enumerated lexicographically.

enum class BasisKind { DiagonalImaginary, SymmetricImaginary, AntisymmetricReal };

struct BasisElement {
  BasisKind kind;
  int r;  // diagonal index a for DiagonalImaginary (then s == r)
  int s;
  int n;

  ComplexMatrix dense() const {
    ComplexMatrix t = ComplexMatrix::Zero(n, n);
    switch (kind) {
      case BasisKind::DiagonalImaginary:
        t(r, r) = kI;
        break;
      case BasisKind::SymmetricImaginary:
        t(r, s) = kI;
        t(s, r) = kI;
        break;
      case BasisKind::AntisymmetricReal:
        t(r, s) = 1.0;
        t(s, r) = -1.0;
        break;
    }
    return t;
  }

  /// Squared Frobenius norm: 1 for diagonal elements, 2 otherwise.
  double norm_squared() const { return kind == BasisKind::DiagonalImaginary ? 1.0 : 2.0; }
};

inline Eigen::Index basis_size(int n) { return static_cast<Eigen::Index>(n) * n; }

/// Position of the pair (r, s), r < s, in lexicographic order.
inline Eigen::Index pair_index(int n, int r, int s) {
  return static_cast<Eigen::Index>(r) * (2 * n - r - 1) / 2 + (s - r - 1);
}

inline Eigen::Index symmetric_offset(int n) { return n; }
inline Eigen::Index antisymmetric_offset(int n) {
  return n + static_cast<Eigen::Index>(n) * (n - 1) / 2;
}

inline std::vector<BasisElement> canonical_basis(int n) {
  if (n < 1) throw PreconditionError("canonical_basis: dimension must be >= 1");
  std::vector<BasisElement> basis;
  basis.reserve(static_cast<std::size_t>(basis_size(n)));
  for (int a = 0; a < n; ++a) basis.push_back({BasisKind::DiagonalImaginary, a, a, n});
  for (int r = 0; r < n; ++r)
    for (int s = r + 1; s < n; ++s) basis.push_back({BasisKind::SymmetricImaginary, r, s, n});
  for (int r = 0; r < n; ++r)
    for (int s = r + 1; s < n; ++s) basis.push_back({BasisKind::AntisymmetricReal, r, s, n});
  return basis;
}

/// Coefficients of an element of u(n) relative to the canonical basis.
class LieCoefficients {
 public:
  LieCoefficients() = default;

  LieCoefficients(int n, RealVector values) : n_(n), values_(std::move(values)) {
    if (n < 1) throw PreconditionError("LieCoefficients: dimension must be >= 1");
    if (values_.size() != basis_size(n)) {
      throw PreconditionError("LieCoefficients: expected " + std::to_string(basis_size(n)) +
                              " coefficients, got " + std::to_string(values_.size()));
    }
    if (!values_.allFinite()) throw PreconditionError("LieCoefficients: non-finite coefficient");
  }

  static LieCoefficients zero(int n) { return {n, RealVector::Zero(basis_size(n))}; }

  int dimension() const { return n_; }
  Eigen::Index size() const { return values_.size(); }
  const RealVector& values() const { return values_; }
  RealVector& values() { return values_; }
  double operator[](Eigen::Index i) const { return values_(i); }

 private:
  int n_ = 0;
  RealVector values_;
};

/// L = sum_j lambda_j T_j, written entry by entry so the result is exactly
/// skew-Hermitian.
inline ComplexMatrix assemble(const LieCoefficients& lambda) {
  const int n = lambda.dimension();
  if (n < 1 || lambda.size() != basis_size(n)) {
    throw PreconditionError("assemble: coefficient length does not match n^2");
  }
  const RealVector& v = lambda.values();
  ComplexMatrix l(n, n);
  for (int a = 0; a < n; ++a) l(a, a) = Complex(0.0, v(a));
  const Eigen::Index sym = symmetric_offset(n);
  const Eigen::Index anti = antisymmetric_offset(n);
  for (int r = 0; r < n; ++r) {
    for (int s = r + 1; s < n; ++s) {
      const Eigen::Index k = pair_index(n, r, s);
      const double im = v(sym + k);
      const double re = v(anti + k);
      l(r, s) = Complex(re, im);
      l(s, r) = Complex(-re, im);
    }
  }
  return l;
}

/// Coefficients of a skew-Hermitian matrix: <T_j, L> / ||T_j||^2 with the real
/// inner product Re tr(A^† B).
inline LieCoefficients project_onto_basis(const ComplexMatrix& l) {
  detail::require_square(l, "project_onto_basis");
  const int n = static_cast<int>(l.rows());
  RealVector v(basis_size(n));
  for (int a = 0; a < n; ++a) v(a) = l(a, a).imag();
  const Eigen::Index sym = symmetric_offset(n);
  const Eigen::Index anti = antisymmetric_offset(n);
  for (int r = 0; r < n; ++r) {
    for (int s = r + 1; s < n; ++s) {
      const Eigen::Index k = pair_index(n, r, s);
      v(sym + k) = 0.5 * (l(r, s).imag() + l(s, r).imag());
      v(anti + k) = 0.5 * (l(r, s).real() - l(s, r).real());
    }
  }
  return {n, std::move(v)};
}

/// W^† T W via the outer-product identities (w_a is the a-th row of W):
///   diagonal a:        i outer(w_a^*, w_a)
///   symmetric (r, s):  i (outer(w_s^*, w_r) + outer(w_r^*, w_s))
///   antisym (r, s):    outer(w_r^*, w_s) - outer(w_s^*, w_r)
/// Writes into `out`, which is resized if needed. O(n^2).
inline void conjugate_basis_into(const ComplexMatrix& w, const BasisElement& element,
                                 ComplexMatrix& out) {
  if (w.rows() != element.n || w.cols() != element.n) {
    throw PreconditionError("conjugate_basis: W is " + detail::shape_of(w) +
                            " but basis element has n = " + std::to_string(element.n));
  }
  const auto wr = w.row(element.r);
  const auto ws = w.row(element.s);
  switch (element.kind) {
    case BasisKind::DiagonalImaginary:
      out.noalias() = kI * (wr.adjoint() * wr);
      break;
    case BasisKind::SymmetricImaginary:
      out.noalias() = kI * (ws.adjoint() * wr);
      out.noalias() += kI * (wr.adjoint() * ws);
      break;
    case BasisKind::AntisymmetricReal:
      out.noalias() = wr.adjoint() * ws;
      out.noalias() -= ws.adjoint() * wr;
      break;
  }
}

inline ComplexMatrix conjugate_basis(const ComplexMatrix& w, const BasisElement& element) {
  ComplexMatrix out(element.n, element.n);
  conjugate_basis_into(w, element, out);
  return out;
}

/// Reference W^† T W with two dense products; used for benchmarking.
inline ComplexMatrix conjugate_basis_dense(const ComplexMatrix& w, const BasisElement& element) {
  return w.adjoint() * element.dense() * w;
}

// ---------------------------------------------------------------------------
// Change of basis: new elements V_j = sum_k M_jk T_k.

class ChangeOfBasis {
 public:
  static constexpr double kRankTolerance = 1e-10;

  ChangeOfBasis(RealMatrix matrix, double half_width)
      : matrix_(std::move(matrix)), half_width_(half_width) {
    if (matrix_.rows() < 1 || matrix_.rows() != matrix_.cols()) {
      throw PreconditionError("ChangeOfBasis: matrix must be square");
    }
    if (!matrix_.allFinite()) throw PreconditionError("ChangeOfBasis: non-finite entry");
    if (!full_rank(matrix_)) {
      throw SingularMatrixError("ChangeOfBasis: matrix is not full rank");
    }
  }

  static bool full_rank(const RealMatrix& m) {
    Eigen::ColPivHouseholderQR<RealMatrix> qr(m);
    qr.setThreshold(kRankTolerance);
    return qr.rank() == m.rows();
  }

  const RealMatrix& matrix() const { return matrix_; }
  double half_width() const { return half_width_; }
  Eigen::Index size() const { return matrix_.rows(); }

 private:
  RealMatrix matrix_;
  double half_width_;
};

/// Square matrix with i.i.d. U(-c, c) entries. A singular draw is resampled
/// once before giving up.
inline ChangeOfBasis sample_change_of_basis(Eigen::Index count, double half_width,
                                            std::uint64_t seed) {
  if (!(half_width > 0.0)) throw PreconditionError("sample_change_of_basis: c must be > 0");
  if (count < 1) throw PreconditionError("sample_change_of_basis: count must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(-half_width, half_width);
  for (int attempt = 0; attempt < 2; ++attempt) {
    RealMatrix m(count, count);
    for (Eigen::Index j = 0; j < count; ++j)
      for (Eigen::Index i = 0; i < count; ++i) m(i, j) = dist(rng);
    if (ChangeOfBasis::full_rank(m)) return {std::move(m), half_width};
  }
  throw SingularMatrixError("sample_change_of_basis: two singular samples in a row");
}

/// lambda_b = sum_k lambda~_k M_kb  (row vector times M).
inline LieCoefficients to_canonical(const LieCoefficients& tilde, const ChangeOfBasis& basis) {
  if (tilde.size() != basis.size()) {
    throw PreconditionError("to_canonical: " + std::to_string(tilde.size()) +
                            " coefficients for a " + std::to_string(basis.size()) +
                            "-dimensional change of basis");
  }
  return {tilde.dimension(), basis.matrix().transpose() * tilde.values()};
}

}  // namespace ulie
