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

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ulie/lie_basis.hpp"
#include "ulie/linalg.hpp"
#include "ulie/random.hpp"

namespace ulie {

// Gradient convention throughout: given G = dC/dU^* for a real cost C, the
// gradient entry for a real parameter theta is 2 Re <G, dU/dtheta>, with
// <A, B> = tr(A^† B). That is exactly dC/dtheta.

using Gradient = RealVector;

enum class ParametrizationKind { LieAlgebra, Projection, Composition };

inline std::string to_string(ParametrizationKind kind) {
  switch (kind) {
    case ParametrizationKind::LieAlgebra: return "lie";
    case ParametrizationKind::Projection: return "projection";
    case ParametrizationKind::Composition: return "composition";
  }
  return "unknown";
}

inline ParametrizationKind parse_parametrization_kind(std::string_view s) {
  if (s == "lie" || s == "lie_algebra") return ParametrizationKind::LieAlgebra;
  if (s == "projection") return ParametrizationKind::Projection;
  if (s == "composition") return ParametrizationKind::Composition;
  throw PreconditionError("unknown parametrization '" + std::string(s) + "'");
}

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ===========================================================================
// Lie algebra parametrization: U = exp(sum_j lambda_j T_j)

struct LieParametrization {
  LieCoefficients lambda;  // relative to the change of basis when one is set
  std::optional<std::vector<bool>> trainable_mask;
  std::optional<ChangeOfBasis> change_of_basis;

  int dimension() const { return lambda.dimension(); }

  bool trainable(Eigen::Index j) const {
    return !trainable_mask || (*trainable_mask)[static_cast<std::size_t>(j)];
  }

  Eigen::Index trainable_count() const {
    if (!trainable_mask) return lambda.size();
    return std::count(trainable_mask->begin(), trainable_mask->end(), true);
  }

  LieCoefficients canonical() const {
    return change_of_basis ? to_canonical(lambda, *change_of_basis) : lambda;
  }

  void validate() const {
    if (trainable_mask && static_cast<Eigen::Index>(trainable_mask->size()) != lambda.size()) {
      throw PreconditionError("LieParametrization: mask length must be n^2");
    }
    if (change_of_basis && change_of_basis->size() != lambda.size()) {
      throw PreconditionError("LieParametrization: change of basis must be n^2 x n^2");
    }
  }
};

struct LieForward {
  ComplexMatrix unitary;
  EigenDecomposition eig;  // of L; values purely imaginary
};

/// Degenerate pairs closer than this use the analytic limit e^{(d_i + d_j)/2}.
inline constexpr double kDegenerateGap = 1e-7;

/// Phi_ii = e^{d_i}; Phi_ij = (e^{d_i} - e^{d_j}) / (d_i - d_j).
inline ComplexMatrix exp_divided_differences(const ComplexVector& d) {
  const Eigen::Index n = d.size();
  const ComplexVector e = d.array().exp();
  ComplexMatrix phi(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == j) {
        phi(i, j) = e(i);
      } else if (std::abs(d(i) - d(j)) < kDegenerateGap) {
        phi(i, j) = std::exp(0.5 * (d(i) + d(j)));
      } else {
        phi(i, j) = (e(i) - e(j)) / (d(i) - d(j));
      }
    }
  }
  if (!phi.allFinite()) throw NumericalError("exp_divided_differences: non-finite entry");
  return phi;
}

inline LieForward lie_to_unitary(const LieParametrization& p) {
  p.validate();
  SkewExponential ex = exp_skew_hermitian(assemble(p.canonical()));
  return {std::move(ex.unitary), std::move(ex.eig)};
}

namespace detail {

inline void check_forward(const LieParametrization& p, const LieForward& fwd,
                          const ComplexMatrix& g) {
  const int n = p.dimension();
  if (fwd.eig.vectors.rows() != n || fwd.eig.values.size() != n) {
    throw PreconditionError("lie_gradient: eigendecomposition missing or from another dimension");
  }
  if (g.rows() != n || g.cols() != n) {
    throw PreconditionError("lie_gradient: cost derivative is " + shape_of(g) + ", expected " +
                            std::to_string(n) + "x" + std::to_string(n));
  }
}

// Maps a canonical-basis gradient onto the trainable coordinates.
inline Gradient finish_lie_gradient(const LieParametrization& p, Gradient canonical_grad) {
  // lambda = M^T lambda~  =>  dC/dlambda~ = M dC/dlambda
  Gradient out = p.change_of_basis ? Gradient(p.change_of_basis->matrix() * canonical_grad)
                                   : std::move(canonical_grad);
  if (p.trainable_mask) {
    for (Eigen::Index j = 0; j < out.size(); ++j)
      if (!p.trainable(j)) out(j) = 0.0;
  }
  if (!out.allFinite()) throw NumericalError("lie_gradient: non-finite gradient");
  return out;
}

}  // namespace detail

/// dC/dlambda_a = 2 Re <G, W V_a W^†>, V_a = (W^† T_a W) o Phi, one basis
/// element at a time. W^† G W is formed once (the only dense products); each
/// element then costs O(n^2) through the outer-product conjugation identities.
inline Gradient lie_gradient(const LieParametrization& p, const LieForward& fwd,
                             const ComplexMatrix& g) {
  detail::check_forward(p, fwd, g);
  const int n = p.dimension();
  const ComplexMatrix& w = fwd.eig.vectors;
  const ComplexMatrix phi = exp_divided_differences(fwd.eig.values);
  const ComplexMatrix g_rotated = w.adjoint() * g * w;
  // <G^, K o Phi> = sum_ij conj(G^_ij) Phi_ij K_ij
  const ComplexMatrix weights = g_rotated.conjugate().cwiseProduct(phi);

  const std::vector<BasisElement> basis = canonical_basis(n);
  Gradient grad = Gradient::Zero(basis_size(n));
  ComplexMatrix k(n, n);
  for (Eigen::Index a = 0; a < grad.size(); ++a) {
    // With a change of basis every canonical direction feeds the trainable ones.
    if (!p.change_of_basis && !p.trainable(a)) continue;
    conjugate_basis_into(w, basis[static_cast<std::size_t>(a)], k);
    grad(a) = 2.0 * weights.cwiseProduct(k).sum().real();
  }
  return detail::finish_lie_gradient(p, std::move(grad));
}

/// Same quantity as lie_gradient, contracted through R = conj(W) (G^* o Phi) W^T
/// so every basis element reads one or two entries of R. O(n^3) overall.
inline Gradient lie_gradient_contracted(const LieParametrization& p, const LieForward& fwd,
                                        const ComplexMatrix& g) {
  detail::check_forward(p, fwd, g);
  const int n = p.dimension();
  const ComplexMatrix& w = fwd.eig.vectors;
  const ComplexMatrix phi = exp_divided_differences(fwd.eig.values);
  const ComplexMatrix weights = (w.adjoint() * g * w).conjugate().cwiseProduct(phi);
  const ComplexMatrix r = w.conjugate() * weights * w.transpose();

  Gradient grad(basis_size(n));
  for (int a = 0; a < n; ++a) grad(a) = -2.0 * r(a, a).imag();
  const Eigen::Index sym = symmetric_offset(n);
  const Eigen::Index anti = antisymmetric_offset(n);
  for (int rr = 0; rr < n; ++rr) {
    for (int s = rr + 1; s < n; ++s) {
      const Eigen::Index k = pair_index(n, rr, s);
      grad(sym + k) = -2.0 * (r(rr, s) + r(s, rr)).imag();
      grad(anti + k) = 2.0 * (r(rr, s) - r(s, rr)).real();
    }
  }
  return detail::finish_lie_gradient(p, std::move(grad));
}

/// Coefficients with standard deviation 0.1.
inline LieParametrization random_lie(int n, Rng& rng, double stddev = 0.1) {
  return {LieCoefficients(n, normal_vector(basis_size(n), stddev, rng)), std::nullopt,
          std::nullopt};
}

/// Mask with exactly `count` trainable entries chosen uniformly at random.
inline std::vector<bool> random_mask(Eigen::Index size, Eigen::Index count, Rng& rng) {
  count = std::clamp<Eigen::Index>(count, 0, size);
  std::vector<std::size_t> order(static_cast<std::size_t>(size));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> mask(static_cast<std::size_t>(size), false);
  for (Eigen::Index i = 0; i < count; ++i) mask[order[static_cast<std::size_t>(i)]] = true;
  return mask;
}

// ===========================================================================
// Composition parametrization: U = D3 R2 F^-1 D2 Pi R1 F D1 (7n parameters)

inline ComplexMatrix fourier_matrix(int n) {
  ComplexMatrix f(n, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < n; ++k) {
      // Reduce jk mod n first so the angle stays small for large n.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((j * k) % n) / n;
      f(j, k) = scale * Complex(std::cos(angle), std::sin(angle));
    }
  }
  return f;
}

inline ComplexMatrix phase_matrix(const RealVector& alpha) {
  const ComplexVector diag = (kI * alpha.cast<Complex>()).array().exp();
  return diag.asDiagonal();
}

inline ComplexMatrix reflection_matrix(const ComplexVector& v) {
  const double norm2 = v.squaredNorm();
  const Eigen::Index n = v.size();
  return ComplexMatrix::Identity(n, n) - (2.0 / norm2) * (v * v.adjoint());
}

/// (Pi x)_i = x_{perm[i]}.
inline ComplexMatrix permutation_matrix(const std::vector<int>& perm) {
  const auto n = static_cast<Eigen::Index>(perm.size());
  ComplexMatrix m = ComplexMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) m(i, perm[static_cast<std::size_t>(i)]) = 1.0;
  return m;
}

struct CompositionParametrization {
  static constexpr double kMinReflectionNorm = 1e-12;

  RealVector alpha1, alpha2, alpha3;
  ComplexVector v1, v2;
  std::vector<int> permutation;  // fixed, not trained

  int dimension() const { return static_cast<int>(alpha1.size()); }
  Eigen::Index parameter_count() const { return 7 * static_cast<Eigen::Index>(dimension()); }

  void validate() const {
    const Eigen::Index n = alpha1.size();
    if (n < 1 || alpha2.size() != n || alpha3.size() != n || v1.size() != n || v2.size() != n ||
        static_cast<Eigen::Index>(permutation.size()) != n) {
      throw PreconditionError("CompositionParametrization: inconsistent component sizes");
    }
    if (v1.norm() <= kMinReflectionNorm || v2.norm() <= kMinReflectionNorm) {
      throw PreconditionError("CompositionParametrization: zero reflection vector");
    }
    std::vector<int> sorted = permutation;
    std::sort(sorted.begin(), sorted.end());
    for (Eigen::Index i = 0; i < n; ++i)
      if (sorted[static_cast<std::size_t>(i)] != i)
        throw PreconditionError("CompositionParametrization: permutation is not a bijection");
  }

  /// [alpha1, alpha2, alpha3, Re v1, Im v1, Re v2, Im v2]
  RealVector flat() const {
    const Eigen::Index n = dimension();
    RealVector out(7 * n);
    out << alpha1, alpha2, alpha3, v1.real(), v1.imag(), v2.real(), v2.imag();
    return out;
  }

  void set_flat(const RealVector& theta) {
    const Eigen::Index n = dimension();
    if (theta.size() != 7 * n) throw PreconditionError("set_flat: expected 7n parameters");
    alpha1 = theta.segment(0, n);
    alpha2 = theta.segment(n, n);
    alpha3 = theta.segment(2 * n, n);
    v1.real() = theta.segment(3 * n, n);
    v1.imag() = theta.segment(4 * n, n);
    v2.real() = theta.segment(5 * n, n);
    v2.imag() = theta.segment(6 * n, n);
  }

  /// Right-to-left factor list: D1, F, R1, Pi, D2, F^-1, R2, D3.
  std::array<ComplexMatrix, 8> factors() const {
    validate();
    const int n = dimension();
    const ComplexMatrix f = fourier_matrix(n);
    return {phase_matrix(alpha1),   f,
            reflection_matrix(v1),  permutation_matrix(permutation),
            phase_matrix(alpha2),   f.adjoint(),
            reflection_matrix(v2),  phase_matrix(alpha3)};
  }
};

/// Angles ~ U(-pi, pi), reflection components ~ U(-s, s) with s = sqrt(6 / 2n),
/// permutation uniform.
inline CompositionParametrization random_composition(int n, Rng& rng) {
  if (n < 1) throw PreconditionError("random_composition: n must be >= 1");
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  const double s = std::sqrt(6.0 / (2.0 * n));
  std::uniform_real_distribution<double> refl(-s, s);
  CompositionParametrization p;
  auto angles = [&] {
    RealVector a(n);
    for (int i = 0; i < n; ++i) a(i) = angle(rng);
    return a;
  };
  auto vec = [&] {
    ComplexVector v(n);
    for (int i = 0; i < n; ++i) {
      const double re = refl(rng);
      const double im = refl(rng);
      v(i) = Complex(re, im);
    }
    return v;
  };
  p.alpha1 = angles();
  p.alpha2 = angles();
  p.alpha3 = angles();
  p.v1 = vec();
  p.v2 = vec();
  p.permutation.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p.permutation[static_cast<std::size_t>(i)] = i;
  std::shuffle(p.permutation.begin(), p.permutation.end(), rng);
  return p;
}

inline ComplexMatrix composition_to_unitary(const CompositionParametrization& p) {
  const auto fs = p.factors();
  ComplexMatrix u = fs[0];
  for (std::size_t k = 1; k < fs.size(); ++k) u = fs[k] * u;
  return u;
}

namespace detail {

inline void phase_gradient(const RealVector& alpha, const ComplexMatrix& gk,
                           Eigen::Ref<RealVector> out) {
  // dD/dalpha_j = i e^{i alpha_j} E_jj
  for (Eigen::Index j = 0; j < alpha.size(); ++j) {
    const Complex dd = kI * std::exp(kI * alpha(j));
    out(j) = 2.0 * (std::conj(gk(j, j)) * dd).real();
  }
}

inline void reflection_gradient(const ComplexVector& v, const ComplexMatrix& gk,
                                Eigen::Ref<RealVector> re_out, Eigen::Ref<RealVector> im_out) {
  // dC = Re(a dv) with a = -(4/N) v^†(G + G^†) + (8/N^2) Re(v^† G v) v^†
  const double norm2 = v.squaredNorm();
  const Complex vgv = v.dot(gk * v);  // v^† G v
  const Eigen::RowVectorXcd a = (-4.0 / norm2) * (v.adjoint() * (gk + gk.adjoint())) +
                                (8.0 * vgv.real() / (norm2 * norm2)) * v.adjoint();
  re_out = a.real().transpose();
  im_out = -a.imag().transpose();
}

}  // namespace detail

/// Reverse pass through the eight cached factors.
inline Gradient composition_gradient(const CompositionParametrization& p, const ComplexMatrix& g) {
  const int n = p.dimension();
  if (g.rows() != n || g.cols() != n) {
    throw PreconditionError("composition_gradient: cost derivative has shape " +
                            detail::shape_of(g));
  }
  const auto fs = p.factors();
  // prefix[k] = A_k ... A_1 (prefix[0] = I); suffix[k] = A_8 ... A_{k+1}.
  std::array<ComplexMatrix, 9> prefix;
  std::array<ComplexMatrix, 9> suffix;
  prefix[0] = ComplexMatrix::Identity(n, n);
  for (std::size_t k = 1; k <= 8; ++k) prefix[k] = fs[k - 1] * prefix[k - 1];
  suffix[8] = ComplexMatrix::Identity(n, n);
  for (std::size_t k = 8; k-- > 0;) suffix[k] = suffix[k + 1] * fs[k];
  // Cost derivative with respect to factor A_k (1-based): S_k^† G P_{k-1}^†.
  auto local = [&](std::size_t k) -> ComplexMatrix {
    return suffix[k].adjoint() * g * prefix[k - 1].adjoint();
  };

  Gradient grad(7 * n);
  detail::phase_gradient(p.alpha1, local(1), grad.segment(0, n));
  detail::reflection_gradient(p.v1, local(3), grad.segment(3 * n, n), grad.segment(4 * n, n));
  detail::phase_gradient(p.alpha2, local(5), grad.segment(n, n));
  detail::reflection_gradient(p.v2, local(7), grad.segment(5 * n, n), grad.segment(6 * n, n));
  detail::phase_gradient(p.alpha3, local(8), grad.segment(2 * n, n));
  if (!grad.allFinite()) throw NumericalError("composition_gradient: non-finite gradient");
  return grad;
}

// ===========================================================================
// Projection: unconstrained complex matrix, re-unitarized after every step

struct ProjectionParametrization {
  ComplexMatrix a;

  int dimension() const { return static_cast<int>(a.rows()); }
  Eigen::Index parameter_count() const { return 2 * a.size(); }

  /// [Re A, Im A], column-major.
  RealVector flat() const {
    RealVector out(2 * a.size());
    out << a.real().reshaped(), a.imag().reshaped();
    return out;
  }
};

/// Gradient over the 2n^2 real parameters: (2 Re G, 2 Im G).
inline Gradient projection_gradient(const ProjectionParametrization& p, const ComplexMatrix& g) {
  if (g.rows() != p.a.rows() || g.cols() != p.a.cols()) {
    throw PreconditionError("projection_gradient: shape mismatch");
  }
  Gradient out(2 * g.size());
  out << 2.0 * g.real().reshaped(), 2.0 * g.imag().reshaped();
  return out;
}

/// A <- polar(A - lr G).unitary
inline ProjectionParametrization projection_step(const ProjectionParametrization& p,
                                                 const ComplexMatrix& g, double lr) {
  if (g.rows() != p.a.rows() || g.cols() != p.a.cols()) {
    throw PreconditionError("projection_step: shape mismatch " + detail::shape_of(p.a) + " vs " +
                            detail::shape_of(g));
  }
  return {polar_project(p.a - lr * g).unitary};
}

/// Polar factor of a complex Gaussian matrix.
inline ProjectionParametrization random_projection(int n, Rng& rng) {
  return {polar_project(complex_gaussian(n, n, 1.0, rng)).unitary};
}

// ===========================================================================
// One training-time handle over the three kinds. Owns the parameters and
// caches the forward pass so the gradient reuses its eigendecomposition.

class UnitaryLearner {
 public:
  using Params = std::variant<LieParametrization, ProjectionParametrization,
                              CompositionParametrization>;

  explicit UnitaryLearner(Params params) : params_(std::move(params)) {}

  ParametrizationKind kind() const {
    switch (params_.index()) {
      case 0: return ParametrizationKind::LieAlgebra;
      case 1: return ParametrizationKind::Projection;
      default: return ParametrizationKind::Composition;
    }
  }

  const Params& params() const { return params_; }

  int dimension() const {
    return std::visit([](const auto& p) { return p.dimension(); }, params_);
  }

  Eigen::Index trainable_count() const {
    return std::visit(
        [](const auto& p) -> Eigen::Index {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, LieParametrization>) {
            return p.trainable_count();
          } else {
            return p.parameter_count();
          }
        },
        params_);
  }

  const ComplexMatrix& unitary() {
    if (!cached_) {
      std::visit(
          [this](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, LieParametrization>) {
              lie_forward_ = lie_to_unitary(p);
              cached_ = lie_forward_->unitary;
            } else if constexpr (std::is_same_v<T, ProjectionParametrization>) {
              cached_ = p.a;
            } else {
              cached_ = composition_to_unitary(p);
            }
          },
          params_);
    }
    return *cached_;
  }

  Gradient gradient(const ComplexMatrix& g) {
    unitary();
    return std::visit(
        [&](const auto& p) -> Gradient {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, LieParametrization>) {
            return lie_gradient(p, *lie_forward_, g);
          } else if constexpr (std::is_same_v<T, ProjectionParametrization>) {
            return projection_gradient(p, g);
          } else {
            return composition_gradient(p, g);
          }
        },
        params_);
  }

  /// One plain SGD step given G = dC/dU^* at the current parameters.
  void sgd_step(const ComplexMatrix& g, double lr) {
    if (auto* proj = std::get_if<ProjectionParametrization>(&params_)) {
      *proj = projection_step(*proj, g, lr);
    } else if (auto* lie = std::get_if<LieParametrization>(&params_)) {
      const Gradient grad = gradient(g);
      lie->lambda.values() -= lr * grad;
    } else {
      auto& comp = std::get<CompositionParametrization>(params_);
      const Gradient grad = gradient(g);
      comp.set_flat(comp.flat() - lr * grad);
    }
    invalidate();
  }

  /// Flat parameter vector (Lie: active-basis coefficients).
  RealVector parameters() const {
    return std::visit(
        [](const auto& p) -> RealVector {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, LieParametrization>) {
            return p.lambda.values();
          } else {
            return p.flat();
          }
        },
        params_);
  }

 private:
  void invalidate() {
    cached_.reset();
    lie_forward_.reset();
  }

  Params params_;
  std::optional<ComplexMatrix> cached_;
  std::optional<LieForward> lie_forward_;
};

}  // namespace ulie
