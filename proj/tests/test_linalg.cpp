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

#include <catch_amalgamated.hpp>
#include <numbers>

#include "oracles.hpp"
#include "ulie/linalg.hpp"
#include "ulie/random.hpp"

namespace ulie {
namespace {

ComplexMatrix random_hermitian(int n, Rng& rng) {
  const ComplexMatrix a = complex_gaussian(n, n, 1.0, rng);
  return 0.5 * (a + a.adjoint());
}

ComplexMatrix random_skew(int n, Rng& rng, double scale = 1.0) {
  const ComplexMatrix a = complex_gaussian(n, n, scale, rng);
  return 0.5 * (a - a.adjoint());
}

TEST_CASE("hermitian_eig on diagonal input", "[linalg]") {
  ComplexMatrix h = ComplexMatrix::Zero(3, 3);
  h.diagonal() << 3.0, 1.0, 2.0;
  const EigenDecomposition eig = hermitian_eig(h);
  CHECK(eig.values(0).real() == Catch::Approx(1.0));
  CHECK(eig.values(1).real() == Catch::Approx(2.0));
  CHECK(eig.values(2).real() == Catch::Approx(3.0));
  // Eigenvectors are coordinate axes (phase normalized to +1).
  ComplexMatrix expected = ComplexMatrix::Zero(3, 3);
  expected(1, 0) = expected(2, 1) = expected(0, 2) = 1.0;
  CHECK((eig.vectors - expected).norm() < 1e-14);

  ComplexMatrix sorted = ComplexMatrix::Zero(3, 3);
  sorted.diagonal() << 1.0, 2.0, 3.0;
  CHECK((hermitian_eig(sorted).vectors - ComplexMatrix::Identity(3, 3)).norm() < 1e-14);
}

TEST_CASE("hermitian_eig of Pauli X", "[linalg]") {
  ComplexMatrix x(2, 2);
  x << 0.0, 1.0, 1.0, 0.0;
  const EigenDecomposition eig = hermitian_eig(x);
  CHECK(eig.values(0).real() == Catch::Approx(-1.0));
  CHECK(eig.values(1).real() == Catch::Approx(1.0));
}

TEST_CASE("hermitian_eig reconstructs random input", "[linalg]") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const ComplexMatrix h = random_hermitian(8, rng);
    const EigenDecomposition eig = hermitian_eig(h);
    const ComplexMatrix rebuilt = eig.vectors * eig.values.asDiagonal() * eig.vectors.adjoint();
    CHECK((rebuilt - h).norm() < 1e-10 * h.norm());
    CHECK(unitarity_error(eig.vectors) < 1e-10);
    CHECK(eig.values.imag().cwiseAbs().maxCoeff() < 1e-12);
    for (Eigen::Index k = 1; k < 8; ++k) CHECK(eig.values(k - 1).real() <= eig.values(k).real());
    CHECK(std::abs(eig.values.sum() - h.trace()) < 1e-10 * h.norm());
  }
}

TEST_CASE("hermitian_eig is deterministic under degenerate spectra", "[linalg]") {
  const ComplexMatrix h = ComplexMatrix::Identity(4, 4);
  const EigenDecomposition a = hermitian_eig(h);
  const EigenDecomposition b = hermitian_eig(h);
  CHECK(a.vectors == b.vectors);
  CHECK(a.values == b.values);
}

TEST_CASE("hermitian_eig rejects bad input", "[linalg]") {
  CHECK_THROWS_AS(hermitian_eig(ComplexMatrix::Zero(2, 3)), PreconditionError);
  ComplexMatrix nh(2, 2);
  nh << 0.0, 1.0, 0.0, 0.0;
  CHECK_THROWS_AS(hermitian_eig(nh), PreconditionError);
}

TEST_CASE("exp_skew_hermitian closed forms", "[linalg]") {
  SECTION("zero") {
    CHECK((exp_skew_hermitian(ComplexMatrix::Zero(3, 3)).unitary - ComplexMatrix::Identity(3, 3))
              .norm() < 1e-15);
  }
  SECTION("scalar i pi") {
    ComplexMatrix l(1, 1);
    l(0, 0) = Complex(0.0, std::numbers::pi);
    CHECK(std::abs(exp_skew_hermitian(l).unitary(0, 0) - Complex(-1.0, 0.0)) < 1e-15);
  }
  SECTION("planar rotation by pi/2") {
    ComplexMatrix l(2, 2);
    l << 0.0, 1.0, -1.0, 0.0;
    l *= std::numbers::pi / 2.0;
    ComplexMatrix expected(2, 2);
    expected << 0.0, 1.0, -1.0, 0.0;
    CHECK((exp_skew_hermitian(l).unitary - expected).norm() < 1e-14);
  }
}

TEST_CASE("exp_skew_hermitian matches Pade exponential", "[linalg]") {
  Rng rng(11);
  for (const int n : {1, 2, 5, 8, 16}) {
    const ComplexMatrix l = random_skew(n, rng);
    const SkewExponential ex = exp_skew_hermitian(l);
    CHECK((ex.unitary - oracle::expm(l)).norm() < 1e-11 * std::max(1.0, l.norm()));
    CHECK(unitarity_error(ex.unitary) < 1e-10);
    CHECK(std::abs(std::abs(ex.unitary.determinant()) - 1.0) < 1e-8);
    CHECK((exp_skew_hermitian(-l).unitary - ex.unitary.adjoint()).norm() < 1e-10);
    CHECK(ex.eig.values.real().cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("exp_skew_hermitian precondition", "[linalg]") {
  CHECK_THROWS_AS(exp_skew_hermitian(ComplexMatrix::Identity(2, 2)), PreconditionError);
}

TEST_CASE("polar_project", "[linalg]") {
  Rng rng(3);
  SECTION("unitary input is a fixed point") {
    const ComplexMatrix u = exp_skew_hermitian(random_skew(5, rng)).unitary;
    const PolarFactors pf = polar_project(u);
    CHECK((pf.unitary - u).norm() < 1e-12);
    CHECK((pf.positive - ComplexMatrix::Identity(5, 5)).norm() < 1e-12);
    CHECK((polar_project(pf.unitary).unitary - pf.unitary).norm() < 1e-12);
  }
  SECTION("positive diagonal") {
    ComplexMatrix a = ComplexMatrix::Zero(2, 2);
    a.diagonal() << 2.0, 0.5;
    CHECK((polar_project(a).unitary - ComplexMatrix::Identity(2, 2)).norm() < 1e-14);
  }
  SECTION("constructive oracle") {
    for (int trial = 0; trial < 5; ++trial) {
      const ComplexMatrix u0 = exp_skew_hermitian(random_skew(6, rng)).unitary;
      const ComplexMatrix b = complex_gaussian(6, 6, 1.0, rng);
      const ComplexMatrix h0 = b * b.adjoint() + 0.5 * ComplexMatrix::Identity(6, 6);
      const ComplexMatrix a = u0 * h0;
      const PolarFactors pf = polar_project(a);
      CHECK((pf.unitary - u0).norm() < 1e-8);
      CHECK((pf.unitary * pf.positive - a).norm() < 1e-8 * a.norm());
      CHECK(is_unitary(pf.unitary));
    }
  }
  SECTION("closest unitary beats random unitaries") {
    const ComplexMatrix a = complex_gaussian(4, 4, 1.0, rng);
    const double best = (polar_project(a).unitary - a).norm();
    for (int trial = 0; trial < 50; ++trial) {
      const ComplexMatrix v = exp_skew_hermitian(random_skew(4, rng, 2.0)).unitary;
      CHECK(best <= (v - a).norm() + 1e-12);
    }
  }
  SECTION("rank deficient") {
    ComplexMatrix a = ComplexMatrix::Zero(2, 2);
    a(0, 0) = 1.0;
    CHECK_THROWS_AS(polar_project(a), SingularMatrixError);
  }
}

TEST_CASE("plumbing", "[linalg]") {
  Rng rng(5);
  const ComplexMatrix a = complex_gaussian(3, 3, 1.0, rng);
  CHECK(matmul(ComplexMatrix::Identity(3, 3), a) == a);
  CHECK_THROWS_AS(matmul(a, ComplexMatrix::Zero(2, 2)), PreconditionError);
  CHECK(frobenius_norm(ComplexMatrix::Identity(4, 4)) == Catch::Approx(2.0));
  CHECK(conj_transpose(a) == a.adjoint());
  const ComplexMatrix e12 = outer_product(ComplexVector::Unit(3, 0), ComplexVector::Unit(3, 1));
  ComplexMatrix expected = ComplexMatrix::Zero(3, 3);
  expected(0, 1) = 1.0;
  CHECK(e12 == expected);
}

}  // namespace
}  // namespace ulie
