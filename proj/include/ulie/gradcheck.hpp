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

// Central finite-difference checks of every analytic gradient in the library.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ulie/gurnn.hpp"
#include "ulie/lie_basis.hpp"
#include "ulie/linalg.hpp"
#include "ulie/parametrization.hpp"
#include "ulie/random.hpp"

namespace ulie::gradcheck {

/// (f(theta + h e_j) - f(theta - h e_j)) / 2h for every coordinate j.
inline RealVector central_difference(const std::function<double(const RealVector&)>& f,
                                     const RealVector& theta, double h) {
  RealVector out(theta.size());
  RealVector probe = theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    probe(j) = theta(j) + h;
    const double up = f(probe);
    probe(j) = theta(j) - h;
    const double down = f(probe);
    probe(j) = theta(j);
    out(j) = (up - down) / (2.0 * h);
  }
  return out;
}

/// max_j |analytic_j - fd_j| / max_j |fd_j| (normwise; plain absolute error
/// when the reference gradient vanishes).
inline double relative_error(const RealVector& analytic, const RealVector& fd) {
  if (analytic.size() != fd.size()) throw PreconditionError("relative_error: length mismatch");
  const double scale = fd.lpNorm<Eigen::Infinity>();
  const double diff = (analytic - fd).lpNorm<Eigen::Infinity>();
  return scale > 1e-12 ? diff / scale : diff;
}

/// Real test cost C(U) = Re tr(A^† U) + |U - B|_F^2 / 2; dC/dU^* = (A + U - B) / 2.
struct QuadraticCost {
  ComplexMatrix a;
  ComplexMatrix b;

  static QuadraticCost random(int n, Rng& rng) {
    return {complex_gaussian(n, n, 1.0, rng), complex_gaussian(n, n, 1.0, rng)};
  }
  double value(const ComplexMatrix& u) const {
    return (a.adjoint() * u).trace().real() + 0.5 * (u - b).squaredNorm();
  }
  ComplexMatrix derivative(const ComplexMatrix& u) const { return 0.5 * (a + u - b); }
};

struct CheckResult {
  std::string name;
  int n = 0;
  int draws = 0;
  double max_relative_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_relative_error < tolerance; }
};

struct Report {
  std::vector<CheckResult> checks;
  double seconds = 0.0;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed(); });
  }
};

inline constexpr double kStep = 1e-6;
inline constexpr double kTolerance = 1e-5;
inline constexpr double kRnnStep = 1e-5;
inline constexpr double kRnnTolerance = 1e-4;

enum class LieRoute { PerElement, Contracted };

/// Draw 0 is lambda = 0, draw 1 a diagonal lambda with repeated entries
/// (exactly degenerate spectrum), draw 2 a diagonal lambda with a pair closer
/// than the degeneracy threshold; the rest are N(0, 1) coefficients.
inline LieParametrization lie_draw(int n, int draw, Rng& rng) {
  RealVector v = RealVector::Zero(basis_size(n));
  if (draw == 1 || draw == 2) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (int a = 0; a < n; ++a) v(a) = g(rng);
    if (n >= 2) v(1) = v(0) + (draw == 2 ? 3e-8 : 0.0);
  } else if (draw > 2) {
    v = normal_vector(basis_size(n), 1.0, rng);
  }
  return {LieCoefficients(n, std::move(v)), std::nullopt, std::nullopt};
}

inline double check_lie(const LieParametrization& p, const QuadraticCost& cost, LieRoute route) {
  const LieForward fwd = lie_to_unitary(p);
  const ComplexMatrix g = cost.derivative(fwd.unitary);
  const Gradient analytic = route == LieRoute::PerElement ? lie_gradient(p, fwd, g)
                                                          : lie_gradient_contracted(p, fwd, g);
  LieParametrization probe = p;
  const RealVector fd = central_difference(
      [&](const RealVector& theta) {
        probe.lambda.values() = theta;
        return cost.value(lie_to_unitary(probe).unitary);
      },
      p.lambda.values(), kStep);
  return relative_error(analytic, fd);
}

inline double check_composition(const CompositionParametrization& p, const QuadraticCost& cost) {
  const Gradient analytic = composition_gradient(p, cost.derivative(composition_to_unitary(p)));
  CompositionParametrization probe = p;
  const RealVector fd = central_difference(
      [&](const RealVector& theta) {
        probe.set_flat(theta);
        return cost.value(composition_to_unitary(probe));
      },
      p.flat(), kStep);
  return relative_error(analytic, fd);
}

/// Random batch with arbitrary step count (the task generators need T >= 10).
inline rnn::TaskBatch synthetic_rnn_batch(rnn::Task task, int steps, int batch_size, Rng& rng) {
  rnn::TaskBatch b;
  b.task = task;
  const int d_in = task == rnn::Task::Adding ? 2 : rnn::kMemoryClasses;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, rnn::kMemoryClasses - 1);
  for (int t = 0; t < steps; ++t) {
    RealMatrix x(d_in, batch_size);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = unit(rng);
    b.inputs.push_back(std::move(x));
  }
  if (task == rnn::Task::Adding) {
    b.adding_targets.resize(batch_size);
    for (int j = 0; j < batch_size; ++j) b.adding_targets(j) = 2.0 * unit(rng);
  } else {
    b.memory_targets.resize(steps, batch_size);
    for (Eigen::Index i = 0; i < b.memory_targets.size(); ++i) b.memory_targets(i) = cls(rng);
  }
  return b;
}

inline double check_rnn(rnn::Task task, rnn::Activation f, double beta, std::uint64_t seed) {
  Rng rng(seed);
  const int n = 4;
  const Eigen::Index d_in = task == rnn::Task::Adding ? 2 : rnn::kMemoryClasses;
  const Eigen::Index d_out = task == rnn::Task::Adding ? 1 : rnn::kMemoryClasses;
  rnn::RnnParams params = rnn::init_params(n, d_in, d_out, beta, f, rng);
  // Move away from the zero-initialized biases and the near-identity transition.
  RealVector theta = params.flat() + normal_vector(params.parameter_count(), 0.3, rng);
  params.set_flat(theta);
  const rnn::TaskBatch batch = synthetic_rnn_batch(task, 5, 3, rng);
  const RealVector analytic = rnn::rnn_backward(params, batch, rnn::rnn_forward(params, batch));
  rnn::RnnParams probe = params;
  const RealVector fd = central_difference(
      [&](const RealVector& t) {
        probe.set_flat(t);
        return rnn::rnn_forward(probe, batch).loss;
      },
      theta, kRnnStep);
  return relative_error(analytic, fd);
}

/// The full suite: Lie (both contraction routes) and composition at
/// n in {2, 3, 6} with `draws` draws each, then the RNN at n = 4, T = 5.
inline Report run(std::uint64_t seed = 0, int draws = 20) {
  const auto t0 = std::chrono::steady_clock::now();
  Report report;
  for (const int n : {2, 3, 6}) {
    CheckResult per{"lie/per-element", n, draws, 0.0, kTolerance};
    CheckResult con{"lie/contracted", n, draws, 0.0, kTolerance};
    CheckResult comp{"composition", n, draws, 0.0, kTolerance};
    for (int d = 0; d < draws; ++d) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(d)}));
      const QuadraticCost cost = QuadraticCost::random(n, rng);
      const LieParametrization lie = lie_draw(n, d, rng);
      per.max_relative_error =
          std::max(per.max_relative_error, check_lie(lie, cost, LieRoute::PerElement));
      con.max_relative_error =
          std::max(con.max_relative_error, check_lie(lie, cost, LieRoute::Contracted));
      comp.max_relative_error =
          std::max(comp.max_relative_error, check_composition(random_composition(n, rng), cost));
    }
    report.checks.push_back(per);
    report.checks.push_back(con);
    report.checks.push_back(comp);
  }
  const std::uint64_t rnn_seed = derive_seed(seed, {100});
  report.checks.push_back({"rnn/adding-relu", 4, 1,
                           check_rnn(rnn::Task::Adding, rnn::Activation::Relu, 1.4, rnn_seed),
                           kRnnTolerance});
  report.checks.push_back({"rnn/memory-tanh", 4, 1,
                           check_rnn(rnn::Task::Memory, rnn::Activation::Tanh, 1.05, rnn_seed + 1),
                           kRnnTolerance});
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace ulie::gradcheck
