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

#include "oracles.hpp"
#include "ulie/gradcheck.hpp"
#include "ulie/gurnn.hpp"
#include "ulie/operator_learning.hpp"

namespace ulie::rnn {
namespace {

RnnParams zero_params(int n, Eigen::Index d_in, Eigen::Index d_out, Activation f) {
  Rng rng(0);
  RnnParams p = init_params(n, d_in, d_out, 1.0, f, rng);
  p.set_flat(RealVector::Zero(p.parameter_count()));
  return p;
}

TEST_CASE("adding task batches", "[gurnn]") {
  Rng rng(1);
  const TaskBatch b = adding_task_batch(20, 50, rng);
  REQUIRE(b.steps() == 20);
  REQUIRE(b.batch_size() == 50);
  for (int j = 0; j < 50; ++j) {
    CHECK(b.adding_targets(j) >= 0.0);
    CHECK(b.adding_targets(j) <= 2.0);
    double marked = 0.0;
    int first = -1;
    int second = -1;
    for (int t = 0; t < 20; ++t) {
      const auto& x = b.inputs[static_cast<std::size_t>(t)];
      CHECK(x(0, j) >= 0.0);
      CHECK(x(0, j) <= 1.0);
      if (x(1, j) == 1.0) {
        marked += x(0, j);
        (first < 0 ? first : second) = t;
      }
    }
    CHECK(first >= 0);
    CHECK(first < 10);
    CHECK(second >= 10);
    CHECK(marked == Catch::Approx(b.adding_targets(j)));
  }
  CHECK_THROWS_AS(adding_task_batch(9, 1, rng), PreconditionError);
}

TEST_CASE("memory task batches", "[gurnn]") {
  Rng rng(2);
  const int T = 15;
  const TaskBatch b = memory_task_batch(T, 8, rng);
  REQUIRE(b.steps() == T + 20);
  for (int j = 0; j < 8; ++j) {
    for (int t = 0; t < T + 20; ++t) {
      const auto col = b.inputs[static_cast<std::size_t>(t)].col(j);
      CHECK(col.sum() == 1.0);
      Eigen::Index sym = 0;
      col.maxCoeff(&sym);
      if (t < 10) {
        CHECK(sym < kMemorySymbols);
        CHECK(b.memory_targets(T + 10 + t, j) == sym);
      } else if (t == T + 9) {
        CHECK(sym == kMemoryMarker);
      } else {
        CHECK(sym == kMemoryBlank);
      }
      if (t < T + 10) CHECK(b.memory_targets(t, j) == kMemoryBlank);
    }
  }
  CHECK_THROWS_AS(memory_task_batch(5, 1, rng), PreconditionError);
}

TEST_CASE("baseline losses", "[gurnn]") {
  CHECK(baseline_loss(Task::Adding, 100) == Catch::Approx(1.0 / 6.0));
  CHECK(baseline_loss(Task::Memory, 100) == Catch::Approx(10.0 * std::log(8.0) / 120.0));
  CHECK(baseline_loss(Task::Memory, 100) == Catch::Approx(0.1733).epsilon(1e-3));

  // Monte-Carlo: the trivial predictors attain the closed forms.
  Rng rng(3);
  const TaskBatch add = adding_task_batch(100, 100000, rng);
  CHECK((add.adding_targets.array() - 1.0).square().mean() == Catch::Approx(1.0 / 6.0).epsilon(0.02));

  const int T = 30;
  const TaskBatch mem = memory_task_batch(T, 2000, rng);
  RealMatrix logits = RealMatrix::Zero(kMemoryClasses, 2000);
  double total = 0.0;
  for (int t = 0; t < T + 20; ++t) {
    logits.setConstant(-1e9);
    if (t < T + 10) {
      logits.row(kMemoryBlank).setZero();
    } else {
      logits.topRows(kMemorySymbols).setZero();
    }
    total += memory_cross_entropy(logits, mem.memory_targets.row(t).transpose(), nullptr);
  }
  CHECK(total / (2000.0 * (T + 20)) == Catch::Approx(baseline_loss(Task::Memory, T)).epsilon(1e-9));
}

TEST_CASE("forward pass with zero parameters", "[gurnn]") {
  Rng rng(4);
  const RnnParams p = zero_params(3, 2, 1, Activation::Relu);
  const TaskBatch b = adding_task_batch(12, 4, rng);
  const Forward fw = rnn_forward(p, b);
  for (const auto& h : fw.hidden) CHECK(h.isZero(0.0));
  CHECK(fw.outputs.back().isZero(0.0));
  CHECK(fw.loss == Catch::Approx(b.adding_targets.squaredNorm() / 4.0));
  CHECK(rnn_backward(p, b, fw).size() == p.parameter_count());
}

TEST_CASE("norm preservation through the recurrence", "[gurnn]") {
  Rng rng(6);
  const int n = 6;
  RnnParams p = init_params(n, 2, 1, 1.0, Activation::Identity, rng, 1.0);
  p.bias.setZero();
  // Only the first input is nonzero, so it alone sets h_1.
  TaskBatch b;
  b.task = Task::Adding;
  b.inputs.assign(12, RealMatrix::Zero(2, 1));
  b.inputs[0](0, 0) = 1.0;
  b.adding_targets = RealVector::Zero(1);
  const Forward fw = rnn_forward(p, b);
  for (std::size_t t = 2; t < fw.hidden.size(); ++t) {
    CHECK(fw.hidden[t].norm() == Catch::Approx(fw.hidden[1].norm()).epsilon(1e-12));
  }
  p.beta = 1.05;
  const Forward scaled = rnn_forward(p, b);
  CHECK(scaled.hidden[12].norm() ==
        Catch::Approx(std::pow(1.05, 11) * scaled.hidden[1].norm()).epsilon(1e-12));
}

TEST_CASE("backward matches finite differences", "[gurnn]") {
  CHECK(gradcheck::check_rnn(Task::Adding, Activation::Relu, 1.4, 11) < 1e-4);
  CHECK(gradcheck::check_rnn(Task::Memory, Activation::Tanh, 1.05, 12) < 1e-4);
  CHECK(gradcheck::check_rnn(Task::Memory, Activation::Identity, 1.0, 13) < 1e-4);
}

TEST_CASE("zero upstream gradient gives zero gradients", "[gurnn]") {
  Rng rng(7);
  RnnParams p = init_params(4, 2, 1, 1.0, Activation::Tanh, rng);
  p.output_map.setZero();
  p.output_bias.setZero();
  TaskBatch b = adding_task_batch(10, 3, rng);
  b.adding_targets.setZero();
  const RealVector g = rnn_backward(p, b, rnn_forward(p, b));
  CHECK(g.isZero(0.0));
}

TEST_CASE("single step reduces to the operator pullback", "[gurnn]") {
  // One step with identity activation, h_0 = 0: the transition never acts,
  // so its gradient is exactly zero; with two steps it matches lie_gradient
  // of the accumulated G.
  Rng rng(8);
  RnnParams p = init_params(3, 2, 1, 1.0, Activation::Identity, rng, 1.0);
  const TaskBatch one = gradcheck::synthetic_rnn_batch(Task::Adding, 1, 4, rng);
  const RealVector g = rnn_backward(p, one, rnn_forward(p, one));
  CHECK(g.head(9).isZero(0.0));

  const TaskBatch two = gradcheck::synthetic_rnn_batch(Task::Adding, 2, 4, rng);
  const Forward fw = rnn_forward(p, two);
  const RealVector g2 = rnn_backward(p, two, fw);
  // Hand-rolled: dC/dh_2 from the read-out, z_2 = U h_1 + ..., dC/dU^* = dz h_1^† / 2.
  const RealMatrix o = fw.outputs.back();
  const RealMatrix grad_o = 2.0 / 4.0 * (o.row(0) - two.adding_targets.transpose());
  const RealMatrix stack = p.output_map.transpose() * grad_o;
  ComplexMatrix dz(3, 4);
  dz.real() = stack.topRows(3);
  dz.imag() = stack.bottomRows(3);
  const ComplexMatrix gu = 0.5 * dz * fw.hidden[1].adjoint();
  const Gradient expected =
      lie_gradient({p.lambda, std::nullopt, std::nullopt}, fw.transition, gu);
  CHECK((g2.head(9) - expected).norm() < 1e-12);
}

TEST_CASE("RMSProp", "[gurnn]") {
  RmsProp opt{1e-3, 0.9, 1e-8, {}};
  const RealVector theta = (RealVector(3) << 1.0, -2.0, 0.5).finished();
  CHECK(opt.step(theta, RealVector::Zero(3)) == theta);

  RmsProp fresh{1e-3, 0.9, 1e-8, {}};
  const RealVector big = (RealVector(3) << 1e3, -1e3, 5e2).finished();
  const RealVector moved = fresh.step(theta, big);
  for (int i = 0; i < 3; ++i) {
    const double expected = theta(i) - 1e-3 * std::sqrt(10.0) * (big(i) > 0 ? 1.0 : -1.0);
    CHECK(moved(i) == Catch::Approx(expected).epsilon(1e-9));
  }

  Rng rng(9);
  std::vector<std::vector<double>> grads;
  RmsProp traj{2e-3, 0.9, 1e-8, {}};
  RealVector p = theta;
  for (int k = 0; k < 50; ++k) {
    const RealVector g = normal_vector(3, 1.0, rng);
    grads.emplace_back(g.data(), g.data() + 3);
    p = traj.step(p, g);
  }
  const auto ref = oracle::rmsprop_trajectory({1.0, -2.0, 0.5}, grads, 2e-3, 0.9, 1e-8);
  for (int i = 0; i < 3; ++i) CHECK(p(i) == Catch::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-14));
  for (int i = 0; i < 3; ++i) CHECK(traj.mean_square(i) >= 0.0);
}

TEST_CASE("short training runs are reproducible and stay unitary", "[gurnn]") {
  TrainConfig c;
  c.task = Task::Memory;
  c.n = 6;
  c.T = 10;
  c.steps = 60;
  c.log_every = 20;
  c.seed = 3;
  const TrainResult a = train(c);
  const TrainResult b = train(c);
  REQUIRE_FALSE(a.diverged);
  REQUIRE(a.curve.size() == 3);
  CHECK(a.curve.back().step == 60);
  CHECK(a.final_params.flat() == b.final_params.flat());
  CHECK(a.max_unitarity_error < 1e-10);
  CHECK(a.curve.back().train_loss < a.curve.front().train_loss);
}

TEST_CASE("parameter flattening round-trips", "[gurnn]") {
  Rng rng(10);
  RnnParams p = init_params(4, 10, 10, 1.05, Activation::Tanh, rng);
  const RealVector theta = normal_vector(p.parameter_count(), 1.0, rng);
  p.set_flat(theta);
  CHECK(p.flat() == theta);
  CHECK(p.parameter_count() == 16 + 80 + 8 + 80 + 10);
  CHECK_THROWS_AS(p.set_flat(RealVector::Zero(3)), PreconditionError);
}

}  // namespace
}  // namespace ulie::rnn
