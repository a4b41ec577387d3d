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

// General unitary RNN:
//
//   h_t = f(beta U h_{t-1} + V x_t + b),   U = exp(sum_j lambda_j T_j)
//
// f acts separately on real and imaginary parts; a real affine read-out
// consumes [Re h_t; Im h_t]. beta is a fixed scale on the transition; a
// saturating f has |f'| <= 1 so the backpropagated norm shrinks by at most
// ||f'|| ||beta U|| = beta ||f'|| per step, and beta > 1 offsets that.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ulie/lie_basis.hpp"
#include "ulie/linalg.hpp"
#include "ulie/parametrization.hpp"
#include "ulie/random.hpp"

namespace ulie::rnn {

enum class Activation { Identity, Relu, Tanh };
enum class Task { Adding, Memory };

inline std::string to_string(Task t) { return t == Task::Adding ? "adding" : "memory"; }

inline constexpr int kMemorySymbols = 8;   // data symbols 0..7
inline constexpr int kMemoryBlank = 8;
inline constexpr int kMemoryMarker = 9;    // "go" delimiter
inline constexpr int kMemoryClasses = 10;
inline constexpr int kMemoryLength = 10;   // symbols to remember

struct RnnParams {
  LieCoefficients lambda;
  double beta = 1.0;
  ComplexMatrix input_map;   // n x d_in
  ComplexVector bias;        // n
  RealMatrix output_map;     // d_out x 2n, acting on [Re h; Im h]
  RealVector output_bias;    // d_out
  Activation activation = Activation::Tanh;

  int hidden() const { return lambda.dimension(); }
  Eigen::Index input_dim() const { return input_map.cols(); }
  Eigen::Index output_dim() const { return output_map.rows(); }

  Eigen::Index parameter_count() const {
    const Eigen::Index n = hidden();
    return n * n + 2 * n * input_dim() + 2 * n + output_map.size() + output_bias.size();
  }

  /// [lambda, Re V, Im V, Re b, Im b, W_out, c] (matrices column-major).
  RealVector flat() const {
    RealVector out(parameter_count());
    out << lambda.values(), input_map.real().reshaped(), input_map.imag().reshaped(), bias.real(),
        bias.imag(), output_map.reshaped(), output_bias;
    return out;
  }

  void set_flat(const RealVector& theta) {
    if (theta.size() != parameter_count()) {
      throw PreconditionError("RnnParams::set_flat: expected " + std::to_string(parameter_count()) +
                              " values, got " + std::to_string(theta.size()));
    }
    const Eigen::Index n = hidden();
    Eigen::Index at = 0;
    auto take = [&](Eigen::Index len) {
      auto seg = theta.segment(at, len);
      at += len;
      return seg;
    };
    lambda.values() = take(n * n);
    const Eigen::Index vin = n * input_dim();
    input_map.real() = take(vin).reshaped(n, input_dim());
    input_map.imag() = take(vin).reshaped(n, input_dim());
    bias.real() = take(n);
    bias.imag() = take(n);
    output_map = take(output_map.size()).reshaped(output_dim(), 2 * n);
    output_bias = take(output_bias.size());
  }

  void validate() const {
    const Eigen::Index n = hidden();
    if (n < 1 || input_map.rows() != n || bias.size() != n || output_map.cols() != 2 * n ||
        output_bias.size() != output_map.rows()) {
      throw PreconditionError("RnnParams: inconsistent shapes");
    }
    if (!std::isfinite(beta) || !input_map.allFinite() || !bias.allFinite() ||
        !output_map.allFinite() || !output_bias.allFinite()) {
      throw PreconditionError("RnnParams: non-finite parameter");
    }
  }
};

/// lambda ~ N(0, lambda_std^2), V with N(0, 1/d_in) real and imaginary parts,
/// b = 0, read-out ~ N(0, 1/2n), read-out bias 0.
inline RnnParams init_params(int n, Eigen::Index d_in, Eigen::Index d_out, double beta,
                             Activation f, Rng& rng, double lambda_std = 0.1) {
  RnnParams p;
  p.lambda = LieCoefficients(n, normal_vector(basis_size(n), lambda_std, rng));
  p.beta = beta;
  p.input_map = complex_gaussian(n, d_in, std::sqrt(1.0 / static_cast<double>(d_in)), rng);
  p.bias = ComplexVector::Zero(n);
  p.output_map = normal_vector(d_out * 2 * n, std::sqrt(1.0 / (2.0 * n)), rng)
                     .reshaped(d_out, 2 * n);
  p.output_bias = RealVector::Zero(d_out);
  p.activation = f;
  return p;
}

struct TaskBatch {
  Task task = Task::Adding;
  std::vector<RealMatrix> inputs;   // one d_in x batch matrix per time step
  RealVector adding_targets;        // batch
  Eigen::MatrixXi memory_targets;   // steps x batch class indices

  Eigen::Index steps() const { return static_cast<Eigen::Index>(inputs.size()); }
  Eigen::Index batch_size() const { return inputs.empty() ? 0 : inputs.front().cols(); }
};

/// Adding problem: channel 0 ~ U[0,1], channel 1 marks one position in each
/// half of the sequence; the target is the sum of the two marked values.
inline TaskBatch adding_task_batch(int T, int batch_size, Rng& rng) {
  if (T < 10) throw PreconditionError("adding_task_batch: T must be >= 10");
  TaskBatch b;
  b.task = Task::Adding;
  b.inputs.assign(static_cast<std::size_t>(T), RealMatrix::Zero(2, batch_size));
  b.adding_targets.resize(batch_size);
  std::uniform_real_distribution<double> value(0.0, 1.0);
  const int half = T / 2;
  std::uniform_int_distribution<int> first(0, half - 1);
  std::uniform_int_distribution<int> second(half, T - 1);
  for (int j = 0; j < batch_size; ++j) {
    for (int t = 0; t < T; ++t) b.inputs[static_cast<std::size_t>(t)](0, j) = value(rng);
    const int p = first(rng);
    const int q = second(rng);
    b.inputs[static_cast<std::size_t>(p)](1, j) = 1.0;
    b.inputs[static_cast<std::size_t>(q)](1, j) = 1.0;
    b.adding_targets(j) = b.inputs[static_cast<std::size_t>(p)](0, j) +
                          b.inputs[static_cast<std::size_t>(q)](0, j);
  }
  return b;
}

/// Memory problem: 10 symbols from an alphabet of 8, T - 1 blanks, the go
/// marker, then 10 blanks during which the symbols must be reproduced.
/// One-hot inputs over 10 classes; sequence length T + 20.
inline TaskBatch memory_task_batch(int T, int batch_size, Rng& rng) {
  if (T < 10) throw PreconditionError("memory_task_batch: T must be >= 10");
  const int len = T + 2 * kMemoryLength;
  TaskBatch b;
  b.task = Task::Memory;
  b.inputs.assign(static_cast<std::size_t>(len), RealMatrix::Zero(kMemoryClasses, batch_size));
  b.memory_targets = Eigen::MatrixXi::Constant(len, batch_size, kMemoryBlank);
  std::uniform_int_distribution<int> symbol(0, kMemorySymbols - 1);
  for (int j = 0; j < batch_size; ++j) {
    for (int t = 0; t < len; ++t) {
      int in = kMemoryBlank;
      if (t < kMemoryLength) {
        in = symbol(rng);
        b.memory_targets(len - kMemoryLength + t, j) = in;
      } else if (t == T + kMemoryLength - 1) {
        in = kMemoryMarker;
      }
      b.inputs[static_cast<std::size_t>(t)](in, j) = 1.0;
    }
  }
  return b;
}

/// Loss of the trivial predictors: the target mean for adding, blanks then a
/// uniform guess over the 8 symbols for memory.
inline double baseline_loss(Task task, int T) {
  if (task == Task::Adding) return 1.0 / 6.0;
  return kMemoryLength * std::log(static_cast<double>(kMemorySymbols)) /
         static_cast<double>(T + 2 * kMemoryLength);
}

// ---------------------------------------------------------------------------

namespace detail {

inline double activate(Activation f, double x) {
  switch (f) {
    case Activation::Identity: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Tanh: return std::tanh(x);
  }
  return x;
}

inline double activate_derivative(Activation f, double x) {
  switch (f) {
    case Activation::Identity: return 1.0;
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

inline ComplexMatrix apply(Activation f, const ComplexMatrix& z) {
  ComplexMatrix h(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    h(i) = Complex(activate(f, z(i).real()), activate(f, z(i).imag()));
  }
  return h;
}

inline RealMatrix stack_parts(const ComplexMatrix& h) {
  RealMatrix s(2 * h.rows(), h.cols());
  s.topRows(h.rows()) = h.real();
  s.bottomRows(h.rows()) = h.imag();
  return s;
}

}  // namespace detail

struct Forward {
  LieForward transition;
  std::vector<ComplexMatrix> pre;     // z_1..z_T
  std::vector<ComplexMatrix> hidden;  // h_0..h_T
  std::vector<RealMatrix> outputs;    // adding: {o_T}; memory: o_1..o_T (logits)
  double loss = 0.0;
};

inline double memory_cross_entropy(const RealMatrix& logits, const Eigen::VectorXi& targets,
                                   RealMatrix* grad_out) {
  double total = 0.0;
  if (grad_out) grad_out->resize(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    const RealVector e = (logits.col(j).array() - mx).exp();
    const double z = e.sum();
    total += std::log(z) + mx - logits(targets(j), j);
    if (grad_out) {
      grad_out->col(j) = e / z;
      (*grad_out)(targets(j), j) -= 1.0;
    }
  }
  return total;
}

inline Forward rnn_forward(const RnnParams& params, const TaskBatch& batch) {
  params.validate();
  const Eigen::Index n = params.hidden();
  const Eigen::Index steps = batch.steps();
  const Eigen::Index bs = batch.batch_size();
  if (steps < 1 || bs < 1) throw PreconditionError("rnn_forward: empty batch");
  for (const auto& x : batch.inputs) {
    if (x.rows() != params.input_dim() || x.cols() != bs) {
      throw PreconditionError("rnn_forward: input shape does not match the input map");
    }
  }
  const Eigen::Index expected_out = batch.task == Task::Adding ? 1 : kMemoryClasses;
  if (params.output_dim() != expected_out) {
    throw PreconditionError("rnn_forward: read-out width does not match the task");
  }
  if (batch.task == Task::Adding && batch.adding_targets.size() != bs) {
    throw PreconditionError("rnn_forward: adding targets do not match the batch");
  }
  if (batch.task == Task::Memory &&
      (batch.memory_targets.rows() != steps || batch.memory_targets.cols() != bs)) {
    throw PreconditionError("rnn_forward: memory targets do not match the batch");
  }

  Forward fw;
  fw.transition = lie_to_unitary({params.lambda, std::nullopt, std::nullopt});
  const ComplexMatrix scaled = params.beta * fw.transition.unitary;
  fw.hidden.reserve(static_cast<std::size_t>(steps + 1));
  fw.pre.reserve(static_cast<std::size_t>(steps));
  fw.hidden.push_back(ComplexMatrix::Zero(n, bs));
  const ComplexMatrix bias = params.bias.replicate(1, bs);
  double total = 0.0;
  for (Eigen::Index t = 0; t < steps; ++t) {
    ComplexMatrix z = scaled * fw.hidden.back();
    z.noalias() += params.input_map * batch.inputs[static_cast<std::size_t>(t)].cast<Complex>();
    z += bias;
    ComplexMatrix h = detail::apply(params.activation, z);
    if (!h.allFinite()) {
      throw NumericalError("rnn_forward: non-finite activation at step " + std::to_string(t + 1));
    }
    fw.pre.push_back(std::move(z));
    fw.hidden.push_back(std::move(h));
    const bool emit = batch.task == Task::Memory || t == steps - 1;
    if (emit) {
      RealMatrix o = params.output_map * detail::stack_parts(fw.hidden.back());
      o.colwise() += params.output_bias;
      if (batch.task == Task::Memory) {
        total += memory_cross_entropy(o, batch.memory_targets.row(t).transpose(), nullptr);
      } else {
        total += (o.row(0).transpose() - batch.adding_targets).squaredNorm();
      }
      fw.outputs.push_back(std::move(o));
    }
  }
  // Adding: mean squared error over the batch. Memory: cross-entropy averaged
  // over every step and sequence.
  fw.loss = batch.task == Task::Adding ? total / static_cast<double>(bs)
                                       : total / static_cast<double>(bs * steps);
  return fw;
}

/// Gradient of the batch loss with respect to RnnParams::flat(). The cost
/// derivative with respect to U^* is accumulated over time and pulled back
/// onto lambda with one lie_gradient call.
inline RealVector rnn_backward(const RnnParams& params, const TaskBatch& batch,
                               const Forward& fw) {
  const Eigen::Index n = params.hidden();
  const Eigen::Index steps = batch.steps();
  const Eigen::Index bs = batch.batch_size();
  if (static_cast<Eigen::Index>(fw.pre.size()) != steps ||
      static_cast<Eigen::Index>(fw.hidden.size()) != steps + 1 ||
      fw.transition.eig.vectors.rows() != n) {
    throw PreconditionError("rnn_backward: forward cache does not match this batch");
  }
  const ComplexMatrix scaled_adjoint = params.beta * fw.transition.unitary.adjoint();

  // grad_w := dC/dRe w + i dC/dIm w for complex quantities.
  ComplexMatrix grad_u = ComplexMatrix::Zero(n, n);
  ComplexMatrix grad_v = ComplexMatrix::Zero(n, params.input_dim());
  ComplexVector grad_b = ComplexVector::Zero(n);
  RealMatrix grad_w = RealMatrix::Zero(params.output_dim(), 2 * n);
  RealVector grad_c = RealVector::Zero(params.output_dim());
  ComplexMatrix grad_h = ComplexMatrix::Zero(n, bs);

  const double scale = batch.task == Task::Adding ? 1.0 / static_cast<double>(bs)
                                                  : 1.0 / static_cast<double>(bs * steps);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const auto ut = static_cast<std::size_t>(t);
    const ComplexMatrix& h = fw.hidden[ut + 1];
    const bool emit = batch.task == Task::Memory || t == steps - 1;
    if (emit) {
      const RealMatrix& o = fw.outputs[batch.task == Task::Memory ? ut : 0];
      RealMatrix grad_o;
      if (batch.task == Task::Memory) {
        memory_cross_entropy(o, batch.memory_targets.row(t).transpose(), &grad_o);
        grad_o *= scale;
      } else {
        grad_o = 2.0 * scale * (o.row(0) - batch.adding_targets.transpose());
      }
      grad_w.noalias() += grad_o * detail::stack_parts(h).transpose();
      grad_c += grad_o.rowwise().sum();
      const RealMatrix grad_stack = params.output_map.transpose() * grad_o;
      grad_h.real() += grad_stack.topRows(n);
      grad_h.imag() += grad_stack.bottomRows(n);
    }
    const ComplexMatrix& z = fw.pre[ut];
    ComplexMatrix grad_z(n, bs);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      grad_z(i) =
          Complex(detail::activate_derivative(params.activation, z(i).real()) * grad_h(i).real(),
                  detail::activate_derivative(params.activation, z(i).imag()) * grad_h(i).imag());
    }
    grad_u.noalias() += params.beta * grad_z * fw.hidden[ut].adjoint();
    grad_v.noalias() += grad_z * batch.inputs[ut].transpose().cast<Complex>();
    grad_b += grad_z.rowwise().sum();
    grad_h.noalias() = scaled_adjoint * grad_z;
  }

  // dC/dU^* = grad_u / 2
  const Gradient grad_lambda =
      lie_gradient({params.lambda, std::nullopt, std::nullopt}, fw.transition, 0.5 * grad_u);

  RealVector out(params.parameter_count());
  out << grad_lambda, grad_v.real().reshaped(), grad_v.imag().reshaped(), grad_b.real(),
      grad_b.imag(), grad_w.reshaped(), grad_c;
  return out;
}

// ---------------------------------------------------------------------------

struct RmsProp {
  double learning_rate = 1e-3;
  double decay = 0.9;
  double epsilon = 1e-8;
  RealVector mean_square;

  /// acc <- decay acc + (1 - decay) g^2;  theta <- theta - lr g / sqrt(acc + eps)
  RealVector step(const RealVector& params, const RealVector& grad) {
    if (params.size() != grad.size()) throw PreconditionError("RmsProp: shape mismatch");
    if (mean_square.size() != grad.size()) mean_square = RealVector::Zero(grad.size());
    mean_square = decay * mean_square + (1.0 - decay) * grad.cwiseAbs2();
    return params - learning_rate * (grad.array() / (mean_square.array() + epsilon).sqrt()).matrix();
  }
};

// ---------------------------------------------------------------------------

struct TrainConfig {
  Task task = Task::Memory;
  int n = 30;
  int T = 100;
  long steps = 10'000;
  int batch_size = 20;
  double learning_rate = 1e-3;
  double beta = 1.05;
  double lambda_init_std = 0.1;
  long log_every = 100;
  std::uint64_t seed = 0;

  Activation activation() const { return task == Task::Adding ? Activation::Relu : Activation::Tanh; }
};

struct CurvePoint {
  long step = 0;
  double train_loss = 0.0;  // mean batch loss over the preceding log window
};

struct TrainResult {
  TrainConfig config;
  double baseline = 0.0;
  std::vector<CurvePoint> curve;
  double best_window_loss = 0.0;
  double final_window_loss = 0.0;
  double max_unitarity_error = 0.0;
  double ms_per_step = 0.0;
  bool diverged = false;
  std::string diagnostic;
  RnnParams final_params;
};

inline TaskBatch task_batch(Task task, int T, int batch_size, Rng& rng) {
  return task == Task::Adding ? adding_task_batch(T, batch_size, rng)
                              : memory_task_batch(T, batch_size, rng);
}

/// RMSProp training. `on_log` (optional) sees each curve point as it is made.
template <class OnLog = std::nullptr_t>
TrainResult train(const TrainConfig& config, OnLog on_log = nullptr) {
  if (config.n < 1 || config.steps < 1 || config.batch_size < 1 || config.log_every < 1) {
    throw PreconditionError("rnn::train: sizes must be positive");
  }
  TrainResult res;
  res.config = config;
  res.baseline = baseline_loss(config.task, config.T);
  Rng init_rng(derive_seed(config.seed, {1}));
  Rng data_rng(derive_seed(config.seed, {2}));
  const Eigen::Index d_in = config.task == Task::Adding ? 2 : kMemoryClasses;
  const Eigen::Index d_out = config.task == Task::Adding ? 1 : kMemoryClasses;
  RnnParams params =
      init_params(config.n, d_in, d_out, config.beta, config.activation(), init_rng,
                  config.lambda_init_std);
  RmsProp opt{config.learning_rate, 0.9, 1e-8, {}};
  RealVector theta = params.flat();

  double window = 0.0;
  long in_window = 0;
  res.best_window_loss = std::numeric_limits<double>::infinity();
  const auto t0 = std::chrono::steady_clock::now();
  long step = 0;
  try {
    for (; step < config.steps; ++step) {
      const TaskBatch batch = task_batch(config.task, config.T, config.batch_size, data_rng);
      const Forward fw = rnn_forward(params, batch);
      if (!std::isfinite(fw.loss)) throw NumericalError("non-finite loss");
      res.max_unitarity_error =
          std::max(res.max_unitarity_error, unitarity_error(fw.transition.unitary));
      const RealVector grad = rnn_backward(params, batch, fw);
      theta = opt.step(theta, grad);
      params.set_flat(theta);
      window += fw.loss;
      ++in_window;
      if ((step + 1) % config.log_every == 0 || step + 1 == config.steps) {
        const CurvePoint pt{step + 1, window / static_cast<double>(in_window)};
        res.curve.push_back(pt);
        res.best_window_loss = std::min(res.best_window_loss, pt.train_loss);
        if constexpr (!std::is_same_v<OnLog, std::nullptr_t>) on_log(pt);
        window = 0.0;
        in_window = 0;
      }
    }
  } catch (const std::exception& e) {
    res.diverged = true;
    res.diagnostic = "step " + std::to_string(step) + ": " + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.ms_per_step = step > 0 ? 1e3 * secs / static_cast<double>(step) : 0.0;
  res.final_window_loss =
      res.curve.empty() ? std::numeric_limits<double>::infinity() : res.curve.back().train_loss;
  res.final_params = params;
  return res;
}

}  // namespace ulie::rnn
