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

// Supervised recovery of a unitary operator from noisy pairs y = U x + eps.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ulie/lie_basis.hpp"
#include "ulie/linalg.hpp"
#include "ulie/parametrization.hpp"
#include "ulie/random.hpp"

namespace ulie {

enum class GroundTruthMethod { QR, LieAlgebra, Composition };

inline std::string to_string(GroundTruthMethod m) {
  switch (m) {
    case GroundTruthMethod::QR: return "qr";
    case GroundTruthMethod::LieAlgebra: return "lie";
    case GroundTruthMethod::Composition: return "composition";
  }
  return "unknown";
}

inline GroundTruthMethod parse_ground_truth_method(std::string_view s) {
  if (s == "qr") return GroundTruthMethod::QR;
  if (s == "lie" || s == "lie_algebra") return GroundTruthMethod::LieAlgebra;
  if (s == "composition") return GroundTruthMethod::Composition;
  throw PreconditionError("unknown generation method '" + std::string(s) + "'");
}

inline constexpr std::array<GroundTruthMethod, 3> kAllMethods{
    GroundTruthMethod::QR, GroundTruthMethod::LieAlgebra, GroundTruthMethod::Composition};

struct GroundTruthSpec {
  int n = 3;
  GroundTruthMethod method = GroundTruthMethod::QR;
  std::uint64_t seed = 0;
};

/// Haar-distributed unitary: QR of a complex Gaussian matrix with the
/// diagonal of R rotated to be real positive.
inline ComplexMatrix haar_unitary(int n, Rng& rng) {
  const ComplexMatrix z = complex_gaussian(n, n, 1.0, rng);
  Eigen::HouseholderQR<ComplexMatrix> qr(z);
  ComplexMatrix q = qr.householderQ();
  const ComplexMatrix& packed = qr.matrixQR();
  for (int k = 0; k < n; ++k) {
    const Complex rkk = packed(k, k);
    const double mag = std::abs(rkk);
    if (mag > 0.0) q.col(k) *= rkk / mag;
  }
  return q;
}

inline ComplexMatrix generate_ground_truth(const GroundTruthSpec& spec) {
  if (spec.n < 1) throw PreconditionError("generate_ground_truth: n must be >= 1");
  Rng rng(spec.seed);
  switch (spec.method) {
    case GroundTruthMethod::QR:
      return haar_unitary(spec.n, rng);
    case GroundTruthMethod::LieAlgebra: {
      const LieCoefficients lambda(spec.n, normal_vector(basis_size(spec.n), 1.0, rng));
      return exp_skew_hermitian(assemble(lambda)).unitary;
    }
    case GroundTruthMethod::Composition:
      return composition_to_unitary(random_composition(spec.n, rng));
  }
  throw PreconditionError("generate_ground_truth: bad method");
}

// ---------------------------------------------------------------------------
// Data

/// Examples stored as columns.
struct Batch {
  ComplexMatrix x;
  ComplexMatrix y;
};

/// x with N(0,1) real and imaginary parts; y = U x + eps, eps with
/// N(0, noise_sigma^2) real and imaginary parts.
template <class Engine>
Batch generate_batch(const ComplexMatrix& u, Eigen::Index batch_size, double noise_sigma,
                     Engine& rng) {
  const Eigen::Index n = u.rows();
  Batch b{complex_gaussian(n, batch_size, 1.0, rng), ComplexMatrix()};
  b.y = u * b.x;
  if (noise_sigma > 0.0) b.y += complex_gaussian(n, batch_size, noise_sigma, rng);
  return b;
}

/// mean_j || U_hat x_j - y_j ||^2
inline double loss(const ComplexMatrix& u_hat, const ComplexMatrix& x, const ComplexMatrix& y) {
  if (u_hat.cols() != x.rows() || x.cols() != y.cols() || u_hat.rows() != y.rows()) {
    throw PreconditionError("loss: shape mismatch");
  }
  return (u_hat * x - y).squaredNorm() / static_cast<double>(x.cols());
}

/// dC/dU_hat^* for the loss above: (U_hat X - Y) X^† / B.
inline ComplexMatrix loss_derivative(const ComplexMatrix& u_hat, const ComplexMatrix& x,
                                     const ComplexMatrix& y) {
  return (u_hat * x - y) * x.adjoint() / static_cast<double>(x.cols());
}

/// A fixed-size synthetic split. Example j comes from its own generator
/// stream, so any subset can be gathered in any order reproducibly.
class SyntheticDataset {
 public:
  SyntheticDataset(ComplexMatrix u, double noise_sigma, std::uint64_t seed, Eigen::Index size)
      : u_(std::move(u)), noise_sigma_(noise_sigma), seed_(seed), size_(size) {}

  Eigen::Index size() const { return size_; }
  const ComplexMatrix& operator_matrix() const { return u_; }

  Batch gather(std::span<const std::uint32_t> indices) const {
    const Eigen::Index n = u_.rows();
    const auto count = static_cast<Eigen::Index>(indices.size());
    Batch b{ComplexMatrix(n, count), ComplexMatrix(n, count)};
    for (Eigen::Index c = 0; c < count; ++c) {
      SplitMix64 eng(derive_seed(seed_, {indices[static_cast<std::size_t>(c)]}));
      Batch one = generate_batch(u_, 1, noise_sigma_, eng);
      b.x.col(c) = one.x.col(0);
      b.y.col(c) = one.y.col(0);
    }
    return b;
  }

  struct Evaluation {
    double mean_squared = 0.0;  // the training objective
    double mean_norm = 0.0;     // mean unsquared distance
  };

  Evaluation evaluate(const ComplexMatrix& u_hat, Eigen::Index chunk = 2000) const {
    Evaluation out;
    std::vector<std::uint32_t> idx;
    for (Eigen::Index start = 0; start < size_; start += chunk) {
      const Eigen::Index stop = std::min(size_, start + chunk);
      idx.resize(static_cast<std::size_t>(stop - start));
      std::iota(idx.begin(), idx.end(), static_cast<std::uint32_t>(start));
      const Batch b = gather(idx);
      const ComplexMatrix r = u_hat * b.x - b.y;
      out.mean_squared += r.colwise().squaredNorm().sum();
      out.mean_norm += r.colwise().norm().sum();
    }
    out.mean_squared /= static_cast<double>(size_);
    out.mean_norm /= static_cast<double>(size_);
    return out;
  }

 private:
  ComplexMatrix u_;
  double noise_sigma_;
  std::uint64_t seed_;
  Eigen::Index size_;
};

// ---------------------------------------------------------------------------
// Training

enum class Restriction { None, SevenN };

inline std::string to_string(Restriction r) { return r == Restriction::None ? "none" : "7n"; }

inline Restriction parse_restriction(std::string_view s) {
  if (s == "none") return Restriction::None;
  if (s == "7n") return Restriction::SevenN;
  throw PreconditionError("unknown restriction '" + std::string(s) + "'");
}

struct TaskConfig {
  int n = 3;
  double noise_sigma = 0.01;
  int batch_size = 20;
  double learning_rate = 0.001;
  long train_examples = 1'000'000;
  long val_examples = 100'000;
  long test_examples = 100'000;
  int epochs = 0;  // 0: max(1, ceil(n / 10))
  long validate_every = 5000;
  ParametrizationKind approach = ParametrizationKind::LieAlgebra;
  GroundTruthMethod method = GroundTruthMethod::QR;
  Restriction restriction = Restriction::None;
  std::optional<double> change_of_basis_c;
  std::uint64_t seed = 0;
  int replicate = 0;
  double divergence_threshold = 1e6;

  int effective_epochs() const {
    return epochs > 0 ? epochs : std::max(1, (n + 9) / 10);
  }

  void validate() const {
    if (n < 1 || batch_size < 1 || train_examples < batch_size || val_examples < 1 ||
        test_examples < 1 || validate_every < 1 || !(learning_rate > 0.0) ||
        !(noise_sigma >= 0.0)) {
      throw PreconditionError("TaskConfig: sizes and rates must be positive");
    }
    if (train_examples > 0xffffffffL || val_examples > 0xffffffffL || test_examples > 0xffffffffL) {
      throw PreconditionError("TaskConfig: split sizes must fit in 32 bits");
    }
    if (approach != ParametrizationKind::LieAlgebra &&
        (restriction != Restriction::None || change_of_basis_c)) {
      throw PreconditionError("TaskConfig: restriction and change of basis apply to lie only");
    }
  }
};

// Independent generator streams within one run.
enum class Stream : std::uint64_t {
  Truth = 1, Init, Train, Validation, Test, Shuffle, RandomBaseline, Mask, Basis
};

inline std::uint64_t stream_seed(const TaskConfig& c, Stream s) {
  return derive_seed(c.seed, {static_cast<std::uint64_t>(s)});
}

struct TracePoint {
  long step = 0;
  double loss = 0.0;
  double unitarity_error = 0.0;
};

struct ResultRecord {
  TaskConfig config;
  long steps = 0;
  double test_loss = 0.0;
  double test_mean_norm = 0.0;
  double true_loss = 0.0;  // generating operator on the test split
  double rand_loss = 0.0;  // independent operator from the same method
  std::vector<TracePoint> validation;
  double wallclock_ms_per_step = 0.0;
  double max_unitarity_error = 0.0;
  bool diverged = false;
  std::string diagnostic;
  RealVector initial_parameters;
  RealVector final_parameters;
  std::vector<bool> trainable_mask;
};

/// Learner for `config` with parameters drawn from the init stream.
inline UnitaryLearner make_learner(const TaskConfig& config) {
  Rng rng(stream_seed(config, Stream::Init));
  switch (config.approach) {
    case ParametrizationKind::LieAlgebra: {
      LieParametrization p = random_lie(config.n, rng);
      if (config.restriction == Restriction::SevenN) {
        Rng mask_rng(stream_seed(config, Stream::Mask));
        p.trainable_mask = random_mask(basis_size(config.n), 7 * config.n, mask_rng);
      }
      if (config.change_of_basis_c) {
        p.change_of_basis = sample_change_of_basis(basis_size(config.n), *config.change_of_basis_c,
                                                   stream_seed(config, Stream::Basis));
      }
      return UnitaryLearner(std::move(p));
    }
    case ParametrizationKind::Projection:
      return UnitaryLearner(random_projection(config.n, rng));
    case ParametrizationKind::Composition:
      return UnitaryLearner(random_composition(config.n, rng));
  }
  throw PreconditionError("make_learner: bad approach");
}

/// Plain minibatch SGD of `learner` against data generated by `truth`.
inline ResultRecord train_learner(const TaskConfig& config, const ComplexMatrix& truth,
                                  UnitaryLearner learner) {
  config.validate();
  ResultRecord rec;
  rec.config = config;
  rec.initial_parameters = learner.parameters();
  if (const auto* lie = std::get_if<LieParametrization>(&learner.params())) {
    if (lie->trainable_mask) rec.trainable_mask = *lie->trainable_mask;
  }

  const SyntheticDataset train(truth, config.noise_sigma, stream_seed(config, Stream::Train),
                               config.train_examples);
  const SyntheticDataset val(truth, config.noise_sigma, stream_seed(config, Stream::Validation),
                             config.val_examples);
  const SyntheticDataset test(truth, config.noise_sigma, stream_seed(config, Stream::Test),
                              config.test_examples);

  auto checkpoint = [&](long step) {
    const ComplexMatrix& u = learner.unitary();
    const double err = unitarity_error(u);
    rec.max_unitarity_error = std::max(rec.max_unitarity_error, err);
    const double l = val.evaluate(u).mean_squared;
    rec.validation.push_back({step, l, err});
    return l;
  };

  const long steps_per_epoch = config.train_examples / config.batch_size;
  const int epochs = config.effective_epochs();
  std::vector<std::uint32_t> order(static_cast<std::size_t>(config.train_examples));
  std::iota(order.begin(), order.end(), 0U);
  Rng shuffle_rng(stream_seed(config, Stream::Shuffle));

  double train_seconds = 0.0;
  long step = 0;
  try {
    checkpoint(0);
    for (int epoch = 0; epoch < epochs && !rec.diverged; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (long b = 0; b < steps_per_epoch; ++b) {
        const auto t0 = std::chrono::steady_clock::now();
        const std::span<const std::uint32_t> idx(
            order.data() + b * config.batch_size, static_cast<std::size_t>(config.batch_size));
        const Batch batch = train.gather(idx);
        const ComplexMatrix& u = learner.unitary();
        const double batch_loss = loss(u, batch.x, batch.y);
        if (!std::isfinite(batch_loss) || batch_loss > config.divergence_threshold) {
          rec.diverged = true;
          rec.diagnostic = "training loss " + std::to_string(batch_loss) + " at step " +
                           std::to_string(step);
          break;
        }
        learner.sgd_step(loss_derivative(u, batch.x, batch.y), config.learning_rate);
        train_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ++step;
        if (step % config.validate_every == 0) {
          const double l = checkpoint(step);
          if (!std::isfinite(l) || l > config.divergence_threshold) {
            rec.diverged = true;
            rec.diagnostic = "validation loss " + std::to_string(l) + " at step " +
                             std::to_string(step);
            break;
          }
        }
      }
    }
    if (!rec.diverged && (rec.validation.empty() || rec.validation.back().step != step)) {
      checkpoint(step);
    }
  } catch (const std::exception& e) {
    rec.diverged = true;
    rec.diagnostic = std::string("numerical failure at step ") + std::to_string(step) + ": " +
                     e.what();
  }

  rec.steps = step;
  rec.wallclock_ms_per_step = step > 0 ? 1e3 * train_seconds / static_cast<double>(step) : 0.0;
  rec.final_parameters = learner.parameters();

  const auto test_eval = test.evaluate(rec.diverged ? truth : learner.unitary());
  if (rec.diverged) {
    rec.test_loss = std::numeric_limits<double>::infinity();
    rec.test_mean_norm = std::numeric_limits<double>::infinity();
  } else {
    rec.test_loss = test_eval.mean_squared;
    rec.test_mean_norm = test_eval.mean_norm;
  }
  rec.true_loss = test.evaluate(truth).mean_squared;
  const ComplexMatrix rand = generate_ground_truth(
      {config.n, config.method, stream_seed(config, Stream::RandomBaseline)});
  rec.rand_loss = test.evaluate(rand).mean_squared;
  return rec;
}

inline ResultRecord train(const TaskConfig& config) {
  config.validate();
  const ComplexMatrix truth =
      generate_ground_truth({config.n, config.method, stream_seed(config, Stream::Truth)});
  return train_learner(config, truth, make_learner(config));
}

// ---------------------------------------------------------------------------

struct BootstrapSummary {
  double mean = 0.0;
  double standard_error = 0.0;
  double ci_low = 0.0;   // 2.5th percentile of resampled means
  double ci_high = 0.0;  // 97.5th percentile
};

/// Nonparametric bootstrap of the mean.
inline BootstrapSummary bootstrap_summary(std::span<const double> values, int resamples = 10000,
                                          std::uint64_t seed = 0) {
  if (values.empty()) throw PreconditionError("bootstrap_summary: empty input");
  if (values.size() < 2) throw PreconditionError("bootstrap_summary: need at least 2 replicates");
  if (resamples < 2) throw PreconditionError("bootstrap_summary: need at least 2 resamples");
  const std::size_t m = values.size();
  BootstrapSummary out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(m);

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, m - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& mu : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += values[pick(rng)];
    mu = s / static_cast<double>(m);
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / resamples;
  double var = 0.0;
  for (const double mu : means) var += (mu - grand) * (mu - grand);
  out.standard_error = std::sqrt(var / (resamples - 1));

  std::sort(means.begin(), means.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, means.size() - 1);
    return means[lo] + (pos - static_cast<double>(lo)) * (means[hi] - means[lo]);
  };
  out.ci_low = quantile(0.025);
  out.ci_high = quantile(0.975);
  return out;
}

}  // namespace ulie
