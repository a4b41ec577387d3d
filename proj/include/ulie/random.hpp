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
#include <initializer_list>
#include <limits>
#include <random>

#include "ulie/linalg.hpp"

namespace ulie {

/// Small counter-friendly engine (SplitMix64). Used where a fresh stream per
/// example index is needed; std::mt19937_64 is used everywhere else.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Mixes a base seed with stream identifiers into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> streams) {
  SplitMix64 mixer(base);
  std::uint64_t out = mixer();
  for (const std::uint64_t s : streams) {
    SplitMix64 step(out ^ (s * 0xd6e8feb86659fd93ULL + 0x2545f4914f6cdd1dULL));
    out = step();
  }
  return out;
}

using Rng = std::mt19937_64;

template <class Engine>
RealVector normal_vector(Eigen::Index size, double stddev, Engine& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  RealVector v(size);
  for (Eigen::Index i = 0; i < size; ++i) v(i) = dist(rng);
  return v;
}

/// Matrix whose entries have independent N(0, stddev^2) real and imaginary parts.
template <class Engine>
ComplexMatrix complex_gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Engine& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  ComplexMatrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double re = dist(rng);
      const double im = dist(rng);
      m(i, j) = Complex(re, im);
    }
  }
  return m;
}

}  // namespace ulie
