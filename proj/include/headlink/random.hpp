// Copyright 2026 The Headlink Authors.
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

#include <Eigen/Dense>

namespace headlink {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to derive independent child seeds from a run
// seed so per-item streams do not depend on scheduling order.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t index) {
  return Rng(mix_seed(seed, index));
}

template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gaussian_matrix(
    Eigen::Index rows, Eigen::Index cols, Rng& rng, Scalar stddev = Scalar(1)) {
  std::normal_distribution<double> normal(0.0, static_cast<double>(stddev));
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(rows, cols);
  // Row-major fill order so the draw sequence is independent of storage order.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      out(i, j) = static_cast<Scalar>(normal(rng));
  return out;
}

template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> uniform_matrix(
    Eigen::Index rows, Eigen::Index cols, Rng& rng, Scalar half_width) {
  std::uniform_real_distribution<double> uniform(-static_cast<double>(half_width),
                                                 static_cast<double>(half_width));
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      out(i, j) = static_cast<Scalar>(uniform(rng));
  return out;
}

// Orthonormal m x s basis from the thin Q of a Gaussian draw.
inline Eigen::MatrixXd random_orthonormal(Eigen::Index m, Eigen::Index s, Rng& rng) {
  Eigen::MatrixXd g = gaussian_matrix<double>(m, s, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(m, s);
}

}  // namespace headlink
