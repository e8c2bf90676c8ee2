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

#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

namespace headlink {

/// Entry distribution for the random projections A and B.
enum class InitDistribution {
  Gaussian,       // N(0, 1)
  XavierUniform,  // U(-a, a), a = sqrt(6 / (m + k))
  XavierNormal,   // N(0, 2 / (m + k))
};

std::string to_string(InitDistribution d);
InitDistribution parse_distribution(const std::string& s);
/// Per-entry variance of the distribution at these sizes.
double entry_variance(InitDistribution d, int m, int k);

/// Draws the (A, B) pair for one trial; both m x k.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> draw_pair(int m, int k, std::uint64_t seed,
                                                      InitDistribution dist = InitDistribution::Gaussian);

/// inf_C ||A C - B||_F^2 for one seeded draw. Requires 1 <= k <= m / 2.
double trial(int m, int k, std::uint64_t seed, InitDistribution dist = InitDistribution::Gaussian);

struct TheoryReport {
  int m = 0;
  int k = 0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  InitDistribution dist = InitDistribution::Gaussian;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double stddev = 0.0;
  /// sigma^2 * k (m - k) / 2
  double threshold = 0.0;
  std::size_t violations = 0;
  /// sigma^2 * k (m - k)
  double expected_mean = 0.0;

  double mean_rel_error() const { return std::abs(mean - expected_mean) / expected_mean; }
};

/// Trial i uses the child seed mix_seed(seed, i); results do not depend on `workers`.
TheoryReport run_experiment(int m, int k, std::size_t trials, std::uint64_t seed, int workers = 1,
                            InitDistribution dist = InitDistribution::Gaussian);

nlohmann::json to_json(const TheoryReport& r);

}  // namespace headlink
