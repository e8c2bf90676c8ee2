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

#include "headlink/theory.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "headlink/error.hpp"
#include "headlink/linalg.hpp"
#include "headlink/parallel.hpp"
#include "headlink/probe.hpp"
#include "headlink/random.hpp"

namespace headlink {

std::string to_string(InitDistribution d) {
  switch (d) {
    case InitDistribution::Gaussian: return "gaussian";
    case InitDistribution::XavierUniform: return "xavier_uniform";
    case InitDistribution::XavierNormal: return "xavier_normal";
  }
  return "?";
}

InitDistribution parse_distribution(const std::string& s) {
  if (s == "gaussian") return InitDistribution::Gaussian;
  if (s == "xavier_uniform" || s == "xavier-uniform") return InitDistribution::XavierUniform;
  if (s == "xavier_normal" || s == "xavier-normal") return InitDistribution::XavierNormal;
  throw Error(ErrorCode::InvalidArgument, "unknown distribution '" + s + "'");
}

double entry_variance(InitDistribution d, int m, int k) {
  switch (d) {
    case InitDistribution::Gaussian: return 1.0;
    case InitDistribution::XavierUniform:
    case InitDistribution::XavierNormal: return 2.0 / static_cast<double>(m + k);
  }
  return 1.0;
}

namespace {

void check_sizes(int m, int k) {
  if (k < 1 || m < 2 || 2 * k > m)
    throw Error(ErrorCode::InvalidArgument, "need 1 <= k <= m / 2, got m=" + std::to_string(m) +
                                                ", k=" + std::to_string(k));
}

Eigen::MatrixXd draw(int m, int k, Rng& rng, InitDistribution dist) {
  switch (dist) {
    case InitDistribution::Gaussian: return gaussian_matrix<double>(m, k, rng);
    case InitDistribution::XavierUniform:
      return uniform_matrix<double>(m, k, rng, std::sqrt(6.0 / static_cast<double>(m + k)));
    case InitDistribution::XavierNormal:
      return gaussian_matrix<double>(m, k, rng, std::sqrt(2.0 / static_cast<double>(m + k)));
  }
  return {};
}

}  // namespace

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> draw_pair(int m, int k, std::uint64_t seed,
                                                      InitDistribution dist) {
  check_sizes(m, k);
  Rng rng(seed);
  Eigen::MatrixXd a = draw(m, k, rng, dist);
  Eigen::MatrixXd b = draw(m, k, rng, dist);
  return {std::move(a), std::move(b)};
}

double trial(int m, int k, std::uint64_t seed, InitDistribution dist) {
  const auto [a, b] = draw_pair(m, k, seed, dist);
  return projector_residual(a, b);
}

TheoryReport run_experiment(int m, int k, std::size_t trials, std::uint64_t seed, int workers,
                            InitDistribution dist) {
  check_sizes(m, k);
  if (trials < 1) throw Error(ErrorCode::InvalidArgument, "trials must be >= 1");
  std::vector<double> values(trials);
  parallel_for(trials, workers,
               [&](std::size_t i) { values[i] = trial(m, k, mix_seed(seed, i), dist); });

  TheoryReport r;
  r.m = m;
  r.k = k;
  r.trials = trials;
  r.seed = seed;
  r.dist = dist;
  const double var = entry_variance(dist, m, k);
  r.expected_mean = var * static_cast<double>(k) * static_cast<double>(m - k);
  r.threshold = 0.5 * r.expected_mean;
  double sum = 0.0;
  for (double v : values) sum += v;
  r.mean = sum / static_cast<double>(trials);
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.stddev = trials > 1 ? std::sqrt(ss / static_cast<double>(trials - 1)) : 0.0;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  r.min = *mn;
  r.max = *mx;
  r.violations = static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [&](double v) { return v < r.threshold; }));
  return r;
}

nlohmann::json to_json(const TheoryReport& r) {
  return nlohmann::json{{"schema_version", kSchemaVersion},
                        {"kind", "theory_report"},
                        {"m", r.m},
                        {"k", r.k},
                        {"trials", r.trials},
                        {"seed", r.seed},
                        {"distribution", to_string(r.dist)},
                        {"values",
                         {{"mean", r.mean}, {"min", r.min}, {"max", r.max}, {"stddev", r.stddev}}},
                        {"threshold", r.threshold},
                        {"violations", r.violations},
                        {"expected_mean", r.expected_mean},
                        {"mean_rel_error", r.mean_rel_error()},
                        {"verdict", r.violations == 0 ? "pass" : "fail"}};
}

}  // namespace headlink
