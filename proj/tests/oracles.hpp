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

// Independent reference computations used to freeze expected values. None of
// these call into the library's solvers.

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "headlink/probe.hpp"

namespace oracle {

// Least squares through the normal equations, full-pivot LU.
inline Eigen::MatrixXd normal_equations(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                        bool intercept, double ridge = 0.0) {
  Eigen::MatrixXd a = x;
  if (intercept) {
    a.conservativeResize(x.rows(), x.cols() + 1);
    a.col(x.cols()).setOnes();
  }
  Eigen::MatrixXd g = a.transpose() * a;
  g.diagonal().array() += ridge;
  return Eigen::FullPivLU<Eigen::MatrixXd>(g).solve(a.transpose() * y);
}

inline double residual(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::MatrixXd& w,
                       bool intercept) {
  double ss = 0.0;
  for (Eigen::Index t = 0; t < x.rows(); ++t)
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      double pred = intercept ? w(x.cols(), j) : 0.0;
      for (Eigen::Index i = 0; i < x.cols(); ++i) pred += x(t, i) * w(i, j);
      ss += (y(t, j) - pred) * (y(t, j) - pred);
    }
  return ss;
}

// ||A A^+ B - B||_F^2 with A^+ from a complete orthogonal decomposition.
inline double pinv_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd pinv = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(a).pseudoInverse();
  return (a * (pinv * b) - b).squaredNorm();
}

inline Eigen::Index jacobi_rank(const Eigen::MatrixXd& m, double rtol) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  const double cut = rtol * s(0) * static_cast<double>(std::max(m.rows(), m.cols()));
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) r += s(i) > cut;
  return r;
}

// Scalar simple regression R^2 with intercept: squared Pearson correlation.
inline double simple_r2(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy * sxy / (sxx * syy);
}

// Can `count` targets be chosen at threshold tau so every target keeps at
// least m in-neighbours (edge >= tau) outside the target set? Exhaustive.
inline bool feasible_by_enumeration(const headlink::R2Graph& g, double tau, int m, std::size_t count) {
  const int n = g.meta.num_heads();
  if (count == 0) return true;
  std::vector<std::vector<int>> in(static_cast<std::size_t>(n));
  for (const auto& e : g.edges)
    if (e.r2 >= tau) in[static_cast<std::size_t>(g.meta.head_index(e.target))].push_back(g.meta.head_index(e.ref));
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != count) continue;
    bool ok = true;
    for (int t = 0; t < n && ok; ++t) {
      if (!(mask >> t & 1u)) continue;
      int free_refs = 0;
      for (int r : in[static_cast<std::size_t>(t)]) free_refs += !(mask >> r & 1u);
      ok = free_refs >= m;
    }
    if (ok) return true;
  }
  return false;
}

}  // namespace oracle
