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

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "headlink/activations.hpp"
#include "headlink/probe.hpp"

namespace headlink {

inline constexpr int kDefaultMaxRefs = 5;

/// Linear map from the column-wise concatenation of reference-head states to
/// one target head's state.
struct LinearPredictor {
  HeadId target;
  std::vector<HeadId> refs;
  Stream stream = Stream::K;
  bool intercept = true;
  /// (n * d_h [+1]) x d_h; intercept in the last row.
  Eigen::MatrixXd weights;
  /// R^2 on the fitting tokens.
  double fit_r2 = 0.0;
  /// R^2 under the FitSpec evaluation mode (equals fit_r2 in-sample).
  double eval_r2 = 0.0;

  /// Applies the map to a T x (n * d_h) concatenation of reference states.
  Eigen::MatrixXd predict(const Eigen::Ref<const Eigen::MatrixXd>& concatenated_refs) const;
};

/// Top-n in-neighbors of target by (r2 desc, layer asc, head asc).
std::vector<HeadId> select_top_n(const R2Graph& g, HeadId target, int n);

/// T x (refs.size() * d_h) concatenation in refs order.
Eigen::MatrixXd concat_heads(const ActivationSet& acts, Stream stream, std::span<const HeadId> refs);

LinearPredictor fit_predictor(const ActivationSet& acts, Stream stream, HeadId target,
                              std::span<const HeadId> refs, const FitSpec& spec);

struct CurvePoint {
  int n = 0;
  std::size_t targets = 0;
  double mean_r2 = 0.0;
  double median_r2 = 0.0;
  std::vector<std::pair<double, double>> frac_above;
};

struct R2Curve {
  Stream stream = Stream::K;
  std::vector<CurvePoint> points;
};

/// Mean/median predictor R^2 over all targets for each reference count in ns.
/// Reference sets are the nested top-n prefixes from the graph.
R2Curve sweep_n(const ActivationSet& acts, Stream stream, const R2Graph& g, std::span<const int> ns,
                const FitSpec& spec, std::span<const double> thresholds = {}, int workers = 1);

nlohmann::json to_json(const R2Curve& c);
std::string to_csv(const R2Curve& c);

}  // namespace headlink
