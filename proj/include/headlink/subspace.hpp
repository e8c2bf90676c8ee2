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
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "headlink/activations.hpp"
#include "headlink/toy_transformer.hpp"

namespace headlink {

/// Rank tolerance for projection weights (f32 imports carry rounding noise).
inline constexpr double kWeightRankRtol = 1e-8;

struct LayerOverlap {
  int layer = 0;
  std::vector<Eigen::Index> head_ranks;
  Eigen::Index concat_rank = 0;
  /// sum(head_ranks) - concat_rank
  Eigen::Index od = 0;
};

struct OverlapReport {
  Stream stream = Stream::K;
  double rtol = kWeightRankRtol;
  std::vector<LayerOverlap> layers;

  double mean_od() const;
};

/// Overlap dimension of one layer's head projections (each m x d_h).
LayerOverlap layer_overlap(std::span<const Eigen::MatrixXd> heads, double rtol = kWeightRankRtol);

OverlapReport overlap_dimension(const ToyWeights& w, Stream stream, double rtol = kWeightRankRtol);
OverlapReport overlap_dimension(const ProjectionWeights& w, Stream stream,
                                double rtol = kWeightRankRtol);

struct OdSweepPoint {
  double align = 0.0;
  std::size_t configs = 0;
  /// Mean over configs of the layer-averaged OD.
  double mean_od = 0.0;
};

/// Builds aligned weights per config, groups by align value (ascending) and
/// averages the layer-mean OD within each group.
std::vector<OdSweepPoint> od_sweep(std::span<const ToyConfig> configs, Stream stream,
                                   double rtol = kWeightRankRtol);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

nlohmann::json to_json(const OverlapReport& r);
nlohmann::json to_json(std::span<const OdSweepPoint> sweep, Stream stream);
std::string to_csv(std::span<const OdSweepPoint> sweep, Stream stream);

}  // namespace headlink
