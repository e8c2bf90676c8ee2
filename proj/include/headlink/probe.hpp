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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "headlink/activations.hpp"
#include "headlink/linalg.hpp"

namespace headlink {

inline constexpr int kSchemaVersion = 1;

enum class EdgeConstraint { TargetLayerGeRef, Unrestricted };

std::string to_string(EdgeConstraint c);
EdgeConstraint parse_constraint(const std::string& s);

/// How fit quality is measured: on the fitting tokens, or on a held-out split.
struct EvalSpec {
  bool holdout = false;
  double holdout_fraction = 0.25;
  std::uint64_t seed = 0;
};

struct FitSpec {
  FitOptions fit;
  EvalSpec eval;
};

struct Edge {
  HeadId ref;
  HeadId target;
  /// Clamped to [0, 1].
  double r2 = 0.0;
  /// Unclamped value; differs from r2 only under holdout evaluation.
  double raw_r2 = 0.0;
};

/// Directed R^2 graph. Edges are sorted by (ref, target) and never self-loops.
struct R2Graph {
  ModelMeta meta;
  Stream stream = Stream::K;
  EdgeConstraint constraint = EdgeConstraint::TargetLayerGeRef;
  FitSpec fit_spec;
  std::vector<Edge> edges;

  /// Edge weight for (ref -> target) when present.
  std::optional<double> weight(HeadId ref, HeadId target) const;
  std::vector<Edge> in_edges(HeadId target) const;
  bool has_node(HeadId h) const { return meta.contains(h); }
};

bool admissible(HeadId ref, HeadId target, EdgeConstraint c);

/// Train/test token split for holdout evaluation; both sorted.
struct TokenSplit {
  std::vector<int> train;
  std::vector<int> test;
};
TokenSplit split_tokens(int token_count, const EvalSpec& eval);

/// Fits every admissible (ref -> target) pair and records its R^2.
R2Graph probe_all(const ActivationSet& acts, Stream stream, const FitSpec& spec,
                  EdgeConstraint constraint = EdgeConstraint::TargetLayerGeRef, int workers = 1);

struct ProximityStats {
  int near_max = 0;
  double near_frac = 0.0;
  double far_frac = 0.0;
  double near_mean_r2 = 0.0;
  double far_mean_r2 = 0.0;
  std::size_t near_count = 0;
  std::size_t far_count = 0;
};

struct GraphStats {
  std::size_t edge_count = 0;
  double mean = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
  /// (threshold, fraction of edges with r2 strictly above it)
  std::vector<std::pair<double, double>> frac_above;
  /// Share of heads whose single best predictor sits in the same layer.
  double best_predictor_intra_frac = 0.0;
  /// Same, pooled over each head's five best predictors.
  double top5_intra_frac = 0.0;
  std::vector<ProximityStats> proximity;
};

/// Descriptive statistics. Proximity windows split edges by layer distance
/// (<= near_max vs > near_max) and share out the summed edge weight.
GraphStats graph_stats(const R2Graph& g, std::span<const double> thresholds,
                       std::span<const int> near_max_windows);

/// In-edges of target ordered by (r2 desc, layer asc, head asc).
std::vector<Edge> ranked_in_edges(const R2Graph& g, HeadId target);

nlohmann::json to_json(const ModelMeta& m);
ModelMeta meta_from_json(const nlohmann::json& j);
nlohmann::json to_json(HeadId h);
HeadId head_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FitSpec& f);
FitSpec fit_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const R2Graph& g);
R2Graph graph_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GraphStats& s);

}  // namespace headlink
