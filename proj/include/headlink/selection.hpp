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

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "headlink/probe.hpp"

namespace headlink {

struct SelectionParams {
  /// Fraction of all heads to turn into reconstructed targets.
  double fraction = 0.5;
  /// Minimum number of surviving references per target.
  int min_refs = 2;
  double eps_tau = 1e-4;
  int max_iters = 50;
  /// Cross-check the incremental validity bookkeeping against a full recount.
  bool debug_checks = false;

  void validate() const;
};

struct SelectionStep {
  double tau = 0.0;
  std::size_t targets = 0;
  double achieved_fraction = 0.0;
};

struct SelectionResult {
  std::vector<HeadId> targets;  // sorted
  double tau = 0.0;
  /// Pruned references per target, strongest first.
  std::map<HeadId, std::vector<HeadId>> refs;
  std::size_t node_count = 0;
  std::size_t required = 0;
  double achieved_fraction = 0.0;
  bool feasible = false;
  std::vector<SelectionStep> trace;

  bool is_target(HeadId h) const;
};

/// ceil(f * |V|), the target count the search aims for.
std::size_t required_targets(std::size_t node_count, double fraction);

/// One greedy pass on the subgraph of edges with weight >= tau. Candidates
/// (in-degree >= m) are visited by descending sum of their m strongest
/// incoming weights, ties by (layer, head); a candidate joins when every
/// member keeps >= m non-target in-neighbors. Stops after `cap` targets.
std::vector<HeadId> greedy_targets(const R2Graph& g, double tau, const SelectionParams& p,
                                   std::size_t cap);

/// Binary search over tau with greedy selection, then pruning to the m
/// strongest references per target.
SelectionResult select_targets(const R2Graph& g, const SelectionParams& p);

/// Independent re-check of a SelectionResult; returns human-readable violations.
std::vector<std::string> verify_selection(const R2Graph& g, const SelectionResult& r,
                                          const SelectionParams& p);

nlohmann::json to_json(const SelectionResult& r, const SelectionParams& p);
SelectionResult selection_from_json(const nlohmann::json& j);

}  // namespace headlink
