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
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "headlink/activations.hpp"
#include "headlink/predictor.hpp"
#include "headlink/probe.hpp"
#include "headlink/selection.hpp"
#include "headlink/toy_transformer.hpp"

namespace headlink {

enum class CompressionMode { KOnly, VOnly, KV };

std::string to_string(CompressionMode m);
CompressionMode parse_mode(const std::string& s);
/// Streams whose heads are partly reconstructed under a mode.
std::vector<Stream> compressed_streams(CompressionMode m);

/// Selection and fitted predictors for one cached stream.
struct StreamPlan {
  Stream stream = Stream::K;
  SelectionResult selection;
  std::map<HeadId, LinearPredictor> predictors;

  bool is_target(HeadId h) const { return predictors.count(h) != 0; }
};

/// Which heads are cached and how the rest are rebuilt. Immutable after calibrate().
struct CompressionPlan {
  CompressionMode mode = CompressionMode::KV;
  ModelMeta meta;
  SelectionParams params;
  FitSpec fit;
  /// Bytes per cached element (and per stored predictor weight).
  int bytes_per_element = 4;
  std::vector<StreamPlan> streams;

  const StreamPlan* find(Stream s) const;
  std::size_t predictor_weight_count() const;
  std::size_t predictor_overhead_bytes() const {
    return predictor_weight_count() * static_cast<std::size_t>(bytes_per_element);
  }
  /// Throws PlanMismatch if predictors and selections disagree or a reference
  /// is itself reconstructed.
  void validate() const;
};

/// Probe, select and fit per stream. K and V are selected independently.
CompressionPlan calibrate(const ActivationSet& calib, const SelectionParams& p, CompressionMode mode,
                          const FitSpec& fit, int workers = 1);

struct MemoryAccounting {
  std::size_t t_eval = 0;
  std::size_t full_bytes = 0;
  std::size_t stored_cache_bytes = 0;
  std::size_t predictor_bytes = 0;
  double ratio = 1.0;
};

/// (cached heads * T_eval * d_h * bytes + predictor bytes) / (all K and V heads * T_eval * d_h * bytes).
MemoryAccounting memory_accounting(const CompressionPlan& plan, std::size_t t_eval);

struct HeadReconstruction {
  Stream stream = Stream::K;
  HeadId head;
  double mse = 0.0;
  double r2 = 0.0;
};

struct CompressionReport {
  CompressionMode mode = CompressionMode::KV;
  MemoryAccounting memory;
  std::size_t tokens_evaluated = 0;
  std::vector<HeadReconstruction> heads;
  double mean_mse = 0.0;
  double max_mse = 0.0;
  /// Toy-model runs only: attention block outputs under the compressed cache
  /// versus the uncompressed model, over every layer and token.
  std::optional<double> attention_output_mse;
  std::optional<double> attention_output_rel_error;
};

/// Replays recorded activations token by token: reference states go into the
/// cache, target states are rebuilt from cached references only.
CompressionReport simulate(const CompressionPlan& plan, const ActivationSet& source,
                           std::size_t t_eval);

/// Decodes the toy model token by token with the compressed cache and
/// compares attention outputs against an uncompressed forward pass.
CompressionReport simulate(const CompressionPlan& plan, const ToyWeights& w, const ToyConfig& cfg,
                           const Eigen::MatrixXd& inputs, std::size_t t_eval);

/// calibrate + simulate for K-only, V-only and K+V with shared parameters.
std::map<CompressionMode, CompressionReport> mode_comparison(const ActivationSet& calib,
                                                             const ActivationSet& eval,
                                                             const SelectionParams& p,
                                                             const FitSpec& fit, std::size_t t_eval,
                                                             int workers = 1);
std::map<CompressionMode, CompressionReport> mode_comparison(const ToyWeights& w, const ToyConfig& cfg,
                                                             const Eigen::MatrixXd& calib_inputs,
                                                             const Eigen::MatrixXd& eval_inputs,
                                                             const SelectionParams& p,
                                                             const FitSpec& fit, std::size_t t_eval,
                                                             int workers = 1);

inline constexpr char kPlanMagic[9] = "KVPLAN01";

/// "KVPLAN01" | u32 LE manifest length | JSON manifest | f32 LE predictor weights.
std::vector<std::uint8_t> encode_plan(const CompressionPlan& plan);
CompressionPlan decode_plan(std::span<const std::uint8_t> bytes);
void write_plan(const CompressionPlan& plan, const std::filesystem::path& path);
CompressionPlan read_plan(const std::filesystem::path& path);

nlohmann::json plan_summary_json(const CompressionPlan& plan);
nlohmann::json to_json(const CompressionReport& r);

}  // namespace headlink
