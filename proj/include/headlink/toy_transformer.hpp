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
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "headlink/activations.hpp"

namespace headlink {

/// Configuration of the small attention stack.
///
/// `align` controls how much of each head's projection lives in a per-layer,
/// per-stream shared subspace of dimension `shared_dim`: round(align * d_h)
/// of the head's d_h columns are drawn inside span(U), the rest are generic
/// Gaussian columns. Per-stream overrides take precedence over `align`.
struct ToyConfig {
  int num_layers = 2;
  int heads_per_layer = 4;
  int head_dim = 8;
  int embed_dim = 32;
  int token_count = 16;
  std::uint64_t seed = 0;
  double align = 0.0;
  std::optional<double> align_k;
  std::optional<double> align_q;
  std::optional<double> align_v;
  int shared_dim = 8;
  bool rope = false;
  bool causal = true;

  double align_for(Stream s) const;
  ModelMeta meta() const;
  void validate() const;
};

struct ToyWeights {
  int num_layers = 0;
  int heads_per_layer = 0;
  int head_dim = 0;
  int embed_dim = 0;
  /// m x d_h, indexed by layer * H + head.
  std::vector<Eigen::MatrixXd> w_q, w_k, w_v;
  /// (H * d_h) x m, one per layer.
  std::vector<Eigen::MatrixXd> w_o;

  const Eigen::MatrixXd& projection(Stream s, HeadId h) const;
  Eigen::MatrixXd& projection(Stream s, HeadId h);
  /// m x (H * d_h) concatenation of one layer's head projections.
  Eigen::MatrixXd layer_projection(Stream s, int layer) const;
  ProjectionWeights to_projection_weights(const ModelMeta& meta) const;
};

/// Every entry i.i.d. N(0, 1/m).
ToyWeights build_random(const ToyConfig& cfg);
/// Shared-subspace construction; align = 0 reproduces build_random exactly.
ToyWeights build_aligned(const ToyConfig& cfg);
/// build_aligned when `aligned`, else build_random.
ToyWeights build(const ToyConfig& cfg, bool aligned);

/// T x m token embeddings, i.i.d. N(0, 1).
Eigen::MatrixXd toy_inputs(const ToyConfig& cfg, std::uint64_t seed);

/// Rotates consecutive (2i, 2i+1) pairs of each row by pos * 10000^(-2i/d).
Eigen::MatrixXd apply_rope(const Eigen::MatrixXd& x, int first_position = 0);

/// softmax(q K^T / sqrt(d)) V for a single query row against all rows of k/v.
Eigen::RowVectorXd attend(const Eigen::RowVectorXd& q, const Eigen::MatrixXd& k,
                          const Eigen::MatrixXd& v);

/// Full-sequence attention for one head; causal mask when requested.
Eigen::MatrixXd head_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                               const Eigen::MatrixXd& v, bool causal);

struct ForwardTrace {
  ActivationSet activations;
  /// Per layer: attention block output after W_O (T x m), before the residual add.
  std::vector<Eigen::MatrixXd> attention_outputs;
  /// Per layer: double-precision Q/K/V, indexed [layer * H + head].
  std::vector<Eigen::MatrixXd> q, k, v;
};

/// Unknown keys are rejected; absent keys keep their defaults.
ToyConfig toy_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ToyConfig& cfg);

ForwardTrace forward_trace(const ToyWeights& w, const ToyConfig& cfg, const Eigen::MatrixXd& x0);
ActivationSet forward(const ToyWeights& w, const ToyConfig& cfg, const Eigen::MatrixXd& x0);

}  // namespace headlink
