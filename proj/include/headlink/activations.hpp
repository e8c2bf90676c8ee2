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

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace headlink {

enum class Stream { K, Q, V };
enum class Source { Toy, Synthetic, Extracted };

std::string to_string(Stream s);
std::string to_string(Source s);
Stream parse_stream(const std::string& s);
Source parse_source(const std::string& s);

struct HeadId {
  int layer = 0;
  int head = 0;
  auto operator<=>(const HeadId&) const = default;
};

std::string to_string(HeadId h);

/// Shape and provenance shared by every stream of a capture.
struct ModelMeta {
  std::string model_name = "unnamed";
  int num_layers = 1;
  int heads_per_layer = 1;
  int head_dim = 1;
  int embed_dim = 1;
  int token_count = 1;
  Source source = Source::Synthetic;
  /// Whether captured Q/K were taken after the rotary embedding.
  bool post_rope = false;

  int num_heads() const { return num_layers * heads_per_layer; }
  int head_index(HeadId h) const { return h.layer * heads_per_layer + h.head; }
  HeadId head_at(int index) const { return {index / heads_per_layer, index % heads_per_layer}; }
  bool contains(HeadId h) const {
    return h.layer >= 0 && h.layer < num_layers && h.head >= 0 && h.head < heads_per_layer;
  }
  /// Throws InvalidArgument when a count is out of range.
  void validate() const;
  bool same_shape(const ModelMeta& o) const {
    return num_layers == o.num_layers && heads_per_layer == o.heads_per_layer &&
           head_dim == o.head_dim && token_count == o.token_count;
  }
  friend bool operator==(const ModelMeta&, const ModelMeta&) = default;
};

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-stream f32 activations in [L][H][T][d_h] order. Token i is the same
/// input token in every head and stream.
class ActivationSet {
 public:
  ActivationSet() = default;
  explicit ActivationSet(ModelMeta meta);

  const ModelMeta& meta() const { return meta_; }
  bool has(Stream s) const { return tensors_.count(s) != 0; }
  std::vector<Stream> streams() const;
  std::vector<HeadId> heads() const;

  /// Takes ownership of a flat [L][H][T][d_h] block.
  void set_stream(Stream s, std::vector<float> data);
  std::span<const float> data(Stream s) const;

  /// T x d_h view of one head.
  Eigen::Map<const RowMatrixXf> head(Stream s, HeadId h) const;
  /// T x d_h copy in double precision.
  Eigen::MatrixXd head_matrix(Stream s, HeadId h) const;
  /// Writes a T x d_h block into the given head.
  void set_head(Stream s, HeadId h, const Eigen::Ref<const Eigen::MatrixXd>& values);

  friend bool operator==(const ActivationSet&, const ActivationSet&) = default;

 private:
  ModelMeta meta_;
  std::map<Stream, std::vector<float>> tensors_;
};

/// Per-head projection matrices, [L][H][m][d_h] per stream.
struct ProjectionWeights {
  ModelMeta meta;
  std::map<Stream, std::vector<float>> blocks;

  Eigen::MatrixXd head(Stream s, HeadId h) const;
};

inline constexpr char kActvMagic[9] = "ACTV0001";

void write_actv(const ActivationSet& set, const std::filesystem::path& path);
ActivationSet read_actv(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_actv(const ActivationSet& set);
ActivationSet decode_actv(std::span<const std::uint8_t> bytes);

void write_weights(const ProjectionWeights& w, const std::filesystem::path& path);
ProjectionWeights read_weights(const std::filesystem::path& path);

/// Tokens x ~ N(0, I_m) projected through per-head N(0, 1/m) matrices, so
/// every activation has unit variance.
ActivationSet gen_gaussian_activations(const ModelMeta& meta, std::span<const Stream> streams,
                                       std::uint64_t seed);

/// Heads of each layer are split into consecutive groups of `group_size`;
/// every head in a group is Z_g C_h for a shared latent Z_g = X W_g and an
/// invertible d_h x d_h mix C_h, so same-group heads predict each other exactly.
/// Activations have unit variance per coordinate.
ActivationSet gen_shared_latent_activations(const ModelMeta& meta, std::span<const Stream> streams,
                                            int group_size, std::uint64_t seed);

/// Sorted, distinct token indices; deterministic per seed.
std::vector<int> sample_token_indices(int token_count, int n, std::uint64_t seed);
ActivationSet select_tokens(const ActivationSet& set, std::span<const int> indices);
ActivationSet subsample_tokens(const ActivationSet& set, int n, std::uint64_t seed);

}  // namespace headlink
