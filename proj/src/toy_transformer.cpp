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

#include "headlink/toy_transformer.hpp"

#include <cmath>
#include <set>
#include <string>

#include "headlink/error.hpp"
#include "headlink/random.hpp"

namespace headlink {

namespace {

enum class Draw : std::uint64_t { Q = 0, K = 1, V = 2, O = 3, Basis = 4, Mix = 5 };

Draw draw_for(Stream s) {
  switch (s) {
    case Stream::Q: return Draw::Q;
    case Stream::K: return Draw::K;
    case Stream::V: return Draw::V;
  }
  return Draw::K;
}

// Child seed for one named draw, independent of construction order.
Rng draw_rng(std::uint64_t seed, Draw kind, int layer, int head) {
  const std::uint64_t index = static_cast<std::uint64_t>(kind) * 1'000'000'000ULL +
                              static_cast<std::uint64_t>(layer) * 100'000ULL +
                              static_cast<std::uint64_t>(head);
  return make_rng(seed, index);
}

constexpr Stream kStreams[] = {Stream::Q, Stream::K, Stream::V};

std::vector<Eigen::MatrixXd>& slot(ToyWeights& w, Stream s) {
  switch (s) {
    case Stream::Q: return w.w_q;
    case Stream::K: return w.w_k;
    case Stream::V: return w.w_v;
  }
  return w.w_k;
}

ToyWeights empty_weights(const ToyConfig& cfg) {
  ToyWeights w;
  w.num_layers = cfg.num_layers;
  w.heads_per_layer = cfg.heads_per_layer;
  w.head_dim = cfg.head_dim;
  w.embed_dim = cfg.embed_dim;
  const std::size_t n = static_cast<std::size_t>(cfg.num_layers) * cfg.heads_per_layer;
  w.w_q.resize(n);
  w.w_k.resize(n);
  w.w_v.resize(n);
  w.w_o.resize(cfg.num_layers);
  return w;
}

void draw_output_mix(ToyWeights& w, const ToyConfig& cfg) {
  const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  for (int l = 0; l < cfg.num_layers; ++l) {
    Rng rng = draw_rng(cfg.seed, Draw::O, l, 0);
    w.w_o[l] = gaussian_matrix<double>(cfg.heads_per_layer * cfg.head_dim, cfg.embed_dim, rng, sd);
  }
}

Eigen::MatrixXd generic_projection(const ToyConfig& cfg, Stream s, int layer, int head) {
  Rng rng = draw_rng(cfg.seed, draw_for(s), layer, head);
  return gaussian_matrix<double>(cfg.embed_dim, cfg.head_dim, rng,
                                 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)));
}

}  // namespace

double ToyConfig::align_for(Stream s) const {
  switch (s) {
    case Stream::K: return align_k.value_or(align);
    case Stream::Q: return align_q.value_or(align);
    case Stream::V: return align_v.value_or(align);
  }
  return align;
}

ModelMeta ToyConfig::meta() const {
  ModelMeta m;
  m.model_name = "toy";
  m.num_layers = num_layers;
  m.heads_per_layer = heads_per_layer;
  m.head_dim = head_dim;
  m.embed_dim = embed_dim;
  m.token_count = token_count;
  m.source = Source::Toy;
  m.post_rope = rope;
  return m;
}

void ToyConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, msg);
  };
  need(num_layers >= 1 && heads_per_layer >= 1 && head_dim >= 1 && token_count >= 1,
       "toy dimensions must be >= 1");
  need(embed_dim >= head_dim, "embed_dim must be >= head_dim");
  need(shared_dim >= 1 && shared_dim <= embed_dim, "shared_dim must lie in [1, embed_dim]");
  for (Stream s : kStreams) {
    const double a = align_for(s);
    need(a >= 0.0 && a <= 1.0, "align for stream " + to_string(s) + " must lie in [0, 1]");
  }
  need(!rope || head_dim % 2 == 0, "rope requires an even head_dim");
}

const Eigen::MatrixXd& ToyWeights::projection(Stream s, HeadId h) const {
  const auto& v = s == Stream::Q ? w_q : s == Stream::K ? w_k : w_v;
  return v.at(static_cast<std::size_t>(h.layer) * heads_per_layer + h.head);
}

Eigen::MatrixXd& ToyWeights::projection(Stream s, HeadId h) {
  return slot(*this, s).at(static_cast<std::size_t>(h.layer) * heads_per_layer + h.head);
}

Eigen::MatrixXd ToyWeights::layer_projection(Stream s, int layer) const {
  Eigen::MatrixXd out(embed_dim, heads_per_layer * head_dim);
  for (int h = 0; h < heads_per_layer; ++h)
    out.middleCols(h * head_dim, head_dim) = projection(s, {layer, h});
  return out;
}

ProjectionWeights ToyWeights::to_projection_weights(const ModelMeta& meta) const {
  ProjectionWeights out;
  out.meta = meta;
  for (Stream s : kStreams) {
    std::vector<float> block;
    block.reserve(static_cast<std::size_t>(num_layers) * heads_per_layer * embed_dim * head_dim);
    for (int l = 0; l < num_layers; ++l)
      for (int h = 0; h < heads_per_layer; ++h) {
        const auto& p = projection(s, {l, h});
        for (int i = 0; i < embed_dim; ++i)
          for (int j = 0; j < head_dim; ++j) block.push_back(static_cast<float>(p(i, j)));
      }
    out.blocks[s] = std::move(block);
  }
  return out;
}

ToyWeights build_random(const ToyConfig& cfg) {
  cfg.validate();
  ToyWeights w = empty_weights(cfg);
  for (Stream s : kStreams)
    for (int l = 0; l < cfg.num_layers; ++l)
      for (int h = 0; h < cfg.heads_per_layer; ++h)
        w.projection(s, {l, h}) = generic_projection(cfg, s, l, h);
  draw_output_mix(w, cfg);
  return w;
}

ToyWeights build_aligned(const ToyConfig& cfg) {
  cfg.validate();
  ToyWeights w = empty_weights(cfg);
  const int s_dim = cfg.shared_dim;
  const double mix_sd = 1.0 / std::sqrt(static_cast<double>(s_dim));
  for (Stream s : kStreams) {
    const int shared_cols =
        static_cast<int>(std::lround(cfg.align_for(s) * static_cast<double>(cfg.head_dim)));
    for (int l = 0; l < cfg.num_layers; ++l) {
      Eigen::MatrixXd basis;
      if (shared_cols > 0) {
        Rng rng = draw_rng(cfg.seed, Draw::Basis, l, static_cast<int>(s));
        basis = random_orthonormal(cfg.embed_dim, s_dim, rng);
      }
      for (int h = 0; h < cfg.heads_per_layer; ++h) {
        Eigen::MatrixXd p = generic_projection(cfg, s, l, h);
        if (shared_cols > 0) {
          Rng rng = draw_rng(cfg.seed, Draw::Mix, l, static_cast<int>(s) * 10'000 + h);
          const Eigen::MatrixXd mix = gaussian_matrix<double>(s_dim, shared_cols, rng, mix_sd);
          p.leftCols(shared_cols) = basis * mix;
        }
        w.projection(s, {l, h}) = std::move(p);
      }
    }
  }
  draw_output_mix(w, cfg);
  return w;
}

ToyWeights build(const ToyConfig& cfg, bool aligned) {
  return aligned ? build_aligned(cfg) : build_random(cfg);
}

Eigen::MatrixXd toy_inputs(const ToyConfig& cfg, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x7031);
  return gaussian_matrix<double>(cfg.token_count, cfg.embed_dim, rng);
}

Eigen::MatrixXd apply_rope(const Eigen::MatrixXd& x, int first_position) {
  Eigen::MatrixXd out = x;
  const Eigen::Index d = x.cols();
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const double pos = static_cast<double>(first_position + t);
    for (Eigen::Index i = 0; i + 1 < d; i += 2) {
      const double theta = pos * std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      const double c = std::cos(theta), s = std::sin(theta);
      const double a = x(t, i), b = x(t, i + 1);
      out(t, i) = a * c - b * s;
      out(t, i + 1) = a * s + b * c;
    }
  }
  return out;
}

Eigen::RowVectorXd attend(const Eigen::RowVectorXd& q, const Eigen::MatrixXd& k,
                          const Eigen::MatrixXd& v) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size()));
  Eigen::RowVectorXd scores = (q * k.transpose()) * scale;
  const double mx = scores.maxCoeff();
  Eigen::RowVectorXd p = (scores.array() - mx).exp().matrix();
  p /= p.sum();
  return p * v;
}

Eigen::MatrixXd head_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                               const Eigen::MatrixXd& v, bool causal) {
  const Eigen::Index t_len = q.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Eigen::MatrixXd scores = (q * k.transpose()) * scale;
  Eigen::MatrixXd out(t_len, v.cols());
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const Eigen::Index visible = causal ? t + 1 : k.rows();
    Eigen::RowVectorXd row = scores.row(t).head(visible);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
    out.row(t) = row * v.topRows(visible);
  }
  return out;
}

ForwardTrace forward_trace(const ToyWeights& w, const ToyConfig& cfg, const Eigen::MatrixXd& x0) {
  if (x0.rows() != cfg.token_count || x0.cols() != cfg.embed_dim)
    throw Error(ErrorCode::InvalidShape, "input must be T x m (" + std::to_string(cfg.token_count) +
                                             " x " + std::to_string(cfg.embed_dim) + ")");
  if (w.num_layers != cfg.num_layers || w.heads_per_layer != cfg.heads_per_layer ||
      w.head_dim != cfg.head_dim || w.embed_dim != cfg.embed_dim)
    throw Error(ErrorCode::InvalidShape, "weights do not match the toy config");

  const int n_heads = cfg.num_layers * cfg.heads_per_layer;
  ForwardTrace trace{ActivationSet(cfg.meta()), {}, {}, {}, {}};
  trace.q.resize(n_heads);
  trace.k.resize(n_heads);
  trace.v.resize(n_heads);

  Eigen::MatrixXd x = x0;
  for (int l = 0; l < cfg.num_layers; ++l) {
    Eigen::MatrixXd concat(cfg.token_count, cfg.heads_per_layer * cfg.head_dim);
    for (int h = 0; h < cfg.heads_per_layer; ++h) {
      const HeadId id{l, h};
      Eigen::MatrixXd q = x * w.projection(Stream::Q, id);
      Eigen::MatrixXd k = x * w.projection(Stream::K, id);
      Eigen::MatrixXd v = x * w.projection(Stream::V, id);
      if (cfg.rope) {
        q = apply_rope(q);
        k = apply_rope(k);
      }
      concat.middleCols(h * cfg.head_dim, cfg.head_dim) = head_attention(q, k, v, cfg.causal);
      trace.activations.set_head(Stream::Q, id, q);
      trace.activations.set_head(Stream::K, id, k);
      trace.activations.set_head(Stream::V, id, v);
      const int idx = l * cfg.heads_per_layer + h;
      trace.q[idx] = std::move(q);
      trace.k[idx] = std::move(k);
      trace.v[idx] = std::move(v);
    }
    Eigen::MatrixXd attn = concat * w.w_o[l];
    x += attn;
    trace.attention_outputs.push_back(std::move(attn));
  }
  return trace;
}

ActivationSet forward(const ToyWeights& w, const ToyConfig& cfg, const Eigen::MatrixXd& x0) {
  return forward_trace(w, cfg, x0).activations;
}

ToyConfig toy_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"num_layers", "heads_per_layer", "head_dim", "embed_dim",
                                           "token_count", "seed", "align", "align_k", "align_q",
                                           "align_v", "shared_dim", "rope", "causal"};
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "toy config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw Error(ErrorCode::InvalidArgument, "unknown toy config key '" + key + "'");
  ToyConfig c;
  try {
    c.num_layers = j.value("num_layers", c.num_layers);
    c.heads_per_layer = j.value("heads_per_layer", c.heads_per_layer);
    c.head_dim = j.value("head_dim", c.head_dim);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.token_count = j.value("token_count", c.token_count);
    c.seed = j.value("seed", c.seed);
    c.align = j.value("align", c.align);
    if (j.contains("align_k")) c.align_k = j["align_k"].get<double>();
    if (j.contains("align_q")) c.align_q = j["align_q"].get<double>();
    if (j.contains("align_v")) c.align_v = j["align_v"].get<double>();
    c.shared_dim = j.value("shared_dim", c.shared_dim);
    c.rope = j.value("rope", c.rope);
    c.causal = j.value("causal", c.causal);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("toy config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const ToyConfig& cfg) {
  nlohmann::json j{{"num_layers", cfg.num_layers}, {"heads_per_layer", cfg.heads_per_layer},
                   {"head_dim", cfg.head_dim},     {"embed_dim", cfg.embed_dim},
                   {"token_count", cfg.token_count}, {"seed", cfg.seed},
                   {"align", cfg.align},           {"shared_dim", cfg.shared_dim},
                   {"rope", cfg.rope},             {"causal", cfg.causal}};
  if (cfg.align_k) j["align_k"] = *cfg.align_k;
  if (cfg.align_q) j["align_q"] = *cfg.align_q;
  if (cfg.align_v) j["align_v"] = *cfg.align_v;
  return j;
}

}  // namespace headlink
