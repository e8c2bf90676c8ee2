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

#include <doctest.h>

#include <cmath>

#include "headlink/error.hpp"
#include "headlink/linalg.hpp"
#include "headlink/subspace.hpp"
#include "headlink/toy_transformer.hpp"

using namespace headlink;
using Eigen::MatrixXd;

namespace {

// Straightforward re-implementation with explicit loops: per layer, per head,
// per query token; no matrix products from the library.
struct NaiveOut {
  std::vector<std::vector<std::vector<double>>> k, v;  // [layer*H+head][t][j]
  std::vector<std::vector<std::vector<double>>> attn;  // [layer][t][col]
};

NaiveOut naive_forward(const ToyWeights& w, const ToyConfig& cfg, const MatrixXd& x0) {
  const int L = cfg.num_layers, H = cfg.heads_per_layer, dh = cfg.head_dim, m = cfg.embed_dim;
  const int T = static_cast<int>(x0.rows());
  std::vector<std::vector<double>> x(T, std::vector<double>(m));
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < m; ++i) x[t][i] = x0(t, i);
  NaiveOut out;
  auto project = [&](const MatrixXd& W, int t) {
    std::vector<double> r(dh, 0.0);
    for (int j = 0; j < dh; ++j)
      for (int i = 0; i < m; ++i) r[j] += x[t][i] * W(i, j);
    return r;
  };
  auto rope = [&](std::vector<double> r, int pos) {
    for (int i = 0; i + 1 < dh; i += 2) {
      const double th = pos * std::pow(10000.0, -static_cast<double>(i) / dh);
      const double a = r[i], b = r[i + 1];
      r[i] = a * std::cos(th) - b * std::sin(th);
      r[i + 1] = a * std::sin(th) + b * std::cos(th);
    }
    return r;
  };
  for (int l = 0; l < L; ++l) {
    std::vector<std::vector<double>> concat(T, std::vector<double>(H * dh, 0.0));
    for (int h = 0; h < H; ++h) {
      const HeadId id{l, h};
      std::vector<std::vector<double>> q(T), k(T), v(T);
      for (int t = 0; t < T; ++t) {
        q[t] = project(w.projection(Stream::Q, id), t);
        k[t] = project(w.projection(Stream::K, id), t);
        v[t] = project(w.projection(Stream::V, id), t);
        if (cfg.rope) {
          q[t] = rope(q[t], t);
          k[t] = rope(k[t], t);
        }
      }
      for (int t = 0; t < T; ++t) {
        const int last = cfg.causal ? t : T - 1;
        std::vector<double> s(last + 1);
        double mx = -1e300;
        for (int u = 0; u <= last; ++u) {
          double dot = 0;
          for (int j = 0; j < dh; ++j) dot += q[t][j] * k[u][j];
          s[u] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[u]);
        }
        double z = 0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (int u = 0; u <= last; ++u)
          for (int j = 0; j < dh; ++j) concat[t][h * dh + j] += s[u] / z * v[u][j];
      }
      out.k.push_back(k);
      out.v.push_back(v);
    }
    std::vector<std::vector<double>> a(T, std::vector<double>(m, 0.0));
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < m; ++c) {
        for (int r = 0; r < H * dh; ++r) a[t][c] += concat[t][r] * w.w_o[l](r, c);
        x[t][c] += a[t][c];
      }
    out.attn.push_back(a);
  }
  return out;
}

ToyConfig oracle_config() {
  ToyConfig c;
  c.num_layers = 2;
  c.heads_per_layer = 4;
  c.head_dim = 8;
  c.embed_dim = 32;
  c.token_count = 16;
  c.seed = 31;
  c.align = 0.5;
  c.shared_dim = 8;
  return c;
}

double same_layer_r2(const ActivationSet& acts, HeadId ref, HeadId tgt) {
  const MatrixXd y = acts.head_matrix(Stream::K, tgt);
  return r2_from_residual(y, lstsq(acts.head_matrix(Stream::K, ref), y).residual_ss);
}

}  // namespace

TEST_CASE("forward matches an independent loop implementation") {
  for (bool rope : {false, true}) {
    CAPTURE(rope);
    ToyConfig cfg = oracle_config();
    cfg.rope = rope;
    const ToyWeights w = build_aligned(cfg);
    const MatrixXd x0 = toy_inputs(cfg, 5);
    const ForwardTrace tr = forward_trace(w, cfg, x0);
    const NaiveOut ref = naive_forward(w, cfg, x0);
    for (int l = 0; l < cfg.num_layers; ++l) {
      double diff = 0, norm = 0;
      for (int h = 0; h < cfg.heads_per_layer; ++h) {
        const int idx = l * cfg.heads_per_layer + h;
        const auto k = tr.activations.head_matrix(Stream::K, {l, h});
        for (int t = 0; t < cfg.token_count; ++t)
          for (int j = 0; j < cfg.head_dim; ++j) {
            diff += std::pow(k(t, j) - ref.k[idx][t][j], 2);
            norm += std::pow(ref.k[idx][t][j], 2);
          }
      }
      CHECK(std::sqrt(diff / norm) < 1e-6);
      double adiff = 0, anorm = 0;
      for (int t = 0; t < cfg.token_count; ++t)
        for (int c = 0; c < cfg.embed_dim; ++c) {
          adiff += std::pow(tr.attention_outputs[l](t, c) - ref.attn[l][t][c], 2);
          anorm += std::pow(ref.attn[l][t][c], 2);
        }
      CHECK(std::sqrt(adiff / anorm) < 1e-6);
    }
  }
}

TEST_CASE("single layer records X0 W_K exactly") {
  ToyConfig cfg = oracle_config();
  cfg.num_layers = 1;
  const ToyWeights w = build_random(cfg);
  const MatrixXd x0 = toy_inputs(cfg, 1);
  const ForwardTrace tr = forward_trace(w, cfg, x0);
  for (int h = 0; h < cfg.heads_per_layer; ++h)
    CHECK((tr.k[h] - x0 * w.projection(Stream::K, {0, h})).norm() == 0.0);
}

TEST_CASE("one causal token attends only to itself") {
  ToyConfig cfg = oracle_config();
  cfg.token_count = 1;
  const ToyWeights w = build_random(cfg);
  const MatrixXd x0 = toy_inputs(cfg, 2);
  const ForwardTrace tr = forward_trace(w, cfg, x0);
  MatrixXd concat(1, cfg.heads_per_layer * cfg.head_dim);
  for (int h = 0; h < cfg.heads_per_layer; ++h) concat.middleCols(h * cfg.head_dim, cfg.head_dim) = tr.v[h];
  CHECK((tr.attention_outputs[0] - concat * w.w_o[0]).norm() < 1e-12);
}

TEST_CASE("rope leaves V untouched") {
  ToyConfig cfg = oracle_config();
  const ToyWeights w = build_aligned(cfg);
  const MatrixXd x0 = toy_inputs(cfg, 3);
  ToyConfig roped = cfg;
  roped.rope = true;
  const auto a = forward(w, cfg, x0);
  const auto b = forward(w, roped, x0);
  // layer 0 V depends only on the input
  CHECK(a.head(Stream::V, {0, 2}) == b.head(Stream::V, {0, 2}));
  CHECK_FALSE(a.head(Stream::K, {0, 2}) == b.head(Stream::K, {0, 2}));
  CHECK(b.meta().post_rope);
}

TEST_CASE("build_random: determinism, scale and generic rank") {
  ToyConfig cfg;
  cfg.num_layers = 2;
  cfg.heads_per_layer = 4;
  cfg.head_dim = 16;
  cfg.embed_dim = 256;
  cfg.seed = 8;
  const ToyWeights a = build_random(cfg);
  const ToyWeights b = build_random(cfg);
  CHECK(a.w_k == b.w_k);
  CHECK(a.w_o == b.w_o);

  double ss = 0, n = 0;
  for (const auto& blocks : {a.w_q, a.w_k, a.w_v})
    for (const auto& m : blocks) {
      ss += m.squaredNorm();
      n += static_cast<double>(m.size());
    }
  CHECK(ss / n == doctest::Approx(1.0 / 256.0).epsilon(0.05));

  for (const auto& layer : overlap_dimension(a, Stream::K).layers) CHECK(layer.od == 0);
}

TEST_CASE("build_aligned: align 0 is build_random") {
  ToyConfig cfg = oracle_config();
  cfg.align = 0.0;
  const ToyWeights a = build_aligned(cfg);
  const ToyWeights r = build_random(cfg);
  CHECK(a.w_k == r.w_k);
  CHECK(a.w_q == r.w_q);
  CHECK(a.w_v == r.w_v);
}

TEST_CASE("build_aligned: align 1 with s = d_h makes same-layer K heads exactly linear in each other") {
  ToyConfig cfg = oracle_config();
  cfg.align = 1.0;
  cfg.shared_dim = cfg.head_dim;
  cfg.token_count = 64;
  const ToyWeights w = build_aligned(cfg);
  const auto acts = forward(w, cfg, toy_inputs(cfg, 4));
  for (int l = 0; l < cfg.num_layers; ++l)
    for (int a = 0; a < cfg.heads_per_layer; ++a)
      for (int b = 0; b < cfg.heads_per_layer; ++b)
        if (a != b) CHECK(same_layer_r2(acts, {l, a}, {l, b}) > 1 - 1e-6);
}

TEST_CASE("build_aligned: per-stream alignment overrides") {
  ToyConfig cfg = oracle_config();
  cfg.align = 0.0;
  cfg.align_k = 1.0;
  const ToyWeights w = build_aligned(cfg);
  CHECK(overlap_dimension(w, Stream::K).layers[0].od > 0);
  CHECK(overlap_dimension(w, Stream::V).layers[0].od == 0);
}

TEST_CASE("random toy model: same-layer K heads are weakly predictable when m is large") {
  ToyConfig cfg;
  cfg.num_layers = 2;
  cfg.heads_per_layer = 4;
  cfg.head_dim = 8;
  cfg.embed_dim = 256;
  cfg.token_count = 512;
  cfg.seed = 12;
  const auto acts = forward(build_random(cfg), cfg, toy_inputs(cfg, 13));
  double sum = 0;
  int n = 0;
  for (int l = 0; l < 2; ++l)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        if (a != b) {
          sum += same_layer_r2(acts, {l, a}, {l, b});
          ++n;
        }
  CHECK(sum / n < 0.1);
}

TEST_CASE("config validation and JSON") {
  ToyConfig cfg = oracle_config();
  cfg.align_v = 0.25;
  const ToyConfig back = toy_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));

  CHECK_THROWS_AS(toy_config_from_json(nlohmann::json{{"layers", 2}}), Error);
  ToyConfig bad = cfg;
  bad.align = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.shared_dim = cfg.embed_dim + 1;
  CHECK_THROWS_AS(bad.validate(), Error);

  const ToyWeights w = build_random(cfg);
  CHECK_THROWS_AS(forward(w, cfg, MatrixXd::Zero(cfg.token_count, cfg.embed_dim + 1)), Error);
}
