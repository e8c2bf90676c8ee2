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

#include <algorithm>

#include "headlink/activations.hpp"
#include "headlink/error.hpp"
#include "headlink/probe.hpp"
#include "headlink/random.hpp"
#include "oracles.hpp"

using namespace headlink;
using Eigen::MatrixXd;

namespace {

ModelMeta meta_of(int layers, int heads, int dh, int m, int tokens) {
  ModelMeta meta;
  meta.model_name = "probe-test";
  meta.num_layers = layers;
  meta.heads_per_layer = heads;
  meta.head_dim = dh;
  meta.embed_dim = m;
  meta.token_count = tokens;
  meta.source = Source::Synthetic;
  return meta;
}

// L = 3, H = 2 graph with six hand-picked edges.
R2Graph six_edge_graph() {
  R2Graph g;
  g.meta = meta_of(3, 2, 4, 16, 32);
  g.edges = {
      {{0, 0}, {0, 1}, 0.9, 0.9}, {{0, 0}, {1, 0}, 0.5, 0.5}, {{0, 0}, {2, 0}, 0.4, 0.4},
      {{0, 1}, {0, 0}, 0.8, 0.8}, {{1, 0}, {1, 1}, 0.2, 0.2}, {{1, 1}, {2, 1}, 0.6, 0.6},
  };
  return g;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no headlink::Error thrown");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("identical heads give R^2 of one") {
  ActivationSet set(meta_of(1, 2, 3, 8, 40));
  Rng rng(4);
  const MatrixXd a = gaussian_matrix<double>(40, 3, rng);
  set.set_head(Stream::K, {0, 0}, a);
  set.set_head(Stream::K, {0, 1}, a);
  const auto g = probe_all(set, Stream::K, FitSpec{});
  REQUIRE(g.edges.size() == 2);
  for (const auto& e : g.edges) CHECK(e.r2 == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("scalar heads match squared Pearson correlation") {
  ActivationSet set(meta_of(1, 2, 1, 4, 60));
  Rng rng(21);
  const MatrixXd x = gaussian_matrix<double>(60, 1, rng);
  const MatrixXd y = 0.7 * x + 0.5 * gaussian_matrix<double>(60, 1, rng);
  set.set_head(Stream::K, {0, 0}, x);
  set.set_head(Stream::K, {0, 1}, y);
  // the set stores f32, so read back what the probe sees
  const MatrixXd xs = set.head_matrix(Stream::K, {0, 0});
  const MatrixXd ys = set.head_matrix(Stream::K, {0, 1});
  const double expected = oracle::simple_r2(std::vector<double>(xs.data(), xs.data() + 60),
                                            std::vector<double>(ys.data(), ys.data() + 60));
  const auto g = probe_all(set, Stream::K, FitSpec{});
  CHECK(*g.weight({0, 0}, {0, 1}) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(*g.weight({0, 1}, {0, 0}) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("graph statistics on a hand-built graph") {
  const R2Graph g = six_edge_graph();
  const std::vector<double> th{0.1, 0.5, 0.9};
  const std::vector<int> win{1};
  const GraphStats s = graph_stats(g, th, win);
  CHECK(s.edge_count == 6);
  CHECK(s.mean == doctest::Approx(3.4 / 6.0));
  CHECK(s.median == doctest::Approx(0.55));
  CHECK(s.min == doctest::Approx(0.2));
  CHECK(s.max == doctest::Approx(0.9));
  REQUIRE(s.frac_above.size() == 3);
  CHECK(s.frac_above[0].second == doctest::Approx(1.0));
  CHECK(s.frac_above[1].second == doctest::Approx(0.5));
  CHECK(s.frac_above[2].second == doctest::Approx(0.0));
  // best predictors: (0,1)<-(0,0), (0,0)<-(0,1), (1,1)<-(1,0) are same-layer; three others are not
  CHECK(s.best_predictor_intra_frac == doctest::Approx(0.5));
  CHECK(s.top5_intra_frac == doctest::Approx(0.5));
  REQUIRE(s.proximity.size() == 1);
  CHECK(s.proximity[0].near_count == 5);
  CHECK(s.proximity[0].far_count == 1);
  CHECK(s.proximity[0].near_frac == doctest::Approx(3.0 / 3.4));
  CHECK(s.proximity[0].far_frac == doctest::Approx(0.4 / 3.4));
  CHECK(s.proximity[0].near_mean_r2 == doctest::Approx(0.6));
  CHECK(s.proximity[0].far_mean_r2 == doctest::Approx(0.4));
}

TEST_CASE("uniform graph statistics") {
  R2Graph g;
  g.meta = meta_of(2, 2, 2, 8, 10);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) g.edges.push_back({g.meta.head_at(i), g.meta.head_at(j), 0.9, 0.9});
  const std::vector<double> th{0.5};
  const GraphStats s = graph_stats(g, th, {});
  CHECK(s.frac_above[0].second == 1.0);
  CHECK(s.median == doctest::Approx(0.9));
  CHECK(s.mean == doctest::Approx(0.9));
}

TEST_CASE("ranked in-edges break ties by layer then head") {
  R2Graph g;
  g.meta = meta_of(2, 3, 2, 8, 10);
  const HeadId t{1, 2};
  g.edges = {{{0, 2}, t, 0.5, 0.5}, {{1, 0}, t, 0.5, 0.5}, {{0, 1}, t, 0.5, 0.5}, {{1, 1}, t, 0.7, 0.7}};
  const auto r = ranked_in_edges(g, t);
  REQUIRE(r.size() == 4);
  CHECK(r[0].ref == HeadId{1, 1});
  CHECK(r[1].ref == HeadId{0, 1});
  CHECK(r[2].ref == HeadId{0, 2});
  CHECK(r[3].ref == HeadId{1, 0});
}

TEST_CASE("probe_all: constraint, ordering and worker independence") {
  const ModelMeta meta = meta_of(3, 3, 4, 32, 80);
  const std::vector<Stream> streams{Stream::K};
  const auto set = gen_gaussian_activations(meta, streams, 3);

  const auto g1 = probe_all(set, Stream::K, FitSpec{}, EdgeConstraint::TargetLayerGeRef, 1);
  const auto g4 = probe_all(set, Stream::K, FitSpec{}, EdgeConstraint::TargetLayerGeRef, 4);
  CHECK(to_json(g1).dump() == to_json(g4).dump());

  // each target sees every head in its own or an earlier layer, minus itself
  CHECK(g1.edges.size() == 3 * (3 - 1) + 3 * (6 - 1) + 3 * (9 - 1));
  for (const auto& e : g1.edges) {
    CHECK(e.target.layer >= e.ref.layer);
    CHECK_FALSE(e.target == e.ref);
    CHECK(e.r2 >= 0.0);
    CHECK(e.r2 <= 1.0);
  }
  CHECK(std::is_sorted(g1.edges.begin(), g1.edges.end(), [](const Edge& a, const Edge& b) {
    return std::pair(a.ref, a.target) < std::pair(b.ref, b.target);
  }));

  const auto all = probe_all(set, Stream::K, FitSpec{}, EdgeConstraint::Unrestricted, 2);
  CHECK(all.edges.size() == 9 * 8);
  // constrained edges are a subset with identical weights
  for (const auto& e : g1.edges) CHECK(*all.weight(e.ref, e.target) == e.r2);
}

TEST_CASE("probe_all: holdout evaluation") {
  const ModelMeta meta = meta_of(1, 3, 4, 12, 60);
  const std::vector<Stream> streams{Stream::K};
  const auto set = gen_gaussian_activations(meta, streams, 8);
  FitSpec spec;
  spec.eval.holdout = true;
  spec.eval.holdout_fraction = 0.25;
  spec.eval.seed = 5;

  const auto split = split_tokens(60, spec.eval);
  CHECK(split.test.size() == 15);
  CHECK(split.train.size() == 45);
  std::vector<int> joined = split.train;
  joined.insert(joined.end(), split.test.begin(), split.test.end());
  std::sort(joined.begin(), joined.end());
  for (int i = 0; i < 60; ++i) CHECK(joined[static_cast<std::size_t>(i)] == i);

  const auto g = probe_all(set, Stream::K, spec);
  const auto in_sample = probe_all(set, Stream::K, FitSpec{});
  bool differs = false;
  for (const auto& e : g.edges) {
    CHECK(e.r2 == std::clamp(e.raw_r2, 0.0, 1.0));
    differs |= e.raw_r2 != *in_sample.weight(e.ref, e.target);
  }
  CHECK(differs);
}

TEST_CASE("probe_all: errors") {
  const std::vector<Stream> streams{Stream::K};
  const auto set = gen_gaussian_activations(meta_of(1, 2, 4, 16, 40), streams, 1);
  CHECK(code_of([&] { probe_all(set, Stream::Q, FitSpec{}); }) == ErrorCode::MissingStream);

  const auto tiny = gen_gaussian_activations(meta_of(1, 2, 4, 16, 5), streams, 1);
  CHECK(code_of([&] { probe_all(tiny, Stream::K, FitSpec{}); }) == ErrorCode::InsufficientSamples);

  R2Graph empty;
  empty.meta = meta_of(1, 1, 4, 16, 40);
  CHECK(code_of([&] { graph_stats(empty, {}, {}); }) == ErrorCode::EmptyGraph);
}

TEST_CASE("graph JSON round trip") {
  const std::vector<Stream> streams{Stream::V};
  const auto set = gen_gaussian_activations(meta_of(2, 2, 4, 16, 40), streams, 2);
  FitSpec spec;
  spec.fit.ridge_lambda = 0.5;
  const auto g = probe_all(set, Stream::V, spec);
  const auto j = to_json(g);
  const auto back = graph_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.stream == Stream::V);
  CHECK(back.fit_spec.fit.ridge_lambda == 0.5);
}
