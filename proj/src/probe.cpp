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

#include "headlink/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "headlink/error.hpp"
#include "headlink/parallel.hpp"

namespace headlink {

using nlohmann::json;

std::string to_string(EdgeConstraint c) {
  return c == EdgeConstraint::TargetLayerGeRef ? "target_layer_ge_ref" : "unrestricted";
}

EdgeConstraint parse_constraint(const std::string& s) {
  if (s == "target_layer_ge_ref") return EdgeConstraint::TargetLayerGeRef;
  if (s == "unrestricted") return EdgeConstraint::Unrestricted;
  throw Error(ErrorCode::InvalidArgument, "unknown constraint '" + s + "'");
}

bool admissible(HeadId ref, HeadId target, EdgeConstraint c) {
  if (ref == target) return false;
  return c == EdgeConstraint::Unrestricted || target.layer >= ref.layer;
}

std::optional<double> R2Graph::weight(HeadId ref, HeadId target) const {
  auto it = std::lower_bound(edges.begin(), edges.end(), std::pair{ref, target},
                             [](const Edge& e, const std::pair<HeadId, HeadId>& key) {
                               return std::pair{e.ref, e.target} < key;
                             });
  if (it != edges.end() && it->ref == ref && it->target == target) return it->r2;
  return std::nullopt;
}

std::vector<Edge> R2Graph::in_edges(HeadId target) const {
  std::vector<Edge> out;
  for (const auto& e : edges)
    if (e.target == target) out.push_back(e);
  return out;
}

std::vector<Edge> ranked_in_edges(const R2Graph& g, HeadId target) {
  auto in = g.in_edges(target);
  std::sort(in.begin(), in.end(), [](const Edge& a, const Edge& b) {
    if (a.r2 != b.r2) return a.r2 > b.r2;
    return a.ref < b.ref;
  });
  return in;
}

TokenSplit split_tokens(int token_count, const EvalSpec& eval) {
  TokenSplit split;
  if (!eval.holdout) {
    split.train.resize(token_count);
    std::iota(split.train.begin(), split.train.end(), 0);
    return split;
  }
  if (!(eval.holdout_fraction > 0.0 && eval.holdout_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "holdout fraction must lie in (0, 1)");
  const int n_test = std::max(
      1, static_cast<int>(std::lround(eval.holdout_fraction * static_cast<double>(token_count))));
  if (n_test >= token_count)
    throw Error(ErrorCode::InsufficientSamples, "holdout leaves no training tokens");
  split.test = sample_token_indices(token_count, n_test, eval.seed);
  std::vector<char> is_test(token_count, 0);
  for (int t : split.test) is_test[t] = 1;
  for (int t = 0; t < token_count; ++t)
    if (!is_test[t]) split.train.push_back(t);
  return split;
}

namespace {

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

}  // namespace

R2Graph probe_all(const ActivationSet& acts, Stream stream, const FitSpec& spec,
                  EdgeConstraint constraint, int workers) {
  if (!acts.has(stream))
    throw Error(ErrorCode::MissingStream, "stream " + to_string(stream) + " not in activation set");
  const auto& meta = acts.meta();
  const TokenSplit split = split_tokens(meta.token_count, spec.eval);
  const int min_rows = meta.head_dim + 2;
  if (static_cast<int>(split.train.size()) < min_rows)
    throw Error(ErrorCode::InsufficientSamples,
                "pairwise probe needs at least d_h + 2 = " + std::to_string(min_rows) +
                    " fitting tokens, have " + std::to_string(split.train.size()));
  if (spec.eval.holdout && split.test.size() < 2)
    throw Error(ErrorCode::InsufficientSamples, "holdout split needs at least 2 tokens");

  const auto heads = acts.heads();
  const std::size_t n = heads.size();
  std::vector<Eigen::MatrixXd> train(n), test(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::MatrixXd full = acts.head_matrix(stream, heads[i]);
    if (spec.eval.holdout) {
      train[i] = rows_of(full, split.train);
      test[i] = rows_of(full, split.test);
    } else {
      train[i] = full;
    }
  }

  // One slot per (ref, target) in sorted order; each ref's design is factored once.
  std::vector<std::vector<Edge>> per_ref(n);
  parallel_for(n, workers, [&](std::size_t r) {
    const LeastSquares<double> solver(train[r], spec.fit);
    auto& out = per_ref[r];
    for (std::size_t t = 0; t < n; ++t) {
      if (!admissible(heads[r], heads[t], constraint)) continue;
      const auto sol = solver.solve(train[t]);
      double raw;
      if (spec.eval.holdout) {
        const Eigen::MatrixXd pred = apply_weights(test[r], sol.weights, spec.fit.intercept);
        raw = r2_score(test[t], pred);
      } else {
        raw = r2_from_residual(train[t], sol.residual_ss);
      }
      out.push_back({heads[r], heads[t], std::clamp(raw, 0.0, 1.0), raw});
    }
  });

  R2Graph g;
  g.meta = meta;
  g.stream = stream;
  g.constraint = constraint;
  g.fit_spec = spec;
  for (auto& v : per_ref) g.edges.insert(g.edges.end(), v.begin(), v.end());
  return g;
}

GraphStats graph_stats(const R2Graph& g, std::span<const double> thresholds,
                       std::span<const int> near_max_windows) {
  if (g.edges.empty()) throw Error(ErrorCode::EmptyGraph, "graph has no edges");
  GraphStats s;
  s.edge_count = g.edges.size();
  std::vector<double> w;
  w.reserve(g.edges.size());
  for (const auto& e : g.edges) w.push_back(e.r2);
  s.mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  std::sort(w.begin(), w.end());
  s.min = w.front();
  s.max = w.back();
  const std::size_t mid = w.size() / 2;
  s.median = w.size() % 2 ? w[mid] : 0.5 * (w[mid - 1] + w[mid]);
  for (double t : thresholds) {
    const auto above = std::count_if(w.begin(), w.end(), [t](double x) { return x > t; });
    s.frac_above.emplace_back(t, static_cast<double>(above) / static_cast<double>(w.size()));
  }

  std::size_t with_pred = 0, best_intra = 0, top5_total = 0, top5_intra = 0;
  for (int i = 0; i < g.meta.num_heads(); ++i) {
    const HeadId target = g.meta.head_at(i);
    const auto ranked = ranked_in_edges(g, target);
    if (ranked.empty()) continue;
    ++with_pred;
    if (ranked.front().ref.layer == target.layer) ++best_intra;
    const std::size_t k = std::min<std::size_t>(5, ranked.size());
    for (std::size_t j = 0; j < k; ++j) {
      ++top5_total;
      if (ranked[j].ref.layer == target.layer) ++top5_intra;
    }
  }
  if (with_pred) {
    s.best_predictor_intra_frac = static_cast<double>(best_intra) / static_cast<double>(with_pred);
    s.top5_intra_frac = static_cast<double>(top5_intra) / static_cast<double>(top5_total);
  }

  for (int near_max : near_max_windows) {
    ProximityStats p;
    p.near_max = near_max;
    double near_sum = 0.0, far_sum = 0.0;
    for (const auto& e : g.edges) {
      if (std::abs(e.target.layer - e.ref.layer) <= near_max) {
        near_sum += e.r2;
        ++p.near_count;
      } else {
        far_sum += e.r2;
        ++p.far_count;
      }
    }
    const double total = near_sum + far_sum;
    if (total > 0.0) {
      p.near_frac = near_sum / total;
    } else {
      p.near_frac = static_cast<double>(p.near_count) / static_cast<double>(s.edge_count);
    }
    p.far_frac = 1.0 - p.near_frac;
    p.near_mean_r2 = p.near_count ? near_sum / static_cast<double>(p.near_count) : 0.0;
    p.far_mean_r2 = p.far_count ? far_sum / static_cast<double>(p.far_count) : 0.0;
    s.proximity.push_back(p);
  }
  return s;
}

// JSON -----------------------------------------------------------------------

json to_json(const ModelMeta& m) {
  return json{{"model_name", m.model_name},
              {"num_layers", m.num_layers},
              {"heads_per_layer", m.heads_per_layer},
              {"head_dim", m.head_dim},
              {"embed_dim", m.embed_dim},
              {"token_count", m.token_count},
              {"source", to_string(m.source)},
              {"post_rope", m.post_rope}};
}

ModelMeta meta_from_json(const json& j) {
  ModelMeta m;
  m.model_name = j.at("model_name").get<std::string>();
  m.num_layers = j.at("num_layers").get<int>();
  m.heads_per_layer = j.at("heads_per_layer").get<int>();
  m.head_dim = j.at("head_dim").get<int>();
  m.embed_dim = j.at("embed_dim").get<int>();
  m.token_count = j.at("token_count").get<int>();
  m.source = parse_source(j.at("source").get<std::string>());
  m.post_rope = j.value("post_rope", false);
  m.validate();
  return m;
}

json to_json(HeadId h) { return json::array({h.layer, h.head}); }

HeadId head_from_json(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

json to_json(const FitSpec& f) {
  json j{{"intercept", f.fit.intercept}, {"ridge_lambda", f.fit.ridge_lambda}};
  if (f.eval.holdout) {
    j["eval"] = {{"mode", "holdout"},
                 {"fraction", f.eval.holdout_fraction},
                 {"seed", f.eval.seed}};
  } else {
    j["eval"] = {{"mode", "in_sample"}};
  }
  return j;
}

FitSpec fit_spec_from_json(const json& j) {
  FitSpec f;
  f.fit.intercept = j.value("intercept", true);
  f.fit.ridge_lambda = j.value("ridge_lambda", 0.0);
  if (j.contains("eval") && j["eval"].value("mode", "in_sample") == "holdout") {
    f.eval.holdout = true;
    f.eval.holdout_fraction = j["eval"].at("fraction").get<double>();
    f.eval.seed = j["eval"].at("seed").get<std::uint64_t>();
  }
  return f;
}

json to_json(const R2Graph& g) {
  json edges = json::array();
  for (const auto& e : g.edges) {
    json je{{"ref", to_json(e.ref)}, {"target", to_json(e.target)}, {"r2", e.r2}};
    if (e.raw_r2 != e.r2) je["raw_r2"] = e.raw_r2;
    edges.push_back(std::move(je));
  }
  return json{{"schema_version", kSchemaVersion},
              {"kind", "r2_graph"},
              {"meta", to_json(g.meta)},
              {"stream", to_string(g.stream)},
              {"constraint", to_string(g.constraint)},
              {"fit", to_json(g.fit_spec)},
              {"edges", std::move(edges)}};
}

R2Graph graph_from_json(const json& j) {
  try {
    if (j.at("kind").get<std::string>() != "r2_graph")
      throw Error(ErrorCode::FormatError, "document is not an r2_graph");
    R2Graph g;
    g.meta = meta_from_json(j.at("meta"));
    g.stream = parse_stream(j.at("stream").get<std::string>());
    g.constraint = parse_constraint(j.at("constraint").get<std::string>());
    if (j.contains("fit")) g.fit_spec = fit_spec_from_json(j["fit"]);
    for (const auto& je : j.at("edges")) {
      Edge e;
      e.ref = head_from_json(je.at("ref"));
      e.target = head_from_json(je.at("target"));
      e.r2 = je.at("r2").get<double>();
      e.raw_r2 = je.value("raw_r2", e.r2);
      if (!g.meta.contains(e.ref) || !g.meta.contains(e.target))
        throw Error(ErrorCode::FormatError, "edge references a head outside the model");
      if (e.ref == e.target) throw Error(ErrorCode::FormatError, "self-edge " + to_string(e.ref));
      if (g.constraint == EdgeConstraint::TargetLayerGeRef && e.target.layer < e.ref.layer)
        throw Error(ErrorCode::FormatError, "edge violates the layer constraint");
      if (!(e.r2 >= 0.0 && e.r2 <= 1.0))
        throw Error(ErrorCode::FormatError, "edge weight outside [0, 1]");
      g.edges.push_back(e);
    }
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
      return std::pair{a.ref, a.target} < std::pair{b.ref, b.target};
    });
    return g;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("graph JSON: ") + e.what());
  }
}

json to_json(const GraphStats& s) {
  json frac = json::array();
  for (const auto& [t, f] : s.frac_above) frac.push_back({{"threshold", t}, {"fraction", f}});
  json prox = json::array();
  for (const auto& p : s.proximity)
    prox.push_back({{"near_max", p.near_max},
                    {"near_frac", p.near_frac},
                    {"far_frac", p.far_frac},
                    {"near_mean_r2", p.near_mean_r2},
                    {"far_mean_r2", p.far_mean_r2},
                    {"near_count", p.near_count},
                    {"far_count", p.far_count}});
  return json{{"schema_version", kSchemaVersion},
              {"kind", "graph_stats"},
              {"edge_count", s.edge_count},
              {"mean", s.mean},
              {"median", s.median},
              {"min", s.min},
              {"max", s.max},
              {"frac_above", std::move(frac)},
              {"best_predictor_intra_frac", s.best_predictor_intra_frac},
              {"top5_intra_frac", s.top5_intra_frac},
              {"proximity", std::move(prox)}};
}

}  // namespace headlink
