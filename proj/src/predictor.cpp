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

#include "headlink/predictor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "headlink/error.hpp"
#include "headlink/parallel.hpp"

namespace headlink {

using nlohmann::json;

Eigen::MatrixXd LinearPredictor::predict(
    const Eigen::Ref<const Eigen::MatrixXd>& concatenated_refs) const {
  const Eigen::Index expected = weights.rows() - (intercept ? 1 : 0);
  if (concatenated_refs.cols() != expected)
    throw Error(ErrorCode::InvalidShape, "predictor for " + to_string(target) + " expects " +
                                             std::to_string(expected) + " input columns");
  return apply_weights(concatenated_refs, weights, intercept);
}

std::vector<HeadId> select_top_n(const R2Graph& g, HeadId target, int n) {
  if (!g.has_node(target)) throw Error(ErrorCode::UnknownHead, "head " + to_string(target));
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "N must be >= 1");
  const auto ranked = ranked_in_edges(g, target);
  std::vector<HeadId> out;
  for (std::size_t i = 0; i < ranked.size() && static_cast<int>(i) < n; ++i)
    out.push_back(ranked[i].ref);
  return out;
}

Eigen::MatrixXd concat_heads(const ActivationSet& acts, Stream stream,
                             std::span<const HeadId> refs) {
  const int dh = acts.meta().head_dim;
  Eigen::MatrixXd x(acts.meta().token_count, static_cast<Eigen::Index>(refs.size()) * dh);
  for (std::size_t i = 0; i < refs.size(); ++i)
    x.middleCols(static_cast<Eigen::Index>(i) * dh, dh) = acts.head_matrix(stream, refs[i]);
  return x;
}

namespace {

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

}  // namespace

LinearPredictor fit_predictor(const ActivationSet& acts, Stream stream, HeadId target,
                              std::span<const HeadId> refs, const FitSpec& spec) {
  if (refs.empty()) throw Error(ErrorCode::InvalidArgument, "predictor needs at least one reference");
  std::vector<HeadId> sorted(refs.begin(), refs.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw Error(ErrorCode::InvalidArgument, "reference heads must be distinct");
  if (std::binary_search(sorted.begin(), sorted.end(), target))
    throw Error(ErrorCode::InvalidArgument, "target " + to_string(target) + " is among its references");

  const auto& meta = acts.meta();
  const TokenSplit split = split_tokens(meta.token_count, spec.eval);
  const int needed = static_cast<int>(refs.size()) * meta.head_dim + 2;
  if (static_cast<int>(split.train.size()) < needed && spec.fit.ridge_lambda == 0.0)
    throw Error(ErrorCode::InsufficientSamples,
                std::to_string(refs.size()) + " references need " + std::to_string(needed) +
                    " fitting tokens, have " + std::to_string(split.train.size()) +
                    " (enable ridge to proceed)");

  const Eigen::MatrixXd x_all = concat_heads(acts, stream, refs);
  const Eigen::MatrixXd y_all = acts.head_matrix(stream, target);
  const Eigen::MatrixXd x = spec.eval.holdout ? take_rows(x_all, split.train) : x_all;
  const Eigen::MatrixXd y = spec.eval.holdout ? take_rows(y_all, split.train) : y_all;

  const auto sol = lstsq(x, y, spec.fit.intercept, spec.fit.ridge_lambda);
  LinearPredictor p;
  p.target = target;
  p.refs.assign(refs.begin(), refs.end());
  p.stream = stream;
  p.intercept = spec.fit.intercept;
  p.weights = sol.weights;
  p.fit_r2 = r2_from_residual(y, sol.residual_ss);
  if (spec.eval.holdout) {
    p.eval_r2 = r2_score(take_rows(y_all, split.test),
                         p.predict(take_rows(x_all, split.test)));
  } else {
    p.eval_r2 = p.fit_r2;
  }
  return p;
}

R2Curve sweep_n(const ActivationSet& acts, Stream stream, const R2Graph& g, std::span<const int> ns,
                const FitSpec& spec, std::span<const double> thresholds, int workers) {
  if (ns.empty()) throw Error(ErrorCode::InvalidArgument, "sweep needs at least one N");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (ns[i] < 1) throw Error(ErrorCode::InvalidArgument, "N values must be >= 1");
    if (i && ns[i] <= ns[i - 1]) throw Error(ErrorCode::InvalidArgument, "N values must ascend");
  }
  const auto heads = acts.heads();
  const int n_max = ns.back();
  // scores[target][k] = eval R^2 with the top ns[k] references; empty when no in-edges.
  std::vector<std::vector<double>> scores(heads.size());
  parallel_for(heads.size(), workers, [&](std::size_t i) {
    const auto refs = select_top_n(g, heads[i], n_max);
    if (refs.empty()) return;
    for (int n : ns) {
      const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n), refs.size());
      const auto p = fit_predictor(acts, stream, heads[i],
                                   std::span<const HeadId>(refs.data(), take), spec);
      scores[i].push_back(p.eval_r2);
    }
  });

  R2Curve curve;
  curve.stream = stream;
  for (std::size_t k = 0; k < ns.size(); ++k) {
    std::vector<double> vals;
    for (const auto& s : scores)
      if (!s.empty()) vals.push_back(s[k]);
    CurvePoint pt;
    pt.n = ns[k];
    pt.targets = vals.size();
    if (!vals.empty()) {
      pt.mean_r2 = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
      std::sort(vals.begin(), vals.end());
      const std::size_t mid = vals.size() / 2;
      pt.median_r2 = vals.size() % 2 ? vals[mid] : 0.5 * (vals[mid - 1] + vals[mid]);
      for (double t : thresholds) {
        const auto c = std::count_if(vals.begin(), vals.end(), [t](double v) { return v > t; });
        pt.frac_above.emplace_back(t, static_cast<double>(c) / static_cast<double>(vals.size()));
      }
    }
    curve.points.push_back(std::move(pt));
  }
  return curve;
}

json to_json(const R2Curve& c) {
  json pts = json::array();
  for (const auto& p : c.points) {
    json frac = json::array();
    for (const auto& [t, f] : p.frac_above) frac.push_back({{"threshold", t}, {"fraction", f}});
    pts.push_back({{"n", p.n},
                   {"targets", p.targets},
                   {"mean_r2", p.mean_r2},
                   {"median_r2", p.median_r2},
                   {"frac_above", std::move(frac)}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"kind", "r2_curve"},
              {"stream", to_string(c.stream)},
              {"points", std::move(pts)}};
}

std::string to_csv(const R2Curve& c) {
  std::ostringstream os;
  os.precision(17);
  os << "stream,n,targets,mean_r2,median_r2";
  if (!c.points.empty())
    for (const auto& [t, f] : c.points.front().frac_above) os << ",frac_above_" << t;
  os << '\n';
  for (const auto& p : c.points) {
    os << to_string(c.stream) << ',' << p.n << ',' << p.targets << ',' << p.mean_r2 << ','
       << p.median_r2;
    for (const auto& [t, f] : p.frac_above) os << ',' << f;
    os << '\n';
  }
  return os.str();
}

}  // namespace headlink
