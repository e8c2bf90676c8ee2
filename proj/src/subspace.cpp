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

#include "headlink/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "headlink/error.hpp"
#include "headlink/linalg.hpp"
#include "headlink/probe.hpp"

namespace headlink {

using nlohmann::json;

double OverlapReport::mean_od() const {
  if (layers.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& l : layers) sum += static_cast<double>(l.od);
  return sum / static_cast<double>(layers.size());
}

LayerOverlap layer_overlap(std::span<const Eigen::MatrixXd> heads, double rtol) {
  if (heads.empty()) throw Error(ErrorCode::InvalidArgument, "layer has no heads");
  const Eigen::Index rows = heads.front().rows();
  Eigen::Index cols = 0;
  for (const auto& h : heads) {
    if (h.rows() != rows) throw Error(ErrorCode::InvalidShape, "head projections differ in rows");
    cols += h.cols();
  }
  LayerOverlap out;
  Eigen::MatrixXd concat(rows, cols);
  Eigen::Index at = 0;
  Eigen::Index sum = 0;
  for (const auto& h : heads) {
    const Eigen::Index r = numerical_rank(h, rtol);
    out.head_ranks.push_back(r);
    sum += r;
    concat.middleCols(at, h.cols()) = h;
    at += h.cols();
  }
  out.concat_rank = numerical_rank(concat, rtol);
  out.od = sum - out.concat_rank;
  return out;
}

namespace {

template <typename HeadFn>
OverlapReport build_report(int layers, int heads_per_layer, Stream stream, double rtol, HeadFn&& head) {
  OverlapReport rep;
  rep.stream = stream;
  rep.rtol = rtol;
  for (int l = 0; l < layers; ++l) {
    std::vector<Eigen::MatrixXd> hs;
    for (int h = 0; h < heads_per_layer; ++h) hs.push_back(head(HeadId{l, h}));
    LayerOverlap lo = layer_overlap(hs, rtol);
    lo.layer = l;
    rep.layers.push_back(std::move(lo));
  }
  return rep;
}

}  // namespace

OverlapReport overlap_dimension(const ToyWeights& w, Stream stream, double rtol) {
  return build_report(w.num_layers, w.heads_per_layer, stream, rtol,
                      [&](HeadId h) { return w.projection(stream, h); });
}

OverlapReport overlap_dimension(const ProjectionWeights& w, Stream stream, double rtol) {
  return build_report(w.meta.num_layers, w.meta.heads_per_layer, stream, rtol,
                      [&](HeadId h) { return w.head(stream, h); });
}

std::vector<OdSweepPoint> od_sweep(std::span<const ToyConfig> configs, Stream stream, double rtol) {
  if (configs.empty()) throw Error(ErrorCode::InvalidArgument, "od_sweep needs at least one config");
  std::map<double, std::pair<std::size_t, double>> groups;
  for (const auto& cfg : configs) {
    const auto rep = overlap_dimension(build_aligned(cfg), stream, rtol);
    auto& g = groups[cfg.align_for(stream)];
    g.first += 1;
    g.second += rep.mean_od();
  }
  std::vector<OdSweepPoint> out;
  for (const auto& [align, g] : groups)
    out.push_back({align, g.first, g.second / static_cast<double>(g.first)});
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw Error(ErrorCode::InvalidShape, "spearman needs two equal-length series of length >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

json to_json(const OverlapReport& r) {
  json layers = json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"layer", l.layer},
                      {"head_ranks", l.head_ranks},
                      {"concat_rank", l.concat_rank},
                      {"od", l.od}});
  return json{{"schema_version", kSchemaVersion},
              {"kind", "overlap"},
              {"stream", to_string(r.stream)},
              {"rtol", r.rtol},
              {"mean_od", r.mean_od()},
              {"note", "absolute OD depends on the rank tolerance; compare trends only"},
              {"layers", std::move(layers)}};
}

json to_json(std::span<const OdSweepPoint> sweep, Stream stream) {
  json pts = json::array();
  std::vector<double> a, od;
  for (const auto& p : sweep) {
    pts.push_back({{"align", p.align}, {"configs", p.configs}, {"mean_od", p.mean_od}});
    a.push_back(p.align);
    od.push_back(p.mean_od);
  }
  json j{{"schema_version", kSchemaVersion},
         {"kind", "od_sweep"},
         {"stream", to_string(stream)},
         {"label", "toy alignment sweep; OD depends on the rank tolerance"},
         {"points", std::move(pts)}};
  if (a.size() >= 2) j["spearman"] = spearman(a, od);
  return j;
}

std::string to_csv(std::span<const OdSweepPoint> sweep, Stream stream) {
  std::ostringstream os;
  os.precision(17);
  os << "stream,align,configs,mean_od\n";
  for (const auto& p : sweep)
    os << to_string(stream) << ',' << p.align << ',' << p.configs << ',' << p.mean_od << '\n';
  return os.str();
}

}  // namespace headlink
