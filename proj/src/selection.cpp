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

#include "headlink/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "headlink/error.hpp"

namespace headlink {

using nlohmann::json;

void SelectionParams::validate() const {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "fraction f must lie in [0, 1]");
  if (min_refs < 1) throw Error(ErrorCode::InvalidArgument, "minimum references m must be >= 1");
  if (!(eps_tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "eps_tau must be > 0");
  if (max_iters < 1) throw Error(ErrorCode::InvalidArgument, "max_iters must be >= 1");
}

bool SelectionResult::is_target(HeadId h) const {
  return std::binary_search(targets.begin(), targets.end(), h);
}

std::size_t required_targets(std::size_t node_count, double fraction) {
  const double want = fraction * static_cast<double>(node_count);
  return static_cast<std::size_t>(std::ceil(want - 1e-9));
}

namespace {

struct InEdge {
  int from;
  double w;
};

// Thresholded adjacency over node indices (layer * H + head).
struct Subgraph {
  std::vector<std::vector<InEdge>> in;
  std::vector<std::vector<int>> out;
};

Subgraph threshold(const R2Graph& g, double tau) {
  const int n = g.meta.num_heads();
  Subgraph s{std::vector<std::vector<InEdge>>(n), std::vector<std::vector<int>>(n)};
  for (const auto& e : g.edges) {
    if (e.r2 < tau) continue;
    const int from = g.meta.head_index(e.ref), to = g.meta.head_index(e.target);
    s.in[to].push_back({from, e.r2});
    s.out[from].push_back(to);
  }
  return s;
}

bool valid_by_recount(const Subgraph& s, const std::vector<char>& in_t, int candidate, int m) {
  std::vector<char> member = in_t;
  member[candidate] = 1;
  for (std::size_t v = 0; v < member.size(); ++v) {
    if (!member[v]) continue;
    int free_refs = 0;
    for (const auto& e : s.in[v])
      if (!member[e.from]) ++free_refs;
    if (free_refs < m) return false;
  }
  return true;
}

std::vector<HeadId> to_heads(const R2Graph& g, const std::vector<int>& idx) {
  std::vector<HeadId> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(g.meta.head_at(i));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<HeadId> greedy_targets(const R2Graph& g, double tau, const SelectionParams& p,
                                   std::size_t cap) {
  const int n = g.meta.num_heads();
  const int m = p.min_refs;
  const Subgraph s = threshold(g, tau);

  std::vector<std::pair<double, int>> order;
  for (int v = 0; v < n; ++v) {
    if (static_cast<int>(s.in[v].size()) < m) continue;
    std::vector<double> w;
    for (const auto& e : s.in[v]) w.push_back(e.w);
    std::partial_sort(w.begin(), w.begin() + m, w.end(), std::greater<>());
    order.emplace_back(std::accumulate(w.begin(), w.begin() + m, 0.0), v);
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  std::vector<char> in_t(n, 0);
  std::vector<int> free_in(n);
  for (int v = 0; v < n; ++v) free_in[v] = static_cast<int>(s.in[v].size());
  std::vector<int> chosen;

  // Validity only degrades as T grows, so one ordered pass suffices.
  for (const auto& [score, c] : order) {
    if (chosen.size() >= cap) break;
    bool ok = free_in[c] >= m;
    for (int t : s.out[c])
      if (ok && in_t[t] && free_in[t] - 1 < m) ok = false;
    if (p.debug_checks && ok != valid_by_recount(s, in_t, c, m))
      throw Error(ErrorCode::InvalidArgument,
                  "incremental validity disagrees with recount at " + to_string(g.meta.head_at(c)));
    if (!ok) continue;
    in_t[c] = 1;
    chosen.push_back(c);
    for (int t : s.out[c]) --free_in[t];
  }
  return to_heads(g, chosen);
}

SelectionResult select_targets(const R2Graph& g, const SelectionParams& p) {
  p.validate();
  if (g.edges.empty() || g.meta.num_heads() == 0)
    throw Error(ErrorCode::EmptyGraph, "graph has no edges");

  const std::size_t n = static_cast<std::size_t>(g.meta.num_heads());
  const double want = p.fraction * static_cast<double>(n);
  SelectionResult r;
  r.node_count = n;
  r.required = required_targets(n, p.fraction);

  struct Pass {
    double tau;
    std::vector<HeadId> targets;
  };
  std::vector<Pass> passes;
  passes.reserve(static_cast<std::size_t>(p.max_iters) + 1);
  auto run = [&](double tau) -> const Pass& {
    passes.push_back({tau, greedy_targets(g, tau, p, r.required)});
    const auto& pass = passes.back();
    r.trace.push_back({tau, pass.targets.size(),
                       static_cast<double>(pass.targets.size()) / static_cast<double>(n)});
    return pass;
  };

  const Pass& base = run(0.0);
  r.feasible = static_cast<double>(base.targets.size()) >= want - 1e-9;
  if (r.feasible) {
    double low = 0.0, high = 1.0;
    for (int it = 0; it < p.max_iters && high - low >= p.eps_tau; ++it) {
      const double tau = 0.5 * (low + high);
      const Pass& pass = run(tau);
      if (static_cast<double>(pass.targets.size()) < want - 1e-9)
        high = tau;
      else
        low = tau;
    }
  }

  // Largest tau that met the goal; otherwise the largest selection seen.
  const Pass* best = &passes.front();
  for (const auto& pass : passes) {
    const bool met = static_cast<double>(pass.targets.size()) >= want - 1e-9;
    const bool best_met = static_cast<double>(best->targets.size()) >= want - 1e-9;
    if (met != best_met) {
      if (met) best = &pass;
      continue;
    }
    if (!met && pass.targets.size() != best->targets.size()) {
      if (pass.targets.size() > best->targets.size()) best = &pass;
      continue;
    }
    if (pass.tau > best->tau) best = &pass;
  }

  r.tau = best->tau;
  r.targets = best->targets;
  r.achieved_fraction = static_cast<double>(r.targets.size()) / static_cast<double>(n);
  for (HeadId t : r.targets) {
    std::vector<Edge> avail;
    for (const auto& e : ranked_in_edges(g, t))
      if (e.r2 >= r.tau && !r.is_target(e.ref)) avail.push_back(e);
    std::vector<HeadId> refs;
    for (std::size_t i = 0; i < avail.size() && static_cast<int>(i) < p.min_refs; ++i)
      refs.push_back(avail[i].ref);
    r.refs[t] = std::move(refs);
  }
  return r;
}

std::vector<std::string> verify_selection(const R2Graph& g, const SelectionResult& r,
                                          const SelectionParams& p) {
  std::vector<std::string> v;
  const std::size_t n = static_cast<std::size_t>(g.meta.num_heads());
  std::set<HeadId> targets;
  for (HeadId t : r.targets) {
    if (!g.meta.contains(t)) v.push_back("target " + to_string(t) + " is not a graph node");
    if (!targets.insert(t).second) v.push_back("target " + to_string(t) + " listed twice");
  }
  if (r.refs.size() != targets.size())
    v.push_back("reference map covers " + std::to_string(r.refs.size()) + " heads but there are " +
                std::to_string(targets.size()) + " targets");

  for (HeadId t : targets) {
    auto it = r.refs.find(t);
    if (it == r.refs.end()) {
      v.push_back("target " + to_string(t) + " has no reference list");
      continue;
    }
    const auto& refs = it->second;
    std::set<HeadId> seen;
    double weakest = 2.0;
    for (HeadId ref : refs) {
      if (!seen.insert(ref).second)
        v.push_back("target " + to_string(t) + " lists reference " + to_string(ref) + " twice");
      if (targets.count(ref))
        v.push_back("reference " + to_string(ref) + " of target " + to_string(t) +
                    " is itself a target");
      if (g.constraint == EdgeConstraint::TargetLayerGeRef && ref.layer > t.layer)
        v.push_back("reference " + to_string(ref) + " lies after target " + to_string(t));
      const auto w = g.weight(ref, t);
      if (!w) {
        v.push_back("no edge " + to_string(ref) + " -> " + to_string(t));
      } else {
        if (*w < r.tau)
          v.push_back("edge " + to_string(ref) + " -> " + to_string(t) + " is below tau");
        weakest = std::min(weakest, *w);
      }
    }
    if (r.feasible && static_cast<int>(refs.size()) != p.min_refs)
      v.push_back("target " + to_string(t) + " keeps " + std::to_string(refs.size()) +
                  " references, expected " + std::to_string(p.min_refs));
    if (static_cast<int>(refs.size()) > p.min_refs)
      v.push_back("target " + to_string(t) + " was not pruned to m references");
    // Pruning must keep the strongest eligible references.
    for (const auto& e : g.in_edges(t)) {
      if (e.r2 < r.tau || targets.count(e.ref) || seen.count(e.ref)) continue;
      if (static_cast<int>(refs.size()) < p.min_refs || e.r2 > weakest)
        v.push_back("eligible reference " + to_string(e.ref) + " of " + to_string(t) +
                    " was pruned in favor of a weaker one");
    }
  }

  const double achieved = n ? static_cast<double>(targets.size()) / static_cast<double>(n) : 0.0;
  if (std::abs(achieved - r.achieved_fraction) > 1e-12)
    v.push_back("achieved_fraction does not match the target count");
  if (r.feasible && static_cast<double>(targets.size()) < p.fraction * static_cast<double>(n) - 1e-9)
    v.push_back("result claims feasibility with too few targets");
  if (targets.size() > required_targets(n, p.fraction))
    v.push_back("more targets than ceil(f * |V|)");
  return v;
}

json to_json(const SelectionResult& r, const SelectionParams& p) {
  json targets = json::array();
  for (HeadId t : r.targets) targets.push_back(to_json(t));
  json refs = json::array();
  for (const auto& [t, list] : r.refs) {
    json jl = json::array();
    for (HeadId h : list) jl.push_back(to_json(h));
    refs.push_back({{"target", to_json(t)}, {"refs", std::move(jl)}});
  }
  json trace = json::array();
  for (const auto& s : r.trace)
    trace.push_back({{"tau", s.tau}, {"targets", s.targets}, {"achieved_fraction", s.achieved_fraction}});
  return json{{"schema_version", kSchemaVersion},
              {"kind", "selection"},
              {"params",
               {{"fraction", p.fraction},
                {"min_refs", p.min_refs},
                {"eps_tau", p.eps_tau},
                {"max_iters", p.max_iters}}},
              {"node_count", r.node_count},
              {"required", r.required},
              {"tau", r.tau},
              {"feasible", r.feasible},
              {"achieved_fraction", r.achieved_fraction},
              {"targets", std::move(targets)},
              {"refs", std::move(refs)},
              {"trace", std::move(trace)}};
}

SelectionResult selection_from_json(const json& j) {
  try {
    SelectionResult r;
    r.node_count = j.at("node_count").get<std::size_t>();
    r.required = j.at("required").get<std::size_t>();
    r.tau = j.at("tau").get<double>();
    r.feasible = j.at("feasible").get<bool>();
    r.achieved_fraction = j.at("achieved_fraction").get<double>();
    for (const auto& t : j.at("targets")) r.targets.push_back(head_from_json(t));
    std::sort(r.targets.begin(), r.targets.end());
    for (const auto& e : j.at("refs")) {
      std::vector<HeadId> list;
      for (const auto& h : e.at("refs")) list.push_back(head_from_json(h));
      r.refs[head_from_json(e.at("target"))] = std::move(list);
    }
    for (const auto& s : j.value("trace", json::array()))
      r.trace.push_back({s.at("tau").get<double>(), s.at("targets").get<std::size_t>(),
                         s.at("achieved_fraction").get<double>()});
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("selection JSON: ") + e.what());
  }
}

}  // namespace headlink
