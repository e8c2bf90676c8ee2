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

#include "headlink/error.hpp"
#include "headlink/selection.hpp"
#include "fuzz_graphs.hpp"
#include "oracles.hpp"

using namespace headlink;

TEST_CASE("required_targets rounds up") {
  CHECK(required_targets(8, 0.5) == 4);
  CHECK(required_targets(9, 0.5) == 5);
  CHECK(required_targets(10, 0.0) == 0);
  CHECK(required_targets(10, 0.3) == 3);
  CHECK(required_targets(7, 1.0) == 7);
}

TEST_CASE("dense graph: half the heads become targets with m references each") {
  for (int layers : {2, 3}) {
    CAPTURE(layers);
    const R2Graph g = fuzz::dense_graph(layers, 4, 0.9);
    SelectionParams p;
    p.fraction = 0.5;
    p.min_refs = 2;
    const auto r = select_targets(g, p);
    const std::size_t n = static_cast<std::size_t>(g.meta.num_heads());
    CHECK(r.feasible);
    CHECK(r.targets.size() == n / 2);
    for (const auto& [t, refs] : r.refs) CHECK(refs.size() == 2);
    CHECK(verify_selection(g, r, p).empty());
    CHECK(oracle::feasible_by_enumeration(g, r.tau, 2, n / 2));
    // all weights equal, so the binary search drives tau up to the edge weight
    CHECK(r.tau <= 0.9);
    CHECK(r.tau > 0.9 - 2 * p.eps_tau);
  }
}

TEST_CASE("f = 0 selects nothing and is feasible") {
  const R2Graph g = fuzz::dense_graph(2, 3, 0.5);
  SelectionParams p;
  p.fraction = 0.0;
  const auto r = select_targets(g, p);
  CHECK(r.feasible);
  CHECK(r.targets.empty());
  CHECK(r.refs.empty());
  CHECK(verify_selection(g, r, p).empty());
}

TEST_CASE("in-degree below m is infeasible at every threshold") {
  // chain: each head has exactly one in-neighbour
  R2Graph g = fuzz::dense_graph(1, 4, 0.0);
  g.edges = {{{0, 0}, {0, 1}, 0.9, 0.9}, {{0, 1}, {0, 2}, 0.9, 0.9}, {{0, 2}, {0, 3}, 0.9, 0.9}};
  SelectionParams p;
  p.fraction = 0.5;
  p.min_refs = 2;
  const auto r = select_targets(g, p);
  CHECK_FALSE(r.feasible);
  CHECK(r.targets.empty());
  CHECK(r.achieved_fraction == 0.0);
  CHECK(verify_selection(g, r, p).empty());
}

TEST_CASE("verify_selection flags a reference that is also a target") {
  const R2Graph g = fuzz::dense_graph(2, 4, 0.9);
  SelectionParams p;
  auto r = select_targets(g, p);
  REQUIRE(r.targets.size() >= 2);
  const HeadId a = r.targets[0], b = r.targets[1];
  // b sits in a later or equal layer; make a reference b
  auto& refs = r.refs[b];
  refs.back() = a;
  const auto v = verify_selection(g, r, p);
  bool named = false;
  for (const auto& msg : v)
    named |= msg.find(to_string(a)) != std::string::npos && msg.find(to_string(b)) != std::string::npos &&
             msg.find("itself a target") != std::string::npos;
  CHECK(named);
}

TEST_CASE("verify_selection catches other tampering") {
  const R2Graph g = fuzz::dense_graph(2, 4, 0.9);
  SelectionParams p;
  const auto good = select_targets(g, p);

  auto extra = good;
  extra.targets.push_back({1, 3});
  std::sort(extra.targets.begin(), extra.targets.end());
  CHECK_FALSE(verify_selection(g, extra, p).empty());

  auto frac = good;
  frac.achieved_fraction += 0.1;
  CHECK_FALSE(verify_selection(g, frac, p).empty());

  auto unpruned = good;
  unpruned.refs.begin()->second.pop_back();
  CHECK_FALSE(verify_selection(g, unpruned, p).empty());
}

TEST_CASE("select_targets: errors and parameters") {
  R2Graph empty = fuzz::dense_graph(1, 2, 0.5);
  empty.edges.clear();
  try {
    select_targets(empty, SelectionParams{});
    FAIL("expected EmptyGraph");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyGraph);
  }
  SelectionParams bad;
  bad.fraction = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = SelectionParams{};
  bad.min_refs = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("fuzzed graphs: no contract violations, debug recount agrees") {
  std::size_t feasible = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    CAPTURE(seed);
    const R2Graph g = fuzz::random_graph(seed);
    if (g.edges.empty()) continue;
    SelectionParams p;
    p.fraction = 0.25 + 0.05 * static_cast<double>(seed % 6);
    p.min_refs = 1 + static_cast<int>(seed % 3);
    p.debug_checks = true;
    const auto r = select_targets(g, p);
    const auto v = verify_selection(g, r, p);
    CHECK_MESSAGE(v.empty(), (v.empty() ? "" : v.front()));
    feasible += r.feasible;

    SelectionParams plain = p;
    plain.debug_checks = false;
    CHECK(to_json(select_targets(g, plain), plain) == to_json(r, plain));
  }
  CHECK(feasible > 20);
}

TEST_CASE("greedy feasibility against exhaustive enumeration") {
  // The greedy pass is sound: whatever it returns is a valid target set.
  // Completeness is measured, not assumed.
  std::size_t checked = 0, agree = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const R2Graph g = fuzz::random_graph(seed);
    SelectionParams p;
    p.fraction = 0.5;
    p.min_refs = 1 + static_cast<int>(seed % 2);
    const std::size_t need = required_targets(static_cast<std::size_t>(g.meta.num_heads()), p.fraction);
    for (int i = 0; i < 10; ++i) {
      const double tau = 0.1 * i;
      const auto picked = greedy_targets(g, tau, p, need);
      const bool greedy_ok = picked.size() >= need;
      const bool exact_ok = oracle::feasible_by_enumeration(g, tau, p.min_refs, need);
      if (greedy_ok) CHECK(exact_ok);
      ++checked;
      agree += greedy_ok == exact_ok;
    }
  }
  MESSAGE("greedy matched enumeration on " << agree << " of " << checked << " (graph, tau) pairs");
  CHECK(agree * 10 >= checked * 9);
}

TEST_CASE("trace: achieved fraction never rises with tau on the dense example") {
  const R2Graph g = fuzz::dense_graph(3, 4, 0.9);
  SelectionParams p;
  const auto r = select_targets(g, p);
  auto trace = r.trace;
  std::sort(trace.begin(), trace.end(), [](const auto& a, const auto& b) { return a.tau < b.tau; });
  for (std::size_t i = 1; i < trace.size(); ++i)
    CHECK(trace[i].achieved_fraction <= trace[i - 1].achieved_fraction);
}

TEST_CASE("selection JSON round trip") {
  const R2Graph g = fuzz::random_graph(7);
  SelectionParams p;
  p.min_refs = 1;
  const auto r = select_targets(g, p);
  const auto j = to_json(r, p);
  const auto back = selection_from_json(j);
  CHECK(to_json(back, p) == j);
  CHECK_THROWS_AS(selection_from_json(nlohmann::json{{"targets", 3}}), Error);
}

TEST_CASE("trace monotonicity on fuzzed graphs") {
  std::size_t graphs = 0, non_monotone = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const R2Graph g = fuzz::random_graph(seed);
    if (g.edges.empty()) continue;
    SelectionParams p;
    p.min_refs = 1 + static_cast<int>(seed % 2);
    auto trace = select_targets(g, p).trace;
    std::sort(trace.begin(), trace.end(), [](const auto& a, const auto& b) { return a.tau < b.tau; });
    bool ok = true;
    for (std::size_t i = 1; i < trace.size(); ++i) ok &= trace[i].achieved_fraction <= trace[i - 1].achieved_fraction;
    ++graphs;
    non_monotone += !ok;
  }
  CHECK(graphs > 150);
  CHECK(non_monotone == 0);
}
