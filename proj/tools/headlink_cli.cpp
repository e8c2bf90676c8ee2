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

#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "headlink/activations.hpp"
#include "headlink/error.hpp"
#include "headlink/kvcache.hpp"
#include "headlink/predictor.hpp"
#include "headlink/probe.hpp"
#include "headlink/random.hpp"
#include "headlink/selection.hpp"
#include "headlink/subspace.hpp"
#include "headlink/theory.hpp"
#include "headlink/toy_transformer.hpp"

namespace {

using nlohmann::json;
using namespace headlink;

constexpr const char* kToolVersion = "0.3.0";

enum ExitCode { kOk = 0, kInternal = 1, kValidation = 2, kInfeasible = 3 };

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "json";
  int workers = 1;
};

// What a subcommand produced. `text` goes to --out (or stdout); `binary`
// requires --out.
struct Result {
  std::string text;
  std::vector<std::uint8_t> binary;
  std::vector<std::string> inputs;
  int exit_code = kOk;
};

struct Subcommand {
  CLI::App* app = nullptr;
  std::function<Result()> run;
};

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path + ": " + e.what());
  }
}

std::string csv_head(HeadId h) { return std::to_string(h.layer) + "," + std::to_string(h.head); }

template <typename T>
std::string num(T v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Seed for every random draw of the run");
  app->add_option("--out", c.out, "Output path (stdout when omitted, except binary outputs)");
  app->add_option("--format", c.format, "Report format")->check(CLI::IsMember({"json", "csv"}));
  app->add_option("--workers", c.workers, "Worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber);
}

// Toy configuration: an optional JSON file overlaid with explicit flags.
struct ToyFlags {
  std::string config_path;
  std::optional<int> layers, heads, head_dim, embed_dim, tokens, shared_dim;
  std::optional<double> align, align_k, align_q, align_v;
  bool rope = false;
  bool random = false;

  void add(CLI::App* app) {
    app->add_option("--toy-config", config_path, "Toy model JSON config");
    app->add_option("--layers", layers);
    app->add_option("--heads", heads);
    app->add_option("--head-dim", head_dim);
    app->add_option("--embed-dim", embed_dim);
    app->add_option("--tokens", tokens);
    app->add_option("--shared-dim", shared_dim);
    app->add_option("--align", align);
    app->add_option("--align-k", align_k);
    app->add_option("--align-q", align_q);
    app->add_option("--align-v", align_v);
    app->add_flag("--rope", rope, "Apply rotary embeddings to Q and K");
    app->add_flag("--random", random, "All-Gaussian weights, ignoring alignment");
  }

  ToyConfig resolve(std::uint64_t seed) const {
    ToyConfig c = config_path.empty() ? ToyConfig{} : toy_config_from_json(read_json(config_path));
    if (layers) c.num_layers = *layers;
    if (heads) c.heads_per_layer = *heads;
    if (head_dim) c.head_dim = *head_dim;
    if (embed_dim) c.embed_dim = *embed_dim;
    if (tokens) c.token_count = *tokens;
    if (shared_dim) c.shared_dim = *shared_dim;
    if (align) c.align = *align;
    if (align_k) c.align_k = *align_k;
    if (align_q) c.align_q = *align_q;
    if (align_v) c.align_v = *align_v;
    if (rope) c.rope = true;
    c.seed = seed;
    c.validate();
    return c;
  }
};

struct FitFlags {
  bool no_intercept = false;
  double ridge = 0.0;
  bool holdout = false;
  double holdout_fraction = 0.25;

  void add(CLI::App* app) {
    app->add_flag("--no-intercept", no_intercept);
    app->add_option("--ridge", ridge, "Ridge penalty (0 = minimum-norm least squares)")
        ->check(CLI::NonNegativeNumber);
    app->add_flag("--holdout", holdout, "Score on held-out tokens instead of the fit tokens");
    app->add_option("--holdout-fraction", holdout_fraction)->check(CLI::Range(0.0, 1.0));
  }

  FitSpec resolve(std::uint64_t seed) const {
    FitSpec f;
    f.fit.intercept = !no_intercept;
    f.fit.ridge_lambda = ridge;
    f.eval.holdout = holdout;
    f.eval.holdout_fraction = holdout_fraction;
    f.eval.seed = seed;
    return f;
  }
};

struct SelectFlags {
  SelectionParams p;
  void add(CLI::App* app) {
    app->add_option("--fraction", p.fraction, "Fraction of heads to reconstruct");
    app->add_option("--min-refs", p.min_refs, "References kept per target");
    app->add_option("--eps-tau", p.eps_tau);
    app->add_option("--max-iters", p.max_iters);
  }
};

std::vector<Stream> parse_streams(const std::string& list) {
  std::vector<Stream> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_stream(item));
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "no streams given");
  return out;
}

std::string report_csv(const std::map<CompressionMode, CompressionReport>& reports) {
  std::string s = "mode,stream,layer,head,mse,r2\n";
  for (const auto& [mode, r] : reports)
    for (const auto& h : r.heads)
      s += to_string(mode) + "," + to_string(h.stream) + "," + csv_head(h.head) + "," + num(h.mse) + "," +
           num(h.r2) + "\n";
  return s;
}

json manifest_json(const std::string& name, CLI::App* app, const Common& c, const Result& r,
                   double seconds) {
  json params = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    if (opt->get_name() == "--help" || opt->count() == 0) continue;
    const auto& res = opt->results();
    params[opt->get_name()] = res.size() == 1 ? json(res.front()) : json(res);
  }
  return json{{"tool", "headlink"},
              {"tool_version", kToolVersion},
              {"subcommand", name},
              {"parameters", std::move(params)},
              {"seed", c.seed},
              {"workers", c.workers},
              {"inputs", r.inputs},
              {"outputs", c.out.empty() ? json::array({"<stdout>"}) : json::array({c.out})},
              {"exit_code", r.exit_code},
              {"wall_time_seconds", seconds}};
}

void write_bytes(const std::string& path, const char* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path);
  out.write(data, static_cast<std::streamsize>(n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear predictability of attention heads and KV-cache compression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common common;
  std::vector<std::pair<std::string, Subcommand>> subs;
  auto add_sub = [&](const std::string& name, const std::string& desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    add_common(sub, common);
    subs.push_back({name, Subcommand{sub, {}}});
    return &subs.back().second;
  };

  // gen-toy
  ToyFlags toy;
  std::string weights_out;
  {
    auto* s = add_sub("gen-toy", "Run the toy attention stack and dump its Q/K/V activations");
    toy.add(s->app);
    s->app->add_option("--weights-out", weights_out, "Also write the projection weights");
    s->run = [&] {
      const ToyConfig cfg = toy.resolve(common.seed);
      const ToyWeights w = build(cfg, !toy.random);
      Result r;
      r.binary = encode_actv(forward(w, cfg, toy_inputs(cfg, mix_seed(common.seed, 1))));
      if (!weights_out.empty()) write_weights(w.to_projection_weights(cfg.meta()), weights_out);
      return r;
    };
  }

  // gen-synth
  struct {
    int layers = 2, heads = 4, head_dim = 8, embed_dim = 64, tokens = 256, group = 2;
    std::string kind = "gaussian", streams = "K,Q,V";
  } synth;
  {
    auto* s = add_sub("gen-synth", "Write synthetic activations with a known structure");
    s->app->add_option("--layers", synth.layers);
    s->app->add_option("--heads", synth.heads);
    s->app->add_option("--head-dim", synth.head_dim);
    s->app->add_option("--embed-dim", synth.embed_dim);
    s->app->add_option("--tokens", synth.tokens);
    s->app->add_option("--streams", synth.streams, "Comma-separated subset of K,Q,V");
    s->app->add_option("--kind", synth.kind)->check(CLI::IsMember({"gaussian", "shared-latent"}));
    s->app->add_option("--group-size", synth.group, "Heads per shared latent (shared-latent only)");
    s->run = [&] {
      ModelMeta m;
      m.model_name = "synthetic-" + synth.kind;
      m.num_layers = synth.layers;
      m.heads_per_layer = synth.heads;
      m.head_dim = synth.head_dim;
      m.embed_dim = synth.embed_dim;
      m.token_count = synth.tokens;
      m.source = Source::Synthetic;
      const auto streams = parse_streams(synth.streams);
      Result r;
      r.binary = encode_actv(synth.kind == "gaussian"
                                 ? gen_gaussian_activations(m, streams, common.seed)
                                 : gen_shared_latent_activations(m, streams, synth.group, common.seed));
      return r;
    };
  }

  // probe
  std::string in_path, stream_name = "K", constraint_name = "target_layer_ge_ref";
  FitFlags fit;
  {
    auto* s = add_sub("probe", "Fit every admissible head pair and write the R^2 graph");
    s->app->add_option("--in", in_path, "ACTV file")->required();
    s->app->add_option("--stream", stream_name);
    s->app->add_option("--constraint", constraint_name);
    fit.add(s->app);
    s->run = [&] {
      const auto acts = read_actv(in_path);
      const R2Graph g = probe_all(acts, parse_stream(stream_name), fit.resolve(common.seed),
                                  parse_constraint(constraint_name), common.workers);
      Result r;
      r.inputs = {in_path};
      if (common.format == "csv") {
        r.text = "ref_layer,ref_head,target_layer,target_head,r2,raw_r2\n";
        for (const auto& e : g.edges)
          r.text += csv_head(e.ref) + "," + csv_head(e.target) + "," + num(e.r2) + "," + num(e.raw_r2) + "\n";
      } else {
        r.text = dump(to_json(g));
      }
      return r;
    };
  }

  // stats
  std::string graph_path;
  std::vector<double> thresholds{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<int> windows{2, 4};
  {
    auto* s = add_sub("stats", "Descriptive statistics of an R^2 graph");
    s->app->add_option("--graph", graph_path, "Graph JSON from probe")->required();
    s->app->add_option("--thresholds", thresholds)->delimiter(',');
    s->app->add_option("--windows", windows, "Near-layer distances for the proximity split")->delimiter(',');
    s->run = [&] {
      const R2Graph g = graph_from_json(read_json(graph_path));
      const GraphStats st = graph_stats(g, thresholds, windows);
      Result r;
      r.inputs = {graph_path};
      if (common.format == "csv") {
        r.text = "statistic,value\n";
        r.text += "edge_count," + num(st.edge_count) + "\nmean," + num(st.mean) + "\nmedian," +
                  num(st.median) + "\nmin," + num(st.min) + "\nmax," + num(st.max) +
                  "\nbest_predictor_intra_frac," + num(st.best_predictor_intra_frac) +
                  "\ntop5_intra_frac," + num(st.top5_intra_frac) + "\n";
        for (const auto& [t, f] : st.frac_above) r.text += "frac_above_" + num(t) + "," + num(f) + "\n";
        for (const auto& p : st.proximity)
          r.text += "near_frac_le" + std::to_string(p.near_max) + "," + num(p.near_frac) + "\n";
      } else {
        r.text = dump(to_json(st));
      }
      return r;
    };
  }

  // sweep-n
  std::vector<int> ns{1, 2, 3, 4, 5};
  {
    auto* s = add_sub("sweep-n", "Predictor R^2 against the number of reference heads");
    s->app->add_option("--in", in_path, "ACTV file")->required();
    s->app->add_option("--graph", graph_path, "Graph JSON (probed on the fly when omitted)");
    s->app->add_option("--stream", stream_name);
    s->app->add_option("--n", ns, "Reference counts")->delimiter(',');
    s->app->add_option("--thresholds", thresholds)->delimiter(',');
    fit.add(s->app);
    s->run = [&] {
      const auto acts = read_actv(in_path);
      const Stream st = parse_stream(stream_name);
      const FitSpec spec = fit.resolve(common.seed);
      Result r;
      r.inputs = {in_path};
      R2Graph g;
      if (graph_path.empty()) {
        g = probe_all(acts, st, spec, EdgeConstraint::TargetLayerGeRef, common.workers);
      } else {
        g = graph_from_json(read_json(graph_path));
        r.inputs.push_back(graph_path);
      }
      const R2Curve c = sweep_n(acts, st, g, ns, spec, thresholds, common.workers);
      r.text = common.format == "csv" ? to_csv(c) : dump(to_json(c));
      return r;
    };
  }

  // select
  SelectFlags sel;
  bool debug_checks = false;
  {
    auto* s = add_sub("select", "Choose target heads to reconstruct from an R^2 graph");
    s->app->add_option("--graph", graph_path, "Graph JSON from probe")->required();
    sel.add(s->app);
    s->app->add_flag("--debug-checks", debug_checks);
    s->run = [&] {
      SelectionParams p = sel.p;
      p.debug_checks = debug_checks;
      const R2Graph g = graph_from_json(read_json(graph_path));
      const SelectionResult res = select_targets(g, p);
      Result r;
      r.inputs = {graph_path};
      if (common.format == "csv") {
        r.text = "target_layer,target_head,ref_layer,ref_head,rank\n";
        for (const auto& [t, refs] : res.refs)
          for (std::size_t i = 0; i < refs.size(); ++i)
            r.text += csv_head(t) + "," + csv_head(refs[i]) + "," + std::to_string(i) + "\n";
      } else {
        r.text = dump(to_json(res, p));
      }
      if (!res.feasible) {
        std::cerr << "selection infeasible: achieved_fraction=" << res.achieved_fraction
                  << " < f=" << p.fraction << "\n";
        r.exit_code = kInfeasible;
      }
      return r;
    };
  }

  // overlap
  std::string weights_path;
  double rtol = kWeightRankRtol;
  bool sweep = false;
  std::vector<double> aligns{0.0, 0.25, 0.5, 0.75, 1.0};
  int sweep_seeds = 10;
  {
    auto* s = add_sub("overlap", "Overlap dimension of per-layer head projections");
    s->app->add_option("--weights", weights_path, "Projection weights file (toy config otherwise)");
    s->app->add_option("--stream", stream_name);
    s->app->add_option("--rtol", rtol, "Relative singular-value cutoff for numerical rank");
    s->app->add_flag("--sweep", sweep, "Alignment sweep over seeded toy models");
    s->app->add_option("--aligns", aligns)->delimiter(',');
    s->app->add_option("--seeds", sweep_seeds)->check(CLI::PositiveNumber);
    toy.add(s->app);
    s->run = [&] {
      const Stream st = parse_stream(stream_name);
      Result r;
      if (sweep) {
        const ToyConfig base = toy.resolve(common.seed);
        std::vector<ToyConfig> cfgs;
        for (double a : aligns)
          for (int i = 0; i < sweep_seeds; ++i) {
            ToyConfig c = base;
            c.align = a;
            c.align_k = c.align_q = c.align_v = std::nullopt;
            c.seed = mix_seed(common.seed, static_cast<std::uint64_t>(i));
            cfgs.push_back(c);
          }
        const auto pts = od_sweep(cfgs, st, rtol);
        r.text = common.format == "csv" ? to_csv(pts, st) : dump(to_json(pts, st));
        return r;
      }
      OverlapReport rep;
      if (!weights_path.empty()) {
        rep = overlap_dimension(read_weights(weights_path), st, rtol);
        r.inputs = {weights_path};
      } else {
        const ToyConfig cfg = toy.resolve(common.seed);
        rep = overlap_dimension(build(cfg, !toy.random), st, rtol);
      }
      if (common.format == "csv") {
        r.text = "layer,od,concat_rank\n";
        for (const auto& l : rep.layers)
          r.text += std::to_string(l.layer) + "," + std::to_string(l.od) + "," + std::to_string(l.concat_rank) + "\n";
      } else {
        r.text = dump(to_json(rep));
      }
      return r;
    };
  }

  // theory-check
  int theory_m = 128, theory_k = 32;
  std::size_t trials = 1000;
  std::string dist = "gaussian";
  {
    auto* s = add_sub("theory-check", "Monte Carlo check of the random-projection residual bound");
    s->app->add_option("--m", theory_m);
    s->app->add_option("--k", theory_k);
    s->app->add_option("--trials", trials);
    s->app->add_option("--dist", dist);
    s->run = [&] {
      const TheoryReport rep =
          run_experiment(theory_m, theory_k, trials, common.seed, common.workers, parse_distribution(dist));
      Result r;
      if (common.format == "csv") {
        r.text = "m,k,trials,distribution,mean,min,max,stddev,threshold,violations,expected_mean\n";
        r.text += std::to_string(rep.m) + "," + std::to_string(rep.k) + "," + num(rep.trials) + "," +
                  to_string(rep.dist) + "," + num(rep.mean) + "," + num(rep.min) + "," + num(rep.max) + "," +
                  num(rep.stddev) + "," + num(rep.threshold) + "," + num(rep.violations) + "," +
                  num(rep.expected_mean) + "\n";
      } else {
        r.text = dump(to_json(rep));
      }
      std::cerr << (rep.violations == 0 ? "PASS" : "FAIL") << ": " << rep.violations << " of "
                << rep.trials << " trials below " << rep.threshold << ", mean " << rep.mean
                << " (expected " << rep.expected_mean << ")\n";
      return r;
    };
  }

  // calibrate
  std::string mode_name = "KV";
  int bytes_per_element = 4;
  {
    auto* s = add_sub("calibrate", "Probe, select and fit predictors; writes a plan bundle");
    s->app->add_option("--in", in_path, "Calibration ACTV file")->required();
    s->app->add_option("--mode", mode_name, "K_only, V_only or KV");
    s->app->add_option("--bytes-per-element", bytes_per_element)->check(CLI::PositiveNumber);
    sel.add(s->app);
    fit.add(s->app);
    s->run = [&] {
      if (common.out.empty())
        throw Error(ErrorCode::InvalidArgument, "calibrate writes a binary plan bundle; --out is required");
      const auto acts = read_actv(in_path);
      CompressionPlan plan =
          calibrate(acts, sel.p, parse_mode(mode_name), fit.resolve(common.seed), common.workers);
      plan.bytes_per_element = bytes_per_element;
      Result r;
      r.inputs = {in_path};
      r.binary = encode_plan(plan);
      std::cout << dump(plan_summary_json(plan));
      return r;
    };
  }

  // simulate
  std::string plan_path;
  std::size_t t_eval = 4096;
  {
    auto* s = add_sub("simulate", "Replay a plan with a reference-only cache");
    s->app->add_option("--plan", plan_path, "Plan bundle from calibrate")->required();
    s->app->add_option("--in", in_path, "ACTV file to replay (toy decode otherwise)");
    s->app->add_option("--t-eval", t_eval, "Horizon for memory accounting; caps replayed tokens")
        ->check(CLI::PositiveNumber);
    toy.add(s->app);
    s->run = [&] {
      const CompressionPlan plan = read_plan(plan_path);
      Result r;
      r.inputs = {plan_path};
      CompressionReport rep;
      if (!in_path.empty()) {
        rep = simulate(plan, read_actv(in_path), t_eval);
        r.inputs.push_back(in_path);
      } else {
        const ToyConfig cfg = toy.resolve(common.seed);
        rep = simulate(plan, build(cfg, !toy.random), cfg, toy_inputs(cfg, mix_seed(common.seed, 2)), t_eval);
      }
      r.text = common.format == "csv" ? report_csv({{rep.mode, rep}}) : dump(to_json(rep));
      return r;
    };
  }

  // compare-modes
  std::string eval_path;
  {
    auto* s = add_sub("compare-modes", "K-only, V-only and K+V compression side by side");
    s->app->add_option("--in", in_path, "Calibration ACTV file (toy model otherwise)");
    s->app->add_option("--eval", eval_path, "ACTV file to replay (defaults to --in)");
    s->app->add_option("--t-eval", t_eval)->check(CLI::PositiveNumber);
    sel.add(s->app);
    fit.add(s->app);
    toy.add(s->app);
    s->run = [&] {
      Result r;
      const FitSpec spec = fit.resolve(common.seed);
      std::map<CompressionMode, CompressionReport> reps;
      if (!in_path.empty()) {
        const auto calib = read_actv(in_path);
        r.inputs = {in_path};
        if (!eval_path.empty()) r.inputs.push_back(eval_path);
        reps = eval_path.empty() ? mode_comparison(calib, calib, sel.p, spec, t_eval, common.workers)
                                 : mode_comparison(calib, read_actv(eval_path), sel.p, spec, t_eval, common.workers);
      } else {
        const ToyConfig cfg = toy.resolve(common.seed);
        const ToyWeights w = build(cfg, !toy.random);
        reps = mode_comparison(w, cfg, toy_inputs(cfg, mix_seed(common.seed, 1)),
                               toy_inputs(cfg, mix_seed(common.seed, 2)), sel.p, spec, t_eval, common.workers);
      }
      if (common.format == "csv") {
        r.text = report_csv(reps);
      } else {
        json modes = json::object();
        for (const auto& [m, rep] : reps) modes[to_string(m)] = to_json(rep);
        r.text = dump(json{{"schema_version", kSchemaVersion}, {"kind", "mode_comparison"}, {"modes", modes}});
      }
      return r;
    };
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  for (auto& [name, sub] : subs) {
    if (!sub.app->parsed()) continue;
    const auto start = std::chrono::steady_clock::now();
    Result r;
    try {
      r = sub.run();
    } catch (const Error& e) {
      std::cerr << "headlink " << name << ": " << e.what() << "\n";
      return e.code() == ErrorCode::SelectionInfeasible ? kInfeasible : kValidation;
    } catch (const std::exception& e) {
      std::cerr << "headlink " << name << ": internal error: " << e.what() << "\n";
      return kInternal;
    }

    try {
      if (!r.binary.empty()) {
        if (common.out.empty()) throw Error(ErrorCode::InvalidArgument, name + " needs --out for its binary output");
        write_bytes(common.out, reinterpret_cast<const char*>(r.binary.data()), r.binary.size());
      } else if (common.out.empty()) {
        std::cout << r.text;
      } else {
        write_bytes(common.out, r.text.data(), r.text.size());
      }
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const json manifest = manifest_json(name, sub.app, common, r, seconds);
      if (common.out.empty()) {
        std::cerr << manifest.dump() << "\n";
      } else {
        const std::string text = dump(manifest);
        write_bytes(common.out + ".manifest.json", text.data(), text.size());
      }
    } catch (const Error& e) {
      std::cerr << "headlink " << name << ": " << e.what() << "\n";
      return kValidation;
    }
    return r.exit_code;
  }
  return kInternal;
}
