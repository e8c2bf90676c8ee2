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

#include "headlink/kvcache.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "headlink/error.hpp"
#include "headlink/linalg.hpp"
#include "headlink/parallel.hpp"

namespace headlink {

using nlohmann::json;

std::string to_string(CompressionMode m) {
  switch (m) {
    case CompressionMode::KOnly: return "K_only";
    case CompressionMode::VOnly: return "V_only";
    case CompressionMode::KV: return "KV";
  }
  return "?";
}

CompressionMode parse_mode(const std::string& s) {
  if (s == "K_only" || s == "k_only" || s == "k-only" || s == "K") return CompressionMode::KOnly;
  if (s == "V_only" || s == "v_only" || s == "v-only" || s == "V") return CompressionMode::VOnly;
  if (s == "KV" || s == "kv") return CompressionMode::KV;
  throw Error(ErrorCode::InvalidArgument, "unknown compression mode '" + s + "'");
}

std::vector<Stream> compressed_streams(CompressionMode m) {
  switch (m) {
    case CompressionMode::KOnly: return {Stream::K};
    case CompressionMode::VOnly: return {Stream::V};
    case CompressionMode::KV: return {Stream::K, Stream::V};
  }
  return {};
}

const StreamPlan* CompressionPlan::find(Stream s) const {
  for (const auto& sp : streams)
    if (sp.stream == s) return &sp;
  return nullptr;
}

std::size_t CompressionPlan::predictor_weight_count() const {
  std::size_t n = 0;
  for (const auto& sp : streams)
    for (const auto& [t, p] : sp.predictors) n += static_cast<std::size_t>(p.weights.size());
  return n;
}

void CompressionPlan::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::PlanMismatch, msg); };
  if (bytes_per_element < 1) fail("bytes_per_element must be >= 1");
  const auto want = compressed_streams(mode);
  if (streams.size() != want.size()) fail("plan streams do not match mode " + to_string(mode));
  for (std::size_t i = 0; i < want.size(); ++i)
    if (streams[i].stream != want[i]) fail("plan streams do not match mode " + to_string(mode));

  const Eigen::Index dh = meta.head_dim;
  for (const auto& sp : streams) {
    const auto& sel = sp.selection;
    const std::string tag = to_string(sp.stream) + " stream: ";
    if (sp.predictors.size() != sel.targets.size())
      fail(tag + std::to_string(sel.targets.size()) + " targets but " +
           std::to_string(sp.predictors.size()) + " predictors");
    for (HeadId t : sel.targets) {
      auto it = sp.predictors.find(t);
      if (it == sp.predictors.end()) fail(tag + "target " + to_string(t) + " has no predictor");
      const auto& p = it->second;
      auto rit = sel.refs.find(t);
      if (rit == sel.refs.end() || rit->second != p.refs)
        fail(tag + "predictor refs for " + to_string(t) + " differ from the selection");
      if (p.stream != sp.stream || p.target != t) fail(tag + "predictor labelled for another head");
      for (HeadId r : p.refs) {
        if (!meta.contains(r)) fail(tag + "reference " + to_string(r) + " outside the model");
        if (sel.is_target(r))
          fail(tag + "reference " + to_string(r) + " of " + to_string(t) + " is itself reconstructed");
        if (r.layer > t.layer)
          fail(tag + "reference " + to_string(r) + " sits above target " + to_string(t));
      }
      const Eigen::Index rows = static_cast<Eigen::Index>(p.refs.size()) * dh + (p.intercept ? 1 : 0);
      if (p.weights.rows() != rows || p.weights.cols() != dh)
        fail(tag + "predictor for " + to_string(t) + " has the wrong weight shape");
    }
  }
}

// Calibration -----------------------------------------------------------------

namespace {

StreamPlan empty_stream_plan(Stream s, const ModelMeta& meta) {
  StreamPlan sp;
  sp.stream = s;
  sp.selection.node_count = static_cast<std::size_t>(meta.num_heads());
  sp.selection.feasible = true;
  return sp;
}

}  // namespace

CompressionPlan calibrate(const ActivationSet& calib, const SelectionParams& p, CompressionMode mode,
                          const FitSpec& fit, int workers) {
  p.validate();
  CompressionPlan plan;
  plan.mode = mode;
  plan.meta = calib.meta();
  plan.params = p;
  plan.fit = fit;
  for (Stream s : compressed_streams(mode)) {
    if (!calib.has(s))
      throw Error(ErrorCode::MissingStream, "calibration set has no " + to_string(s) + " stream");
    if (required_targets(static_cast<std::size_t>(plan.meta.num_heads()), p.fraction) == 0) {
      plan.streams.push_back(empty_stream_plan(s, plan.meta));
      continue;
    }
    const R2Graph g = probe_all(calib, s, fit, EdgeConstraint::TargetLayerGeRef, workers);
    SelectionResult sel = select_targets(g, p);
    if (!sel.feasible)
      throw Error(ErrorCode::SelectionInfeasible,
                  to_string(s) + " stream: selection reached achieved_fraction=" +
                      std::to_string(sel.achieved_fraction) + " of f=" + std::to_string(p.fraction));

    std::vector<LinearPredictor> fitted(sel.targets.size());
    parallel_for(sel.targets.size(), workers, [&](std::size_t i) {
      const HeadId t = sel.targets[i];
      fitted[i] = fit_predictor(calib, s, t, sel.refs.at(t), fit);
    });
    StreamPlan sp;
    sp.stream = s;
    sp.selection = std::move(sel);
    for (auto& lp : fitted) sp.predictors.emplace(lp.target, std::move(lp));
    plan.streams.push_back(std::move(sp));
  }
  plan.validate();
  return plan;
}

MemoryAccounting memory_accounting(const CompressionPlan& plan, std::size_t t_eval) {
  if (t_eval < 1) throw Error(ErrorCode::InvalidArgument, "T_eval must be >= 1");
  const std::size_t per_head =
      t_eval * static_cast<std::size_t>(plan.meta.head_dim) * static_cast<std::size_t>(plan.bytes_per_element);
  const std::size_t heads = static_cast<std::size_t>(plan.meta.num_heads());
  std::size_t stored_heads = 2 * heads;
  for (const auto& sp : plan.streams) stored_heads -= sp.selection.targets.size();

  MemoryAccounting m;
  m.t_eval = t_eval;
  m.full_bytes = 2 * heads * per_head;
  m.stored_cache_bytes = stored_heads * per_head;
  m.predictor_bytes = plan.predictor_overhead_bytes();
  m.ratio = static_cast<double>(m.stored_cache_bytes + m.predictor_bytes) /
            static_cast<double>(m.full_bytes);
  return m;
}

// Simulation ------------------------------------------------------------------

namespace {

// Decode-time cache holding reference heads only. Reading a head that the
// plan reconstructs, or a token not yet appended, throws PlanMismatch.
class ReferenceCache {
 public:
  ReferenceCache(const CompressionPlan& plan, std::size_t tokens) : plan_(plan) {
    const int n = plan.meta.num_heads();
    for (Stream s : {Stream::K, Stream::V}) {
      const StreamPlan* sp = plan.find(s);
      auto& rows = store_[s];
      rows.resize(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        if (sp && sp->is_target(plan.meta.head_at(i))) continue;
        rows[static_cast<std::size_t>(i)].resize(static_cast<Eigen::Index>(tokens), plan.meta.head_dim);
      }
      filled_[s].assign(static_cast<std::size_t>(n), 0);
    }
  }

  bool stores(Stream s, HeadId h) const {
    const StreamPlan* sp = plan_.find(s);
    return !(sp && sp->is_target(h));
  }

  void append(Stream s, HeadId h, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    if (!stores(s, h))
      throw Error(ErrorCode::PlanMismatch, "attempt to cache reconstructed head " + to_string(h));
    const auto i = static_cast<std::size_t>(plan_.meta.head_index(h));
    store_[s][i].row(static_cast<Eigen::Index>(filled_[s][i]++)) = row;
  }

  auto rows(Stream s, HeadId h, std::size_t count) const {
    if (!stores(s, h))
      throw Error(ErrorCode::PlanMismatch,
                  "reconstruction read from non-cached head " + to_string(h) + " (" + to_string(s) + ")");
    const auto i = static_cast<std::size_t>(plan_.meta.head_index(h));
    if (count > filled_.at(s)[i])
      throw Error(ErrorCode::PlanMismatch, "read past the cached tokens of " + to_string(h));
    return store_.at(s)[i].topRows(static_cast<Eigen::Index>(count));
  }

  Eigen::RowVectorXd row(Stream s, HeadId h, std::size_t t) const {
    return rows(s, h, t + 1).row(static_cast<Eigen::Index>(t));
  }

 private:
  const CompressionPlan& plan_;
  std::map<Stream, std::vector<Eigen::MatrixXd>> store_;
  std::map<Stream, std::vector<std::size_t>> filled_;
};

Eigen::RowVectorXd reconstruct_row(const LinearPredictor& p, const ReferenceCache& cache,
                                   std::size_t t, Eigen::Index dh) {
  Eigen::RowVectorXd x(static_cast<Eigen::Index>(p.refs.size()) * dh);
  for (std::size_t j = 0; j < p.refs.size(); ++j)
    x.segment(static_cast<Eigen::Index>(j) * dh, dh) = cache.row(p.stream, p.refs[j], t);
  return p.predict(x);
}

void check_compatible(const CompressionPlan& plan, const ModelMeta& m) {
  const auto& p = plan.meta;
  if (p.num_layers != m.num_layers || p.heads_per_layer != m.heads_per_layer ||
      p.head_dim != m.head_dim || p.post_rope != m.post_rope)
    throw Error(ErrorCode::PlanMismatch,
                "source shape (L=" + std::to_string(m.num_layers) + ", H=" +
                    std::to_string(m.heads_per_layer) + ", d_h=" + std::to_string(m.head_dim) +
                    ") does not match the plan (L=" + std::to_string(p.num_layers) + ", H=" +
                    std::to_string(p.heads_per_layer) + ", d_h=" + std::to_string(p.head_dim) + ")");
}

// Per-target error accumulation over reconstructed rows.
struct TargetErrors {
  Stream stream;
  HeadId head;
  Eigen::MatrixXd truth;
  Eigen::MatrixXd recon;
};

void finish_report(CompressionReport& rep, std::vector<TargetErrors>& errs) {
  double sum = 0.0;
  for (auto& e : errs) {
    HeadReconstruction h;
    h.stream = e.stream;
    h.head = e.head;
    h.mse = (e.truth - e.recon).squaredNorm() / static_cast<double>(e.truth.size());
    h.r2 = e.truth.rows() >= 2 ? r2_score(e.truth, e.recon) : 0.0;
    sum += h.mse;
    rep.max_mse = std::max(rep.max_mse, h.mse);
    rep.heads.push_back(h);
  }
  rep.mean_mse = rep.heads.empty() ? 0.0 : sum / static_cast<double>(rep.heads.size());
}

std::vector<TargetErrors> target_slots(const CompressionPlan& plan, std::size_t tokens) {
  std::vector<TargetErrors> out;
  for (const auto& sp : plan.streams)
    for (HeadId t : sp.selection.targets)
      out.push_back({sp.stream, t, Eigen::MatrixXd(static_cast<Eigen::Index>(tokens), plan.meta.head_dim),
                     Eigen::MatrixXd(static_cast<Eigen::Index>(tokens), plan.meta.head_dim)});
  return out;
}

}  // namespace

CompressionReport simulate(const CompressionPlan& plan, const ActivationSet& source,
                           std::size_t t_eval) {
  plan.validate();
  check_compatible(plan, source.meta());
  for (const auto& sp : plan.streams)
    if (!source.has(sp.stream))
      throw Error(ErrorCode::PlanMismatch, "source has no " + to_string(sp.stream) + " stream");

  CompressionReport rep;
  rep.mode = plan.mode;
  rep.memory = memory_accounting(plan, t_eval);
  const std::size_t tokens = std::min<std::size_t>(t_eval, static_cast<std::size_t>(source.meta().token_count));
  rep.tokens_evaluated = tokens;

  ReferenceCache cache(plan, tokens);
  auto errs = target_slots(plan, tokens);
  const Eigen::Index dh = plan.meta.head_dim;
  const auto heads = source.heads();
  for (std::size_t t = 0; t < tokens; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    for (const auto& sp : plan.streams)
      for (HeadId h : heads)
        if (cache.stores(sp.stream, h)) cache.append(sp.stream, h, source.head(sp.stream, h).row(ti).cast<double>());
    for (auto& e : errs) {
      const auto& p = plan.find(e.stream)->predictors.at(e.head);
      e.recon.row(ti) = reconstruct_row(p, cache, t, dh);
      e.truth.row(ti) = source.head(e.stream, e.head).row(ti).cast<double>();
    }
  }
  finish_report(rep, errs);
  return rep;
}

CompressionReport simulate(const CompressionPlan& plan, const ToyWeights& w, const ToyConfig& cfg,
                           const Eigen::MatrixXd& inputs, std::size_t t_eval) {
  plan.validate();
  cfg.validate();
  check_compatible(plan, cfg.meta());
  if (!cfg.causal)
    throw Error(ErrorCode::InvalidArgument, "token-by-token decoding needs a causal toy model");
  if (inputs.cols() != cfg.embed_dim || inputs.rows() < 1)
    throw Error(ErrorCode::InvalidShape, "inputs must be T x m with T >= 1");

  CompressionReport rep;
  rep.mode = plan.mode;
  rep.memory = memory_accounting(plan, t_eval);
  const std::size_t tokens = std::min<std::size_t>(t_eval, static_cast<std::size_t>(inputs.rows()));
  const auto nt = static_cast<Eigen::Index>(tokens);
  rep.tokens_evaluated = tokens;

  ToyConfig run_cfg = cfg;
  run_cfg.token_count = static_cast<int>(tokens);
  const Eigen::MatrixXd x0 = inputs.topRows(nt);
  const ForwardTrace reference = forward_trace(w, run_cfg, x0);

  const int L = cfg.num_layers, H = cfg.heads_per_layer;
  const Eigen::Index dh = cfg.head_dim;
  ReferenceCache cache(plan, tokens);
  auto errs = target_slots(plan, tokens);
  std::map<std::pair<Stream, HeadId>, std::size_t> slot;
  for (std::size_t i = 0; i < errs.size(); ++i) slot[{errs[i].stream, errs[i].head}] = i;

  // Reconstructed target states, kept so later queries can attend to them.
  // Not part of the memory accounting.
  auto head_rows = [&](Stream s, HeadId h, std::size_t count) -> Eigen::MatrixXd {
    if (cache.stores(s, h)) return cache.rows(s, h, count);
    return errs[slot.at({s, h})].recon.topRows(static_cast<Eigen::Index>(count));
  };

  std::vector<Eigen::MatrixXd> outputs(static_cast<std::size_t>(L), Eigen::MatrixXd(nt, cfg.embed_dim));
  for (std::size_t t = 0; t < tokens; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    Eigen::RowVectorXd x = x0.row(ti);
    for (int l = 0; l < L; ++l) {
      std::vector<Eigen::RowVectorXd> q(static_cast<std::size_t>(H));
      for (int h = 0; h < H; ++h) {
        const HeadId id{l, h};
        Eigen::MatrixXd qi = x * w.projection(Stream::Q, id);
        Eigen::MatrixXd ki = x * w.projection(Stream::K, id);
        if (cfg.rope) {
          qi = apply_rope(qi, static_cast<int>(t));
          ki = apply_rope(ki, static_cast<int>(t));
        }
        q[static_cast<std::size_t>(h)] = qi.row(0);
        const Eigen::RowVectorXd v = x * w.projection(Stream::V, id);
        for (Stream s : {Stream::K, Stream::V}) {
          const Eigen::RowVectorXd state = s == Stream::K ? Eigen::RowVectorXd(ki.row(0)) : v;
          if (cache.stores(s, id))
            cache.append(s, id, state);
          else
            errs[slot.at({s, id})].truth.row(ti) = state;
        }
      }
      for (const auto& sp : plan.streams)
        for (const auto& [target, p] : sp.predictors)
          if (target.layer == l) errs[slot.at({sp.stream, target})].recon.row(ti) = reconstruct_row(p, cache, t, dh);

      Eigen::RowVectorXd concat(H * dh);
      for (int h = 0; h < H; ++h) {
        const HeadId id{l, h};
        concat.segment(h * dh, dh) =
            attend(q[static_cast<std::size_t>(h)], head_rows(Stream::K, id, t + 1), head_rows(Stream::V, id, t + 1));
      }
      const Eigen::RowVectorXd out = concat * w.w_o[static_cast<std::size_t>(l)];
      outputs[static_cast<std::size_t>(l)].row(ti) = out;
      x += out;
    }
  }
  finish_report(rep, errs);

  double diff = 0.0, norm = 0.0, count = 0.0;
  for (int l = 0; l < L; ++l) {
    const auto& ref = reference.attention_outputs[static_cast<std::size_t>(l)];
    diff += (outputs[static_cast<std::size_t>(l)] - ref).squaredNorm();
    norm += ref.squaredNorm();
    count += static_cast<double>(ref.size());
  }
  rep.attention_output_mse = diff / count;
  rep.attention_output_rel_error = norm > 0.0 ? std::sqrt(diff / norm) : std::sqrt(diff);
  return rep;
}

std::map<CompressionMode, CompressionReport> mode_comparison(const ActivationSet& calib,
                                                             const ActivationSet& eval,
                                                             const SelectionParams& p,
                                                             const FitSpec& fit, std::size_t t_eval,
                                                             int workers) {
  if (!calib.has(Stream::K) || !calib.has(Stream::V))
    throw Error(ErrorCode::MissingStream, "mode comparison needs both K and V streams");
  std::map<CompressionMode, CompressionReport> out;
  for (auto mode : {CompressionMode::KOnly, CompressionMode::VOnly, CompressionMode::KV})
    out[mode] = simulate(calibrate(calib, p, mode, fit, workers), eval, t_eval);
  return out;
}

std::map<CompressionMode, CompressionReport> mode_comparison(const ToyWeights& w, const ToyConfig& cfg,
                                                             const Eigen::MatrixXd& calib_inputs,
                                                             const Eigen::MatrixXd& eval_inputs,
                                                             const SelectionParams& p,
                                                             const FitSpec& fit, std::size_t t_eval,
                                                             int workers) {
  ToyConfig calib_cfg = cfg;
  calib_cfg.token_count = static_cast<int>(calib_inputs.rows());
  const ActivationSet calib = forward(w, calib_cfg, calib_inputs);
  std::map<CompressionMode, CompressionReport> out;
  for (auto mode : {CompressionMode::KOnly, CompressionMode::VOnly, CompressionMode::KV})
    out[mode] = simulate(calibrate(calib, p, mode, fit, workers), w, cfg, eval_inputs, t_eval);
  return out;
}

// Plan bundle -------------------------------------------------------------------

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

[[noreturn]] void format_error(const std::string& msg) {
  throw Error(ErrorCode::FormatError, "plan bundle: " + msg);
}

}  // namespace

std::vector<std::uint8_t> encode_plan(const CompressionPlan& plan) {
  plan.validate();
  json streams = json::array();
  std::vector<float> payload;
  for (const auto& sp : plan.streams) {
    json preds = json::array();
    for (const auto& [t, p] : sp.predictors) {
      json refs = json::array();
      for (HeadId r : p.refs) refs.push_back(to_json(r));
      preds.push_back({{"target", to_json(t)},
                       {"refs", std::move(refs)},
                       {"intercept", p.intercept},
                       {"rows", p.weights.rows()},
                       {"cols", p.weights.cols()},
                       {"offset", payload.size() * sizeof(float)},
                       {"fit_r2", p.fit_r2},
                       {"eval_r2", p.eval_r2}});
      // row-major
      for (Eigen::Index i = 0; i < p.weights.rows(); ++i)
        for (Eigen::Index j = 0; j < p.weights.cols(); ++j)
          payload.push_back(static_cast<float>(p.weights(i, j)));
    }
    streams.push_back({{"stream", to_string(sp.stream)},
                       {"selection", to_json(sp.selection, plan.params)},
                       {"predictors", std::move(preds)}});
  }
  json manifest{{"format", "KVPLAN"},
                {"version", 1},
                {"mode", to_string(plan.mode)},
                {"meta", to_json(plan.meta)},
                {"params",
                 {{"fraction", plan.params.fraction},
                  {"min_refs", plan.params.min_refs},
                  {"eps_tau", plan.params.eps_tau},
                  {"max_iters", plan.params.max_iters}}},
                {"fit", to_json(plan.fit)},
                {"bytes_per_element", plan.bytes_per_element},
                {"predictor_overhead_bytes", plan.predictor_overhead_bytes()},
                {"payload_bytes", payload.size() * sizeof(float)},
                {"streams", std::move(streams)}};
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kPlanMagic, kPlanMagic + 8);
  out.reserve(12 + text.size() + payload.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float v : payload) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

CompressionPlan decode_plan(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) format_error("shorter than the 12-byte preamble");
  if (std::memcmp(bytes.data(), kPlanMagic, 8) != 0) format_error("bad magic or version");
  const std::uint32_t len = get_u32(bytes.data() + 8);
  if (12ULL + len > bytes.size()) format_error("manifest exceeds file size");
  const std::uint64_t payload_start = 12ULL + len;
  const std::uint64_t payload_size = bytes.size() - payload_start;

  CompressionPlan plan;
  try {
    const json j = json::parse(bytes.begin() + 12, bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
    if (j.at("payload_bytes").get<std::uint64_t>() != payload_size)
      format_error("payload is " + std::to_string(payload_size) + " bytes, manifest says " +
                   j.at("payload_bytes").dump());
    plan.mode = parse_mode(j.at("mode").get<std::string>());
    plan.meta = meta_from_json(j.at("meta"));
    const auto& pj = j.at("params");
    plan.params.fraction = pj.at("fraction").get<double>();
    plan.params.min_refs = pj.at("min_refs").get<int>();
    plan.params.eps_tau = pj.at("eps_tau").get<double>();
    plan.params.max_iters = pj.at("max_iters").get<int>();
    plan.fit = fit_spec_from_json(j.at("fit"));
    plan.bytes_per_element = j.at("bytes_per_element").get<int>();
    for (const auto& sj : j.at("streams")) {
      StreamPlan sp;
      sp.stream = parse_stream(sj.at("stream").get<std::string>());
      sp.selection = selection_from_json(sj.at("selection"));
      for (const auto& pjx : sj.at("predictors")) {
        LinearPredictor p;
        p.stream = sp.stream;
        p.target = head_from_json(pjx.at("target"));
        for (const auto& r : pjx.at("refs")) p.refs.push_back(head_from_json(r));
        p.intercept = pjx.at("intercept").get<bool>();
        p.fit_r2 = pjx.at("fit_r2").get<double>();
        p.eval_r2 = pjx.at("eval_r2").get<double>();
        const auto rows = pjx.at("rows").get<Eigen::Index>();
        const auto cols = pjx.at("cols").get<Eigen::Index>();
        const auto offset = pjx.at("offset").get<std::uint64_t>();
        if (rows < 1 || cols < 1) format_error("predictor with empty weights");
        const auto nbytes = static_cast<std::uint64_t>(rows * cols) * sizeof(float);
        if (offset % 4 != 0 || offset + nbytes > payload_size)
          format_error("weights of " + to_string(p.target) + " run past the payload (byte offset " +
                       std::to_string(payload_start + offset) + ")");
        p.weights.resize(rows, cols);
        const std::uint8_t* src = bytes.data() + payload_start + offset;
        for (Eigen::Index i = 0; i < rows; ++i)
          for (Eigen::Index c = 0; c < cols; ++c, src += 4)
            p.weights(i, c) = static_cast<double>(std::bit_cast<float>(get_u32(src)));
        sp.predictors.emplace(p.target, std::move(p));
      }
      plan.streams.push_back(std::move(sp));
    }
  } catch (const json::exception& e) {
    format_error(e.what());
  }
  try {
    plan.validate();
  } catch (const Error& e) {
    format_error(e.what());
  }
  return plan;
}

void write_plan(const CompressionPlan& plan, const std::filesystem::path& path) {
  const auto bytes = encode_plan(plan);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

CompressionPlan read_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FormatError, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_plan(bytes);
}

json plan_summary_json(const CompressionPlan& plan) {
  json streams = json::array();
  for (const auto& sp : plan.streams) {
    json preds = json::array();
    for (const auto& [t, p] : sp.predictors) {
      json refs = json::array();
      for (HeadId r : p.refs) refs.push_back(to_json(r));
      preds.push_back({{"target", to_json(t)}, {"refs", std::move(refs)}, {"fit_r2", p.fit_r2},
                       {"eval_r2", p.eval_r2}});
    }
    streams.push_back({{"stream", to_string(sp.stream)},
                       {"tau", sp.selection.tau},
                       {"achieved_fraction", sp.selection.achieved_fraction},
                       {"targets", sp.selection.targets.size()},
                       {"predictors", std::move(preds)}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"kind", "compression_plan"},
              {"mode", to_string(plan.mode)},
              {"meta", to_json(plan.meta)},
              {"bytes_per_element", plan.bytes_per_element},
              {"predictor_overhead_bytes", plan.predictor_overhead_bytes()},
              {"streams", std::move(streams)}};
}

json to_json(const CompressionReport& r) {
  json heads = json::array();
  for (const auto& h : r.heads)
    heads.push_back({{"stream", to_string(h.stream)}, {"head", to_json(h.head)}, {"mse", h.mse}, {"r2", h.r2}});
  json j{{"schema_version", kSchemaVersion},
         {"kind", "compression_report"},
         {"mode", to_string(r.mode)},
         {"memory",
          {{"t_eval", r.memory.t_eval},
           {"full_bytes", r.memory.full_bytes},
           {"stored_cache_bytes", r.memory.stored_cache_bytes},
           {"predictor_bytes", r.memory.predictor_bytes},
           {"memory_ratio", r.memory.ratio}}},
         {"tokens_evaluated", r.tokens_evaluated},
         {"mean_mse", r.mean_mse},
         {"max_mse", r.max_mse},
         {"heads", std::move(heads)}};
  if (r.attention_output_mse) {
    j["attention_output_mse"] = *r.attention_output_mse;
    j["attention_output_rel_error"] = r.attention_output_rel_error.value_or(0.0);
    j["attention_output_note"] = "toy-model proxy for downstream quality";
  }
  return j;
}

}  // namespace headlink
