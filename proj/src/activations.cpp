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

#include "headlink/activations.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <json.hpp>

#include "headlink/error.hpp"
#include "headlink/random.hpp"

namespace headlink {

using nlohmann::json;

std::string to_string(Stream s) {
  switch (s) {
    case Stream::K: return "K";
    case Stream::Q: return "Q";
    case Stream::V: return "V";
  }
  return "?";
}

std::string to_string(Source s) {
  switch (s) {
    case Source::Toy: return "toy";
    case Source::Synthetic: return "synthetic";
    case Source::Extracted: return "extracted";
  }
  return "?";
}

Stream parse_stream(const std::string& s) {
  if (s == "K" || s == "k") return Stream::K;
  if (s == "Q" || s == "q") return Stream::Q;
  if (s == "V" || s == "v") return Stream::V;
  throw Error(ErrorCode::InvalidArgument, "unknown stream '" + s + "'");
}

Source parse_source(const std::string& s) {
  if (s == "toy") return Source::Toy;
  if (s == "synthetic") return Source::Synthetic;
  if (s == "extracted") return Source::Extracted;
  throw Error(ErrorCode::InvalidArgument, "unknown source '" + s + "'");
}

std::string to_string(HeadId h) {
  return "(" + std::to_string(h.layer) + "," + std::to_string(h.head) + ")";
}

void ModelMeta::validate() const {
  auto need = [](bool ok, const char* msg) {
    if (!ok) throw Error(ErrorCode::InvalidArgument, msg);
  };
  need(num_layers >= 1, "num_layers must be >= 1");
  need(heads_per_layer >= 1, "heads_per_layer must be >= 1");
  need(head_dim >= 1, "head_dim must be >= 1");
  need(token_count >= 1, "token_count must be >= 1");
  need(embed_dim >= head_dim, "embed_dim must be >= head_dim");
}

// ActivationSet ------------------------------------------------------------

ActivationSet::ActivationSet(ModelMeta meta) : meta_(std::move(meta)) { meta_.validate(); }

std::vector<Stream> ActivationSet::streams() const {
  std::vector<Stream> out;
  for (const auto& [s, _] : tensors_) out.push_back(s);
  return out;
}

std::vector<HeadId> ActivationSet::heads() const {
  std::vector<HeadId> out;
  out.reserve(meta_.num_heads());
  for (int i = 0; i < meta_.num_heads(); ++i) out.push_back(meta_.head_at(i));
  return out;
}

namespace {

std::size_t block_size(const ModelMeta& m) {
  return static_cast<std::size_t>(m.num_layers) * m.heads_per_layer * m.token_count * m.head_dim;
}

void check_finite(std::span<const float> data, const std::string& what) {
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i]))
      throw Error(ErrorCode::NonFiniteInput,
                  what + " has a non-finite value at element " + std::to_string(i));
}

}  // namespace

void ActivationSet::set_stream(Stream s, std::vector<float> data) {
  if (data.size() != block_size(meta_))
    throw Error(ErrorCode::InvalidShape, "stream " + to_string(s) + " has " +
                                             std::to_string(data.size()) + " values, expected " +
                                             std::to_string(block_size(meta_)));
  check_finite(data, "stream " + to_string(s));
  tensors_[s] = std::move(data);
}

std::span<const float> ActivationSet::data(Stream s) const {
  auto it = tensors_.find(s);
  if (it == tensors_.end())
    throw Error(ErrorCode::MissingStream, "stream " + to_string(s) + " not present");
  return it->second;
}

Eigen::Map<const RowMatrixXf> ActivationSet::head(Stream s, HeadId h) const {
  if (!meta_.contains(h)) throw Error(ErrorCode::UnknownHead, "head " + to_string(h));
  const auto block = data(s);
  const std::size_t per_head = static_cast<std::size_t>(meta_.token_count) * meta_.head_dim;
  return {block.data() + per_head * meta_.head_index(h), meta_.token_count, meta_.head_dim};
}

Eigen::MatrixXd ActivationSet::head_matrix(Stream s, HeadId h) const {
  return head(s, h).cast<double>();
}

void ActivationSet::set_head(Stream s, HeadId h, const Eigen::Ref<const Eigen::MatrixXd>& values) {
  if (!meta_.contains(h)) throw Error(ErrorCode::UnknownHead, "head " + to_string(h));
  if (values.rows() != meta_.token_count || values.cols() != meta_.head_dim)
    throw Error(ErrorCode::InvalidShape, "head block must be T x d_h");
  if (!values.allFinite()) throw Error(ErrorCode::NonFiniteInput, "head block " + to_string(h));
  auto& block = tensors_[s];
  if (block.empty()) block.assign(block_size(meta_), 0.0f);
  const std::size_t per_head = static_cast<std::size_t>(meta_.token_count) * meta_.head_dim;
  Eigen::Map<RowMatrixXf> dst(block.data() + per_head * meta_.head_index(h), meta_.token_count,
                              meta_.head_dim);
  dst = values.cast<float>();
}

Eigen::MatrixXd ProjectionWeights::head(Stream s, HeadId h) const {
  auto it = blocks.find(s);
  if (it == blocks.end())
    throw Error(ErrorCode::MissingStream, "weights for stream " + to_string(s) + " not present");
  if (!meta.contains(h)) throw Error(ErrorCode::UnknownHead, "head " + to_string(h));
  const std::size_t per_head = static_cast<std::size_t>(meta.embed_dim) * meta.head_dim;
  Eigen::Map<const RowMatrixXf> view(it->second.data() + per_head * meta.head_index(h),
                                     meta.embed_dim, meta.head_dim);
  return view.cast<double>();
}

// ACTV container -------------------------------------------------------------
//
// "ACTV0001" | u32 LE header length | UTF-8 JSON header | f32 LE payloads.
// Stream offsets in the header are relative to the first payload byte.

namespace {

struct Block {
  std::string name;
  std::array<std::int64_t, 4> shape{};
  std::span<const float> values;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

json meta_to_json(const ModelMeta& m) {
  return json{{"model_name", m.model_name},   {"num_layers", m.num_layers},
              {"heads_per_layer", m.heads_per_layer}, {"head_dim", m.head_dim},
              {"embed_dim", m.embed_dim},     {"token_count", m.token_count},
              {"dtype", "f32"},               {"source", to_string(m.source)},
              {"post_rope", m.post_rope}};
}

std::vector<std::uint8_t> encode(const ModelMeta& meta, const std::vector<Block>& blocks) {
  json header = meta_to_json(meta);
  header["format"] = "ACTV";
  header["version"] = 1;
  json streams = json::array();
  std::uint64_t offset = 0;
  for (const auto& b : blocks) {
    const std::uint64_t nbytes = b.values.size() * sizeof(float);
    streams.push_back({{"name", b.name},
                       {"shape", {b.shape[0], b.shape[1], b.shape[2], b.shape[3]}},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  header["streams"] = streams;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kActvMagic, kActvMagic + 8);
  out.reserve(12 + text.size() + offset);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& b : blocks) {
    for (float v : b.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

struct Decoded {
  ModelMeta meta;
  std::vector<std::pair<std::string, std::pair<std::array<std::int64_t, 4>, std::vector<float>>>>
      blocks;
};

[[noreturn]] void format_error(const std::string& msg) { throw Error(ErrorCode::FormatError, msg); }

Decoded decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) format_error("file shorter than the 12-byte preamble");
  if (std::memcmp(bytes.data(), kActvMagic, 8) != 0) format_error("bad magic or version");
  const std::uint32_t header_len = get_u32(bytes.data() + 8);
  if (12ULL + header_len > bytes.size())
    format_error("header of " + std::to_string(header_len) + " bytes exceeds file size " +
                 std::to_string(bytes.size()));
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    format_error(std::string("malformed JSON header: ") + e.what());
  }

  Decoded out;
  try {
    auto& m = out.meta;
    m.model_name = header.at("model_name").get<std::string>();
    m.num_layers = header.at("num_layers").get<int>();
    m.heads_per_layer = header.at("heads_per_layer").get<int>();
    m.head_dim = header.at("head_dim").get<int>();
    m.embed_dim = header.at("embed_dim").get<int>();
    m.token_count = header.at("token_count").get<int>();
    m.source = parse_source(header.at("source").get<std::string>());
    m.post_rope = header.at("post_rope").get<bool>();
    if (header.at("dtype").get<std::string>() != "f32") format_error("unsupported dtype");
    if (header.contains("kv_heads_per_layer") &&
        header["kv_heads_per_layer"].get<int>() != m.heads_per_layer)
      format_error("kv_heads_per_layer (" + header["kv_heads_per_layer"].dump() +
                   ") differs from heads_per_layer (" + std::to_string(m.heads_per_layer) +
                   "); grouped KV heads are not supported");
  } catch (const json::exception& e) {
    format_error(std::string("header field: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::FormatError) throw;
    format_error(e.what());
  }
  try {
    out.meta.validate();
  } catch (const Error& e) {
    format_error(std::string("invalid header: ") + e.what());
  }

  const std::uint64_t payload_start = 12ULL + header_len;
  const std::uint64_t payload_size = bytes.size() - payload_start;
  std::uint64_t expected_end = 0;
  try {
    for (const auto& s : header.at("streams")) {
      const auto name = s.at("name").get<std::string>();
      const auto shape_json = s.at("shape");
      if (shape_json.size() != 4) format_error("stream " + name + " shape must have 4 dims");
      std::array<std::int64_t, 4> shape{};
      std::uint64_t count = 1;
      for (int i = 0; i < 4; ++i) {
        shape[i] = shape_json[i].get<std::int64_t>();
        if (shape[i] < 1) format_error("stream " + name + " has a non-positive dimension");
        count *= static_cast<std::uint64_t>(shape[i]);
      }
      const auto offset = s.at("offset").get<std::uint64_t>();
      const auto nbytes = s.at("nbytes").get<std::uint64_t>();
      if (nbytes != count * sizeof(float))
        format_error("stream " + name + " declares " + std::to_string(nbytes) +
                     " bytes but its shape needs " + std::to_string(count * sizeof(float)));
      if (offset + nbytes > payload_size)
        format_error("truncated payload: stream " + name + " ends at byte offset " +
                     std::to_string(payload_start + offset + nbytes) + " but file has " +
                     std::to_string(bytes.size()) + " bytes");
      std::vector<float> values(count);
      const std::uint8_t* p = bytes.data() + payload_start + offset;
      for (std::uint64_t i = 0; i < count; ++i)
        values[i] = std::bit_cast<float>(get_u32(p + 4 * i));
      expected_end = std::max(expected_end, offset + nbytes);
      out.blocks.push_back({name, {shape, std::move(values)}});
    }
  } catch (const json::exception& e) {
    format_error(std::string("stream table: ") + e.what());
  }
  if (expected_end != payload_size)
    format_error("payload is " + std::to_string(payload_size) + " bytes, streams describe " +
                 std::to_string(expected_end));
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FormatError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

std::vector<std::uint8_t> encode_actv(const ActivationSet& set) {
  const auto& m = set.meta();
  std::vector<Block> blocks;
  for (Stream s : set.streams())
    blocks.push_back({to_string(s), {m.num_layers, m.heads_per_layer, m.token_count, m.head_dim},
                      set.data(s)});
  return encode(m, blocks);
}

ActivationSet decode_actv(std::span<const std::uint8_t> bytes) {
  Decoded d = decode(bytes);
  ActivationSet set(d.meta);
  const std::array<std::int64_t, 4> want{d.meta.num_layers, d.meta.heads_per_layer,
                                         d.meta.token_count, d.meta.head_dim};
  for (auto& [name, block] : d.blocks) {
    if (name.rfind("W_", 0) == 0) continue;
    Stream s;
    try {
      s = parse_stream(name);
    } catch (const Error&) {
      format_error("unknown stream '" + name + "'");
    }
    if (block.first != want) format_error("stream " + name + " shape disagrees with header meta");
    try {
      set.set_stream(s, std::move(block.second));
    } catch (const Error& e) {
      format_error(e.what());
    }
  }
  if (set.streams().empty()) format_error("no activation streams in file");
  return set;
}

void write_actv(const ActivationSet& set, const std::filesystem::path& path) {
  write_file(path, encode_actv(set));
}

ActivationSet read_actv(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_actv(bytes);
}

void write_weights(const ProjectionWeights& w, const std::filesystem::path& path) {
  const auto& m = w.meta;
  std::vector<Block> blocks;
  for (const auto& [s, values] : w.blocks)
    blocks.push_back({"W_" + to_string(s),
                      {m.num_layers, m.heads_per_layer, m.embed_dim, m.head_dim},
                      values});
  write_file(path, encode(m, blocks));
}

ProjectionWeights read_weights(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Decoded d = decode(bytes);
  ProjectionWeights w;
  w.meta = d.meta;
  const std::array<std::int64_t, 4> want{d.meta.num_layers, d.meta.heads_per_layer,
                                         d.meta.embed_dim, d.meta.head_dim};
  for (auto& [name, block] : d.blocks) {
    if (name.rfind("W_", 0) != 0) continue;
    const Stream s = parse_stream(name.substr(2));
    if (block.first != want) format_error("stream " + name + " must have shape [L][H][m][d_h]");
    check_finite(block.second, name);
    w.blocks[s] = std::move(block.second);
  }
  if (w.blocks.empty()) format_error("no weight streams (W_K/W_Q/W_V) in file");
  return w;
}

// Generators -------------------------------------------------------------------

ActivationSet gen_gaussian_activations(const ModelMeta& meta, std::span<const Stream> streams,
                                       std::uint64_t seed) {
  meta.validate();
  ActivationSet set(meta);
  Rng token_rng = make_rng(seed, 0);
  const Eigen::MatrixXd x = gaussian_matrix<double>(meta.token_count, meta.embed_dim, token_rng);
  for (Stream s : streams) {
    const auto stream_index = static_cast<std::uint64_t>(s);
    for (HeadId h : set.heads()) {
      Rng rng = make_rng(seed, 1 + stream_index * 1000003ULL + meta.head_index(h));
      const Eigen::MatrixXd w = gaussian_matrix<double>(meta.embed_dim, meta.head_dim, rng,
                                                        1.0 / std::sqrt(static_cast<double>(meta.embed_dim)));
      set.set_head(s, h, x * w);
    }
  }
  return set;
}

ActivationSet gen_shared_latent_activations(const ModelMeta& meta, std::span<const Stream> streams,
                                            int group_size, std::uint64_t seed) {
  meta.validate();
  if (group_size < 1) throw Error(ErrorCode::InvalidArgument, "group_size must be >= 1");
  ActivationSet set(meta);
  const int m = meta.embed_dim, dh = meta.head_dim, hpl = meta.heads_per_layer;
  Rng token_rng = make_rng(seed, 0);
  const Eigen::MatrixXd x = gaussian_matrix<double>(meta.token_count, m, token_rng);
  for (Stream s : streams) {
    const auto stream_index = static_cast<std::uint64_t>(s);
    for (int l = 0; l < meta.num_layers; ++l) {
      for (int g0 = 0; g0 < hpl; g0 += group_size) {
        Rng latent_rng = make_rng(seed, 2'000'000ULL + stream_index * 100'000ULL + l * 1'000ULL + g0);
        const Eigen::MatrixXd z =
            x * gaussian_matrix<double>(m, dh, latent_rng, 1.0 / std::sqrt(static_cast<double>(m)));
        for (int h = g0; h < std::min(hpl, g0 + group_size); ++h) {
          Rng mix_rng = make_rng(seed, 3'000'000ULL + stream_index * 100'000ULL + l * 1'000ULL + h);
          const Eigen::MatrixXd mix =
              gaussian_matrix<double>(dh, dh, mix_rng, 1.0 / std::sqrt(static_cast<double>(dh)));
          set.set_head(s, {l, h}, z * mix);
        }
      }
    }
  }
  return set;
}

std::vector<int> sample_token_indices(int token_count, int n, std::uint64_t seed) {
  if (n < 1 || n > token_count)
    throw Error(ErrorCode::InvalidArgument, "subsample size " + std::to_string(n) +
                                                " outside [1, " + std::to_string(token_count) + "]");
  std::vector<int> all(token_count);
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> picked;
  picked.reserve(n);
  Rng rng = make_rng(seed, 0);
  std::sample(all.begin(), all.end(), std::back_inserter(picked), n, rng);
  return picked;
}

ActivationSet select_tokens(const ActivationSet& set, std::span<const int> indices) {
  ModelMeta meta = set.meta();
  meta.token_count = static_cast<int>(indices.size());
  ActivationSet out(meta);
  const int dh = meta.head_dim;
  for (Stream s : set.streams()) {
    std::vector<float> block;
    block.reserve(static_cast<std::size_t>(meta.num_heads()) * indices.size() * dh);
    for (HeadId h : set.heads()) {
      const auto src = set.head(s, h);
      for (int t : indices) {
        if (t < 0 || t >= set.meta().token_count)
          throw Error(ErrorCode::InvalidArgument, "token index out of range");
        for (int j = 0; j < dh; ++j) block.push_back(src(t, j));
      }
    }
    out.set_stream(s, std::move(block));
  }
  return out;
}

ActivationSet subsample_tokens(const ActivationSet& set, int n, std::uint64_t seed) {
  const auto indices = sample_token_indices(set.meta().token_count, n, seed);
  return select_tokens(set, indices);
}

}  // namespace headlink
