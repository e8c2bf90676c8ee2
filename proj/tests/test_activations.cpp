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

#include <cstring>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "headlink/activations.hpp"
#include "headlink/error.hpp"
#include "headlink/linalg.hpp"

using namespace headlink;

namespace {

ModelMeta small_meta() {
  ModelMeta m;
  m.model_name = "unit";
  m.num_layers = 1;
  m.heads_per_layer = 2;
  m.head_dim = 4;
  m.embed_dim = 8;
  m.token_count = 3;
  m.source = Source::Synthetic;
  return m;
}

ActivationSet counting_set() {
  ActivationSet s(small_meta());
  std::vector<float> k(24), v(24);
  std::iota(k.begin(), k.end(), 1.0f);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -0.25f * static_cast<float>(i);
  s.set_stream(Stream::K, k);
  s.set_stream(Stream::V, v);
  return s;
}

// Rewrites the JSON header of an encoded file.
std::vector<std::uint8_t> patch_header(const std::vector<std::uint8_t>& bytes,
                                       const std::function<void(nlohmann::json&)>& edit) {
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[8 + i]) << (8 * i);
  auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  edit(header);
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 8);
  const auto n = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 12 + len, bytes.end());
  return out;
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

TEST_CASE("ACTV round trip is byte stable") {
  const ActivationSet set = counting_set();
  const auto bytes = encode_actv(set);
  CHECK(std::memcmp(bytes.data(), "ACTV0001", 8) == 0);
  const ActivationSet back = decode_actv(bytes);
  CHECK(back == set);
  CHECK(encode_actv(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "headlink_roundtrip.actv";
  write_actv(set, path);
  CHECK(read_actv(path) == set);
  std::filesystem::remove(path);
}

TEST_CASE("ACTV payload is little-endian f32 in [L][H][T][d_h] order") {
  const auto bytes = encode_actv(counting_set());
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[8 + i]) << (8 * i);
  const std::size_t start = 12 + len;
  // first K value is 1.0f
  CHECK(bytes[start + 0] == 0x00);
  CHECK(bytes[start + 1] == 0x00);
  CHECK(bytes[start + 2] == 0x80);
  CHECK(bytes[start + 3] == 0x3F);
  const auto set = decode_actv(bytes);
  // head 1, token 2, column 3 -> flat index ((0*2+1)*3+2)*4+3 = 23
  CHECK(set.head(Stream::K, {0, 1})(2, 3) == 24.0f);
}

TEST_CASE("ACTV rejects malformed files") {
  const auto bytes = encode_actv(counting_set());

  auto zero_heads = patch_header(bytes, [](auto& h) { h["heads_per_layer"] = 0; });
  CHECK(code_of([&] { decode_actv(zero_heads); }) == ErrorCode::FormatError);

  std::vector<std::uint8_t> short_file(bytes.begin(), bytes.end() - 4);
  try {
    decode_actv(short_file);
    FAIL("truncated file accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FormatError);
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  auto magic = bytes;
  magic[7] = '2';
  CHECK(code_of([&] { decode_actv(magic); }) == ErrorCode::FormatError);

  auto sized = patch_header(bytes, [](auto& h) { h["streams"][0]["nbytes"] = 92; });
  CHECK(code_of([&] { decode_actv(sized); }) == ErrorCode::FormatError);

  auto longer = bytes;
  longer.push_back(0);
  CHECK(code_of([&] { decode_actv(longer); }) == ErrorCode::FormatError);

  auto no_rope_flag = patch_header(bytes, [](auto& h) { h.erase("post_rope"); });
  CHECK(code_of([&] { decode_actv(no_rope_flag); }) == ErrorCode::FormatError);

  auto grouped = patch_header(bytes, [](auto& h) { h["kv_heads_per_layer"] = 1; });
  try {
    decode_actv(grouped);
    FAIL("grouped KV heads accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("kv_heads_per_layer") != std::string::npos);
  }
  auto same = patch_header(bytes, [](auto& h) { h["kv_heads_per_layer"] = 2; });
  CHECK(decode_actv(same) == counting_set());
}

TEST_CASE("ActivationSet validation") {
  ActivationSet set(small_meta());
  CHECK(code_of([&] { set.set_stream(Stream::K, std::vector<float>(23)); }) == ErrorCode::InvalidShape);
  std::vector<float> nan(24, 0.0f);
  nan[5] = std::numeric_limits<float>::infinity();
  CHECK(code_of([&] { set.set_stream(Stream::K, nan); }) == ErrorCode::NonFiniteInput);
  CHECK(code_of([&] { (void)set.data(Stream::Q); }) == ErrorCode::MissingStream);
  CHECK(code_of([&] { (void)set.head(Stream::K, {0, 2}); }) == ErrorCode::UnknownHead);
  ModelMeta bad = small_meta();
  bad.embed_dim = 2;
  CHECK(code_of([&] { ActivationSet{bad}; }) == ErrorCode::InvalidArgument);
}

TEST_CASE("projection weights container") {
  ProjectionWeights w;
  w.meta = small_meta();
  std::vector<float> k(1 * 2 * 8 * 4);
  std::iota(k.begin(), k.end(), 0.5f);
  w.blocks[Stream::K] = k;
  const auto path = std::filesystem::temp_directory_path() / "headlink_weights.actv";
  write_weights(w, path);
  const auto back = read_weights(path);
  CHECK(back.blocks.at(Stream::K) == k);
  CHECK(back.head(Stream::K, {0, 1})(0, 0) == doctest::Approx(32.5));
  std::filesystem::remove(path);
}

TEST_CASE("gaussian generator") {
  ModelMeta m = small_meta();
  m.num_layers = 2;
  m.heads_per_layer = 4;
  m.head_dim = 8;
  m.embed_dim = 64;
  m.token_count = 1600;
  const std::vector<Stream> streams{Stream::K, Stream::V};
  const auto a = gen_gaussian_activations(m, streams, 42);
  const auto b = gen_gaussian_activations(m, streams, 42);
  CHECK(a == b);
  CHECK_FALSE(a == gen_gaussian_activations(m, streams, 43));

  const auto data = a.data(Stream::K);
  REQUIRE(data.size() >= 100000);
  const double mean = std::accumulate(data.begin(), data.end(), 0.0) / static_cast<double>(data.size());
  CHECK(std::abs(mean) < 0.02);
}

TEST_CASE("gaussian generator: same-layer heads share about d_h/m of their variance") {
  // Population R^2 between two random projections of isotropic input is
  // d_h / m; the in-sample fit adds roughly d_h / T.
  ModelMeta m = small_meta();
  m.heads_per_layer = 2;
  m.head_dim = 32;
  m.embed_dim = 256;
  m.token_count = 4096;
  const std::vector<Stream> k{Stream::K};
  const auto set = gen_gaussian_activations(m, k, 7);
  const auto sol = lstsq(set.head_matrix(Stream::K, {0, 0}), set.head_matrix(Stream::K, {0, 1}));
  const double r2 = r2_from_residual(set.head_matrix(Stream::K, {0, 1}), sol.residual_ss);
  CHECK(r2 == doctest::Approx(32.0 / 256.0 + 32.0 / 4096.0).epsilon(0.25));

  m.head_dim = 16;
  m.embed_dim = 1024;
  const auto wide = gen_gaussian_activations(m, k, 7);
  const auto s2 = lstsq(wide.head_matrix(Stream::K, {0, 0}), wide.head_matrix(Stream::K, {0, 1}));
  CHECK(r2_from_residual(wide.head_matrix(Stream::K, {0, 1}), s2.residual_ss) < 0.1);
}

TEST_CASE("shared-latent generator: group members predict each other exactly") {
  ModelMeta m = small_meta();
  m.num_layers = 2;
  m.heads_per_layer = 4;
  m.head_dim = 4;
  m.embed_dim = 32;
  m.token_count = 200;
  const std::vector<Stream> k{Stream::K};
  const auto set = gen_shared_latent_activations(m, k, 2, 9);
  auto r2 = [&](HeadId ref, HeadId tgt) {
    const auto y = set.head_matrix(Stream::K, tgt);
    return r2_from_residual(y, lstsq(set.head_matrix(Stream::K, ref), y).residual_ss);
  };
  CHECK(r2({0, 0}, {0, 1}) > 1 - 1e-9);
  CHECK(r2({1, 3}, {1, 2}) > 1 - 1e-9);
  CHECK(r2({0, 0}, {0, 2}) < 0.5);
}

TEST_CASE("subsample_tokens") {
  ModelMeta m = small_meta();
  m.token_count = 100;
  const std::vector<Stream> streams{Stream::K, Stream::Q};
  const auto set = gen_gaussian_activations(m, streams, 1);

  CHECK(subsample_tokens(set, 100, 5) == set);

  const auto one = subsample_tokens(set, 1, 5);
  CHECK(one.meta().token_count == 1);
  CHECK(one.head(Stream::Q, {0, 1}).rows() == 1);

  const auto idx = sample_token_indices(100, 10, 2024);
  const std::vector<int> frozen{2, 12, 30, 32, 42, 43, 52, 53, 62, 69};
  CHECK(idx == frozen);
  CHECK(sample_token_indices(100, 10, 2024) == idx);

  const auto sub = select_tokens(set, idx);
  for (Stream s : streams)
    for (HeadId h : set.heads())
      for (std::size_t i = 0; i < idx.size(); ++i)
        CHECK(sub.head(s, h).row(static_cast<Eigen::Index>(i)) == set.head(s, h).row(idx[i]));

  CHECK(code_of([&] { subsample_tokens(set, 101, 0); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { subsample_tokens(set, 0, 0); }) == ErrorCode::InvalidArgument);
}
