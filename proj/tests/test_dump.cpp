// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <sstream>

#include <doctest.h>

#include "rofkit/dump.hpp"
#include "rofkit/pair_stats.hpp"

using namespace rofkit;
using doctest::Approx;

namespace {

DumpMeta tiny_meta() {
  DumpMeta m;
  m.model_name = "tiny";
  m.n_layers = 1;
  m.n_q_heads = 1;
  m.n_kv_heads = 1;
  m.n_positions = 2;
  m.head_dim = 2;
  m.rotary_dim = 2;
  m.rope_base = 10000.0;
  m.p_max_config = 16;
  return m;
}

ActivationDump tiny() { return {tiny_meta(), {1, 2, 3, 4}, {5, 6, 7, 8}}; }

// 2 layers, 4 query heads over 2 kv heads, 3 positions, head_dim 6 (r = 4).
ActivationDump gqa() {
  DumpMeta m;
  m.model_name = "gqa";
  m.n_layers = 2;
  m.n_q_heads = 4;
  m.n_kv_heads = 2;
  m.n_positions = 3;
  m.head_dim = 6;
  m.rotary_dim = 4;
  m.rope_base = 500000.0;
  m.p_max_config = 8192;
  m.layout = Layout::InterleavedLast;
  m.tokens = std::vector<std::string>{"<s>", "a,b", "\"q\""};
  std::vector<float> q(static_cast<std::size_t>(m.query_count()));
  std::vector<float> k(static_cast<std::size_t>(m.key_count()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = 0.25f * static_cast<float>(i) - 3.0f;
  }
  for (std::size_t i = 0; i < k.size(); ++i) {
    k[i] = -0.5f * static_cast<float>(i) + 1.0f;
  }
  return {m, q, k};
}

std::string bytes_of(const ActivationDump &d) {
  std::ostringstream out(std::ios::binary);
  write_dump(d, out);
  return out.str();
}

ActivationDump parse(const std::string &bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_dump(in);
}

std::uint32_t header_len(const std::string &bytes) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[4 + static_cast<std::size_t>(i)]);
  }
  return v;
}

SynthSpec uniform_spec(const RopeConfig &c, PairTarget t, std::int64_t n_positions, std::uint64_t seed) {
  SynthSpec s;
  s.pairs.assign(static_cast<std::size_t>(c.num_pairs()), t);
  s.n_positions = n_positions;
  s.seed = seed;
  return s;
}

} // namespace

TEST_CASE("file layout") {
  const auto d = tiny();
  const std::string b = bytes_of(d);
  CHECK(b.substr(0, 4) == "RKD1");
  const auto h = header_len(b);
  CHECK(h == encode_header(d.meta()).size());
  CHECK(b.substr(8, h) == encode_header(d.meta()));
  // 2 * (1*1*2*2) floats
  CHECK(b.size() == payload_offset(h) + 8 * 4);
  float first_k = 0;
  std::memcpy(&first_k, b.data() + payload_offset(h) + 4 * 4, 4);
  CHECK(first_k == 5.0f);
  CHECK(static_cast<unsigned char>(b[payload_offset(h)]) == 0x00); // 1.0f little-endian low byte
  CHECK(static_cast<unsigned char>(b[payload_offset(h) + 3]) == 0x3f);
}

TEST_CASE("round trip") {
  for (const auto &d : {tiny(), gqa()}) {
    const std::string b = bytes_of(d);
    const auto back = parse(b);
    CHECK(back == d);
    CHECK(bytes_of(back) == b);
  }
  const auto g = parse(bytes_of(gqa()));
  REQUIRE(g.meta().tokens.has_value());
  CHECK((*g.meta().tokens)[1] == "a,b");
  CHECK(g.meta().layout == Layout::InterleavedLast);
}

TEST_CASE("synthetic dumps are byte-identical on rewrite") {
  RopeConfig c{10000.0, 8, 6, 64, Layout::SlicedFirst, std::nullopt};
  const auto d = synth_dump(uniform_spec(c, {2.0, 1.5, 0.5, 0.2, {1}}, 17, 9), c);
  std::ostringstream out(std::ios::binary);
  write_dump(d, out);
  const auto back = parse(out.str());
  CHECK(bytes_of(back) == out.str());
  CHECK(back == d.cast<float>());
}

TEST_CASE("header decoding") {
  const auto m = gqa().meta();
  CHECK(decode_header(encode_header(m)) == m);
  auto no_tokens = m;
  no_tokens.tokens.reset();
  CHECK(encode_header(no_tokens).find("tokens") == std::string::npos);
  CHECK_THROWS_AS(decode_header("{}"), FormatError);
  CHECK_THROWS_AS(decode_header("not json"), FormatError);
  CHECK_THROWS_AS(decode_header("[1,2]"), FormatError);
  std::string typed = encode_header(m);
  typed.replace(typed.find("\"n_layers\":2"), 12, "\"n_layers\":\"x\"");
  CHECK_THROWS_AS(decode_header(typed), FormatError);
}

TEST_CASE("bad magic is a format error at offset 0") {
  std::string b = bytes_of(tiny());
  b.replace(0, 4, "XXXX");
  try {
    parse(b);
    FAIL("accepted bad magic");
  } catch (const FormatError &e) {
    CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
  }
}

TEST_CASE("truncation names the tensor and byte offset") {
  const std::string b = bytes_of(tiny());
  const auto k_start = payload_offset(header_len(b)) + 4 * 4;
  const std::string cut = b.substr(0, k_start + 6);
  try {
    parse(cut);
    FAIL("accepted truncated dump");
  } catch (const FormatError &e) {
    const std::string what = e.what();
    CHECK(what.find("K tensor") != std::string::npos);
    CHECK(what.find(std::to_string(k_start)) != std::string::npos);
  }
  CHECK_THROWS_AS(parse(b.substr(0, 6)), FormatError);
  CHECK_THROWS_AS(parse(b.substr(0, 20)), FormatError);
  const std::string mid_q = b.substr(0, payload_offset(header_len(b)) + 3);
  try {
    parse(mid_q);
    FAIL("accepted truncated Q");
  } catch (const FormatError &e) {
    CHECK(std::string(e.what()).find("Q tensor") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(b + "x"), FormatError);
}

TEST_CASE("non-finite payload values are validation errors with their position") {
  std::string b = bytes_of(tiny());
  const auto off = payload_offset(header_len(b)) + 4 * 4 + 2 * 4; // K[0][0][1][0]
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(b.data() + off, &nan, 4);
  try {
    parse(b);
    FAIL("accepted NaN");
  } catch (const ValidationError &e) {
    const std::string what = e.what();
    CHECK(what.find("[0][0][1][0]") != std::string::npos);
    CHECK(what.find(std::to_string(off)) != std::string::npos);
  }
}

TEST_CASE("dump invariants") {
  auto m = tiny_meta();
  m.n_q_heads = 3;
  m.n_kv_heads = 2;
  CHECK_THROWS_AS(m.validate(), ValidationError);
  CHECK_THROWS_AS(ActivationDump(tiny_meta(), {1, 2, 3}, {5, 6, 7, 8}), ShapeError);
  auto t = tiny_meta();
  t.tokens = std::vector<std::string>{"only one"};
  CHECK_THROWS_AS(t.validate(), ValidationError);

  auto post = tiny_meta();
  post.pre_rotation = false;
  const ActivationDump d(post, {1, 2, 3, 4}, {5, 6, 7, 8});
  CHECK_THROWS_AS(d.require_pre_rotation(), ValidationError);
}

TEST_CASE("head access and kv mapping") {
  const auto d = gqa();
  CHECK(d.kv_head_for(0) == 0);
  CHECK(d.kv_head_for(1) == 0);
  CHECK(d.kv_head_for(3) == 1);
  const auto q = d.queries(1, 2);
  CHECK(q.rows() == 3);
  CHECK(q.cols() == 6);
  // flat index ((1*4 + 2)*3 + 0)*6 + 0 = 108
  CHECK(q(0, 0) == Approx(0.25 * 108 - 3.0));
  CHECK(d.keys(1, 1)(2, 5) == Approx(-0.5 * (((1 * 2 + 1) * 3 + 2) * 6 + 5) + 1.0));
  CHECK_THROWS_AS(d.queries(2, 0), ValidationError);
  CHECK_THROWS_AS(d.keys(0, 2), ValidationError);
  CHECK(parse_side("q") == Side::Query);
  CHECK(parse_side("key") == Side::Key);
  CHECK_THROWS_AS(parse_side("value"), ConfigError);
}

TEST_CASE("synth noiseless angles are exact") {
  RopeConfig c{10000.0, 8, 8, 64, Layout::SlicedFirst, std::nullopt};
  const auto d = synth_dump(uniform_spec(c, {std::numbers::pi, 1.0, 1.0, 0.0, {}}, 32, 1), c);
  const auto table = mean_vectors(d, c);
  for (const auto &e : table.entries()) {
    CHECK(std::abs(e.phi - std::numbers::pi) < 1e-9);
    CHECK(e.q_radius == Approx(1.0).epsilon(1e-12));
  }

  auto s = uniform_spec(c, {3 * std::numbers::pi / 2, 2.0, 3.0, 0.0, {}}, 16, 4);
  s.pairs[1].phi = 0.3;
  s.pairs[2].phi = 2 * std::numbers::pi;
  const auto t = mean_vectors(synth_dump(s, c), c);
  CHECK(std::abs(t.at(0, 0, 0).phi - 3 * std::numbers::pi / 2) < 1e-9);
  CHECK(std::abs(t.at(0, 0, 1).phi - 0.3) < 1e-9);
  CHECK(std::abs(t.at(0, 0, 2).phi - 2 * std::numbers::pi) < 1e-9);
  CHECK(t.at(0, 0, 0).q_radius == Approx(2.0).epsilon(1e-12));
  CHECK(t.at(0, 0, 0).k_radius == Approx(3.0).epsilon(1e-12));
}

TEST_CASE("synth is deterministic in the seed") {
  RopeConfig c{10000.0, 8, 6, 64, Layout::InterleavedLast, std::nullopt};
  const auto s = uniform_spec(c, {4.0, 1.0, 2.0, 0.3, {}}, 50, 42);
  CHECK(synth_dump(s, c) == synth_dump(s, c));
  auto other = s;
  other.seed = 43;
  CHECK(!(synth_dump(other, c) == synth_dump(s, c)));
  // non-rotary dims are zero
  const auto d = synth_dump(s, c);
  for (const Index dim : nonrotary_dims(c)) {
    CHECK(d.keys(0, 0).col(dim).isZero());
  }
}

TEST_CASE("synth noise shows up in the key angle spread") {
  RopeConfig c{10000.0, 2, 2, 64, Layout::SlicedFirst, std::nullopt};
  const auto d = synth_dump(uniform_spec(c, {4.0, 5.0, 5.0, 0.3, {}}, 10000, 2024), c);
  const auto keys = d.keys(0, 0);
  std::vector<double> angles;
  for (Index n = 0; n < keys.rows(); ++n) {
    angles.push_back(std::atan2(keys(n, 1), keys(n, 0)));
  }
  const double s = circular_std(angles);
  CHECK(s > 0.27);
  CHECK(s < 0.33);
  const auto t = mean_vectors(d, c);
  CHECK(t.at(0, 0, 0).k_radius == Approx(5.0).epsilon(0.02));
  CHECK(t.at(0, 0, 0).phi == Approx(4.0).epsilon(0.01));
}

TEST_CASE("sink keys align with the query base direction") {
  RopeConfig c{10000.0, 2, 2, 64, Layout::SlicedFirst, std::nullopt};
  const auto d = synth_dump(uniform_spec(c, {std::numbers::pi, 1.0, 1.0, 0.0, {0, 5}}, 8, 3), c);
  const auto q = d.queries(0, 0);
  const auto k = d.keys(0, 0);
  for (Index n = 0; n < 8; ++n) {
    const double dot = q.row(n).dot(k.row(n));
    CHECK((dot > 0) == (n == 0 || n == 5));
  }
}

TEST_CASE("synth spec validation") {
  RopeConfig c{10000.0, 4, 4, 64, Layout::SlicedFirst, std::nullopt};
  auto s = uniform_spec(c, {}, 4, 0);
  s.pairs.pop_back();
  CHECK_THROWS_AS(synth_dump(s, c), ValidationError);
  s = uniform_spec(c, {}, 4, 0);
  s.pairs[0].angular_noise = -1;
  CHECK_THROWS_AS(synth_dump(s, c), ValidationError);
  s = uniform_spec(c, {}, 4, 0);
  s.pairs[0].phi = 0.0;
  CHECK_THROWS_AS(synth_dump(s, c), ValidationError);
  s = uniform_spec(c, {}, 4, 0);
  s.pairs[0].sink_positions = {4};
  CHECK_THROWS_AS(synth_dump(s, c), ValidationError);
  s = uniform_spec(c, {}, 4, 0);
  s.head_pairs[{0, 1}] = s.pairs;
  CHECK_THROWS_AS(synth_dump(s, c), ValidationError);
}
