// SPDX-License-Identifier: Apache-2.0

#include "rofkit/dump.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <set>

#include <json.hpp>

namespace rofkit {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kMaxHeaderBytes = 64ull << 20;

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void put_u32_le(std::ostream &out, std::uint32_t v) {
  const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                  static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char *>(bytes), 4);
}

template <typename Scalar> void put_f32_le(std::ostream &out, std::span<const Scalar> values) {
  constexpr std::size_t kChunk = 1 << 16;
  std::vector<std::uint32_t> buf;
  buf.reserve(std::min(values.size(), kChunk));
  for (std::size_t start = 0; start < values.size(); start += kChunk) {
    const std::size_t end = std::min(values.size(), start + kChunk);
    buf.clear();
    for (std::size_t i = start; i < end; ++i) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
      if constexpr (std::endian::native == std::endian::big) {
        bits = byteswap32(bits);
      }
      buf.push_back(bits);
    }
    out.write(reinterpret_cast<const char *>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
}

// Reads `count` little-endian floats; throws FormatError naming the tensor on
// short reads.
std::vector<float> get_f32_le(std::istream &in, std::int64_t count, const char *tensor, std::uint64_t offset) {
  std::vector<float> values(static_cast<std::size_t>(count));
  const auto want = static_cast<std::streamsize>(count * 4);
  in.read(reinterpret_cast<char *>(values.data()), want);
  const auto got = in.gcount();
  if (got != want) {
    throw FormatError(std::string("truncated ") + tensor + " tensor: expected " + std::to_string(want) +
                      " bytes starting at byte offset " + std::to_string(offset) + ", file ends at byte offset " +
                      std::to_string(offset + static_cast<std::uint64_t>(got)));
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (auto &v : values) {
      v = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(v)));
    }
  }
  return values;
}

template <typename Scalar>
void check_finite(std::span<const Scalar> values, const DumpMeta &meta, std::int64_t n_heads, const char *tensor,
                  std::uint64_t offset) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isfinite(static_cast<double>(values[i]))) {
      continue;
    }
    auto rest = static_cast<std::int64_t>(i);
    const std::int64_t dim = rest % meta.head_dim;
    rest /= meta.head_dim;
    const std::int64_t pos = rest % meta.n_positions;
    rest /= meta.n_positions;
    const std::int64_t head = rest % n_heads;
    const std::int64_t layer = rest / n_heads;
    throw ValidationError(std::string("non-finite value in ") + tensor + " at [" + std::to_string(layer) + "][" +
                          std::to_string(head) + "][" + std::to_string(pos) + "][" + std::to_string(dim) +
                          "] (byte offset " + std::to_string(offset + 4 * i) + ")");
  }
}

template <typename T> T required(const json &j, const char *key) {
  if (!j.contains(key)) {
    throw FormatError(std::string("dump header is missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception &e) {
    throw FormatError(std::string("dump header field '") + key + "' has the wrong type: " + e.what());
  }
}

} // namespace

std::string_view to_string(Side side) { return side == Side::Query ? "query" : "key"; }

Side parse_side(std::string_view name) {
  if (name == "query" || name == "q") {
    return Side::Query;
  }
  if (name == "key" || name == "k") {
    return Side::Key;
  }
  throw ConfigError("unknown side '" + std::string(name) + "' (expected query or key)");
}

void DumpMeta::validate() const {
  auto positive = [](std::int64_t v, const char *name) {
    if (v <= 0) {
      throw ValidationError(std::string(name) + " must be positive, got " + std::to_string(v));
    }
  };
  positive(n_layers, "n_layers");
  positive(n_q_heads, "n_q_heads");
  positive(n_kv_heads, "n_kv_heads");
  positive(n_positions, "n_positions");
  positive(head_dim, "head_dim");
  positive(rotary_dim, "rotary_dim");
  positive(p_max_config, "p_max_config");
  if (n_q_heads % n_kv_heads != 0) {
    throw ValidationError("n_q_heads " + std::to_string(n_q_heads) + " is not a multiple of n_kv_heads " +
                          std::to_string(n_kv_heads));
  }
  if (rotary_dim % 2 != 0 || rotary_dim > head_dim) {
    throw ValidationError("rotary_dim must be even and at most head_dim");
  }
  if (!(std::isfinite(rope_base) && rope_base > 0.0)) {
    throw ValidationError("rope_base must be positive and finite");
  }
  if (tokens && static_cast<std::int64_t>(tokens->size()) != n_positions) {
    throw ValidationError("tokens has " + std::to_string(tokens->size()) + " entries, expected n_positions " +
                          std::to_string(n_positions));
  }
}

RopeConfig DumpMeta::rope_config() const {
  RopeConfig config;
  config.base = rope_base;
  config.head_dim = head_dim;
  config.rotary_dim = rotary_dim;
  config.p_max = p_max_config;
  config.layout = layout;
  return config;
}

template <typename Scalar>
BasicActivationDump<Scalar>::BasicActivationDump(DumpMeta meta, std::vector<Scalar> q, std::vector<Scalar> k)
    : meta_(std::move(meta)), q_(std::move(q)), k_(std::move(k)) {
  meta_.validate();
  if (static_cast<std::int64_t>(q_.size()) != meta_.query_count()) {
    throw ShapeError("query tensor has " + std::to_string(q_.size()) + " values, header implies " +
                     std::to_string(meta_.query_count()));
  }
  if (static_cast<std::int64_t>(k_.size()) != meta_.key_count()) {
    throw ShapeError("key tensor has " + std::to_string(k_.size()) + " values, header implies " +
                     std::to_string(meta_.key_count()));
  }
}

template <typename Scalar>
void BasicActivationDump<Scalar>::check_head(std::int64_t layer, std::int64_t head, std::int64_t n_heads) const {
  if (layer < 0 || layer >= meta_.n_layers) {
    throw ValidationError("layer " + std::to_string(layer) + " out of range [0, " + std::to_string(meta_.n_layers) +
                          ")");
  }
  if (head < 0 || head >= n_heads) {
    throw ValidationError("head " + std::to_string(head) + " out of range [0, " + std::to_string(n_heads) + ")");
  }
}

template <typename Scalar>
typename BasicActivationDump<Scalar>::ConstHeadMap BasicActivationDump<Scalar>::queries(std::int64_t layer,
                                                                                        std::int64_t q_head) const {
  check_head(layer, q_head, meta_.n_q_heads);
  const std::int64_t block = meta_.n_positions * meta_.head_dim;
  return ConstHeadMap(q_.data() + (layer * meta_.n_q_heads + q_head) * block, meta_.n_positions, meta_.head_dim);
}

template <typename Scalar>
typename BasicActivationDump<Scalar>::ConstHeadMap BasicActivationDump<Scalar>::keys(std::int64_t layer,
                                                                                     std::int64_t kv_head) const {
  check_head(layer, kv_head, meta_.n_kv_heads);
  const std::int64_t block = meta_.n_positions * meta_.head_dim;
  return ConstHeadMap(k_.data() + (layer * meta_.n_kv_heads + kv_head) * block, meta_.n_positions, meta_.head_dim);
}

template <typename Scalar>
typename BasicActivationDump<Scalar>::ConstHeadMap
BasicActivationDump<Scalar>::head(Side side, std::int64_t layer, std::int64_t head) const {
  return side == Side::Query ? queries(layer, head) : keys(layer, head);
}

template <typename Scalar> std::int64_t BasicActivationDump<Scalar>::kv_head_for(std::int64_t q_head) const {
  check_head(0, q_head, meta_.n_q_heads);
  return q_head / meta_.group_size();
}

template <typename Scalar> void BasicActivationDump<Scalar>::validate() const {
  const std::uint64_t q_offset = payload_offset(encode_header(meta_).size());
  check_finite<Scalar>(q_, meta_, meta_.n_q_heads, "Q", q_offset);
  check_finite<Scalar>(k_, meta_, meta_.n_kv_heads, "K", q_offset + 4 * q_.size());
}

template <typename Scalar> void BasicActivationDump<Scalar>::require_pre_rotation() const {
  if (!meta_.pre_rotation) {
    throw ValidationError("dump '" + meta_.model_name +
                          "' holds post-rotation activations; statistics need pre-rotation queries and keys");
  }
}

template class BasicActivationDump<float>;
template class BasicActivationDump<double>;

std::string encode_header(const DumpMeta &meta) {
  json j;
  j["model_name"] = meta.model_name;
  j["n_layers"] = meta.n_layers;
  j["n_q_heads"] = meta.n_q_heads;
  j["n_kv_heads"] = meta.n_kv_heads;
  j["n_positions"] = meta.n_positions;
  j["head_dim"] = meta.head_dim;
  j["rotary_dim"] = meta.rotary_dim;
  j["rope_base"] = meta.rope_base;
  j["p_max_config"] = meta.p_max_config;
  j["layout"] = std::string(to_string(meta.layout));
  j["pre_rotation"] = meta.pre_rotation;
  if (meta.tokens) {
    j["tokens"] = *meta.tokens;
  }
  return j.dump();
}

DumpMeta decode_header(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw FormatError(std::string("dump header is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) {
    throw FormatError("dump header must be a JSON object");
  }
  DumpMeta meta;
  meta.model_name = required<std::string>(j, "model_name");
  meta.n_layers = required<std::int64_t>(j, "n_layers");
  meta.n_q_heads = required<std::int64_t>(j, "n_q_heads");
  meta.n_kv_heads = required<std::int64_t>(j, "n_kv_heads");
  meta.n_positions = required<std::int64_t>(j, "n_positions");
  meta.head_dim = required<Index>(j, "head_dim");
  meta.rotary_dim = required<Index>(j, "rotary_dim");
  meta.rope_base = required<double>(j, "rope_base");
  meta.p_max_config = required<std::int64_t>(j, "p_max_config");
  try {
    meta.layout = parse_layout(required<std::string>(j, "layout"));
  } catch (const ConfigError &e) {
    throw FormatError(std::string("dump header: ") + e.what());
  }
  meta.pre_rotation = required<bool>(j, "pre_rotation");
  if (j.contains("tokens") && !j.at("tokens").is_null()) {
    meta.tokens = required<std::vector<std::string>>(j, "tokens");
  }
  return meta;
}

template <typename Scalar> std::uint64_t write_dump(const BasicActivationDump<Scalar> &dump, std::ostream &out) {
  dump.meta().validate();
  dump.validate();
  const std::string header = encode_header(dump.meta());
  if (header.size() > kMaxHeaderBytes) {
    throw ValidationError("dump header exceeds " + std::to_string(kMaxHeaderBytes) + " bytes");
  }
  out.write(kDumpMagic, 4);
  put_u32_le(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_f32_le(out, dump.query_data());
  put_f32_le(out, dump.key_data());
  if (!out) {
    throw IoError("failed writing dump stream");
  }
  return payload_offset(header.size()) + 4 * (dump.query_data().size() + dump.key_data().size());
}

template <typename Scalar>
std::uint64_t write_dump(const BasicActivationDump<Scalar> &dump, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open '" + path.string() + "' for writing");
  }
  const auto bytes = write_dump(dump, out);
  out.close();
  if (!out) {
    throw IoError("failed writing '" + path.string() + "'");
  }
  return bytes;
}

template std::uint64_t write_dump(const ActivationDump &, std::ostream &);
template std::uint64_t write_dump(const ActivationDumpd &, std::ostream &);
template std::uint64_t write_dump(const ActivationDump &, const std::filesystem::path &);
template std::uint64_t write_dump(const ActivationDumpd &, const std::filesystem::path &);

ActivationDump read_dump(std::istream &in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kDumpMagic, 4) != 0) {
    throw FormatError("bad magic at byte offset 0: expected \"RKD1\"");
  }
  unsigned char len_bytes[4] = {};
  in.read(reinterpret_cast<char *>(len_bytes), 4);
  if (in.gcount() != 4) {
    throw FormatError("truncated header length at byte offset 4");
  }
  const std::uint64_t header_len = static_cast<std::uint64_t>(len_bytes[0]) |
                                   (static_cast<std::uint64_t>(len_bytes[1]) << 8) |
                                   (static_cast<std::uint64_t>(len_bytes[2]) << 16) |
                                   (static_cast<std::uint64_t>(len_bytes[3]) << 24);
  if (header_len == 0 || header_len > kMaxHeaderBytes) {
    throw FormatError("implausible header length " + std::to_string(header_len) + " at byte offset 4");
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::uint64_t>(in.gcount()) != header_len) {
    throw FormatError("truncated header: expected " + std::to_string(header_len) +
                      " bytes starting at byte offset 8, file ends at byte offset " +
                      std::to_string(8 + in.gcount()));
  }
  DumpMeta meta = decode_header(header);
  meta.validate();

  const std::uint64_t q_offset = payload_offset(header_len);
  auto q = get_f32_le(in, meta.query_count(), "Q", q_offset);
  const std::uint64_t k_offset = q_offset + 4 * q.size();
  auto k = get_f32_le(in, meta.key_count(), "K", k_offset);
  const std::uint64_t end = k_offset + 4 * k.size();
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("unexpected trailing bytes after K tensor at byte offset " + std::to_string(end));
  }
  check_finite<float>(q, meta, meta.n_q_heads, "Q", q_offset);
  check_finite<float>(k, meta, meta.n_kv_heads, "K", k_offset);
  return ActivationDump(std::move(meta), std::move(q), std::move(k));
}

ActivationDump read_dump(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open '" + path.string() + "' for reading");
  }
  return read_dump(in);
}

void SynthSpec::validate(const RopeConfig &config) const {
  config.validate();
  if (n_positions <= 0 || n_layers <= 0 || n_heads <= 0) {
    throw ValidationError("synth spec needs positive n_positions, n_layers and n_heads");
  }
  auto check_pairs = [&](const std::vector<PairTarget> &targets) {
    if (static_cast<Index>(targets.size()) != config.num_pairs()) {
      throw ValidationError("synth spec has " + std::to_string(targets.size()) + " pair targets, config has " +
                            std::to_string(config.num_pairs()) + " rotary pairs");
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto &t = targets[i];
      const bool ok = std::isfinite(t.phi) && t.phi > 0.0 && t.phi <= 2.0 * std::numbers::pi &&
                      std::isfinite(t.q_radius) && t.q_radius >= 0.0 && std::isfinite(t.k_radius) &&
                      t.k_radius >= 0.0 && std::isfinite(t.angular_noise) && t.angular_noise >= 0.0;
      if (!ok) {
        throw ValidationError("synth pair target " + std::to_string(i) +
                              " needs phi in (0, 2pi] and nonnegative finite radii and noise");
      }
      for (const auto p : t.sink_positions) {
        if (p < 0 || p >= n_positions) {
          throw ValidationError("sink position " + std::to_string(p) + " outside [0, " +
                                std::to_string(n_positions) + ")");
        }
      }
    }
  };
  check_pairs(pairs);
  for (const auto &[key, targets] : head_pairs) {
    if (key.first < 0 || key.first >= n_layers || key.second < 0 || key.second >= n_heads) {
      throw ValidationError("synth head override (" + std::to_string(key.first) + ", " +
                            std::to_string(key.second) + ") is out of range");
    }
    check_pairs(targets);
  }
}

ActivationDumpd synth_dump(const SynthSpec &spec, const RopeConfig &config) {
  spec.validate(config);

  DumpMeta meta;
  meta.model_name = "synthetic";
  meta.n_layers = spec.n_layers;
  meta.n_q_heads = spec.n_heads;
  meta.n_kv_heads = spec.n_heads;
  meta.n_positions = spec.n_positions;
  meta.head_dim = config.head_dim;
  meta.rotary_dim = config.rotary_dim;
  meta.rope_base = config.base;
  meta.p_max_config = config.p_max;
  meta.layout = config.layout;
  meta.pre_rotation = true;

  const std::int64_t block = spec.n_positions * config.head_dim;
  std::vector<double> q(static_cast<std::size_t>(meta.query_count()), 0.0);
  std::vector<double> k(static_cast<std::size_t>(meta.key_count()), 0.0);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> base_angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, 1.0);

  for (std::int64_t layer = 0; layer < spec.n_layers; ++layer) {
    for (std::int64_t h = 0; h < spec.n_heads; ++h) {
      const auto it = spec.head_pairs.find({layer, h});
      const auto &targets = it != spec.head_pairs.end() ? it->second : spec.pairs;
      const std::int64_t head_offset = (layer * spec.n_heads + h) * block;
      for (Index i = 0; i < config.num_pairs(); ++i) {
        const auto &t = targets[static_cast<std::size_t>(i)];
        const auto dims = pair_dims(config, i);
        const std::set<std::int64_t> sinks(t.sink_positions.begin(), t.sink_positions.end());
        const double alpha = base_angle(rng);
        // E[cos(noise)] = exp(-sigma^2 / 2) shrinks the mean; undo it.
        const double inflate = std::exp(0.5 * t.angular_noise * t.angular_noise);
        const double q_rad = t.q_radius * inflate;
        const double k_rad = t.k_radius * inflate;
        for (std::int64_t n = 0; n < spec.n_positions; ++n) {
          double qa = alpha;
          double ka = alpha + t.phi;
          if (t.angular_noise > 0.0) {
            qa += t.angular_noise * jitter(rng);
            ka += t.angular_noise * jitter(rng);
          }
          if (sinks.contains(n)) {
            ka = alpha;
          }
          const std::int64_t row = head_offset + n * config.head_dim;
          q[static_cast<std::size_t>(row + dims.first)] = q_rad * std::cos(qa);
          q[static_cast<std::size_t>(row + dims.second)] = q_rad * std::sin(qa);
          k[static_cast<std::size_t>(row + dims.first)] = k_rad * std::cos(ka);
          k[static_cast<std::size_t>(row + dims.second)] = k_rad * std::sin(ka);
        }
      }
    }
  }
  return ActivationDumpd(std::move(meta), std::move(q), std::move(k));
}

} // namespace rofkit
