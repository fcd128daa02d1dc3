// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "rofkit/rope.hpp"

namespace rofkit {

enum class Side { Query, Key };

std::string_view to_string(Side side);
Side parse_side(std::string_view name);

// Header of an RKD1 file. Field names double as the header's JSON keys.
struct DumpMeta {
  std::string model_name;
  std::int64_t n_layers = 0;
  std::int64_t n_q_heads = 0;
  std::int64_t n_kv_heads = 0;
  std::int64_t n_positions = 0;
  Index head_dim = 0;
  Index rotary_dim = 0;
  double rope_base = 10000.0;
  std::int64_t p_max_config = 0;
  Layout layout = Layout::SlicedFirst;
  bool pre_rotation = true;
  std::optional<std::vector<std::string>> tokens;

  void validate() const;

  std::int64_t query_count() const { return n_layers * n_q_heads * n_positions * head_dim; }
  std::int64_t key_count() const { return n_layers * n_kv_heads * n_positions * head_dim; }
  std::int64_t group_size() const { return n_q_heads / n_kv_heads; }
  std::int64_t heads(Side side) const { return side == Side::Query ? n_q_heads : n_kv_heads; }

  // RopeConfig implied by the header; callers override p_max or frequencies
  // when the analysis needs an effective context length.
  RopeConfig rope_config() const;

  bool operator==(const DumpMeta &) const = default;
};

// Pre-rotation queries and keys, [layer][head][position][dim] row-major.
// Float dumps mirror the file payload exactly; double dumps come from the
// synthesizer, where exact means matter more than storage size.
template <typename Scalar> class BasicActivationDump {
public:
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstHeadMap = Eigen::Map<const RowMatrix>;

  BasicActivationDump() = default;
  // Validates metadata and tensor sizes; values are checked by validate().
  BasicActivationDump(DumpMeta meta, std::vector<Scalar> q, std::vector<Scalar> k);

  const DumpMeta &meta() const { return meta_; }
  std::span<const Scalar> query_data() const { return q_; }
  std::span<const Scalar> key_data() const { return k_; }

  // [n_positions x head_dim] block for one head.
  ConstHeadMap queries(std::int64_t layer, std::int64_t q_head) const;
  ConstHeadMap keys(std::int64_t layer, std::int64_t kv_head) const;
  ConstHeadMap head(Side side, std::int64_t layer, std::int64_t head) const;

  std::int64_t kv_head_for(std::int64_t q_head) const;

  // Throws ValidationError naming the first non-finite entry.
  void validate() const;

  // Throws ValidationError unless the activations were captured pre-rotation.
  void require_pre_rotation() const;

  template <typename Other> BasicActivationDump<Other> cast() const {
    return BasicActivationDump<Other>(meta_, std::vector<Other>(q_.begin(), q_.end()),
                                      std::vector<Other>(k_.begin(), k_.end()));
  }

  bool operator==(const BasicActivationDump &) const = default;

private:
  void check_head(std::int64_t layer, std::int64_t head, std::int64_t n_heads) const;

  DumpMeta meta_;
  std::vector<Scalar> q_;
  std::vector<Scalar> k_;
};

using ActivationDump = BasicActivationDump<float>;
using ActivationDumpd = BasicActivationDump<double>;

inline constexpr char kDumpMagic[4] = {'R', 'K', 'D', '1'};

// Byte offset of the first payload float for a header of the given length.
inline std::uint64_t payload_offset(std::uint64_t header_length) { return 8 + header_length; }

std::string encode_header(const DumpMeta &meta);
DumpMeta decode_header(std::string_view text);

// Returns the number of bytes written. Payload is narrowed to f32.
template <typename Scalar> std::uint64_t write_dump(const BasicActivationDump<Scalar> &dump, std::ostream &out);
template <typename Scalar>
std::uint64_t write_dump(const BasicActivationDump<Scalar> &dump, const std::filesystem::path &path);

ActivationDump read_dump(std::istream &in);
ActivationDump read_dump(const std::filesystem::path &path);

// Target geometry for one rotary pair of a synthetic head.
struct PairTarget {
  double phi = 3.14159265358979323846; // counterclockwise from mean query to mean key, (0, 2pi]
  double q_radius = 1.0;
  double k_radius = 1.0;
  double angular_noise = 0.0; // std dev of the wrapped-normal angle jitter
  std::vector<std::int64_t> sink_positions;
};

struct SynthSpec {
  // One record per rotary pair, used for every head without an override.
  std::vector<PairTarget> pairs;
  std::int64_t n_positions = 0;
  std::uint64_t seed = 0;
  std::int64_t n_layers = 1;
  std::int64_t n_heads = 1;
  // Per-(layer, head) replacement of `pairs`.
  std::map<std::pair<std::int64_t, std::int64_t>, std::vector<PairTarget>> head_pairs;

  void validate(const RopeConfig &config) const;
};

// Deterministic given spec.seed. Per position, each pair's query sits at a
// random per-pair base angle and the key at base + phi, both jittered by
// angular_noise and scaled so the expected mean radius hits the target. Sink
// positions get keys along the base (mean query) direction.
ActivationDumpd synth_dump(const SynthSpec &spec, const RopeConfig &config);

} // namespace rofkit
