// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rofkit/dump.hpp"
#include "rofkit/rope.hpp"

namespace rofkit {

// Pair vectors shorter than this are left out of angle samples.
inline constexpr double kDefaultAngleFloor = 1e-6;

// Summary of one feature, i.e. one (layer, query head, rotary pair). Key
// fields come from the kv head the query head reads from.
struct PairStatsEntry {
  std::int64_t layer = 0;
  std::int64_t q_head = 0;
  Index pair = 0;
  RotaryPaird q_mean = RotaryPaird::Zero();
  RotaryPaird k_mean = RotaryPaird::Zero();
  double q_radius = 0.0;
  double k_radius = 0.0;
  // Counterclockwise sweep from q_mean to k_mean in (0, 2pi]; NaN when either
  // mean has zero length.
  double phi = std::numeric_limits<double>::quiet_NaN();
  double q_circ_std = std::numeric_limits<double>::infinity();
  double k_circ_std = std::numeric_limits<double>::infinity();
  // Largest |value| seen in each of the pair's two dims.
  RotaryPaird q_max_abs = RotaryPaird::Zero();
  RotaryPaird k_max_abs = RotaryPaird::Zero();

  bool angle_defined() const { return !std::isnan(phi); }
};

class PairStatsTable {
public:
  PairStatsTable() = default;
  PairStatsTable(std::int64_t n_layers, std::int64_t n_q_heads, Index n_pairs, std::vector<PairStatsEntry> entries);

  std::int64_t n_layers() const { return n_layers_; }
  std::int64_t n_q_heads() const { return n_q_heads_; }
  Index n_pairs() const { return n_pairs_; }

  const std::vector<PairStatsEntry> &entries() const { return entries_; }
  const PairStatsEntry &at(std::int64_t layer, std::int64_t q_head, Index pair) const;
  // All pairs of one head, ordered by pair index.
  std::span<const PairStatsEntry> head(std::int64_t layer, std::int64_t q_head) const;

  bool same_shape(const PairStatsTable &other) const {
    return n_layers_ == other.n_layers_ && n_q_heads_ == other.n_q_heads_ && n_pairs_ == other.n_pairs_;
  }

private:
  std::int64_t n_layers_ = 0;
  std::int64_t n_q_heads_ = 0;
  Index n_pairs_ = 0;
  std::vector<PairStatsEntry> entries_;
};

struct StatsOptions {
  double angle_floor = kDefaultAngleFloor;
  // Positions left out of every mean and spread, for sink sensitivity checks.
  std::vector<std::int64_t> exclude_positions;
};

// Throws ShapeError when the config's dims disagree with the dump header.
void check_config_matches(const DumpMeta &meta, const RopeConfig &config);

template <typename Scalar>
PairStatsTable mean_vectors(const BasicActivationDump<Scalar> &dump, const RopeConfig &config,
                            const StatsOptions &options = {});

double angle_between(const RotaryPaird &q_mean, const RotaryPaird &k_mean);

// Mean resultant length of the unit vectors at the given angles.
double mean_resultant_length(std::span<const double> angles);

// sqrt(-2 ln R), +inf when the resultant vanishes.
double circular_std(std::span<const double> angles);

enum class Reducer { MaxAbs, MeanAbs };

std::string_view to_string(Reducer reducer);
Reducer parse_reducer(std::string_view name);

struct MagnitudeMatrix {
  Reducer reducer = Reducer::MaxAbs;
  Side side = Side::Key;
  Eigen::MatrixXd values; // [n_layers x head_dim]
};

template <typename Scalar>
MagnitudeMatrix magnitude_summary(const BasicActivationDump<Scalar> &dump, Side side, Reducer reducer);

struct SpreadPoint {
  std::int64_t layer = 0;
  std::int64_t head = 0;
  double radius = 0.0;
  double circ_std = 0.0;
  std::int64_t samples = 0;
};

// One point per (layer, head) of the chosen side. Heads whose pair never
// clears the angle floor are dropped.
template <typename Scalar>
std::vector<SpreadPoint> spread_vs_radius(const BasicActivationDump<Scalar> &dump, const RopeConfig &config,
                                          Side side, Index pair, double angle_floor = kDefaultAngleFloor);

// Equal-count radius bins; each output point averages radius and spread over
// its bin (layer and head set to -1).
std::vector<SpreadPoint> bin_by_radius(std::vector<SpreadPoint> points, std::size_t n_bins);

} // namespace rofkit
