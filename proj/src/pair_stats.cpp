// SPDX-License-Identifier: Apache-2.0

#include "rofkit/pair_stats.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>

namespace rofkit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Below this the resultant is indistinguishable from rounding noise.
constexpr double kVanishingResultant = 1e-12;

struct SideSummary {
  RotaryPaird mean = RotaryPaird::Zero();
  RotaryPaird max_abs = RotaryPaird::Zero();
  double circ_std = std::numeric_limits<double>::infinity();
  std::int64_t angle_samples = 0;
};

std::vector<char> position_mask(std::int64_t n_positions, const std::vector<std::int64_t> &excluded) {
  std::vector<char> keep(static_cast<std::size_t>(n_positions), 1);
  for (const auto p : excluded) {
    if (p < 0 || p >= n_positions) {
      throw ValidationError("excluded position " + std::to_string(p) + " outside [0, " +
                            std::to_string(n_positions) + ")");
    }
    keep[static_cast<std::size_t>(p)] = 0;
  }
  return keep;
}

template <typename Map>
SideSummary summarize_pair(const Map &block, const PairDims &dims, const std::vector<char> &keep,
                           double angle_floor) {
  SideSummary out;
  RotaryPaird sum = RotaryPaird::Zero();
  double cos_sum = 0.0;
  double sin_sum = 0.0;
  std::int64_t used = 0;
  for (Index n = 0; n < block.rows(); ++n) {
    if (!keep[static_cast<std::size_t>(n)]) {
      continue;
    }
    const RotaryPaird v(static_cast<double>(block(n, dims.first)), static_cast<double>(block(n, dims.second)));
    sum += v;
    out.max_abs = out.max_abs.cwiseMax(v.cwiseAbs());
    ++used;
    const double norm = v.norm();
    if (norm >= angle_floor) {
      cos_sum += v(0) / norm;
      sin_sum += v(1) / norm;
      ++out.angle_samples;
    }
  }
  if (used == 0) {
    throw ValidationError("every position was excluded; nothing to average");
  }
  out.mean = sum / static_cast<double>(used);
  if (out.angle_samples > 0) {
    const double r = std::hypot(cos_sum, sin_sum) / static_cast<double>(out.angle_samples);
    out.circ_std = r < kVanishingResultant ? std::numeric_limits<double>::infinity()
                                           : std::sqrt(-2.0 * std::log(std::min(r, 1.0)));
  }
  return out;
}

} // namespace

PairStatsTable::PairStatsTable(std::int64_t n_layers, std::int64_t n_q_heads, Index n_pairs,
                               std::vector<PairStatsEntry> entries)
    : n_layers_(n_layers), n_q_heads_(n_q_heads), n_pairs_(n_pairs), entries_(std::move(entries)) {
  if (static_cast<std::int64_t>(entries_.size()) != n_layers_ * n_q_heads_ * n_pairs_) {
    throw ShapeError("pair stats table expects " + std::to_string(n_layers_ * n_q_heads_ * n_pairs_) +
                     " entries, got " + std::to_string(entries_.size()));
  }
}

const PairStatsEntry &PairStatsTable::at(std::int64_t layer, std::int64_t q_head, Index pair) const {
  if (pair < 0 || pair >= n_pairs_) {
    throw ValidationError("pair " + std::to_string(pair) + " out of range [0, " + std::to_string(n_pairs_) + ")");
  }
  return head(layer, q_head)[static_cast<std::size_t>(pair)];
}

std::span<const PairStatsEntry> PairStatsTable::head(std::int64_t layer, std::int64_t q_head) const {
  if (layer < 0 || layer >= n_layers_ || q_head < 0 || q_head >= n_q_heads_) {
    throw ValidationError("(layer " + std::to_string(layer) + ", head " + std::to_string(q_head) +
                          ") outside the stats table");
  }
  const auto offset = static_cast<std::size_t>((layer * n_q_heads_ + q_head) * n_pairs_);
  return std::span<const PairStatsEntry>(entries_).subspan(offset, static_cast<std::size_t>(n_pairs_));
}

void check_config_matches(const DumpMeta &meta, const RopeConfig &config) {
  config.validate();
  if (config.head_dim != meta.head_dim || config.rotary_dim != meta.rotary_dim) {
    throw ShapeError("config (head_dim " + std::to_string(config.head_dim) + ", rotary_dim " +
                     std::to_string(config.rotary_dim) + ") does not match dump (head_dim " +
                     std::to_string(meta.head_dim) + ", rotary_dim " + std::to_string(meta.rotary_dim) + ")");
  }
}

template <typename Scalar>
PairStatsTable mean_vectors(const BasicActivationDump<Scalar> &dump, const RopeConfig &config,
                            const StatsOptions &options) {
  dump.require_pre_rotation();
  const auto &meta = dump.meta();
  check_config_matches(meta, config);
  const auto keep = position_mask(meta.n_positions, options.exclude_positions);
  const Index n_pairs = config.num_pairs();

  std::vector<PairStatsEntry> entries;
  entries.reserve(static_cast<std::size_t>(meta.n_layers * meta.n_q_heads * n_pairs));
  std::vector<SideSummary> key_cache(static_cast<std::size_t>(meta.n_kv_heads * n_pairs));

  for (std::int64_t layer = 0; layer < meta.n_layers; ++layer) {
    for (std::int64_t kv = 0; kv < meta.n_kv_heads; ++kv) {
      const auto block = dump.keys(layer, kv);
      for (Index i = 0; i < n_pairs; ++i) {
        key_cache[static_cast<std::size_t>(kv * n_pairs + i)] =
            summarize_pair(block, pair_dims(config, i), keep, options.angle_floor);
      }
    }
    for (std::int64_t h = 0; h < meta.n_q_heads; ++h) {
      const auto block = dump.queries(layer, h);
      const std::int64_t kv = dump.kv_head_for(h);
      for (Index i = 0; i < n_pairs; ++i) {
        const auto qs = summarize_pair(block, pair_dims(config, i), keep, options.angle_floor);
        const auto &ks = key_cache[static_cast<std::size_t>(kv * n_pairs + i)];
        PairStatsEntry e;
        e.layer = layer;
        e.q_head = h;
        e.pair = i;
        e.q_mean = qs.mean;
        e.k_mean = ks.mean;
        e.q_radius = qs.mean.norm();
        e.k_radius = ks.mean.norm();
        if (e.q_radius > 0.0 && e.k_radius > 0.0) {
          e.phi = angle_between(e.q_mean, e.k_mean);
        }
        e.q_circ_std = qs.circ_std;
        e.k_circ_std = ks.circ_std;
        e.q_max_abs = qs.max_abs;
        e.k_max_abs = ks.max_abs;
        entries.push_back(e);
      }
    }
  }
  return PairStatsTable(meta.n_layers, meta.n_q_heads, n_pairs, std::move(entries));
}

template PairStatsTable mean_vectors(const ActivationDump &, const RopeConfig &, const StatsOptions &);
template PairStatsTable mean_vectors(const ActivationDumpd &, const RopeConfig &, const StatsOptions &);

double angle_between(const RotaryPaird &q_mean, const RotaryPaird &k_mean) {
  if (q_mean.squaredNorm() == 0.0 || k_mean.squaredNorm() == 0.0) {
    throw UndefinedAngleError("angle between mean vectors is undefined for a zero-length mean");
  }
  double phi = std::atan2(k_mean(1), k_mean(0)) - std::atan2(q_mean(1), q_mean(0));
  phi = std::fmod(phi, kTwoPi);
  if (phi <= 0.0) {
    phi += kTwoPi;
  }
  return phi;
}

double mean_resultant_length(std::span<const double> angles) {
  if (angles.empty()) {
    throw ValidationError("mean resultant length of an empty angle set");
  }
  double c = 0.0;
  double s = 0.0;
  for (const double a : angles) {
    c += std::cos(a);
    s += std::sin(a);
  }
  return std::hypot(c, s) / static_cast<double>(angles.size());
}

double circular_std(std::span<const double> angles) {
  const double r = mean_resultant_length(angles);
  if (r < kVanishingResultant) {
    return std::numeric_limits<double>::infinity();
  }
  return std::sqrt(-2.0 * std::log(std::min(r, 1.0)));
}

std::string_view to_string(Reducer reducer) { return reducer == Reducer::MaxAbs ? "max_abs" : "mean_abs"; }

Reducer parse_reducer(std::string_view name) {
  if (name == "max_abs") {
    return Reducer::MaxAbs;
  }
  if (name == "mean_abs") {
    return Reducer::MeanAbs;
  }
  throw ConfigError("unknown reducer '" + std::string(name) + "' (expected max_abs or mean_abs)");
}

template <typename Scalar>
MagnitudeMatrix magnitude_summary(const BasicActivationDump<Scalar> &dump, Side side, Reducer reducer) {
  const auto &meta = dump.meta();
  const std::int64_t n_heads = meta.heads(side);
  MagnitudeMatrix out;
  out.reducer = reducer;
  out.side = side;
  out.values = Eigen::MatrixXd::Zero(meta.n_layers, meta.head_dim);
  for (std::int64_t layer = 0; layer < meta.n_layers; ++layer) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(meta.head_dim);
    for (std::int64_t h = 0; h < n_heads; ++h) {
      const Eigen::MatrixXd block = dump.head(side, layer, h).template cast<double>().cwiseAbs();
      if (reducer == Reducer::MaxAbs) {
        acc = acc.cwiseMax(block.colwise().maxCoeff());
      } else {
        acc += block.colwise().sum();
      }
    }
    if (reducer == Reducer::MeanAbs) {
      acc /= static_cast<double>(n_heads * meta.n_positions);
    }
    out.values.row(layer) = acc;
  }
  return out;
}

template MagnitudeMatrix magnitude_summary(const ActivationDump &, Side, Reducer);
template MagnitudeMatrix magnitude_summary(const ActivationDumpd &, Side, Reducer);

template <typename Scalar>
std::vector<SpreadPoint> spread_vs_radius(const BasicActivationDump<Scalar> &dump, const RopeConfig &config,
                                          Side side, Index pair, double angle_floor) {
  dump.require_pre_rotation();
  const auto &meta = dump.meta();
  check_config_matches(meta, config);
  const auto dims = pair_dims(config, pair);
  const std::vector<char> keep(static_cast<std::size_t>(meta.n_positions), 1);
  std::vector<SpreadPoint> points;
  for (std::int64_t layer = 0; layer < meta.n_layers; ++layer) {
    for (std::int64_t h = 0; h < meta.heads(side); ++h) {
      const auto s = summarize_pair(dump.head(side, layer, h), dims, keep, angle_floor);
      if (s.angle_samples == 0) {
        continue;
      }
      points.push_back({layer, h, s.mean.norm(), s.circ_std, s.angle_samples});
    }
  }
  return points;
}

template std::vector<SpreadPoint> spread_vs_radius(const ActivationDump &, const RopeConfig &, Side, Index, double);
template std::vector<SpreadPoint> spread_vs_radius(const ActivationDumpd &, const RopeConfig &, Side, Index, double);

std::vector<SpreadPoint> bin_by_radius(std::vector<SpreadPoint> points, std::size_t n_bins) {
  if (n_bins == 0) {
    throw ValidationError("radius binning needs at least one bin");
  }
  std::stable_sort(points.begin(), points.end(),
                   [](const SpreadPoint &a, const SpreadPoint &b) { return a.radius < b.radius; });
  n_bins = std::min(n_bins, points.size());
  std::vector<SpreadPoint> bins;
  bins.reserve(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t lo = b * points.size() / n_bins;
    const std::size_t hi = (b + 1) * points.size() / n_bins;
    SpreadPoint bin{-1, -1, 0.0, 0.0, 0};
    for (std::size_t i = lo; i < hi; ++i) {
      bin.radius += points[i].radius;
      bin.circ_std += points[i].circ_std;
      bin.samples += points[i].samples;
    }
    bin.radius /= static_cast<double>(hi - lo);
    bin.circ_std /= static_cast<double>(hi - lo);
    bins.push_back(bin);
  }
  return bins;
}

} // namespace rofkit
