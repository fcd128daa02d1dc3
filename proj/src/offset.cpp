// SPDX-License-Identifier: Apache-2.0

#include "rofkit/offset.hpp"

#include <cmath>
#include <numbers>

namespace rofkit {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_p_max(std::int64_t p_max) {
  if (p_max < 1) {
    throw ValidationError("p_max must be at least 1, got " + std::to_string(p_max));
  }
}

} // namespace

bool eligible(double theta, std::int64_t p_max) {
  check_p_max(p_max);
  return theta < kTwoPi / static_cast<double>(p_max);
}

bool eligible(const RopeConfig &config, Index pair) {
  const auto thetas = theta_schedule(config);
  pair_dims(config, pair);
  return eligible(thetas(pair), config.p_max);
}

double lower_bound(double theta, std::int64_t p_max) {
  check_p_max(p_max);
  return kPi + static_cast<double>(p_max) * theta / 2.0;
}

double lower_bound(const RopeConfig &config, Index pair) {
  const auto thetas = theta_schedule(config);
  pair_dims(config, pair);
  return lower_bound(thetas(pair), config.p_max);
}

bool classify_continuous(double phi, double theta, std::int64_t p_max) {
  check_p_max(p_max);
  if (!(phi > 0.0 && phi <= kTwoPi)) {
    throw ValidationError("phi must lie in (0, 2pi]");
  }
  if (!(theta > 0.0 && std::isfinite(theta))) {
    throw ValidationError("theta must be positive and finite");
  }
  // cos(phi - x) first climbs back to cos(phi) at x = 2 phi - 2 pi.
  return phi > kPi && theta * static_cast<double>(p_max) < 2.0 * phi - kTwoPi;
}

bool classify_discrete(const RotaryPaird &q_mean, const RotaryPaird &k_mean, double theta, std::int64_t p_max) {
  check_p_max(p_max);
  if (q_mean.squaredNorm() == 0.0 || k_mean.squaredNorm() == 0.0) {
    return false;
  }
  // d(p) - d(0) = (R(x) q - q) . k with R(x) q - q = (cos x - 1) q + sin x Jq.
  // The half-angle form keeps small x from cancelling away.
  const double qk = q_mean.dot(k_mean);
  const double jqk = -q_mean(1) * k_mean(0) + q_mean(0) * k_mean(1);
  for (std::int64_t p = 1; p <= p_max; ++p) {
    const double x = static_cast<double>(p) * theta;
    const double half = std::sin(0.5 * x);
    const double change = -2.0 * half * half * qk + std::sin(x) * jqk;
    if (!(change < 0.0)) {
      return false;
    }
  }
  return true;
}

std::vector<OffsetVerdict> verdicts(const PairStatsTable &stats, const RopeConfig &config) {
  const auto thetas = theta_schedule(config);
  if (stats.n_pairs() != config.num_pairs()) {
    throw ShapeError("stats have " + std::to_string(stats.n_pairs()) + " pairs, config has " +
                     std::to_string(config.num_pairs()));
  }
  std::vector<OffsetVerdict> out;
  out.reserve(stats.entries().size());
  for (const auto &e : stats.entries()) {
    OffsetVerdict v;
    v.layer = e.layer;
    v.q_head = e.q_head;
    v.pair = e.pair;
    v.theta = thetas(e.pair);
    v.eligible = eligible(v.theta, config.p_max);
    v.lower_bound = lower_bound(v.theta, config.p_max);
    v.angle_defined = e.angle_defined();
    v.phi = e.phi;
    v.q_radius = e.q_radius;
    v.k_radius = e.k_radius;
    if (v.angle_defined) {
      v.is_rof_continuous = classify_continuous(e.phi, v.theta, config.p_max);
      v.is_rof_discrete = classify_discrete(e.q_mean, e.k_mean, v.theta, config.p_max);
    }
    out.push_back(v);
  }
  return out;
}

OffsetSummary summary(const RopeConfig &config) {
  const auto thetas = theta_schedule(config);
  OffsetSummary s;
  s.n_pairs = config.num_pairs();
  double lb_sum = 0.0;
  for (Index i = 0; i < s.n_pairs; ++i) {
    if (eligible(thetas(i), config.p_max)) {
      ++s.n_eligible;
      lb_sum += lower_bound(thetas(i), config.p_max);
    }
  }
  s.rof_fraction = static_cast<double>(s.n_eligible) / static_cast<double>(s.n_pairs);
  if (s.n_eligible > 0) {
    s.mean_lower_bound = lb_sum / static_cast<double>(s.n_eligible);
  }
  return s;
}

std::vector<RecallRow> recall_table(std::span<const OffsetVerdict> rows, const RecallOptions &options) {
  if (options.thresholds.empty()) {
    throw ValidationError("recall table needs at least one radius threshold");
  }
  std::vector<RecallRow> table;
  table.reserve(options.thresholds.size());
  for (const double threshold : options.thresholds) {
    RecallRow row;
    row.min_radius = threshold;
    std::int64_t ub = 0;
    std::int64_t lb = 0;
    std::int64_t relaxed = 0;
    for (const auto &v : rows) {
      const double radius = options.side == Side::Key ? v.k_radius : v.q_radius;
      if (!(radius >= threshold)) {
        continue;
      }
      ++row.positives;
      ub += v.eligible ? 1 : 0;
      // NaN phi (undefined angle) fails both comparisons.
      lb += v.phi > v.lower_bound ? 1 : 0;
      relaxed += v.phi > v.lower_bound - options.relax ? 1 : 0;
    }
    if (row.positives > 0) {
      const auto n = static_cast<double>(row.positives);
      row.ub_recall = static_cast<double>(ub) / n;
      row.lb_recall = static_cast<double>(lb) / n;
      row.lb_relaxed_recall = static_cast<double>(relaxed) / n;
    }
    table.push_back(row);
  }
  return table;
}

std::string_view to_string(CandidateGroup group) {
  switch (group) {
  case CandidateGroup::DroppedCandidate:
    return "dropped_candidate";
  case CandidateGroup::RetainedCandidate:
    return "retained_candidate";
  case CandidateGroup::NeverCandidate:
    return "never_candidate";
  case CandidateGroup::GainedCandidate:
    return "gained_candidate";
  }
  return "unknown";
}

ExtensionComparison compare_extension(const PairStatsTable &stats_base, const RopeConfig &config_base,
                                      const PairStatsTable &stats_ext, const RopeConfig &config_ext) {
  if (!stats_base.same_shape(stats_ext)) {
    throw ShapeError("base and extended stats differ in (layers, heads, pairs) shape");
  }
  if (config_base.num_pairs() != stats_base.n_pairs() || config_ext.num_pairs() != stats_ext.n_pairs()) {
    throw ShapeError("config rotary pairs do not match the stats tables");
  }
  const auto theta_base = theta_schedule(config_base);
  const auto theta_ext = theta_schedule(config_ext);

  ExtensionComparison out;
  out.deltas.reserve(stats_base.entries().size());
  for (std::int64_t layer = 0; layer < stats_base.n_layers(); ++layer) {
    for (std::int64_t h = 0; h < stats_base.n_q_heads(); ++h) {
      HeadGroupSums head_sums;
      head_sums.layer = layer;
      head_sums.q_head = h;
      const auto before = stats_base.head(layer, h);
      const auto after = stats_ext.head(layer, h);
      for (Index i = 0; i < stats_base.n_pairs(); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        ExtensionDelta d;
        d.layer = layer;
        d.q_head = h;
        d.pair = i;
        d.radius_before = before[idx].k_radius;
        d.radius_after = after[idx].k_radius;
        d.eligible_before = eligible(theta_base(i), config_base.p_max);
        d.eligible_after = eligible(theta_ext(i), config_ext.p_max);
        if (d.eligible_before) {
          d.group = d.eligible_after ? CandidateGroup::RetainedCandidate : CandidateGroup::DroppedCandidate;
        } else {
          d.group = d.eligible_after ? CandidateGroup::GainedCandidate : CandidateGroup::NeverCandidate;
        }
        for (GroupSums *sums : {&head_sums.groups[static_cast<std::size_t>(d.group)],
                                &out.global[static_cast<std::size_t>(d.group)]}) {
          ++sums->count;
          sums->radius_before += d.radius_before;
          sums->radius_after += d.radius_after;
        }
        out.deltas.push_back(d);
      }
      out.per_head.push_back(head_sums);
    }
  }
  return out;
}

} // namespace rofkit
