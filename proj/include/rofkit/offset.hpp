// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rofkit/dump.hpp"
#include "rofkit/pair_stats.hpp"
#include "rofkit/rope.hpp"

namespace rofkit {

// A rotary offset feature is a pair whose mean-vector dot product stays
// strictly below its zero-distance value for every distance 1..p_max.
//
// Two necessary conditions follow for a pair with frequency theta and
// query-key angle phi:
//   frequency bound:  theta < 2 pi / p_max   (never completes a period)
//   angle bound:      phi > pi + p_max theta / 2
// All comparisons are strict; boundary cases are not offset features.

bool eligible(double theta, std::int64_t p_max);
bool eligible(const RopeConfig &config, Index pair);

double lower_bound(double theta, std::int64_t p_max);
double lower_bound(const RopeConfig &config, Index pair);

// Closed form over continuous distances x in (0, theta p_max]:
// cos(phi - x) < cos(phi) throughout iff phi > pi and theta p_max < 2 phi - 2 pi.
bool classify_continuous(double phi, double theta, std::int64_t p_max);

// Checks d(p) < d(0) at every integer p = 1..p_max by rotating q_mean.
// Zero-length means give a constant d and are never offset features.
bool classify_discrete(const RotaryPaird &q_mean, const RotaryPaird &k_mean, double theta, std::int64_t p_max);

struct OffsetVerdict {
  std::int64_t layer = 0;
  std::int64_t q_head = 0;
  Index pair = 0;
  double theta = 0.0;
  bool eligible = false;
  double lower_bound = 0.0;
  bool is_rof_discrete = false;
  bool is_rof_continuous = false;
  // False when either mean had zero length; such rows are never offset
  // features and phi is NaN.
  bool angle_defined = false;
  double phi = 0.0;
  double q_radius = 0.0;
  double k_radius = 0.0;
};

std::vector<OffsetVerdict> verdicts(const PairStatsTable &stats, const RopeConfig &config);

struct OffsetSummary {
  Index n_pairs = 0;
  Index n_eligible = 0;
  double rof_fraction = 0.0;
  // Mean lower bound over eligible pairs; empty when none are eligible.
  std::optional<double> mean_lower_bound;
};

OffsetSummary summary(const RopeConfig &config);

struct RecallOptions {
  std::vector<double> thresholds{6.0, 9.0, 12.0};
  double relax = 0.1;
  // Radius that decides positives; the published metrics use keys.
  Side side = Side::Key;
};

// Recalls are empty (undefined) when a threshold has no positives.
struct RecallRow {
  double min_radius = 0.0;
  std::int64_t positives = 0;
  std::optional<double> ub_recall;
  std::optional<double> lb_recall;
  std::optional<double> lb_relaxed_recall;
};

std::vector<RecallRow> recall_table(std::span<const OffsetVerdict> rows, const RecallOptions &options = {});

enum class CandidateGroup {
  DroppedCandidate,  // eligible before, not after
  RetainedCandidate, // eligible under both
  NeverCandidate,    // eligible under neither
  GainedCandidate,   // eligible only after (possible with remapped frequencies)
};

inline constexpr std::size_t kCandidateGroups = 4;

std::string_view to_string(CandidateGroup group);

struct ExtensionDelta {
  std::int64_t layer = 0;
  std::int64_t q_head = 0;
  Index pair = 0;
  double radius_before = 0.0;
  double radius_after = 0.0;
  bool eligible_before = false;
  bool eligible_after = false;
  CandidateGroup group = CandidateGroup::NeverCandidate;

  double delta() const { return radius_after - radius_before; }
};

struct GroupSums {
  std::int64_t count = 0;
  double radius_before = 0.0;
  double radius_after = 0.0;
};

using GroupTotals = std::array<GroupSums, kCandidateGroups>;

struct HeadGroupSums {
  std::int64_t layer = 0;
  std::int64_t q_head = 0;
  GroupTotals groups{};
};

struct ExtensionComparison {
  std::vector<ExtensionDelta> deltas;
  std::vector<HeadGroupSums> per_head;
  GroupTotals global{};
};

// Key-radius changes between a base model and its context-extended variant,
// grouped by how eligibility moves between the two configs.
ExtensionComparison compare_extension(const PairStatsTable &stats_base, const RopeConfig &config_base,
                                      const PairStatsTable &stats_ext, const RopeConfig &config_ext);

} // namespace rofkit
