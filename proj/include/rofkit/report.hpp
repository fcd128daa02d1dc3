// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

#include "rofkit/decompose.hpp"
#include "rofkit/offset.hpp"
#include "rofkit/pair_stats.hpp"

namespace rofkit {

// Shortest decimal that round-trips; "nan", "inf", "-inf" for non-finite.
std::string format_real(double value);

// CSV writers. Column order is fixed and documented in the README.
void write_pair_stats_csv(const PairStatsTable &stats, std::ostream &out);
void write_verdicts_csv(std::span<const OffsetVerdict> rows, std::ostream &out);
// A nonempty `source` adds a leading column, for multi-dump runs.
void write_recall_csv(std::span<const RecallRow> rows, std::ostream &out, std::string_view source = {},
                      bool header = true);
void write_profile_csv(const DecompositionProfile &profile, std::ostream &out);
void write_attention_csv(const AttentionMatrix &attention, std::ostream &out);
void write_magnitude_csv(const MagnitudeMatrix &matrix, std::ostream &out);
void write_spread_csv(std::span<const SpreadPoint> points, std::ostream &out);
void write_sink_csv(const SinkScores &sinks, const DumpMeta &meta, std::ostream &out);
void write_extension_csv(const ExtensionComparison &comparison, std::ostream &out);
void write_extension_sums_csv(const ExtensionComparison &comparison, std::ostream &out);

// Human-readable per-pair frequency/bound table plus the %ROF and Mean LB
// summary lines.
void write_bounds_table(const RopeConfig &config, bool all_pairs, std::ostream &out);

// Radius against query-key angle, one panel per rotary pair, points colored
// by layer. Eligible pairs get a dashed vertical line at their lower bound.
void emit_scatter(std::span<const OffsetVerdict> rows, const RopeConfig &config, std::ostream &out);

// Layer x dim grid with dashed separators at the rotary/non-rotary boundary
// and between the two halves of the sliced pairs.
void emit_heatmap(const MagnitudeMatrix &matrix, const RopeConfig &config, std::ostream &out);

// Attention weights as a grid. Matrices wider than `max_cells` are max-pooled
// down to that many cells per side.
void emit_attention_heatmap(const AttentionMatrix &attention, std::ostream &out, Index max_cells = 512);

} // namespace rofkit
