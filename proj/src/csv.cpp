// SPDX-License-Identifier: Apache-2.0

#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "rofkit/report.hpp"

namespace rofkit {

namespace {

std::string opt(const std::optional<double> &v) { return v ? format_real(*v) : "nan"; }

// Minimal RFC 4180 quoting for free text such as token strings.
std::string quote(std::string_view text) {
  if (text.find_first_of(",\"\n\r") == std::string_view::npos) {
    return std::string(text);
  }
  std::string out = "\"";
  for (const char c : text) {
    if (c == '"') {
      out += '"';
    }
    out += c;
  }
  out += '"';
  return out;
}

} // namespace

std::string format_real(double value) {
  if (std::isnan(value)) {
    return "nan";
  }
  if (std::isinf(value)) {
    return value > 0 ? "inf" : "-inf";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_pair_stats_csv(const PairStatsTable &stats, std::ostream &out) {
  out << "layer,q_head,pair,q_mean_x,q_mean_y,k_mean_x,k_mean_y,q_radius,k_radius,phi,q_circ_std,k_circ_std,"
         "q_max_abs_x,q_max_abs_y,k_max_abs_x,k_max_abs_y\n";
  for (const auto &e : stats.entries()) {
    out << e.layer << ',' << e.q_head << ',' << e.pair << ',' << format_real(e.q_mean(0)) << ','
        << format_real(e.q_mean(1)) << ',' << format_real(e.k_mean(0)) << ',' << format_real(e.k_mean(1)) << ','
        << format_real(e.q_radius) << ',' << format_real(e.k_radius) << ',' << format_real(e.phi) << ','
        << format_real(e.q_circ_std) << ',' << format_real(e.k_circ_std) << ',' << format_real(e.q_max_abs(0))
        << ',' << format_real(e.q_max_abs(1)) << ',' << format_real(e.k_max_abs(0)) << ','
        << format_real(e.k_max_abs(1)) << '\n';
  }
}

void write_verdicts_csv(std::span<const OffsetVerdict> rows, std::ostream &out) {
  out << "layer,q_head,pair,theta,eligible,lower_bound,phi,q_radius,k_radius,angle_defined,is_rof_discrete,"
         "is_rof_continuous\n";
  for (const auto &v : rows) {
    out << v.layer << ',' << v.q_head << ',' << v.pair << ',' << format_real(v.theta) << ',' << int(v.eligible)
        << ',' << format_real(v.lower_bound) << ',' << format_real(v.phi) << ',' << format_real(v.q_radius) << ','
        << format_real(v.k_radius) << ',' << int(v.angle_defined) << ',' << int(v.is_rof_discrete) << ','
        << int(v.is_rof_continuous) << '\n';
  }
}

void write_recall_csv(std::span<const RecallRow> rows, std::ostream &out, std::string_view source, bool header) {
  const bool with_source = !source.empty();
  if (header) {
    out << (with_source ? "source," : "") << "min_radius,positives,ub_recall,lb_recall,lb_relaxed_recall\n";
  }
  for (const auto &r : rows) {
    if (with_source) {
      out << quote(source) << ',';
    }
    out << format_real(r.min_radius) << ',' << r.positives << ',' << opt(r.ub_recall) << ',' << opt(r.lb_recall)
        << ',' << opt(r.lb_relaxed_recall) << '\n';
  }
}

void write_profile_csv(const DecompositionProfile &profile, std::ostream &out) {
  out << "p";
  for (Index i = 0; i < profile.components.rows(); ++i) {
    out << ",d_" << i;
  }
  out << ",total,total_all_pairs\n";
  const Eigen::VectorXd all = profile.all_pairs_total();
  for (Index p = 0; p <= profile.max_distance; ++p) {
    out << p;
    for (Index i = 0; i < profile.components.rows(); ++i) {
      out << ',' << format_real(profile.components(i, p));
    }
    out << ',' << format_real(profile.total(p)) << ',' << format_real(all(p)) << '\n';
  }
}

void write_attention_csv(const AttentionMatrix &attention, std::ostream &out) {
  const Index n = attention.weights.rows();
  out << "query";
  for (Index j = 0; j < n; ++j) {
    out << ",k_" << j;
  }
  out << '\n';
  for (Index m = 0; m < n; ++m) {
    out << m;
    for (Index j = 0; j < n; ++j) {
      out << ',' << format_real(attention.weights(m, j));
    }
    out << '\n';
  }
}

void write_magnitude_csv(const MagnitudeMatrix &matrix, std::ostream &out) {
  out << "layer";
  for (Index d = 0; d < matrix.values.cols(); ++d) {
    out << ",dim_" << d;
  }
  out << '\n';
  for (Index l = 0; l < matrix.values.rows(); ++l) {
    out << l;
    for (Index d = 0; d < matrix.values.cols(); ++d) {
      out << ',' << format_real(matrix.values(l, d));
    }
    out << '\n';
  }
}

void write_spread_csv(std::span<const SpreadPoint> points, std::ostream &out) {
  out << "layer,head,radius,circ_std,samples\n";
  for (const auto &p : points) {
    out << p.layer << ',' << p.head << ',' << format_real(p.radius) << ',' << format_real(p.circ_std) << ','
        << p.samples << '\n';
  }
}

void write_sink_csv(const SinkScores &sinks, const DumpMeta &meta, std::ostream &out) {
  out << "position,token,score,positive\n";
  for (Index p = 0; p < sinks.scores.size(); ++p) {
    const std::string token = meta.tokens ? quote((*meta.tokens)[static_cast<std::size_t>(p)]) : std::string();
    out << p << ',' << token << ',' << format_real(sinks.scores(p)) << ',' << int(sinks.scores(p) > 0.0) << '\n';
  }
}

void write_extension_csv(const ExtensionComparison &comparison, std::ostream &out) {
  out << "layer,q_head,pair,radius_before,radius_after,delta,eligible_before,eligible_after,group\n";
  for (const auto &d : comparison.deltas) {
    out << d.layer << ',' << d.q_head << ',' << d.pair << ',' << format_real(d.radius_before) << ','
        << format_real(d.radius_after) << ',' << format_real(d.delta()) << ',' << int(d.eligible_before) << ','
        << int(d.eligible_after) << ',' << to_string(d.group) << '\n';
  }
}

void write_extension_sums_csv(const ExtensionComparison &comparison, std::ostream &out) {
  out << "layer,q_head,group,count,radius_before_sum,radius_after_sum\n";
  auto emit = [&](const std::string &layer, const std::string &head, const GroupTotals &groups) {
    for (std::size_t g = 0; g < kCandidateGroups; ++g) {
      out << layer << ',' << head << ',' << to_string(static_cast<CandidateGroup>(g)) << ',' << groups[g].count
          << ',' << format_real(groups[g].radius_before) << ',' << format_real(groups[g].radius_after) << '\n';
    }
  };
  for (const auto &h : comparison.per_head) {
    emit(std::to_string(h.layer), std::to_string(h.q_head), h.groups);
  }
  emit("all", "all", comparison.global);
}

void write_bounds_table(const RopeConfig &config, bool all_pairs, std::ostream &out) {
  const auto thetas = theta_schedule(config);
  char line[160];
  std::snprintf(line, sizeof(line), "%-6s %-14s %-14s %-14s %-9s %s\n", "pair", "theta", "period", "p_max*theta",
                "eligible", "lower_bound");
  out << line;
  for (Index i = 0; i < config.num_pairs(); ++i) {
    const bool ok = eligible(thetas(i), config.p_max);
    if (!ok && !all_pairs) {
      continue;
    }
    const double theta = thetas(i);
    std::snprintf(line, sizeof(line), "%-6lld %-14.6e %-14.6g %-14.6g %-9s %.6f\n", static_cast<long long>(i),
                  theta, 2.0 * std::numbers::pi / theta, static_cast<double>(config.p_max) * theta,
                  ok ? "yes" : "no", lower_bound(theta, config.p_max));
    out << line;
  }
  const auto s = summary(config);
  std::snprintf(line, sizeof(line), "%%ROF: %.2f%% (%lld/%lld)\n", 100.0 * s.rof_fraction,
                static_cast<long long>(s.n_eligible), static_cast<long long>(s.n_pairs));
  out << line;
  if (s.mean_lower_bound) {
    std::snprintf(line, sizeof(line), "Mean LB: %.4f\n", *s.mean_lower_bound);
  } else {
    std::snprintf(line, sizeof(line), "Mean LB: undefined (no eligible pairs)\n");
  }
  out << line;
}

} // namespace rofkit
