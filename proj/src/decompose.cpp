// SPDX-License-Identifier: Apache-2.0

#include "rofkit/decompose.hpp"

#include <algorithm>
#include <limits>

namespace rofkit {

double d_component(const RotaryPaird &q_mean, const RotaryPaird &k_mean, double theta, std::int64_t p) {
  if (p < 0) {
    throw ValidationError("distance must be nonnegative, got " + std::to_string(p));
  }
  return rotate_pair(q_mean, static_cast<double>(p) * theta).dot(k_mean);
}

double d_component(const PairStatsEntry &entry, std::int64_t p, const RopeConfig &config) {
  const auto thetas = theta_schedule(config);
  if (entry.pair < 0 || entry.pair >= thetas.size()) {
    throw ValidationError("stats entry pair " + std::to_string(entry.pair) + " outside the config's rotary pairs");
  }
  return d_component(entry.q_mean, entry.k_mean, thetas(entry.pair), p);
}

DecompositionProfile d_profile(std::span<const PairStatsEntry> head, std::int64_t max_distance,
                               const std::vector<Index> &exclude, const RopeConfig &config) {
  const auto thetas = theta_schedule(config);
  const Index n_pairs = config.num_pairs();
  if (max_distance < 0) {
    throw ValidationError("max distance must be nonnegative");
  }
  if (static_cast<Index>(head.size()) != n_pairs) {
    throw ShapeError("profile needs " + std::to_string(n_pairs) + " pair entries, got " +
                     std::to_string(head.size()));
  }
  std::vector<char> skip(static_cast<std::size_t>(n_pairs), 0);
  for (const Index j : exclude) {
    if (j < 0 || j >= n_pairs) {
      throw ValidationError("excluded pair " + std::to_string(j) + " out of range [0, " + std::to_string(n_pairs) +
                            ")");
    }
    skip[static_cast<std::size_t>(j)] = 1;
  }

  DecompositionProfile profile;
  profile.max_distance = max_distance;
  profile.components.resize(n_pairs, max_distance + 1);
  profile.total = Eigen::VectorXd::Zero(max_distance + 1);
  for (Index i = 0; i < n_pairs; ++i) {
    const auto &e = head[static_cast<std::size_t>(i)];
    if (e.pair != i) {
      throw ShapeError("stats entries must be ordered by pair index");
    }
    for (std::int64_t p = 0; p <= max_distance; ++p) {
      profile.components(i, p) = d_component(e.q_mean, e.k_mean, thetas(i), p);
    }
    if (!skip[static_cast<std::size_t>(i)]) {
      profile.total += profile.components.row(i).transpose();
    }
  }
  for (Index i = 0; i < n_pairs; ++i) {
    if (skip[static_cast<std::size_t>(i)]) {
      profile.excluded.push_back(i);
    }
  }
  return profile;
}

AttentionMatrix causal_softmax(const Eigen::MatrixXd &logits, double scale) {
  if (logits.rows() != logits.cols()) {
    throw ShapeError("attention logits must be square");
  }
  const Index n = logits.rows();
  AttentionMatrix out;
  out.scale = scale;
  out.weights = Eigen::MatrixXd::Zero(n, n);
  for (Index m = 0; m < n; ++m) {
    const Eigen::RowVectorXd row = logits.row(m).head(m + 1) * scale;
    const double peak = row.maxCoeff();
    const Eigen::RowVectorXd e = (row.array() - peak).exp().matrix();
    out.weights.row(m).head(m + 1) = e / e.sum();
  }
  return out;
}

AttentionMatrix positional_attention(const DecompositionProfile &profile, Index head_dim, std::int64_t positions) {
  if (positions < 0 || positions > profile.max_distance) {
    throw ValidationError("profile covers distances 0.." + std::to_string(profile.max_distance) + ", asked for " +
                          std::to_string(positions));
  }
  if (head_dim <= 0) {
    throw ConfigError("head_dim must be positive");
  }
  const Index n = positions + 1;
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(n, n);
  for (Index m = 0; m < n; ++m) {
    for (Index j = 0; j <= m; ++j) {
      logits(m, j) = profile.total(m - j);
    }
  }
  return causal_softmax(logits, 1.0 / std::sqrt(static_cast<double>(head_dim)));
}

template <typename Scalar>
AttentionMatrix full_attention(const BasicActivationDump<Scalar> &dump, std::int64_t layer, std::int64_t q_head,
                               const RopeConfig &config) {
  dump.require_pre_rotation();
  check_config_matches(dump.meta(), config);
  const std::int64_t n = dump.meta().n_positions;
  if (n > kMaxAttentionPositions) {
    throw ValidationError("full attention is limited to " + std::to_string(kMaxAttentionPositions) +
                          " positions, dump has " + std::to_string(n));
  }
  const auto thetas = theta_schedule(config);
  const auto queries = dump.queries(layer, q_head);
  const auto keys = dump.keys(layer, dump.kv_head_for(q_head));

  Eigen::MatrixXd q_rot(n, config.head_dim);
  Eigen::MatrixXd k_rot(n, config.head_dim);
  for (std::int64_t p = 0; p < n; ++p) {
    const Eigen::VectorXd q = queries.row(p).transpose().template cast<double>();
    const Eigen::VectorXd k = keys.row(p).transpose().template cast<double>();
    q_rot.row(p) = apply_rope(q, p, config, thetas).transpose();
    k_rot.row(p) = apply_rope(k, p, config, thetas).transpose();
  }
  const Eigen::MatrixXd logits = q_rot * k_rot.transpose();
  return causal_softmax(logits, 1.0 / std::sqrt(static_cast<double>(config.head_dim)));
}

template AttentionMatrix full_attention(const ActivationDump &, std::int64_t, std::int64_t, const RopeConfig &);
template AttentionMatrix full_attention(const ActivationDumpd &, std::int64_t, std::int64_t, const RopeConfig &);

template <typename Scalar>
SinkScores sink_scores(const BasicActivationDump<Scalar> &dump, std::int64_t layer, std::int64_t q_head, Index pair,
                       const RopeConfig &config) {
  dump.require_pre_rotation();
  check_config_matches(dump.meta(), config);
  const auto dims = pair_dims(config, pair);
  const auto queries = dump.queries(layer, q_head);
  const auto keys = dump.keys(layer, dump.kv_head_for(q_head));
  const std::int64_t n = dump.meta().n_positions;

  RotaryPaird q_mean = RotaryPaird::Zero();
  for (std::int64_t p = 0; p < n; ++p) {
    q_mean += RotaryPaird(static_cast<double>(queries(p, dims.first)), static_cast<double>(queries(p, dims.second)));
  }
  q_mean /= static_cast<double>(n);
  if (q_mean.squaredNorm() == 0.0) {
    throw UndefinedAngleError("mean query of pair " + std::to_string(pair) + " has zero radius");
  }

  SinkScores out;
  out.scores.resize(n);
  for (std::int64_t p = 0; p < n; ++p) {
    const RotaryPaird k(static_cast<double>(keys(p, dims.first)), static_cast<double>(keys(p, dims.second)));
    out.scores(p) = q_mean.dot(k);
    if (out.scores(p) > 0.0) {
      out.positive.push_back(p);
    }
  }
  return out;
}

template SinkScores sink_scores(const ActivationDump &, std::int64_t, std::int64_t, Index, const RopeConfig &);
template SinkScores sink_scores(const ActivationDumpd &, std::int64_t, std::int64_t, Index, const RopeConfig &);

} // namespace rofkit
