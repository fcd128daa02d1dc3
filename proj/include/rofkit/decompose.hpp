// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "rofkit/dump.hpp"
#include "rofkit/pair_stats.hpp"
#include "rofkit/rope.hpp"

namespace rofkit {

// full_attention materializes an n x n matrix; dumps longer than this are
// rejected.
inline constexpr std::int64_t kMaxAttentionPositions = 4096;

// Per-pair mean-vector dot products d_i(p) for distances p = 0..max_distance
// and their sum D(p) over the pairs that were not excluded.
struct DecompositionProfile {
  std::int64_t max_distance = 0;
  Eigen::MatrixXd components; // [n_pairs x (max_distance + 1)]
  Eigen::VectorXd total;      // [max_distance + 1]
  std::vector<Index> excluded;

  Eigen::VectorXd all_pairs_total() const { return components.colwise().sum().transpose(); }
};

// Causal attention weights; row m is the query at position m.
struct AttentionMatrix {
  Eigen::MatrixXd weights;
  double scale = 1.0;
};

// (R(p theta) q_mean) . k_mean, evaluated by rotating the mean query.
double d_component(const RotaryPaird &q_mean, const RotaryPaird &k_mean, double theta, std::int64_t p);
double d_component(const PairStatsEntry &entry, std::int64_t p, const RopeConfig &config);

// `head` holds one entry per rotary pair in pair order (PairStatsTable::head).
DecompositionProfile d_profile(std::span<const PairStatsEntry> head, std::int64_t max_distance,
                               const std::vector<Index> &exclude, const RopeConfig &config);

// Row-wise softmax of logits * scale with everything above the diagonal
// masked out.
AttentionMatrix causal_softmax(const Eigen::MatrixXd &logits, double scale);

// Attention implied by D alone: logit(m, n) = total(m - n) / sqrt(head_dim),
// for m, n in 0..positions.
AttentionMatrix positional_attention(const DecompositionProfile &profile, Index head_dim, std::int64_t positions);

// Attention of one head recomputed from the dump's actual per-position
// queries and keys, all head dims included.
template <typename Scalar>
AttentionMatrix full_attention(const BasicActivationDump<Scalar> &dump, std::int64_t layer, std::int64_t q_head,
                               const RopeConfig &config);

struct SinkScores {
  Eigen::VectorXd scores;             // one per key position
  std::vector<std::int64_t> positive; // positions with score > 0, ascending
};

// Dot product of the head's unrotated mean query pair with each raw key pair.
template <typename Scalar>
SinkScores sink_scores(const BasicActivationDump<Scalar> &dump, std::int64_t layer, std::int64_t q_head, Index pair,
                       const RopeConfig &config);

} // namespace rofkit
