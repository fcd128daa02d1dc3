// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rofkit/error.hpp"

namespace rofkit {

using Index = Eigen::Index;

// Where the two members of rotary pair i live inside a head vector.
//   SlicedFirst:     (i, i + r/2), rotary dims lead, non-rotary dims trail.
//   InterleavedLast: (d_h - r + 2i, d_h - r + 2i + 1), rotary dims trail.
enum class Layout { SlicedFirst, InterleavedLast };

std::string_view to_string(Layout layout);
Layout parse_layout(std::string_view name);

template <typename Scalar> using RotaryPair = Eigen::Matrix<Scalar, 2, 1>;
using RotaryPaird = RotaryPair<double>;

template <typename Scalar> using HeadVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

struct RopeConfig {
  double base = 10000.0;
  Index head_dim = 0;
  Index rotary_dim = 0;
  // Effective context length the bounds are evaluated at.
  std::int64_t p_max = 0;
  Layout layout = Layout::SlicedFirst;
  // Explicit per-pair frequencies (extension-scaled models); r/2 entries.
  std::optional<std::vector<double>> theta_override;

  Index num_pairs() const { return rotary_dim / 2; }

  // Throws ConfigError on the first violated invariant.
  void validate() const;
};

// theta_i = base^(-2i/r), or the override when present.
Eigen::VectorXd theta_schedule(const RopeConfig &config);

struct PairDims {
  Index first;
  Index second;
};

PairDims pair_dims(const RopeConfig &config, Index pair);

// Head dims that are never rotated, in ascending order.
std::vector<Index> nonrotary_dims(const RopeConfig &config);

namespace detail {

template <typename Derived> void check_head_vector(const Eigen::MatrixBase<Derived> &v, const RopeConfig &config) {
  if (v.size() != config.head_dim) {
    throw ShapeError("head vector has " + std::to_string(v.size()) + " entries, config expects head_dim " +
                     std::to_string(config.head_dim));
  }
}

inline void check_position(std::int64_t position) {
  if (position < 0) {
    throw ValidationError("position must be nonnegative, got " + std::to_string(position));
  }
}

} // namespace detail

// Counterclockwise rotation of a 2-vector.
template <typename Derived>
RotaryPair<typename Derived::Scalar> rotate_pair(const Eigen::MatrixBase<Derived> &v, double angle) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 2);
  using Scalar = typename Derived::Scalar;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double x = static_cast<double>(v(0));
  const double y = static_cast<double>(v(1));
  return RotaryPair<Scalar>(static_cast<Scalar>(c * x - s * y), static_cast<Scalar>(s * x + c * y));
}

template <typename Derived>
RotaryPair<typename Derived::Scalar> pair_slice(const Eigen::MatrixBase<Derived> &v, Index pair,
                                                const RopeConfig &config) {
  detail::check_head_vector(v, config);
  const auto dims = pair_dims(config, pair);
  return {v(dims.first), v(dims.second)};
}

// Rotates every rotary pair of v by position * theta_i; non-rotary dims pass
// through. `thetas` must come from theta_schedule(config).
template <typename Derived>
HeadVector<typename Derived::Scalar> apply_rope(const Eigen::MatrixBase<Derived> &v, std::int64_t position,
                                                const RopeConfig &config, const Eigen::VectorXd &thetas) {
  detail::check_head_vector(v, config);
  detail::check_position(position);
  HeadVector<typename Derived::Scalar> out = v;
  for (Index i = 0; i < config.num_pairs(); ++i) {
    const auto dims = pair_dims(config, i);
    const auto rotated =
        rotate_pair(RotaryPair<typename Derived::Scalar>(v(dims.first), v(dims.second)),
                    static_cast<double>(position) * thetas(i));
    out(dims.first) = rotated(0);
    out(dims.second) = rotated(1);
  }
  return out;
}

template <typename Derived>
HeadVector<typename Derived::Scalar> apply_rope(const Eigen::MatrixBase<Derived> &v, std::int64_t position,
                                                const RopeConfig &config) {
  return apply_rope(v, position, config, theta_schedule(config));
}

// Moves every rotary pair (and the non-rotary block, order preserved) from
// one layout's slots to the other's.
template <typename Derived>
HeadVector<typename Derived::Scalar> convert_layout(const Eigen::MatrixBase<Derived> &v, Layout from, Layout to,
                                                    const RopeConfig &config) {
  detail::check_head_vector(v, config);
  RopeConfig src = config;
  src.layout = from;
  RopeConfig dst = config;
  dst.layout = to;

  HeadVector<typename Derived::Scalar> out(v.size());
  for (Index i = 0; i < config.num_pairs(); ++i) {
    const auto a = pair_dims(src, i);
    const auto b = pair_dims(dst, i);
    out(b.first) = v(a.first);
    out(b.second) = v(a.second);
  }
  const auto src_rest = nonrotary_dims(src);
  const auto dst_rest = nonrotary_dims(dst);
  for (std::size_t j = 0; j < src_rest.size(); ++j) {
    out(dst_rest[j]) = v(src_rest[j]);
  }
  return out;
}

// Attention logit (before scaling) between query at position m and key at
// position n, both given pre-rotation.
template <typename DerivedQ, typename DerivedK>
double relative_score(const Eigen::MatrixBase<DerivedQ> &q, const Eigen::MatrixBase<DerivedK> &k, std::int64_t m,
                      std::int64_t n, const RopeConfig &config) {
  detail::check_head_vector(q, config);
  detail::check_head_vector(k, config);
  detail::check_position(n);
  if (m < n) {
    throw ValidationError("relative_score requires m >= n (causal), got m=" + std::to_string(m) +
                          " n=" + std::to_string(n));
  }
  const auto thetas = theta_schedule(config);
  const Eigen::VectorXd qr = apply_rope(q, m, config, thetas).template cast<double>();
  const Eigen::VectorXd kr = apply_rope(k, n, config, thetas).template cast<double>();
  return qr.dot(kr);
}

} // namespace rofkit
