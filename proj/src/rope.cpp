// SPDX-License-Identifier: Apache-2.0

#include "rofkit/rope.hpp"

namespace rofkit {

std::string_view to_string(Layout layout) {
  switch (layout) {
  case Layout::SlicedFirst:
    return "sliced_first";
  case Layout::InterleavedLast:
    return "interleaved_last";
  }
  return "unknown";
}

Layout parse_layout(std::string_view name) {
  if (name == "sliced_first") {
    return Layout::SlicedFirst;
  }
  if (name == "interleaved_last") {
    return Layout::InterleavedLast;
  }
  throw ConfigError("unsupported layout '" + std::string(name) + "' (expected sliced_first or interleaved_last)");
}

void RopeConfig::validate() const {
  if (!(std::isfinite(base) && base > 0.0)) {
    throw ConfigError("rope base must be positive and finite");
  }
  if (head_dim <= 0) {
    throw ConfigError("head_dim must be positive");
  }
  if (rotary_dim <= 0 || rotary_dim % 2 != 0) {
    throw ConfigError("rotary_dim must be a positive even integer, got " + std::to_string(rotary_dim));
  }
  if (rotary_dim > head_dim) {
    throw ConfigError("rotary_dim " + std::to_string(rotary_dim) + " exceeds head_dim " + std::to_string(head_dim));
  }
  if (p_max <= 0) {
    throw ConfigError("p_max must be positive");
  }
  if (theta_override) {
    if (static_cast<Index>(theta_override->size()) != num_pairs()) {
      throw ConfigError("theta override has " + std::to_string(theta_override->size()) + " entries, expected " +
                        std::to_string(num_pairs()));
    }
    for (std::size_t i = 0; i < theta_override->size(); ++i) {
      const double t = (*theta_override)[i];
      if (!(std::isfinite(t) && t > 0.0)) {
        throw ConfigError("theta override entry " + std::to_string(i) + " is not a positive finite value");
      }
    }
  }
}

Eigen::VectorXd theta_schedule(const RopeConfig &config) {
  config.validate();
  const Index n = config.num_pairs();
  Eigen::VectorXd thetas(n);
  if (config.theta_override) {
    for (Index i = 0; i < n; ++i) {
      thetas(i) = (*config.theta_override)[static_cast<std::size_t>(i)];
    }
    return thetas;
  }
  const double r = static_cast<double>(config.rotary_dim);
  for (Index i = 0; i < n; ++i) {
    thetas(i) = std::pow(config.base, -2.0 * static_cast<double>(i) / r);
  }
  return thetas;
}

PairDims pair_dims(const RopeConfig &config, Index pair) {
  const Index half = config.num_pairs();
  if (pair < 0 || pair >= half) {
    throw ShapeError("pair index " + std::to_string(pair) + " out of range [0, " + std::to_string(half) + ")");
  }
  if (config.layout == Layout::SlicedFirst) {
    return {pair, pair + half};
  }
  const Index offset = config.head_dim - config.rotary_dim;
  return {offset + 2 * pair, offset + 2 * pair + 1};
}

std::vector<Index> nonrotary_dims(const RopeConfig &config) {
  std::vector<Index> dims;
  const Index count = config.head_dim - config.rotary_dim;
  dims.reserve(static_cast<std::size_t>(count));
  const Index start = config.layout == Layout::SlicedFirst ? config.rotary_dim : 0;
  for (Index d = 0; d < count; ++d) {
    dims.push_back(start + d);
  }
  return dims;
}

} // namespace rofkit
