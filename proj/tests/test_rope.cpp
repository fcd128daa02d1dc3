// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <doctest.h>

#include "rofkit/rope.hpp"

using namespace rofkit;
using doctest::Approx;

namespace {

RopeConfig phi1() { return {10000.0, 64, 32, 2048, Layout::SlicedFirst, std::nullopt}; }

RopeConfig square(Index d, Layout layout = Layout::SlicedFirst) { return {10000.0, d, d, 64, layout, std::nullopt}; }

} // namespace

TEST_CASE("theta schedule uses the rotary dims as the exponent denominator") {
  const auto t = theta_schedule(phi1());
  REQUIRE(t.size() == 16);
  CHECK(t(0) == 1.0);
  // 10000^(-20/32) = 10^-2.5
  CHECK(t(10) == Approx(3.16227766e-3).epsilon(1e-8));
  CHECK(t(15) == Approx(std::pow(10.0, -3.75)).epsilon(1e-12));
  CHECK(t(15) == Approx(1.7783e-4).epsilon(1e-4));
  for (Index i = 1; i < t.size(); ++i) {
    CHECK(t(i) < t(i - 1));
  }
}

TEST_CASE("theta override replaces the schedule") {
  auto c = square(4);
  c.theta_override = std::vector<double>{0.5, 0.25};
  const auto t = theta_schedule(c);
  CHECK(t(0) == 0.5);
  CHECK(t(1) == 0.25);
  c.theta_override = std::vector<double>{0.5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.theta_override = std::vector<double>{0.5, 0.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("invalid configs are rejected") {
  auto c = phi1();
  c.rotary_dim = 31;
  CHECK_THROWS_AS(theta_schedule(c), ConfigError);
  c = phi1();
  c.rotary_dim = 66;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = phi1();
  c.base = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = phi1();
  c.p_max = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_layout("diagonal"), ConfigError);
  CHECK(parse_layout(to_string(Layout::InterleavedLast)) == Layout::InterleavedLast);
}

TEST_CASE("rotate_pair hand values") {
  const RotaryPaird e0(1.0, 0.0);
  CHECK((rotate_pair(e0, 0.0) - e0).norm() == 0.0);
  const auto quarter = rotate_pair(e0, std::numbers::pi / 2);
  CHECK(quarter(0) == Approx(0.0).epsilon(1e-15));
  CHECK(quarter(1) == Approx(1.0));
  const auto one = rotate_pair(e0, 1.0);
  CHECK(one(0) == Approx(0.54030).epsilon(1e-5));
  CHECK(one(1) == Approx(0.84147).epsilon(1e-5));
}

TEST_CASE("rotation is an isometry and composes additively") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_real_distribution<double> a(-20.0, 20.0);
  double worst_norm = 0.0;
  double worst_compose = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const RotaryPaird v(g(rng), g(rng));
    const double x = a(rng);
    const double y = a(rng);
    worst_norm = std::max(worst_norm, std::abs(rotate_pair(v, x).norm() - v.norm()) / std::max(1.0, v.norm()));
    worst_compose = std::max(worst_compose, (rotate_pair(rotate_pair(v, x), y) - rotate_pair(v, x + y)).norm());
  }
  CHECK(worst_norm < 1e-12);
  CHECK(worst_compose < 1e-9);
}

TEST_CASE("apply_rope at position 0 is the identity") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const auto c = phi1();
  Eigen::VectorXd v(64);
  for (auto &x : v) {
    x = g(rng);
  }
  CHECK(apply_rope(v, 0, c) == v);
}

TEST_CASE("apply_rope single pair by hand") {
  auto c = square(4);
  c.theta_override = std::vector<double>{1.0, 0.01};
  const Eigen::Vector4d v(1, 0, 0, 0);
  const Eigen::VectorXd out = apply_rope(v, 1, c);
  CHECK(out(0) == Approx(0.54030).epsilon(1e-5));
  CHECK(out(2) == Approx(0.84147).epsilon(1e-5));
  CHECK(out(1) == 0.0);
  CHECK(out(3) == 0.0);
}

TEST_CASE("apply_rope leaves non-rotary dims alone and preserves norm when fully rotary") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (const auto layout : {Layout::SlicedFirst, Layout::InterleavedLast}) {
    auto c = phi1();
    c.layout = layout;
    Eigen::VectorXd v(64);
    for (auto &x : v) {
      x = g(rng);
    }
    const Eigen::VectorXd out = apply_rope(v, 37, c);
    for (const Index d : nonrotary_dims(c)) {
      CHECK(out(d) == v(d));
    }
    const auto full = square(8, layout);
    const Eigen::VectorXd w = v.head(8);
    CHECK(apply_rope(w, 123, full).norm() == Approx(w.norm()).epsilon(1e-12));
  }
}

TEST_CASE("apply_rope rejects bad shapes and positions") {
  const Eigen::Vector3d v(1, 2, 3);
  CHECK_THROWS_AS(apply_rope(v, 1, square(4)), ShapeError);
  const Eigen::Vector4d w(1, 2, 3, 4);
  CHECK_THROWS_AS(apply_rope(w, -1, square(4)), ValidationError);
}

TEST_CASE("pair_slice index mapping") {
  const Eigen::Vector4d v(1, 2, 3, 4); // a, b, c, d
  const auto s = square(4);
  CHECK(pair_slice(v, 0, s) == RotaryPaird(1, 3));
  CHECK(pair_slice(v, 1, s) == RotaryPaird(2, 4));
  const auto il = square(4, Layout::InterleavedLast);
  CHECK(pair_slice(v, 1, il) == RotaryPaird(3, 4));
  CHECK_THROWS_AS(pair_slice(v, 2, s), ShapeError);

  const auto p = phi1();
  CHECK(pair_dims(p, 3).first == 3);
  CHECK(pair_dims(p, 3).second == 19);
  auto q = p;
  q.layout = Layout::InterleavedLast;
  CHECK(pair_dims(q, 3).first == 64 - 32 + 6);
  CHECK(pair_dims(q, 3).second == 64 - 32 + 7);
  CHECK(nonrotary_dims(p).front() == 32);
  CHECK(nonrotary_dims(q).back() == 31);
  CHECK(nonrotary_dims(q).size() == 32);
}

TEST_CASE("convert_layout") {
  const Eigen::Vector4d v(1, 2, 3, 4);
  const auto c = square(4);
  // interleaved (a,b,c,d) -> sliced (a,c,b,d)
  CHECK(convert_layout(v, Layout::InterleavedLast, Layout::SlicedFirst, c) == Eigen::Vector4d(1, 3, 2, 4));
  CHECK(convert_layout(v, Layout::SlicedFirst, Layout::SlicedFirst, c) == v);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  const auto p = phi1();
  Eigen::VectorXd w(64);
  for (auto &x : w) {
    x = g(rng);
  }
  const Eigen::VectorXd there = convert_layout(w, Layout::SlicedFirst, Layout::InterleavedLast, p);
  CHECK(convert_layout(there, Layout::InterleavedLast, Layout::SlicedFirst, p) == w);
  std::vector<double> a(w.begin(), w.end());
  std::vector<double> b(there.begin(), there.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  for (Index i = 0; i < p.num_pairs(); ++i) {
    auto il = p;
    il.layout = Layout::InterleavedLast;
    CHECK(pair_slice(there, i, il) == pair_slice(w, i, p));
  }
}

TEST_CASE("relative_score") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g;
  const auto c = phi1();
  Eigen::VectorXd q(64);
  Eigen::VectorXd k(64);
  for (Index d = 0; d < 64; ++d) {
    q(d) = g(rng);
    k(d) = g(rng);
  }
  CHECK(relative_score(q, k, 9, 9, c) == Approx(q.dot(k)).epsilon(1e-12));

  std::uniform_int_distribution<int> pos(0, 64);
  for (int t = 0; t < 200; ++t) {
    int m = pos(rng);
    int n = pos(rng);
    if (m < n) {
      std::swap(m, n);
    }
    const int s = pos(rng);
    const double a = relative_score(q, k, m, n, c);
    const double b = relative_score(q, k, m + s, n + s, c);
    CHECK(std::abs(a - b) <= 1e-5 * std::max(1.0, std::abs(a)));

    // pair-wise form: rotate q by the distance, plus the plain non-rotary dot
    const auto thetas = theta_schedule(c);
    double pairwise = 0.0;
    for (Index i = 0; i < c.num_pairs(); ++i) {
      pairwise += rotate_pair(pair_slice(q, i, c), (m - n) * thetas(i)).dot(pair_slice(k, i, c));
    }
    for (const Index d : nonrotary_dims(c)) {
      pairwise += q(d) * k(d);
    }
    CHECK(a == Approx(pairwise).epsilon(1e-9));
  }

  const auto two = [] {
    RopeConfig r{10000.0, 2, 2, 8, Layout::SlicedFirst, std::vector<double>{1.0}};
    return r;
  }();
  CHECK(relative_score(Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 0), 1, 0, two) ==
        Approx(std::cos(1.0)).epsilon(1e-12));
  CHECK_THROWS_AS(relative_score(q, k, 1, 2, c), ValidationError);
}
