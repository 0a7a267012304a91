// Copyright 2026 The a2align Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <random>

#include "a2/align.hpp"
#include "a2/errors.hpp"
#include "doctest.h"
#include "policy_fixture.hpp"

using namespace a2;
using namespace a2::align;
using a2::testing::random_input;
using a2::testing::small_config;

namespace {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

MatD weight(const PolicyParams<double>& p, std::size_t slot) {
  const auto& s = p.layout.slots[slot];
  return Eigen::Map<const MatD>(p.tensor(slot).data(), s.rows, s.cols);
}

Eigen::RowVectorXd bias(const PolicyParams<double>& p, std::size_t slot) {
  const auto t = p.tensor(slot);
  return Eigen::Map<const Eigen::RowVectorXd>(t.data(), t.size());
}

MatD affine(const MatD& x, const PolicyParams<double>& p, std::size_t w_slot) {
  MatD y = x * weight(p, w_slot).transpose();
  y.rowwise() += bias(p, w_slot + 1);
  return y;
}

// Dense multi-head attention written with whole-matrix products.
MatD dense_attention(const PolicyParams<double>& p, const MatD& q, const MatD& k, const MatD& v) {
  const auto h = static_cast<Eigen::Index>(p.config.heads);
  const auto dh = static_cast<Eigen::Index>(p.config.head_dim());
  const MatD qp = affine(q, p, kQW), kp = affine(k, p, kKW), vp = affine(v, p, kVW);
  MatD heads(q.rows(), h * dh);
  for (Eigen::Index i = 0; i < h; ++i) {
    MatD s = qp.middleCols(i * dh, dh) * kp.middleCols(i * dh, dh).transpose() / std::sqrt(double(dh));
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      s.row(r).array() -= s.row(r).maxCoeff();
      s.row(r) = s.row(r).array().exp().matrix();
      s.row(r) /= s.row(r).sum();
    }
    heads.middleCols(i * dh, dh) = s * vp.middleCols(i * dh, dh);
  }
  return affine(heads, p, kOW);
}

MatD random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

std::span<const double> row_span(const MatD& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

void set_identity_projections(PolicyParams<double>& p) {
  const auto w = static_cast<Eigen::Index>(p.config.width);
  for (std::size_t slot : {kQW, kKW, kVW, kOW}) {
    Eigen::Map<MatD>(p.tensor(slot).data(), w, w).setIdentity();
    std::fill(p.tensor(slot + 1).begin(), p.tensor(slot + 1).end(), 0.0);
  }
}

std::array<double, 3> random_point(std::mt19937_64& rng, double r = 0.3) {
  std::uniform_real_distribution<double> u(-r, r);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST_CASE("positional encoding at the origin") {
  const double p[3] = {0, 0, 0};
  const auto e = nerf_pe(std::span<const double, 3>(p, 3), 6);
  REQUIRE(e.size() == 39);
  for (int a = 0; a < 3; ++a) CHECK(e[a] == 0.0);
  for (int k = 0; k < 6; ++k)
    for (int a = 0; a < 3; ++a) {
      CHECK(e[3 + 6 * k + a] == 0.0);
      CHECK(e[3 + 6 * k + 3 + a] == 1.0);
    }
}

TEST_CASE("positional encoding matches direct trigonometry") {
  std::mt19937_64 rng(1);
  const double pi = std::acos(-1.0);
  for (int t = 0; t < 50; ++t) {
    const auto p = random_point(rng, 2.0);
    const auto e = nerf_pe(std::span<const double, 3>(p.data(), 3), 4);
    const double q[3] = {p[0] + 2, p[1] + 2, p[2] + 2};
    const auto f = nerf_pe(std::span<const double, 3>(q, 3), 4);
    for (int k = 0; k < 4; ++k)
      for (int a = 0; a < 3; ++a) {
        CHECK(e[3 + 6 * k + a] == doctest::Approx(std::sin(std::pow(2.0, k) * pi * p[a])).epsilon(1e-12));
        CHECK(e[3 + 6 * k + 3 + a] == doctest::Approx(std::cos(std::pow(2.0, k) * pi * p[a])).epsilon(1e-12));
        CHECK(std::abs(e[3 + 6 * k + a] - f[3 + 6 * k + a]) < 1e-9);
      }
  }
}

TEST_CASE("rope is the identity at the origin and preserves norms") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t w : {6u, 24u, 64u, 68u}) {
    std::vector<double> x(w);
    for (auto& v : x) v = u(rng);
    auto y = x;
    const double zero[3] = {0, 0, 0};
    rope_rotate<double>(y, std::span<const double, 3>(zero, 3), 10000.0, 100.0);
    CHECK(y == x);
    const auto p = random_point(rng);
    rope_rotate<double>(y, std::span<const double, 3>(p.data(), 3), 10000.0, 100.0);
    double nx = 0, ny = 0;
    for (std::size_t i = 0; i < w; ++i) nx += x[i] * x[i], ny += y[i] * y[i];
    CHECK(std::abs(std::sqrt(nx) - std::sqrt(ny)) < 1e-12);
    for (std::size_t i = w - w % 6; i < w; ++i) CHECK(y[i] == x[i]);
    rope_rotate_inverse<double>(y, std::span<const double, 3>(p.data(), 3), 10000.0, 100.0);
    for (std::size_t i = 0; i < w; ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-12));
  }
}

TEST_CASE("rope inner products depend only on relative position") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(24), y(24);
    for (auto& v : x) v = u(rng);
    for (auto& v : y) v = u(rng);
    const auto p1 = random_point(rng), p2 = random_point(rng), d = random_point(rng);
    const std::array<double, 3> q1 = {p1[0] + d[0], p1[1] + d[1], p1[2] + d[2]};
    const std::array<double, 3> q2 = {p2[0] + d[0], p2[1] + d[1], p2[2] + d[2]};
    auto rot = [](std::vector<double> v, const std::array<double, 3>& p) {
      rope_rotate<double>(v, std::span<const double, 3>(p.data(), 3), 10000.0, 100.0);
      return v;
    };
    const auto a = rot(x, p1), b = rot(y, p2), c = rot(x, q1), e = rot(y, q2);
    double lhs = 0, rhs = 0;
    for (int i = 0; i < 24; ++i) lhs += a[i] * b[i], rhs += c[i] * e[i];
    CHECK(std::abs(lhs - rhs) < 1e-9);
  }
}

TEST_CASE("cross attention matches a dense matrix oracle") {
  std::mt19937_64 rng(4);
  for (auto scale : {AttnScale::scaled}) {
    auto cfg = small_config(12, 2, 4);
    cfg.attn_scale = scale;
    PolicyParams<double> p(cfg);
    p.initialize(7);
    const MatD q = random_mat(rng, 3, 12), k = random_mat(rng, 5, 12), v = random_mat(rng, 5, 12);
    std::vector<double> attn;
    const auto got = cross_attention<double>(p, row_span(q), row_span(k), row_span(v), 3, 5, &attn);
    const MatD want = dense_attention(p, q, k, v);
    for (Eigen::Index i = 0; i < want.size(); ++i) CHECK(std::abs(got[i] - want.data()[i]) < 1e-6);
    for (std::size_t r = 0; r < 2 * 3; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) s += attn[r * 5 + j];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("a single key makes the fusion independent of the queries") {
  std::mt19937_64 rng(5);
  PolicyParams<double> p(small_config(12, 2, 4));
  p.initialize(8);
  const MatD k = random_mat(rng, 1, 12), v = random_mat(rng, 1, 12);
  const MatD q1 = random_mat(rng, 2, 12), q2 = random_mat(rng, 2, 12);
  const auto a = cross_attention<double>(p, row_span(q1), row_span(k), row_span(v), 2, 1);
  const auto b = cross_attention<double>(p, row_span(q2), row_span(k), row_span(v), 2, 1);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  set_identity_projections(p);
  const auto c = cross_attention<double>(p, row_span(q1), row_span(k), row_span(v), 2, 1);
  for (std::size_t i = 0; i < 12; ++i) CHECK(c[i] == doctest::Approx(v(0, i)).epsilon(1e-12));
}

TEST_CASE("two identical keys average their values") {
  std::mt19937_64 rng(6);
  PolicyParams<double> p(small_config(12, 2, 4));
  p.initialize(9);
  set_identity_projections(p);
  MatD k = random_mat(rng, 1, 12);
  MatD kk(2, 12);
  kk << k, k;
  const MatD v = random_mat(rng, 2, 12), q = random_mat(rng, 1, 12);
  const auto out = cross_attention<double>(p, row_span(q), row_span(kk), row_span(v), 1, 2);
  for (std::size_t i = 0; i < 12; ++i) CHECK(out[i] == doctest::Approx(0.5 * (v(0, i) + v(1, i))).epsilon(1e-12));
}

TEST_CASE("softmax sums to one and ignores shifts") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 5.0);
  for (std::size_t l : {1u, 7u, 64u, 256u}) {
    std::vector<double> z(l);
    for (auto& v : z) v = n(rng);
    const auto s = softmax(z);
    double sum = 0;
    for (double v : s) {
      sum += v;
      CHECK(v > 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
    for (auto& v : z) v += 123.4;
    const auto t = softmax(z);
    for (std::size_t i = 0; i < l; ++i) CHECK(std::abs(s[i] - t[i]) < 1e-12);
  }
}

TEST_CASE("select_action takes the argmax with the lowest index on ties") {
  ActionDistribution d;
  d.omega = {0.1, 0.7, 0.2};
  CHECK(select_action(d) == 1);
  d.omega = {0.5, 0.5};
  CHECK(select_action(d) == 0);
  d.omega = {0.8, 0.2};
  d.omega_residual = {0.2, 0.8};
  d.omega_prime = blend(d.omega, d.omega_residual, 0.2);
  // 0.32 and 0.68 are not representable; the blend of the double inputs lands within one ulp
  const volatile double a = 0.2;
  CHECK(d.omega_prime[0] == a * 0.8 + (1.0 - a) * 0.2);
  CHECK(d.omega_prime[1] == a * 0.2 + (1.0 - a) * 0.8);
  CHECK(std::abs(d.omega_prime[0] - 0.32) <= std::nextafter(0.32, 1.0) - 0.32);
  CHECK(std::abs(d.omega_prime[1] - 0.68) <= std::nextafter(0.68, 1.0) - 0.68);
  CHECK(select_action(d) == 1);
  CHECK_THROWS_AS(blend(d.omega, std::vector<double>{0.1}, 0.2), ValidationError);
}

TEST_CASE("select_action ignores increasing affine maps of the logits") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> z(9);
    for (auto& v : z) v = n(rng);
    ActionDistribution a, b;
    a.omega = softmax(z);
    for (auto& v : z) v = 3.5 * v - 2.0;
    b.omega = softmax(z);
    CHECK(select_action(a) == select_action(b));
  }
}

TEST_CASE("one candidate always gets all the mass") {
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PolicyParams<float> p(small_config());
    p.initialize(seed);
    const auto in = random_input(rng, 1, 6, 8);
    const auto d = forward(p, in.view(), false);
    CHECK(d.omega[0] == 1.0);
  }
}

TEST_CASE("alpha one makes the adapted distribution equal the base one") {
  std::mt19937_64 rng(10);
  auto cfg = small_config();
  cfg.alpha = 1.0;
  PolicyParams<double> p(cfg);
  p.initialize(3);
  const auto in = random_input(rng, 5, 9, 8);
  const auto d = forward(p, in.view(), true);
  REQUIRE(d.adapted);
  CHECK(d.omega_prime == d.omega);
}

TEST_CASE("adapted forward blends base and residual probabilities") {
  std::mt19937_64 rng(11);
  PolicyParams<double> p(small_config());
  p.initialize(4);
  const auto in = random_input(rng, 6, 10, 8);
  const auto d = forward(p, in.view(), true);
  const auto base = forward(p, in.view(), false);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(d.omega[k] == base.omega[k]);
    CHECK(d.omega_prime[k] == doctest::Approx(0.2 * d.omega[k] + 0.8 * d.omega_residual[k]).epsilon(1e-15));
  }
  CHECK(base.omega_prime == base.omega);
}

TEST_CASE("forward is equivariant in candidates and invariant in points") {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 10; ++t) {
    PolicyParams<float> p(small_config());
    p.initialize(t);
    const auto in = random_input(rng, 7, 13, 8);
    const auto base = forward(p, in.view(), true);

    const auto pc = a2::testing::random_permutation(rng, 7);
    auto moved = in;
    moved.actions = a2::testing::permute_rows(in.actions, 10, pc);
    const auto dc = forward(p, moved.view(), true);
    for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(dc.omega_prime[i] - base.omega_prime[pc[i]]) < 1e-6);

    const auto pp = a2::testing::random_permutation(rng, 13);
    auto shuffled = in;
    shuffled.points = a2::testing::permute_rows(in.points, 3, pp);
    shuffled.features = a2::testing::permute_rows(in.features, 8, pp);
    shuffled.similarities = a2::testing::permute_rows(in.similarities, 1, pp);
    const auto dp = forward(p, shuffled.view(), true);
    for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(dp.omega_prime[i] - base.omega_prime[i]) < 1e-6);
  }
}

TEST_CASE("disabling rope leaves keys unrotated") {
  std::mt19937_64 rng(13);
  auto cfg = small_config();
  cfg.use_rope = false;
  PolicyParams<double> p(cfg);
  p.initialize(5);
  const auto in = random_input(rng, 3, 4, 8);
  ForwardCache<double> c;
  forward(p, in.view(), false, &c);
  CHECK(c.k0 == c.k_rot_in);
  CHECK(c.v0 == c.v_rot_in);

  cfg.use_rope = true;
  PolicyParams<double> q(cfg);
  q.values = p.values;
  forward(q, in.view(), false, &c);
  CHECK(c.k0 != c.k_rot_in);
}

TEST_CASE("non-finite inputs name the failing stage") {
  std::mt19937_64 rng(14);
  PolicyParams<float> p(small_config());
  p.initialize(1);
  auto in = random_input(rng, 3, 4, 8);
  in.features[5] = std::numeric_limits<float>::quiet_NaN();
  try {
    forward(p, in.view(), false);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.stage()) == "value_adapter");
  }
  in = random_input(rng, 3, 4, 8);
  in.actions[2] = std::numeric_limits<float>::infinity();
  try {
    forward(p, in.view(), false);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.stage()) == "action_encoder");
  }
}

TEST_CASE("configuration validation and serialization") {
  auto cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK(AlignConfig::parse(cfg.serialize()) == cfg);
  auto bad = cfg;
  bad.width = 25;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = cfg;
  bad.alpha = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK(AlignConfig::desk().width == 64);
  CHECK(AlignConfig::desk().rope_width() == 60);
}

TEST_CASE("initialization is uniform within the fan-in bound with zero biases") {
  PolicyParams<float> p(small_config());
  p.initialize(42);
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    const auto& slot = p.layout.slots[s];
    const auto t = p.tensor(s);
    if (s % 2 == 1) {
      for (float v : t) CHECK(v == 0.0f);
    } else {
      const double bound = std::sqrt(1.0 / static_cast<double>(slot.cols));
      for (float v : t) CHECK(std::abs(v) <= bound + 1e-7);
    }
  }
  PolicyParams<float> q(small_config());
  q.initialize(42);
  CHECK(p.values == q.values);
}
