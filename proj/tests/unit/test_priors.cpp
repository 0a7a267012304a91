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


#include <Eigen/Geometry>
#include <cmath>
#include <random>

#include "a2/errors.hpp"
#include "a2/priors.hpp"
#include "doctest.h"

using namespace a2;
using namespace a2::priors;

namespace {

world::Scene table_scene() {
  world::Scene s;
  s.workspace.min = {-0.3, -0.3, 0.0};
  s.workspace.max = {0.3, 0.3, 0.4};
  return s;
}

world::SceneObject disc(int id, Eigen::Vector2d c, double r, double h = 0.05) {
  world::SceneObject o;
  o.id = id;
  o.footprint.shape = world::Shape::disc;
  o.footprint.radius = r;
  o.center = c;
  o.height = h;
  return o;
}

world::SceneObject box(int id, Eigen::Vector2d c, double hx, double hy, double yaw, double h = 0.05) {
  world::SceneObject o;
  o.id = id;
  o.footprint.shape = world::Shape::box;
  o.footprint.half_x = hx;
  o.footprint.half_y = hy;
  o.center = c;
  o.yaw = yaw;
  o.height = h;
  return o;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized().toRotationMatrix();
}

std::vector<ObjectRegion> regions_for(const world::Scene& s) {
  std::vector<ObjectRegion> out;
  for (const auto& o : s.objects) out.push_back({o.id, 0, 0, 0, 9, 9});
  return out;
}

}  // namespace

TEST_CASE("grasp at the origin encodes to the layout row") {
  GraspCandidate g;
  g.width = 0.08;
  const auto row = encode_action(g);
  const std::array<float, 10> want = {0, 0, 0, 1, 0, 0, 0, 1, 0, 0.08f};
  CHECK(row == want);
}

TEST_CASE("around place encodes its flag in the width slot") {
  PlaceCandidate p;
  p.position = {0.1, 0.2, 0.0};
  p.relation = Relation::around;
  const auto row = encode_action(p);
  const std::array<float, 10> want = {0.1f, 0.2f, 0, 1, 0, 0, 0, 1, 0, -0.5f};
  CHECK(row == want);
  CHECK(encode_action(PlaceCandidate{})[9] == kOnFlag);
}

TEST_CASE("grasp rows decode back to the same rotation") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int t = 0; t < 500; ++t) {
    GraspCandidate g;
    g.position = {u(rng), u(rng), u(rng)};
    g.rotation = random_rotation(rng);
    g.width = 0.05;
    const auto row = encode_action(g);
    const auto back = decode_grasp(row);
    CHECK((back.rotation - g.rotation).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((back.position - g.position).norm() < 1e-6);
    CHECK(std::abs((back.rotation.transpose() * back.rotation - Eigen::Matrix3d::Identity()).maxCoeff()) < 1e-12);
    CHECK(rotation_error(row) < 1e-6);
  }
}

TEST_CASE("place rows decode to the same kind and position") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int t = 0; t < 100; ++t) {
    PlaceCandidate p;
    p.position = {u(rng), u(rng), u(rng)};
    p.relation = t % 2 ? Relation::on : Relation::around;
    const auto row = encode_action(p);
    const auto back = decode_place(row);
    CHECK(back.relation == p.relation);
    CHECK((back.position - p.position).norm() < 1e-6);
  }
}

TEST_CASE("load_grasps reads every row and rejects a zero rotation block") {
  std::mt19937_64 rng(3);
  interchange::SceneBundle b;
  b.n = 1;
  b.dim = 1;
  b.points = {0, 0, 0};
  b.features = {1};
  b.similarities = {1};
  b.instruction_embedding = {1};
  b.l = 32;
  for (std::uint32_t i = 0; i < b.l; ++i) {
    GraspCandidate g;
    g.rotation = i == 0 ? Eigen::Matrix3d::Identity() : random_rotation(rng);
    g.width = 0.01 * i;
    const auto row = encode_action(g);
    b.candidates.insert(b.candidates.end(), row.begin(), row.end());
  }
  const auto set = load_grasps(b);
  REQUIRE(set.size() == 32);
  CHECK(set.grasps[0].rotation == Eigen::Matrix3d::Identity());

  std::fill(b.candidates.begin() + 3, b.candidates.begin() + 9, 0.0f);
  CHECK_THROWS_AS(load_grasps(b), ValidationError);
}

TEST_CASE("grasps on a lone disc stay near its center") {
  auto s = table_scene();
  s.objects.push_back(disc(0, {0.05, -0.02}, 0.03));
  GraspSynthOptions opt;
  opt.spurious_fraction = 0.0;
  Rng rng(5);
  const int ids[] = {0};
  const auto set = synth_grasps(s, ids, rng, opt);
  REQUIRE(set.size() == 4);
  for (const auto& g : set.grasps) {
    CHECK((g.position.head<2>() - s.objects[0].center).norm() <= 0.03 + opt.position_noise);
    CHECK(g.source_object == 0);
    CHECK(g.width >= 0.0);
  }
}

TEST_CASE("no visible objects gives an empty grasp set") {
  auto s = table_scene();
  s.objects.push_back(disc(0, {0.0, 0.0}, 0.03));
  Rng rng(1);
  CHECK(synth_grasps(s, {}, rng).empty());
}

TEST_CASE("grasp synthesis is deterministic and truncated by score") {
  auto s = table_scene();
  std::vector<int> ids;
  for (int i = 0; i < 8; ++i) {
    s.objects.push_back(disc(i, {-0.2 + 0.05 * i, 0.1}, 0.02));
    ids.push_back(i);
  }
  Rng a(9), b(9);
  const auto x = synth_grasps(s, ids, a), y = synth_grasps(s, ids, b);
  REQUIRE(x.size() == y.size());
  CHECK(x.encoded() == y.encoded());

  GraspSynthOptions opt;
  opt.max_candidates = 10;
  Rng c(9);
  const auto full = synth_grasps(s, ids, c);
  Rng d(9);
  const auto cut = synth_grasps(s, ids, d, opt);
  REQUIRE(cut.size() == 10);
  std::vector<double> scores;
  for (const auto& g : full.grasps) scores.push_back(g.source_score);
  std::sort(scores.rbegin(), scores.rend());
  for (const auto& g : cut.grasps) CHECK(g.source_score >= scores[9]);
}

TEST_CASE("region proposals use bounding boxes and drop small blobs") {
  const int w = 40, h = 30;
  std::vector<std::uint32_t> mask(w * h, 0);
  auto fill = [&](int u0, int v0, int side, std::uint32_t id) {
    for (int v = v0; v < v0 + side; ++v)
      for (int u = u0; u < u0 + side; ++u) mask[v * w + u] = id + 1;
  };
  fill(2, 2, 10, 3);
  auto one = region_proposals(mask, w, h);
  REQUIRE(one.size() == 1);
  CHECK(one[0].object_id == 3);
  CHECK(one[0].width() == 10);
  CHECK(one[0].height() == 10);

  fill(30, 20, 4, 7);
  CHECK(region_proposals(mask, w, h).size() == 1);

  fill(25, 2, 3, 3);
  auto merged = region_proposals(mask, w, h);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].u0 == 2);
  CHECK(merged[0].u1 == 27);
  CHECK(merged[0].v1 == 11);
}

TEST_CASE("eight spaced objects yield 48 places") {
  auto s = table_scene();
  for (int i = 0; i < 8; ++i) {
    const double a = 2.0 * std::acos(-1.0) * i / 8.0;
    s.objects.push_back(disc(i, 0.18 * Eigen::Vector2d(std::cos(a), std::sin(a)), 0.02));
  }
  Rng rng(4);
  const auto regions = regions_for(s);
  const auto set = sample_places(regions, s, rng);
  CHECK(set.size() == 48);
  CHECK_FALSE(set.undersampled);
}

TEST_CASE("place samples respect the footprints") {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> u(-0.2, 0.2), r(0.015, 0.04), yaw(0.0, 3.0);
  for (int scene = 0; scene < 30; ++scene) {
    auto s = table_scene();
    for (int i = 0; i < 6; ++i)
      s.objects.push_back(i % 2 ? disc(i, {u(gen), u(gen)}, r(gen)) : box(i, {u(gen), u(gen)}, r(gen), r(gen), yaw(gen)));
    Rng rng(scene);
    const auto set = sample_places(regions_for(s), s, rng);
    for (const auto& p : set.places) {
      const auto* ref = s.find(p.ref_object);
      REQUIRE(ref != nullptr);
      const Eigen::Vector2d xy = p.position.head<2>();
      if (p.relation == Relation::on) {
        CHECK(ref->signed_distance(xy) <= 0.0);
        CHECK(p.position.z() == doctest::Approx(ref->height));
      } else {
        for (const auto& o : s.objects) CHECK(o.signed_distance(xy) > 0.0);
        CHECK(s.inside_workspace(xy));
      }
    }
  }
}

TEST_CASE("an object flush with the workspace edge still gets its on places") {
  auto s = table_scene();
  s.objects.push_back(disc(0, {0.29, 0.0}, 0.01));
  PlaceSynthOptions opt;
  opt.annulus = 0.005;
  Rng rng(2);
  const auto set = sample_places(regions_for(s), s, rng, opt);
  int on = 0;
  for (const auto& p : set.places) on += p.relation == Relation::on;
  CHECK(on >= 3);
}

TEST_CASE("oriented rectangle and footprint geometry") {
  world::OrientedRect r;
  r.center = {1.0, 0.0};
  r.axis = Eigen::Vector2d(1, 1).normalized();
  r.half_u = 0.5;
  r.half_v = 0.1;
  CHECK(r.contains({1.3, 0.3}));
  CHECK_FALSE(r.contains({1.3, -0.3}));
  CHECK(world::rect_disc_intersect(r, {1.0, 0.3}, 0.15));
  CHECK_FALSE(world::rect_disc_intersect(r, {1.0, 0.3}, 0.1));

  const auto b = box(0, {0, 0}, 0.04, 0.02, std::acos(-1.0) / 2);
  CHECK(b.extent_along({1, 0}) == doctest::Approx(0.04));
  CHECK(b.extent_along({0, 1}) == doctest::Approx(0.08));
  CHECK(b.signed_distance({0.0, 0.05}) == doctest::Approx(0.01));
  CHECK(b.signed_distance({0.0, 0.0}) < 0.0);
  const auto d = disc(1, {0, 0}, 0.03);
  CHECK(d.signed_distance({0.05, 0.0}) == doctest::Approx(0.02));
  CHECK(d.circumradius() == doctest::Approx(0.03));
}

TEST_CASE("place region membership") {
  auto s = table_scene();
  s.objects.push_back(disc(0, {0, 0}, 0.03));
  s.objects.push_back(disc(1, {0.08, 0}, 0.02));
  const auto& ref = s.objects[0];
  CHECK(world::in_place_region(s, ref, Relation::on, {0.0, 0.0}, 0.06));
  CHECK_FALSE(world::in_place_region(s, ref, Relation::on, {0.05, 0.0}, 0.06));
  CHECK(world::in_place_region(s, ref, Relation::around, {0.0, 0.05}, 0.06));
  CHECK_FALSE(world::in_place_region(s, ref, Relation::around, {0.08, 0.0}, 0.06));
  CHECK_FALSE(world::in_place_region(s, ref, Relation::around, {0.0, 0.1}, 0.06));
}
