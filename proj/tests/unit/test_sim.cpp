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
#include "a2/sim.hpp"
#include "doctest.h"

using namespace a2;
using namespace a2::sim;

namespace {

const EmbeddingBank& bank() {
  static const EmbeddingBank b;
  return b;
}

SimConfig small_sim() {
  SimConfig c;
  c.image_width = 56;
  c.image_height = 42;
  return c;
}

Scene empty_scene() {
  auto s = spawn_scene(SceneKind::place, 3, Split::seen, bank(), small_sim());
  s.objects.clear();
  s.target_id = -1;
  return s;
}

world::SceneObject disc(int id, Eigen::Vector2d c, double r, int cls = 0) {
  world::SceneObject o;
  o.id = id;
  o.class_id = cls;
  o.footprint.shape = world::Shape::disc;
  o.footprint.radius = r;
  o.center = c;
  o.height = 0.05;
  return o;
}

priors::GraspCandidate grasp_at(const Eigen::Vector2d& xy, double yaw, double width, int source = -1) {
  priors::GraspCandidate g;
  g.position = {xy.x(), xy.y(), 0.03};
  g.rotation = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix() *
               Eigen::Vector3d(1, -1, -1).asDiagonal();
  g.width = width;
  g.source_object = source;
  return g;
}

priors::CandidateSet grasp_set(std::vector<priors::GraspCandidate> g) {
  priors::CandidateSet s;
  s.kind = priors::Kind::pick;
  s.grasps = std::move(g);
  return s;
}

class FirstAgent : public Agent {
 public:
  std::size_t choose(const Observation&, const Scene&, const Instruction&, Rng&) override { return 0; }
};

}  // namespace

TEST_CASE("keyword embeddings are closest to their own class") {
  const auto& b = bank();
  for (const auto& kw : b.keywords()) {
    int best = -1;
    double best_dot = -2;
    for (int c = 0; c < b.num_classes(); ++c) {
      const auto cv = b.class_vector(c);
      double dot = 0;
      for (std::size_t i = 0; i < b.dim(); ++i) dot += kw.vec[i] * cv[i];
      if (dot > best_dot) best_dot = dot, best = c;
    }
    CHECK(best == kw.class_id);
  }
}

TEST_CASE("the seen split never samples held-out keywords or classes") {
  const auto& b = bank();
  Rng rng(1);
  const auto seen = b.classes_in(Split::seen), unseen = b.classes_in(Split::unseen);
  CHECK(seen.size() + unseen.size() == static_cast<std::size_t>(b.num_classes()));
  for (int c : seen) CHECK_FALSE(b.is_unseen_class(c));
  for (int t = 0; t < 2000; ++t) {
    const int c = seen[t % seen.size()];
    CHECK_FALSE(b.sample_keyword(c, false, false, rng).held_out);
  }
}

TEST_CASE("relation words resolve and unknown words are rejected") {
  CHECK(resolve_relation("on top of") == Relation::on);
  CHECK(resolve_relation("into") == Relation::on);
  CHECK(resolve_relation("beside") == Relation::around);
  CHECK_THROWS_AS(resolve_relation("under"), ValidationError);
}

TEST_CASE("place scenes hold eight well spaced objects") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = spawn_scene(SceneKind::place, seed, Split::seen, bank(), small_sim());
    REQUIRE(s.objects.size() == 8);
    for (std::size_t i = 0; i < s.objects.size(); ++i)
      for (std::size_t j = i + 1; j < s.objects.size(); ++j)
        CHECK((s.objects[i].center - s.objects[j].center).norm() >= 0.1);
    CHECK(s.find(s.target_id) != nullptr);
  }
}

TEST_CASE("pick scenes hold fifteen objects with clutter around the target") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = spawn_scene(SceneKind::pick, seed, Split::seen, bank(), small_sim());
    REQUIRE(s.objects.size() == 15);
    const auto* t = s.find(s.target_id);
    REQUIRE(t != nullptr);
    int close = 0;
    for (const auto& o : s.objects)
      if (o.id != t->id &&
          (o.center - t->center).norm() <= t->circumradius() + o.circumradius() + 0.5 * t->circumradius() + 1e-9)
        ++close;
    CHECK(close >= 2);
    for (const auto& o : s.objects) CHECK(s.inside_workspace(o.center));
  }
}

TEST_CASE("spawning is deterministic per seed") {
  const auto a = spawn_scene(SceneKind::pick, 17, Split::unseen, bank(), small_sim());
  const auto b = spawn_scene(SceneKind::pick, 17, Split::unseen, bank(), small_sim());
  REQUIRE(a.objects.size() == b.objects.size());
  for (std::size_t i = 0; i < a.objects.size(); ++i) {
    CHECK(a.objects[i].center == b.objects[i].center);
    CHECK(a.objects[i].class_id == b.objects[i].class_id);
    CHECK(a.objects[i].yaw == b.objects[i].yaw);
  }
  CHECK(bank().is_unseen_class(a.find(a.target_id)->class_id));
}

TEST_CASE("an empty table renders as the table plane") {
  const auto cfg = small_sim();
  const auto s = empty_scene();
  Rng rng(2);
  const auto r = render_views(s, bank(), cfg, rng);
  REQUIRE(r.views.size() == 3);
  for (const auto& v : r.views) {
    const auto& cam = v.camera;
    const Eigen::Matrix4d world_from_cam = cam.cam_from_world.inverse();
    std::size_t hits = 0;
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        const float d = v.depth[static_cast<std::size_t>(y) * cam.width + x];
        const Eigen::Vector4d pc((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0, 1.0 / std::max(double(d), 1e-9));
        const Eigen::Vector3d dir = world_from_cam.topLeftCorner<3, 3>() * pc.head<3>();
        const Eigen::Vector3d eye = world_from_cam.topRightCorner<3, 1>();
        const double s_hit = (s.workspace.table_height - eye.z()) / dir.z();
        const Eigen::Vector3d hit = eye + s_hit * dir;
        const bool on_table = dir.z() < 0 && std::abs(hit.x()) <= cfg.table_extent && std::abs(hit.y()) <= cfg.table_extent;
        if (d > 0) {
          ++hits;
          CHECK(std::abs(d - s_hit) < 1e-5);
        } else {
          CHECK_FALSE(on_table);
        }
      }
    CHECK(hits > 0);
    for (auto m : r.masks[0]) CHECK(m == 0u);
  }
}

TEST_CASE("a lone object's pixels carry its class direction") {
  auto cfg = small_sim();
  auto s = empty_scene();
  world::SceneObject box;
  box.id = 0;
  box.class_id = 5;
  box.footprint.shape = world::Shape::box;
  box.footprint.half_x = 0.05;
  box.footprint.half_y = 0.04;
  box.height = 0.08;
  s.objects.push_back(box);
  Rng rng(3);
  const auto r = render_views(s, bank(), cfg, rng);
  const auto cv = bank().class_vector(5);
  std::size_t pixels = 0;
  for (std::size_t v = 0; v < r.views.size(); ++v)
    for (std::size_t px = 0; px < r.masks[v].size(); ++px) {
      if (r.masks[v][px] != 1u) continue;
      ++pixels;
      double dot = 0, nf = 0;
      for (std::size_t i = 0; i < bank().dim(); ++i) {
        const double f = r.views[v].features[px * bank().dim() + i];
        dot += f * cv[i];
        nf += f * f;
      }
      CHECK(dot / std::sqrt(nf) >= 0.9);
    }
  CHECK(pixels > 50);
}

TEST_CASE("grasp feasibility follows the corridor rule") {
  auto s = empty_scene();
  s.objects.push_back(disc(0, {0.0, 0.0}, 0.02));
  const auto centred = grasp_at({0.0, 0.0}, 0.3, 0.04, 0);
  CHECK(grasp_feasible(s, centred));
  CHECK_FALSE(grasp_feasible(s, grasp_at({0.15, 0.15}, 0.0, 0.05)));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.08, 0.08), r(0.01, 0.03);
  const auto corridor = grasp_corridor(centred);
  for (int t = 0; t < 500; ++t) {
    auto scene = s;
    const Eigen::Vector2d c(u(rng), u(rng));
    const double rad = r(rng);
    if ((c.norm() - rad) <= 0.02) continue;  // obstacles must not overlap the object itself
    scene.objects.push_back(disc(1, c, rad));
    CHECK(grasp_feasible(scene, centred) == !world::rect_disc_intersect(corridor, c, rad));
  }
}

TEST_CASE("pick steps remove feasible objects only") {
  auto s = empty_scene();
  s.objects.push_back(disc(0, {0.0, 0.0}, 0.02));
  s.objects.push_back(disc(1, {0.1, 0.0}, 0.02));
  s.objects.push_back(disc(2, {0.0, 0.045}, 0.02));
  s.target_id = 0;

  auto scene = s;
  const auto blocked = step_pick(scene, grasp_at({0.0, 0.0}, std::acos(-1.0) / 2, 0.04, 0));
  CHECK(blocked.reward == 0);
  CHECK(scene.objects.size() == 3);

  const auto obstacle = step_pick(scene, grasp_at({0.1, 0.0}, 0.0, 0.04, 1));
  CHECK(obstacle.reward == 1);
  CHECK(obstacle.removed_object == 1);
  CHECK_FALSE(obstacle.target_grasped);
  CHECK(scene.objects.size() == 2);

  const auto target = step_pick(scene, grasp_at({0.0, 0.0}, 0.0, 0.04, 0));
  CHECK(target.reward == 1);
  CHECK(target.target_grasped);
  CHECK(scene.find(0) == nullptr);
}

TEST_CASE("place steps test the instructed region") {
  auto s = empty_scene();
  s.objects.push_back(disc(0, {0.0, 0.0}, 0.03));
  s.objects.push_back(disc(1, {0.12, 0.0}, 0.03));
  Instruction ins;
  ins.kind = SceneKind::place;
  ins.target_object = 0;
  ins.relation = Relation::on;
  priors::PlaceCandidate p;
  p.position = {0.0, 0.0, 0.05};
  CHECK(step_place(s, p, ins).reward == 1);
  ins.relation = Relation::around;
  p.position = {0.12, 0.0, 0.0};
  CHECK(step_place(s, p, ins).reward == 0);
  p.position = {-0.05, 0.0, 0.0};
  CHECK(step_place(s, p, ins).reward == 1);
  CHECK(step_place(s, p, ins).reward ==
        (world::in_place_region(s, s.objects[0], Relation::around, p.position.head<2>(), 0.06) ? 1 : 0));
}

TEST_CASE("the pick expert prefers feasible target grasps, then the nearest obstacle") {
  auto s = empty_scene();
  s.objects.push_back(disc(0, {0.0, 0.0}, 0.02));
  s.objects.push_back(disc(1, {0.0, 0.045}, 0.02));
  s.objects.push_back(disc(2, {0.0, -0.045}, 0.02));
  s.objects.push_back(disc(3, {0.15, 0.0}, 0.02));
  s.target_id = 0;
  const double up = std::acos(-1.0) / 2;
  auto set = grasp_set({grasp_at({0.15, 0.0}, 0.0, 0.04, 3), grasp_at({0.0, 0.0}, up, 0.04, 0),
                        grasp_at({0.0, 0.045}, 0.0, 0.04, 1), grasp_at({0.0, 0.0}, 0.0, 0.04, 0)});
  CHECK(expert_pick(s, 0, set) == 3);

  set.grasps.pop_back();
  std::size_t oracle = 99;
  double best = 1e9;
  for (std::size_t i = 0; i < set.grasps.size(); ++i) {
    const auto& g = set.grasps[i];
    if (!grasp_feasible(s, g) || grasp_source(s, g) == 0) continue;
    const double d = g.position.head<2>().norm();
    if (d < best) best = d, oracle = i;
  }
  CHECK(expert_pick(s, 0, set) == oracle);
  CHECK(oracle == 2);

  set = grasp_set({grasp_at({0.0, 0.045}, 0.0, 0.04, 1), grasp_at({0.0, -0.045}, 0.0, 0.04, 2)});
  CHECK(expert_pick(s, 0, set) == 0);

  set = grasp_set({grasp_at({0.0, 0.0}, up, 0.04, 0)});
  CHECK_THROWS_AS(expert_pick(s, 0, set), ExpertStuckError);
}

TEST_CASE("the place expert picks a valid candidate or reports being stuck") {
  auto s = empty_scene();
  s.objects.push_back(disc(0, {0.0, 0.0}, 0.03));
  s.objects.push_back(disc(1, {0.15, 0.0}, 0.03));
  Instruction ins;
  ins.kind = SceneKind::place;
  ins.target_object = 0;
  ins.relation = Relation::on;
  priors::CandidateSet set;
  set.kind = priors::Kind::place;
  set.places = {{{0.15, 0.0, 0.05}, Relation::on, 1}, {{0.0, 0.0, 0.05}, Relation::on, 0}, {{0.2, 0.2, 0.0}, Relation::around, 1}};
  Rng rng(5);
  CHECK(expert_place(s, ins, set, rng) == 1);
  set.places.erase(set.places.begin() + 1);
  CHECK_THROWS_AS(expert_place(s, ins, set, rng), ExpertStuckError);
}

TEST_CASE("pick rollouts remove one object per successful step and stop by the cap") {
  const auto cfg = small_sim();
  ExpertAgent expert;
  FirstAgent first;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::size_t last = 0;
    bool started = false;
    bool consistent = true;
    const auto log = rollout(expert, Task::pick, seed, Split::seen, bank(), cfg,
                             [&](const Scene& before, const Instruction&, const Observation&, const StepOutcome& out) {
                               if (started && before.objects.size() != last) consistent = false;
                               last = before.objects.size() - (out.reward == 1 ? 1 : 0);
                               started = true;
                             });
    CHECK(consistent);
    CHECK(log.steps.size() <= 8);
    for (const auto& st : log.steps) CHECK(st.reward == 1);

    const auto lazy = rollout(first, Task::pick, seed, Split::seen, bank(), cfg);
    CHECK(lazy.steps.size() <= static_cast<std::size_t>(cfg.max_pick_steps));
  }
}

TEST_CASE("place rollouts take one step and rollouts are reproducible") {
  const auto cfg = small_sim();
  ExpertAgent expert;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a = rollout(expert, Task::place, seed, Split::seen, bank(), cfg, {}, 2);
    CHECK(a.steps.size() == 1);
    const auto b = rollout(expert, Task::place, seed, Split::seen, bank(), cfg, {}, 2);
    CHECK(a.steps[0].placed == b.steps[0].placed);
    CHECK(a.instructions[0].text == b.instructions[0].text);
  }
  const auto pnp = rollout(expert, Task::pick_n_place, 4, Split::seen, bank(), cfg);
  CHECK(pnp.instructions.size() == 2);
  CHECK(parse_task(task_name(Task::pick_n_place)) == Task::pick_n_place);
}
