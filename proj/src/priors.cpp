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

#include "a2/priors.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <set>

#include "a2/errors.hpp"

namespace a2::priors {

std::vector<float> CandidateSet::encoded() const {
  std::vector<float> out;
  out.reserve(size() * kActionDim);
  for (std::size_t i = 0; i < size(); ++i) {
    const auto row = kind == Kind::pick ? encode_action(grasps[i]) : encode_action(places[i]);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

std::array<float, kActionDim> encode_action(const GraspCandidate& g) {
  std::array<float, kActionDim> r{};
  for (int a = 0; a < 3; ++a) {
    r[a] = static_cast<float>(g.position[a]);
    r[3 + a] = static_cast<float>(g.rotation(a, 0));
    r[6 + a] = static_cast<float>(g.rotation(a, 1));
  }
  r[9] = static_cast<float>(g.width);
  return r;
}

std::array<float, kActionDim> encode_action(const PlaceCandidate& p) {
  std::array<float, kActionDim> r{};
  for (int a = 0; a < 3; ++a) r[a] = static_cast<float>(p.position[a]);
  r[3] = 1.0f;
  r[7] = 1.0f;
  r[9] = p.relation == Relation::on ? kOnFlag : kAroundFlag;
  return r;
}

double rotation_error(std::span<const float, kActionDim> row) {
  const Eigen::Vector3d c0(row[3], row[4], row[5]);
  const Eigen::Vector3d c1(row[6], row[7], row[8]);
  Eigen::Matrix3d r;
  r.col(0) = c0;
  r.col(1) = c1;
  r.col(2) = c0.cross(c1);
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
}

GraspCandidate decode_grasp(std::span<const float, kActionDim> row) {
  GraspCandidate g;
  g.position = {row[0], row[1], row[2]};
  const Eigen::Vector3d c0 = Eigen::Vector3d(row[3], row[4], row[5]).normalized();
  Eigen::Vector3d c1(row[6], row[7], row[8]);
  c1 = (c1 - c0.dot(c1) * c0).normalized();
  g.rotation.col(0) = c0;
  g.rotation.col(1) = c1;
  g.rotation.col(2) = c0.cross(c1);
  g.width = row[9];
  return g;
}

PlaceCandidate decode_place(std::span<const float, kActionDim> row) {
  PlaceCandidate p;
  p.position = {row[0], row[1], row[2]};
  p.relation = row[9] >= 0.0f ? Relation::on : Relation::around;
  return p;
}

CandidateSet load_grasps(const interchange::SceneBundle& bundle) {
  if (bundle.candidate_kind != Kind::pick) throw ValidationError("candidate_kind", "load_grasps needs a pick bundle");
  CandidateSet set;
  set.kind = Kind::pick;
  for (std::size_t i = 0; i < bundle.l; ++i) {
    std::span<const float, kActionDim> row(bundle.candidates.data() + i * kActionDim, kActionDim);
    const double err = rotation_error(row);
    if (!(err <= 1e-3))
      throw ValidationError("candidates", "row " + std::to_string(i) + " rotation is not orthonormal");
    set.grasps.push_back(decode_grasp(row));
  }
  return set;
}

namespace {

Eigen::Matrix3d top_down_rotation(double yaw) {
  const Eigen::Vector3d closing(std::cos(yaw), std::sin(yaw), 0.0);
  const Eigen::Vector3d approach(0.0, 0.0, -1.0);
  Eigen::Matrix3d r;
  r.col(0) = closing;
  r.col(1) = approach.cross(closing);
  r.col(2) = approach;
  return r;
}

}  // namespace

CandidateSet synth_grasps(const world::Scene& scene, std::span<const int> visible_ids, Rng& rng,
                          const GraspSynthOptions& opt) {
  CandidateSet set;
  set.kind = Kind::pick;
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> noise(0.0, opt.position_noise);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double table = scene.workspace.table_height;

  for (const auto& obj : scene.objects) {
    if (std::find(visible_ids.begin(), visible_ids.end(), obj.id) == visible_ids.end()) continue;
    for (int k = 0; k < opt.per_object; ++k) {
      GraspCandidate g;
      const double yaw = angle(rng);
      Eigen::Vector2d xy = obj.center + Eigen::Vector2d(noise(rng), noise(rng));
      // keep the grasp center on its own footprint
      if (obj.signed_distance(xy) > 0.0) xy = obj.center;
      g.rotation = top_down_rotation(yaw);
      g.width = obj.extent_along({std::cos(yaw), std::sin(yaw)});
      g.position = {xy.x(), xy.y(), table + std::max(obj.height - opt.grasp_depth, 0.5 * obj.height)};
      g.source_score = 0.5 + 0.5 * unit(rng);
      g.source_object = obj.id;
      set.grasps.push_back(g);
    }
  }

  const auto attached = static_cast<int>(set.grasps.size());
  const int spurious = static_cast<int>(std::lround(opt.spurious_fraction * attached));
  const auto& ws = scene.workspace;
  std::uniform_real_distribution<double> ux(ws.min.x(), ws.max.x());
  std::uniform_real_distribution<double> uy(ws.min.y(), ws.max.y());
  std::uniform_real_distribution<double> uw(0.03, 0.10);
  for (int k = 0, tries = 0; k < spurious && tries < 1000 * (spurious + 1); ++tries) {
    const Eigen::Vector2d xy(ux(rng), uy(rng));
    if (scene.min_signed_distance(xy) <= 0.01) continue;
    GraspCandidate g;
    g.rotation = top_down_rotation(angle(rng));
    g.width = uw(rng);
    g.position = {xy.x(), xy.y(), table + 0.02};
    g.source_score = 0.5 * unit(rng);
    g.source_object = -1;
    set.grasps.push_back(g);
    ++k;
  }

  if (set.grasps.size() > opt.max_candidates) {
    std::vector<std::size_t> order(set.grasps.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return set.grasps[a].source_score > set.grasps[b].source_score;
    });
    order.resize(opt.max_candidates);
    std::sort(order.begin(), order.end());
    std::vector<GraspCandidate> kept;
    kept.reserve(order.size());
    for (auto i : order) kept.push_back(set.grasps[i]);
    set.grasps = std::move(kept);
  }
  return set;
}

std::vector<ObjectRegion> region_proposals(std::span<const std::uint32_t> mask, int width, int height, int min_side,
                                           int view) {
  if (mask.size() != static_cast<std::size_t>(width) * height)
    throw ValidationError("mask", "expected H x W values");
  std::map<std::uint32_t, ObjectRegion> boxes;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const std::uint32_t id = mask[static_cast<std::size_t>(v) * width + u];
      if (id == 0) continue;
      auto [it, fresh] = boxes.try_emplace(id);
      auto& r = it->second;
      if (fresh) {
        r.object_id = static_cast<int>(id) - 1;
        r.view = view;
        r.u0 = r.u1 = u;
        r.v0 = r.v1 = v;
      } else {
        r.u0 = std::min(r.u0, u);
        r.u1 = std::max(r.u1, u);
        r.v0 = std::min(r.v0, v);
        r.v1 = std::max(r.v1, v);
      }
    }
  }
  std::vector<ObjectRegion> out;
  for (const auto& [id, r] : boxes)
    if (r.width() >= min_side && r.height() >= min_side) out.push_back(r);
  return out;
}

namespace {

Eigen::Vector2d sample_inside(const world::SceneObject& obj, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (obj.footprint.shape == world::Shape::disc) {
    const double r = obj.footprint.radius * std::sqrt(unit(rng));
    const double t = 2.0 * std::numbers::pi * unit(rng);
    return obj.center + r * Eigen::Vector2d(std::cos(t), std::sin(t));
  }
  const auto rect = obj.as_rect();
  const double a = (2.0 * unit(rng) - 1.0) * rect.half_u;
  const double b = (2.0 * unit(rng) - 1.0) * rect.half_v;
  const Eigen::Vector2d perp(-rect.axis.y(), rect.axis.x());
  return rect.center + a * rect.axis + b * perp;
}

}  // namespace

CandidateSet sample_places(std::span<const ObjectRegion> regions, const world::Scene& scene, Rng& rng,
                           const PlaceSynthOptions& opt) {
  CandidateSet set;
  set.kind = Kind::place;
  std::set<int> done;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double table = scene.workspace.table_height;
  for (const auto& region : regions) {
    if (!done.insert(region.object_id).second) continue;
    const auto* obj = scene.find(region.object_id);
    if (obj == nullptr) continue;
    for (int k = 0; k < opt.per_relation; ++k) {
      const Eigen::Vector2d xy = sample_inside(*obj, rng);
      set.places.push_back({{xy.x(), xy.y(), table + obj->height}, Relation::on, obj->id});
    }
    const double reach = obj->circumradius() + opt.annulus;
    for (int k = 0; k < opt.per_relation; ++k) {
      bool placed = false;
      for (int t = 0; t < opt.max_tries && !placed; ++t) {
        const Eigen::Vector2d xy =
            obj->center + reach * Eigen::Vector2d(2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0);
        if (!scene.inside_workspace(xy)) continue;
        if (!world::in_place_region(scene, *obj, Relation::around, xy, opt.annulus)) continue;
        set.places.push_back({{xy.x(), xy.y(), table}, Relation::around, obj->id});
        placed = true;
      }
      if (!placed) set.undersampled = true;
    }
  }
  if (set.places.size() > opt.max_candidates) set.places.resize(opt.max_candidates);
  return set;
}

}  // namespace a2::priors
