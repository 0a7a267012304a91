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

#include "a2/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace a2::world {

Eigen::Vector2d OrientedRect::to_local(const Eigen::Vector2d& p) const {
  const Eigen::Vector2d d = p - center;
  const Eigen::Vector2d perp(-axis.y(), axis.x());
  return {d.dot(axis), d.dot(perp)};
}

bool OrientedRect::contains(const Eigen::Vector2d& p) const {
  const auto l = to_local(p);
  return std::abs(l.x()) <= half_u && std::abs(l.y()) <= half_v;
}

namespace {

// Half-length of the projection of `r` on unit direction `dir`.
double projected_radius(const OrientedRect& r, const Eigen::Vector2d& dir) {
  const Eigen::Vector2d perp(-r.axis.y(), r.axis.x());
  return r.half_u * std::abs(r.axis.dot(dir)) + r.half_v * std::abs(perp.dot(dir));
}

}  // namespace

bool rects_intersect(const OrientedRect& a, const OrientedRect& b) {
  const Eigen::Vector2d d = b.center - a.center;
  const Eigen::Vector2d axes[4] = {a.axis, {-a.axis.y(), a.axis.x()}, b.axis, {-b.axis.y(), b.axis.x()}};
  for (const auto& ax : axes)
    if (std::abs(d.dot(ax)) > projected_radius(a, ax) + projected_radius(b, ax)) return false;
  return true;
}

bool rect_disc_intersect(const OrientedRect& rect, const Eigen::Vector2d& center, double radius) {
  const auto l = rect.to_local(center);
  const double cx = std::clamp(l.x(), -rect.half_u, rect.half_u);
  const double cy = std::clamp(l.y(), -rect.half_v, rect.half_v);
  const double dx = l.x() - cx, dy = l.y() - cy;
  return dx * dx + dy * dy <= radius * radius;
}

double SceneObject::signed_distance(const Eigen::Vector2d& p) const {
  if (footprint.shape == Shape::disc) return (p - center).norm() - footprint.radius;
  const auto l = as_rect().to_local(p);
  const double qx = std::abs(l.x()) - footprint.half_x;
  const double qy = std::abs(l.y()) - footprint.half_y;
  const double outside = std::hypot(std::max(qx, 0.0), std::max(qy, 0.0));
  const double inside = std::min(std::max(qx, qy), 0.0);
  return outside + inside;
}

double SceneObject::circumradius() const {
  return footprint.shape == Shape::disc ? footprint.radius : std::hypot(footprint.half_x, footprint.half_y);
}

double SceneObject::extent_along(const Eigen::Vector2d& dir) const {
  if (footprint.shape == Shape::disc) return 2.0 * footprint.radius;
  return 2.0 * projected_radius(as_rect(), dir.normalized());
}

bool SceneObject::intersects(const OrientedRect& rect) const {
  if (footprint.shape == Shape::disc) return rect_disc_intersect(rect, center, footprint.radius);
  return rects_intersect(rect, as_rect());
}

OrientedRect SceneObject::as_rect() const {
  OrientedRect r;
  r.center = center;
  r.axis = {std::cos(yaw), std::sin(yaw)};
  r.half_u = footprint.half_x;
  r.half_v = footprint.half_y;
  return r;
}

const SceneObject* Scene::find(int id) const {
  auto it = std::find_if(objects.begin(), objects.end(), [id](const SceneObject& o) { return o.id == id; });
  return it == objects.end() ? nullptr : &*it;
}

bool Scene::remove(int id) {
  auto it = std::find_if(objects.begin(), objects.end(), [id](const SceneObject& o) { return o.id == id; });
  if (it == objects.end()) return false;
  objects.erase(it);
  return true;
}

double Scene::min_signed_distance(const Eigen::Vector2d& p) const {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& o : objects) best = std::min(best, o.signed_distance(p));
  return best;
}

bool Scene::inside_workspace(const Eigen::Vector2d& p) const {
  return p.x() >= workspace.min.x() && p.x() <= workspace.max.x() && p.y() >= workspace.min.y() &&
         p.y() <= workspace.max.y();
}

bool in_place_region(const Scene& scene, const SceneObject& ref, Relation relation, const Eigen::Vector2d& p,
                     double annulus) {
  const double sd = ref.signed_distance(p);
  if (relation == Relation::on) return sd <= 0.0;
  if (!(sd > 0.0 && sd <= annulus)) return false;
  return scene.min_signed_distance(p) > 0.0;
}

}  // namespace a2::world
