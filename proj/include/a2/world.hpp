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

#pragma once

// Tabletop geometry shared by candidate generation and the simulator: object
// footprints on the table plane, oriented rectangles and place-region tests.

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "a2/cloudfuse.hpp"

namespace a2::world {

struct OrientedRect {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Vector2d axis = Eigen::Vector2d::UnitX();  // unit; the half_u direction
  double half_u = 0.0;
  double half_v = 0.0;

  Eigen::Vector2d to_local(const Eigen::Vector2d& p) const;
  bool contains(const Eigen::Vector2d& p) const;
};

bool rects_intersect(const OrientedRect& a, const OrientedRect& b);
// Closed disc vs closed rectangle.
bool rect_disc_intersect(const OrientedRect& rect, const Eigen::Vector2d& center, double radius);

enum class Shape : std::uint8_t { disc, box };

struct Footprint {
  Shape shape = Shape::disc;
  double radius = 0.03;                  // disc
  double half_x = 0.03, half_y = 0.03;   // box, object frame
};

struct SceneObject {
  int id = 0;
  int class_id = 0;
  Footprint footprint;
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double yaw = 0.0;
  double height = 0.05;

  // Negative inside the footprint, zero on the boundary.
  double signed_distance(const Eigen::Vector2d& p) const;
  double circumradius() const;
  // Full width of the footprint measured along a unit direction.
  double extent_along(const Eigen::Vector2d& dir) const;
  bool intersects(const OrientedRect& rect) const;
  OrientedRect as_rect() const;  // boxes only
};

enum class SceneKind : std::uint8_t { pick, place };
enum class Split : std::uint8_t { seen, unseen };

struct Scene {
  SceneKind kind = SceneKind::pick;
  std::uint64_t seed = 0;
  Split split = Split::seen;
  std::vector<SceneObject> objects;
  cloudfuse::WorkspaceBounds workspace;
  int target_id = -1;  // pick target or place reference

  const SceneObject* find(int id) const;
  bool remove(int id);
  // Smallest signed distance to any footprint (+inf for an empty table).
  double min_signed_distance(const Eigen::Vector2d& p) const;
  bool inside_workspace(const Eigen::Vector2d& p) const;
};

enum class Relation : std::uint8_t { on, around };

// Valid place region of `ref`: inside its footprint for `on`; for `around`, a
// ring of width `annulus` outside the footprint that overlaps no footprint.
bool in_place_region(const Scene& scene, const SceneObject& ref, Relation relation, const Eigen::Vector2d& p,
                     double annulus);

}  // namespace a2::world
