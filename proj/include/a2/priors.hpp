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

// Unconditioned action candidates: grasps for picking, place positions for
// placing, and the 10-d action vector shared by both.
//
// Action vector layout: [x, y, z, R(:,0), R(:,1), w]. Grasps store the gripper
// opening in w. Places use the identity rotation and w = +0.5 ("on") or -0.5
// ("around").

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "a2/interchange.hpp"
#include "a2/world.hpp"

namespace a2::priors {

using Rng = std::mt19937_64;
using world::Relation;

struct GraspCandidate {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // columns: closing, lateral, approach
  double width = 0.0;
  double source_score = 0.0;  // generator confidence; only used to truncate
  int source_object = -1;     // -1 when not attached to any object
};

struct PlaceCandidate {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Relation relation = Relation::on;
  int ref_object = -1;
};

struct ObjectRegion {
  int object_id = -1;
  int view = 0;
  int u0 = 0, v0 = 0, u1 = 0, v1 = 0;  // inclusive pixel bounds

  int width() const { return u1 - u0 + 1; }
  int height() const { return v1 - v0 + 1; }
};

using Kind = interchange::CandidateKind;

struct CandidateSet {
  Kind kind = Kind::pick;
  std::vector<GraspCandidate> grasps;
  std::vector<PlaceCandidate> places;
  bool undersampled = false;  // place sampling hit the retry cap at least once

  std::size_t size() const { return kind == Kind::pick ? grasps.size() : places.size(); }
  bool empty() const { return size() == 0; }
  Eigen::Vector3d position(std::size_t i) const {
    return kind == Kind::pick ? grasps[i].position : places[i].position;
  }
  std::vector<float> encoded() const;  // L x 10
};

inline constexpr std::size_t kActionDim = interchange::kActionDim;
inline constexpr float kOnFlag = 0.5f;
inline constexpr float kAroundFlag = -0.5f;

std::array<float, kActionDim> encode_action(const GraspCandidate& g);
std::array<float, kActionDim> encode_action(const PlaceCandidate& p);

// Rebuilds the rotation from the two stored columns by Gram-Schmidt.
GraspCandidate decode_grasp(std::span<const float, kActionDim> row);
PlaceCandidate decode_place(std::span<const float, kActionDim> row);

// ||R^T R - I||_inf for R = [c0, c1, c0 x c1] taken straight from the row.
double rotation_error(std::span<const float, kActionDim> row);

// Decodes a pick bundle's candidate rows. Throws ValidationError when a row's
// rotation is off by more than 1e-3.
CandidateSet load_grasps(const interchange::SceneBundle& bundle);

struct GraspSynthOptions {
  int per_object = 4;
  double position_noise = 0.003;
  double spurious_fraction = 0.25;
  double grasp_depth = 0.02;  // below the object top
  std::size_t max_candidates = 256;
};

// Top-down antipodal grasps through each visible object (center plus noise,
// random closing direction, opening = footprint extent) and free-space
// distractors. Truncates to max_candidates by source score.
CandidateSet synth_grasps(const world::Scene& scene, std::span<const int> visible_ids, Rng& rng,
                          const GraspSynthOptions& options = {});

// One tight bounding box per object id (mask value id + 1; 0 = background).
// Boxes narrower or shorter than min_side pixels are dropped.
std::vector<ObjectRegion> region_proposals(std::span<const std::uint32_t> mask, int width, int height,
                                           int min_side = 5, int view = 0);

struct PlaceSynthOptions {
  int per_relation = 3;
  double annulus = 0.06;
  int max_tries = 100;
  std::size_t max_candidates = 256;
};

// For each proposed object: per_relation "on" positions uniform inside its
// footprint at its top height, then per_relation "around" positions on the
// table in its annulus, outside every footprint and inside the workspace.
CandidateSet sample_places(std::span<const ObjectRegion> regions, const world::Scene& scene, Rng& rng,
                           const PlaceSynthOptions& options = {});

}  // namespace a2::priors
