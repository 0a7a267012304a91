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

// Multi-view fusion of depth images and per-pixel feature maps into a 3D
// point cloud, a feature cloud and a similarity cloud.
//
// Every point is projected into every view. Per view i:
//   d_i  = l_i - l'_i                 (point depth minus interpolated image depth)
//   v_i  = [d_i < mu]                 (visibility)
//   b_i  = exp(min(mu - |d_i|, 0)/mu) (view weight)
// and the fused value is sum_i b_i v_i x_i / (eps + sum_i v_i).

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace a2::cloudfuse {

struct CameraModel {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  Eigen::Matrix4d cam_from_world = Eigen::Matrix4d::Identity();

  // Throws ValidationError on non-positive focal lengths or a non-rigid pose.
  void validate() const;
  Eigen::Matrix4d world_from_cam() const;
};

struct ViewInput {
  CameraModel camera;
  std::vector<float> depth;       // H x W, meters, 0 = invalid
  std::vector<float> features;    // H x W x D
  std::size_t dim = 0;
  std::vector<float> similarity;  // optional H x W

  void validate() const;
};

struct WorkspaceBounds {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Ones();
  double table_height = 0.0;

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

// What l and l' measure. z_depth uses camera-frame z and the raw depth image;
// ray_distance uses Euclidean distance to the camera center on both sides.
enum class DepthMode { z_depth, ray_distance };

enum class CloudMode { pick, place };

struct FusionOptions {
  double mu = 0.02;
  double eps = 1e-6;
  double voxel = 0.004;
  double table_tolerance = 0.005;
  DepthMode depth_mode = DepthMode::z_depth;
  unsigned threads = 1;
};

struct FusedClouds {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<float> points;        // n x 3
  std::vector<float> features;      // n x D
  std::vector<float> similarities;  // n
  std::vector<std::uint8_t> visible_views;  // per point, sum of v_i
  std::size_t degenerate_similarities = 0;
};

struct SampledClouds {
  std::vector<std::uint32_t> indices;  // into the source cloud, by descending similarity
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<float> points;
  std::vector<float> features;
  std::vector<float> similarities;
};

// Union of valid-depth pixels of all views in world frame, cropped to bounds and
// deduplicated on a voxel grid (first point per voxel wins, views in order,
// pixels row-major). Coordinates are rounded to float. Throws EmptyCloudError.
std::vector<Eigen::Vector3d> backproject(std::span<const ViewInput> views, const WorkspaceBounds& bounds,
                                         double voxel);

struct Projection {
  Eigen::Vector2d pixel;  // (u, v), pixel centers at integer coordinates
  double depth;           // l, per DepthMode
};

// nullopt when the point is behind the camera (z <= 0).
std::optional<Projection> project_point(const Eigen::Vector3d& p, const CameraModel& camera,
                                        DepthMode mode = DepthMode::z_depth);

// Bilinear lookup of a channel-interleaved H x W x C map. Returns false when
// `pixel` lies outside [0, W-1] x [0, H-1].
bool interpolate(std::span<const float> map, int width, int height, std::size_t channels,
                 const Eigen::Vector2d& pixel, std::span<double> out);

std::optional<std::vector<double>> interpolate_feature(const ViewInput& view, const Eigen::Vector2d& pixel);

// Interpolated depth image value l' at `pixel`, converted per DepthMode. nullopt
// when outside the image or when any contributing corner has depth 0.
std::optional<double> interpolate_depth(const ViewInput& view, const Eigen::Vector2d& pixel,
                                        DepthMode mode = DepthMode::z_depth);

struct DepthDiff {
  double raw;        // d
  double truncated;  // d' = clamp(d, -mu, mu)
};

DepthDiff truncated_depth_diff(double l, double l_observed, double mu);
int visibility(double d, double mu);
double view_weight(double d, double mu);

// values is M x D, betas and vis have M entries; out has D entries.
void fuse_point(std::span<const double> values, std::span<const double> betas, std::span<const int> vis, double eps,
                std::span<double> out);

struct Similarity {
  double value = 0.0;
  bool degenerate = false;  // a zero-norm input; value is 0
};

template <class T, class U>
Similarity similarity(std::span<const T> f, std::span<const U> lang);

// Full pipeline. When `lang` is non-empty the similarity cloud is the cosine
// between each fused feature and `lang`; otherwise per-view similarity maps are
// fused with the same weights. Pick mode drops points at or below
// table_height + table_tolerance. Throws EmptyCloudError.
FusedClouds build_clouds(std::span<const ViewInput> views, std::span<const float> lang,
                         const WorkspaceBounds& bounds, CloudMode mode, const FusionOptions& options = {});

// The min(max_points, ceil(n/2)) highest-similarity points, ties by ascending
// index, ordered by descending similarity.
SampledClouds prioritized_sample(const FusedClouds& clouds, std::size_t max_points);

std::size_t sample_count(std::size_t n, std::size_t max_points);

}  // namespace a2::cloudfuse
