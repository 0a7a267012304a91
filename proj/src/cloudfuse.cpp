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

#include "a2/cloudfuse.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "a2/errors.hpp"
#include "a2/simd/kernels.hpp"

namespace a2::cloudfuse {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("camera", "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ValidationError("camera", "image size must be positive");
  const Eigen::Matrix3d r = cam_from_world.topLeftCorner<3, 3>();
  const double err = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(err < 1e-6)) throw ValidationError("camera", "pose rotation is not orthonormal");
}

Eigen::Matrix4d CameraModel::world_from_cam() const {
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d r = cam_from_world.topLeftCorner<3, 3>();
  inv.topLeftCorner<3, 3>() = r.transpose();
  inv.topRightCorner<3, 1>() = -r.transpose() * cam_from_world.topRightCorner<3, 1>();
  return inv;
}

void ViewInput::validate() const {
  camera.validate();
  const std::size_t px = static_cast<std::size_t>(camera.width) * camera.height;
  if (depth.size() != px) throw ValidationError("depth", "expected H x W values");
  for (float d : depth)
    if (!(d >= 0.0f)) throw ValidationError("depth", "negative or NaN depth");
  if (dim == 0 || features.size() != px * dim) throw ValidationError("feature_map", "expected H x W x D values");
  if (!similarity.empty() && similarity.size() != px) throw ValidationError("similarity_map", "expected H x W");
}

namespace {

std::int64_t voxel_key(const Eigen::Vector3d& p, double voxel) {
  constexpr std::int64_t kOffset = 1 << 20;
  const auto q = [&](double c) {
    return (static_cast<std::int64_t>(std::floor(c / voxel)) + kOffset) & ((std::int64_t{1} << 21) - 1);
  };
  return (q(p.x()) << 42) | (q(p.y()) << 21) | q(p.z());
}

double ray_scale(const CameraModel& cam, const Eigen::Vector2d& pixel) {
  const double x = (pixel.x() - cam.cx) / cam.fx;
  const double y = (pixel.y() - cam.cy) / cam.fy;
  return std::sqrt(x * x + y * y + 1.0);
}

}  // namespace

std::vector<Eigen::Vector3d> backproject(std::span<const ViewInput> views, const WorkspaceBounds& bounds,
                                         double voxel) {
  if (views.empty()) throw ValidationError("views", "at least one view is required");
  if (!(voxel > 0.0)) throw ValidationError("voxel", "voxel size must be positive");
  std::vector<Eigen::Vector3d> out;
  std::unordered_set<std::int64_t> seen;
  for (const auto& view : views) {
    view.validate();
    const auto& cam = view.camera;
    const Eigen::Matrix4d world_from_cam = cam.world_from_cam();
    for (int v = 0; v < cam.height; ++v) {
      for (int u = 0; u < cam.width; ++u) {
        const double z = view.depth[static_cast<std::size_t>(v) * cam.width + u];
        if (z <= 0.0) continue;
        const Eigen::Vector4d pc((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z, 1.0);
        const Eigen::Vector4d pw = world_from_cam * pc;
        const Eigen::Vector3d p(static_cast<float>(pw.x()), static_cast<float>(pw.y()), static_cast<float>(pw.z()));
        if (!bounds.contains(p)) continue;
        if (seen.insert(voxel_key(p, voxel)).second) out.push_back(p);
      }
    }
  }
  if (out.empty()) throw EmptyCloudError("no valid depth inside the workspace");
  return out;
}

std::optional<Projection> project_point(const Eigen::Vector3d& p, const CameraModel& camera, DepthMode mode) {
  const Eigen::Vector3d pc = camera.cam_from_world.topLeftCorner<3, 3>() * p + camera.cam_from_world.topRightCorner<3, 1>();
  if (!(pc.z() > 0.0)) return std::nullopt;
  Projection out;
  out.pixel = {camera.fx * pc.x() / pc.z() + camera.cx, camera.fy * pc.y() / pc.z() + camera.cy};
  out.depth = mode == DepthMode::z_depth ? pc.z() : pc.norm();
  return out;
}

namespace {

struct Bilinear {
  std::size_t idx[4];
  double w[4];
};

std::optional<Bilinear> bilinear_taps(int width, int height, const Eigen::Vector2d& pixel) {
  const double u = pixel.x();
  const double v = pixel.y();
  if (!(u >= 0.0 && v >= 0.0 && u <= width - 1 && v <= height - 1)) return std::nullopt;
  const int x0 = std::min(static_cast<int>(std::floor(u)), width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(v)), height - 1);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double ax = u - x0;
  const double ay = v - y0;
  Bilinear b;
  b.idx[0] = static_cast<std::size_t>(y0) * width + x0;
  b.idx[1] = static_cast<std::size_t>(y0) * width + x1;
  b.idx[2] = static_cast<std::size_t>(y1) * width + x0;
  b.idx[3] = static_cast<std::size_t>(y1) * width + x1;
  b.w[0] = (1.0 - ax) * (1.0 - ay);
  b.w[1] = ax * (1.0 - ay);
  b.w[2] = (1.0 - ax) * ay;
  b.w[3] = ax * ay;
  return b;
}

}  // namespace

bool interpolate(std::span<const float> map, int width, int height, std::size_t channels,
                 const Eigen::Vector2d& pixel, std::span<double> out) {
  const auto taps = bilinear_taps(width, height, pixel);
  if (!taps) return false;
  std::fill(out.begin(), out.end(), 0.0);
  for (int t = 0; t < 4; ++t) {
    if (taps->w[t] == 0.0) continue;
    const float* src = map.data() + taps->idx[t] * channels;
    for (std::size_t c = 0; c < channels; ++c) out[c] += taps->w[t] * src[c];
  }
  return true;
}

std::optional<std::vector<double>> interpolate_feature(const ViewInput& view, const Eigen::Vector2d& pixel) {
  std::vector<double> out(view.dim);
  if (!interpolate(view.features, view.camera.width, view.camera.height, view.dim, pixel, out)) return std::nullopt;
  return out;
}

std::optional<double> interpolate_depth(const ViewInput& view, const Eigen::Vector2d& pixel, DepthMode mode) {
  const auto taps = bilinear_taps(view.camera.width, view.camera.height, pixel);
  if (!taps) return std::nullopt;
  double z = 0.0;
  for (int t = 0; t < 4; ++t) {
    if (taps->w[t] == 0.0) continue;
    const double d = view.depth[taps->idx[t]];
    if (d <= 0.0) return std::nullopt;
    z += taps->w[t] * d;
  }
  return mode == DepthMode::z_depth ? z : z * ray_scale(view.camera, pixel);
}

DepthDiff truncated_depth_diff(double l, double l_observed, double mu) {
  const double d = l - l_observed;
  return {d, std::max(std::min(d, mu), -mu)};
}

int visibility(double d, double mu) { return d < mu ? 1 : 0; }

double view_weight(double d, double mu) { return std::exp(std::min(mu - std::abs(d), 0.0) / mu); }

void fuse_point(std::span<const double> values, std::span<const double> betas, std::span<const int> vis, double eps,
                std::span<double> out) {
  const std::size_t m = betas.size();
  const std::size_t dim = out.size();
  if (vis.size() != m || values.size() != m * dim) throw ValidationError("fuse_point", "inconsistent lengths");
  std::fill(out.begin(), out.end(), 0.0);
  double count = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    count += vis[i];
    if (vis[i] == 0) continue;
    for (std::size_t c = 0; c < dim; ++c) out[c] += betas[i] * values[i * dim + c];
  }
  const double denom = eps + count;
  for (auto& o : out) o /= denom;
}

template <class T, class U>
Similarity similarity(std::span<const T> f, std::span<const U> lang) {
  if (f.size() != lang.size()) throw ValidationError("similarity", "dimension mismatch");
  double dot = 0.0, nf = 0.0, nl = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    dot += double(f[i]) * double(lang[i]);
    nf += double(f[i]) * double(f[i]);
    nl += double(lang[i]) * double(lang[i]);
  }
  if (!(nf > 1e-24) || !(nl > 1e-24)) return {0.0, true};
  return {std::clamp(dot / (std::sqrt(nf) * std::sqrt(nl)), -1.0, 1.0), false};
}

template Similarity similarity<float, float>(std::span<const float>, std::span<const float>);
template Similarity similarity<double, double>(std::span<const double>, std::span<const double>);
template Similarity similarity<double, float>(std::span<const double>, std::span<const float>);

namespace {

struct PointResult {
  std::vector<double> feature;
  double fused_similarity = 0.0;
  int visible = 0;
};

// Per-point fusion over views in fixed order.
void fuse_one(const Eigen::Vector3d& p, std::span<const ViewInput> views, bool fuse_sim_maps,
              const FusionOptions& opt, std::vector<double>& scratch, PointResult& res) {
  const std::size_t dim = views.front().dim;
  res.feature.assign(dim, 0.0);
  res.fused_similarity = 0.0;
  res.visible = 0;
  scratch.resize(dim);
  double sim_acc = 0.0;
  for (const auto& view : views) {
    const auto proj = project_point(p, view.camera, opt.depth_mode);
    if (!proj) continue;
    const auto observed = interpolate_depth(view, proj->pixel, opt.depth_mode);
    if (!observed) continue;
    const auto diff = truncated_depth_diff(proj->depth, *observed, opt.mu);
    if (visibility(diff.raw, opt.mu) == 0) continue;
    const double beta = view_weight(diff.raw, opt.mu);
    interpolate(view.features, view.camera.width, view.camera.height, dim, proj->pixel, scratch);
    simd::axpy(beta, scratch.data(), res.feature.data(), dim);
    if (fuse_sim_maps) {
      double s = 0.0;
      interpolate(view.similarity, view.camera.width, view.camera.height, 1, proj->pixel, {&s, 1});
      sim_acc += beta * s;
    }
    ++res.visible;
  }
  const double denom = opt.eps + res.visible;
  for (auto& f : res.feature) f /= denom;
  res.fused_similarity = sim_acc / denom;
}

}  // namespace

FusedClouds build_clouds(std::span<const ViewInput> views, std::span<const float> lang,
                         const WorkspaceBounds& bounds, CloudMode mode, const FusionOptions& opt) {
  if (!(opt.mu > 0.0)) throw ValidationError("mu", "truncation must be positive");
  auto points = backproject(views, bounds, opt.voxel);
  const std::size_t dim = views.front().dim;
  for (const auto& v : views)
    if (v.dim != dim) throw ValidationError("feature_map", "feature dimension differs across views");
  const bool use_lang = !lang.empty();
  if (use_lang && lang.size() != dim) throw ValidationError("instruction_embedding", "dimension mismatch");
  const bool fuse_sim_maps =
      !use_lang && std::all_of(views.begin(), views.end(), [](const ViewInput& v) { return !v.similarity.empty(); });
  if (!use_lang && !fuse_sim_maps)
    throw ValidationError("instruction_embedding", "need a language embedding or per-view similarity maps");

  if (mode == CloudMode::pick) {
    const double cut = bounds.table_height + opt.table_tolerance;
    std::erase_if(points, [cut](const Eigen::Vector3d& p) { return p.z() <= cut; });
    if (points.empty()) throw EmptyCloudError("no points above the table");
  }

  FusedClouds out;
  out.n = points.size();
  out.dim = dim;
  out.points.resize(out.n * 3);
  out.features.resize(out.n * dim);
  out.similarities.resize(out.n);
  out.visible_views.resize(out.n);
  std::vector<std::uint8_t> degenerate(out.n, 0);

  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> scratch;
    PointResult res;
    for (std::size_t j = begin; j < end; ++j) {
      for (int a = 0; a < 3; ++a) out.points[j * 3 + a] = static_cast<float>(points[j][a]);
      const Eigen::Vector3d stored(out.points[j * 3], out.points[j * 3 + 1], out.points[j * 3 + 2]);
      fuse_one(stored, views, fuse_sim_maps, opt, scratch, res);
      for (std::size_t c = 0; c < dim; ++c) out.features[j * dim + c] = static_cast<float>(res.feature[c]);
      double s = res.fused_similarity;
      if (use_lang) {
        const auto sim = similarity(std::span<const double>(res.feature), lang);
        s = sim.value;
        degenerate[j] = sim.degenerate ? 1 : 0;
      }
      out.similarities[j] = static_cast<float>(std::clamp(s, -1.0, 1.0));
      out.visible_views[j] = static_cast<std::uint8_t>(res.visible);
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(out.n / 256 + 1)));
  if (threads == 1) {
    work(0, out.n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (out.n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(out.n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  out.degenerate_similarities = static_cast<std::size_t>(std::count(degenerate.begin(), degenerate.end(), 1));
  return out;
}

std::size_t sample_count(std::size_t n, std::size_t max_points) {
  return std::min({max_points, (n + 1) / 2, n});
}

SampledClouds prioritized_sample(const FusedClouds& clouds, std::size_t max_points) {
  const std::size_t n = clouds.n;
  if (n == 0) throw EmptyCloudError("cannot sample an empty cloud");
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  const std::size_t k = sample_count(n, max_points);
  auto by_similarity = [&](std::uint32_t a, std::uint32_t b) {
    const float sa = clouds.similarities[a], sb = clouds.similarities[b];
    return sa != sb ? sa > sb : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), by_similarity);
  order.resize(k);

  SampledClouds out;
  out.indices = std::move(order);
  out.n = k;
  out.dim = clouds.dim;
  out.points.resize(k * 3);
  out.features.resize(k * clouds.dim);
  out.similarities.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = out.indices[i];
    std::copy_n(clouds.points.begin() + j * 3, 3, out.points.begin() + i * 3);
    std::copy_n(clouds.features.begin() + j * clouds.dim, clouds.dim, out.features.begin() + i * clouds.dim);
    out.similarities[i] = clouds.similarities[j];
  }
  return out;
}

}  // namespace a2::cloudfuse
