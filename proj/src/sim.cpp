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

#include "a2/sim.hpp"

#include <Eigen/Geometry>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "a2/errors.hpp"

namespace a2::sim {

using cloudfuse::CameraModel;
using cloudfuse::ViewInput;
using world::SceneObject;
using world::Shape;

std::string_view keyword_type_name(KeywordType type) {
  switch (type) {
    case KeywordType::concrete: return "concrete";
    case KeywordType::category: return "category";
    case KeywordType::attribute: return "attribute";
    case KeywordType::function: return "function";
  }
  return "?";
}

const std::vector<ClassSpec>& class_catalog() {
  static const std::vector<ClassSpec> catalog = {
      {"apple", Shape::disc, 0.030, 0.035, 0.05, 0.08, {"apple", "fruit", "red", "eat"}},
      {"banana", Shape::box, 0.015, 0.035, 0.03, 0.04, {"banana", "fruit", "yellow", "peel"}},
      {"mug", Shape::disc, 0.030, 0.035, 0.08, 0.10, {"mug", "kitchenware", "ceramic", "drink"}},
      {"bowl", Shape::disc, 0.030, 0.035, 0.04, 0.06, {"bowl", "kitchenware", "round", "serve soup"}},
      {"sponge", Shape::box, 0.020, 0.035, 0.03, 0.04, {"sponge", "cleaning supply", "soft", "wash dishes"}},
      {"soap bottle", Shape::disc, 0.020, 0.030, 0.10, 0.12, {"soap bottle", "cleaning supply", "slippery", "wash hands"}},
      {"toy car", Shape::box, 0.015, 0.030, 0.03, 0.05, {"toy car", "toy", "small", "play"}},
      {"rubik cube", Shape::box, 0.025, 0.030, 0.05, 0.06, {"rubik cube", "toy", "colorful", "solve a puzzle"}},
      {"marker", Shape::disc, 0.015, 0.018, 0.10, 0.12, {"marker", "stationery", "thin", "write"}},
      {"stapler", Shape::box, 0.015, 0.035, 0.04, 0.06, {"stapler", "stationery", "metal", "bind paper"}},
      {"tape roll", Shape::disc, 0.025, 0.035, 0.03, 0.05, {"tape roll", "stationery", "sticky", "seal a box"}},
      {"scissors", Shape::box, 0.015, 0.035, 0.03, 0.03, {"scissors", "tool", "sharp", "cut paper"}},
      {"screwdriver", Shape::box, 0.015, 0.035, 0.03, 0.04, {"screwdriver", "tool", "long", "fix a screw"}},
      {"wrench", Shape::box, 0.015, 0.035, 0.03, 0.03, {"wrench", "tool", "heavy", "loosen a bolt"}},
      {"tennis ball", Shape::disc, 0.030, 0.033, 0.06, 0.07, {"tennis ball", "sports gear", "fuzzy", "play tennis"}},
      {"water bottle", Shape::disc, 0.030, 0.035, 0.10, 0.12, {"water bottle", "container", "transparent", "hold water"}},
      {"cereal box", Shape::box, 0.025, 0.035, 0.10, 0.12, {"cereal box", "food", "rectangular", "have breakfast"}},
      {"can", Shape::disc, 0.030, 0.033, 0.08, 0.10, {"can", "food", "cylindrical", "store food"}},
      {"flashlight", Shape::disc, 0.018, 0.025, 0.08, 0.12, {"flashlight", "electronics", "bright", "light a room"}},
      {"phone", Shape::box, 0.020, 0.035, 0.03, 0.03, {"phone", "electronics", "flat", "make a call"}},
      {"headphones", Shape::box, 0.030, 0.035, 0.05, 0.07, {"headphones", "electronics", "wireless", "listen to music"}},
      {"candle", Shape::disc, 0.020, 0.030, 0.06, 0.10, {"candle", "decor", "waxy", "light up dinner"}},
      {"plant pot", Shape::disc, 0.030, 0.035, 0.08, 0.12, {"plant pot", "decor", "green", "grow herbs"}},
      {"wallet", Shape::box, 0.020, 0.035, 0.03, 0.03, {"wallet", "accessory", "leather", "carry money"}},
  };
  return catalog;
}

namespace {

constexpr double kTableHeight = 0.0;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<float> to_float(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

void normalize(std::span<float> v) {
  double n = 0.0;
  for (float x : v) n += double(x) * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (auto& x : v) x = static_cast<float>(x / n);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * b[i];
  return s;
}

int held_out_type(int class_id) { return (class_id + class_id / 4) % 4; }

}  // namespace

// ---------------------------------------------------------------------------
// Embedding bank

EmbeddingBank::EmbeddingBank(const BankOptions& options) : options_(options) {
  const auto& catalog = class_catalog();
  const int nc = static_cast<int>(catalog.size());
  const auto d = static_cast<Eigen::Index>(options.dim);
  if (d < nc + 2) throw ValidationError("bank.dim", "needs at least classes + 2 dimensions");
  if (!(options.sigma_f >= 0.0)) throw ValidationError("bank.sigma_f", "must be non-negative");

  Rng rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) g(i, j) = normal(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  for (int c = 0; c < nc; ++c) classes_.push_back(to_float(q.col(c)));
  table_ = to_float(q.col(nc));

  for (int t = 0; t < 8; ++t) {
    Eigen::VectorXd v(d);
    for (auto& x : v) x = normal(rng);
    templates_.push_back(to_float(v.normalized()));
  }

  const double side = std::sqrt(1.0 - options.match_cos * options.match_cos);
  for (int c = 0; c < nc; ++c) {
    const Eigen::VectorXd ec = q.col(c);
    const Eigen::VectorXd et = q.col(nc);
    for (int t = 0; t < 4; ++t) {
      Eigen::VectorXd kw;
      for (int attempt = 0;; ++attempt) {
        if (attempt > 10000) throw ValidationError("bank", "cannot satisfy the keyword cosine bounds");
        Eigen::VectorXd n(d);
        for (auto& x : n) x = normal(rng);
        n -= n.dot(ec) * ec;
        n -= n.dot(et) * et;
        n.normalize();
        kw = options.match_cos * ec + side * n;
        bool ok = true;
        for (int o = 0; o < nc && ok; ++o)
          if (o != c && kw.dot(q.col(o)) > options.max_other_cos) ok = false;
        if (ok) break;
      }
      Keyword k;
      k.text = catalog[c].keywords[t];
      k.class_id = c;
      k.type = static_cast<KeywordType>(t);
      k.held_out = !is_unseen_class(c) && t == held_out_type(c);
      k.vec = to_float(kw);
      keywords_.push_back(std::move(k));
    }
  }
  // Every keyword must land on its own class.
  for (const auto& k : keywords_) {
    int best = 0;
    for (int c = 1; c < nc; ++c)
      if (dot(k.vec, classes_[c]) > dot(k.vec, classes_[best])) best = c;
    if (best != k.class_id) throw ValidationError("bank", "keyword '" + k.text + "' is closer to another class");
  }

  const double sigma = options.sigma_f / std::sqrt(static_cast<double>(options.dim));
  std::normal_distribution<float> noise(0.0f, static_cast<float>(sigma));
  noise_.resize(options.noise_pool * options.dim);
  for (auto& x : noise_) x = noise(rng);
}

bool EmbeddingBank::is_unseen_class(int class_id) const { return class_id % 4 == 3; }

std::vector<int> EmbeddingBank::classes_in(Split split) const {
  std::vector<int> out;
  for (int c = 0; c < num_classes(); ++c)
    if (is_unseen_class(c) == (split == Split::unseen)) out.push_back(c);
  return out;
}

const Keyword& EmbeddingBank::keyword(int class_id, KeywordType type) const {
  return keywords_.at(static_cast<std::size_t>(class_id) * 4 + static_cast<std::size_t>(type));
}

const Keyword& EmbeddingBank::sample_keyword(int class_id, bool held_out_only, bool allow_held_out,
                                             Rng& rng) const {
  static constexpr std::array<double, 4> kWeights = {4, 2, 2, 2};
  std::array<double, 4> w{};
  for (int t = 0; t < 4; ++t) {
    const auto& k = keyword(class_id, static_cast<KeywordType>(t));
    const bool allowed = held_out_only ? k.held_out : (!k.held_out || allow_held_out);
    w[t] = allowed ? kWeights[t] : 0.0;
  }
  if (w[0] + w[1] + w[2] + w[3] == 0.0) throw ValidationError("keyword", "no keyword available for the class");
  std::discrete_distribution<int> pick(w.begin(), w.end());
  return keyword(class_id, static_cast<KeywordType>(pick(rng)));
}

std::span<const float> EmbeddingBank::noise(std::size_t index) const {
  return {noise_.data() + (index % options_.noise_pool) * options_.dim, options_.dim};
}

// ---------------------------------------------------------------------------
// Instructions

Relation resolve_relation(std::string_view word) {
  for (std::size_t i = 0; i < kRelationWords.size(); ++i)
    if (kRelationWords[i] == word) return i < 3 ? Relation::on : Relation::around;
  throw ValidationError("relation", "unknown relation word '" + std::string(word) + "'");
}

namespace {

std::string fill(std::string_view pattern, std::string_view key, std::string_view value) {
  std::string out(pattern);
  const std::string k = "{" + std::string(key) + "}";
  for (auto pos = out.find(k); pos != std::string::npos; pos = out.find(k, pos + value.size()))
    out.replace(pos, k.size(), value);
  return out;
}

const Keyword& instruction_keyword(const EmbeddingBank& bank, const Scene& scene, int class_id, Rng& rng) {
  if (scene.split == Split::seen) return bank.sample_keyword(class_id, false, false, rng);
  if (bank.is_unseen_class(class_id)) return bank.sample_keyword(class_id, false, true, rng);
  return bank.sample_keyword(class_id, true, true, rng);
}

}  // namespace

Instruction make_instruction(const EmbeddingBank& bank, const Scene& scene, Rng& rng) {
  const auto* target = scene.find(scene.target_id);
  if (target == nullptr) throw ValidationError("scene.target_id", "target object missing");
  Instruction ins;
  ins.kind = scene.kind;
  ins.target_class = target->class_id;
  ins.target_object = target->id;
  const auto& kw = instruction_keyword(bank, scene, target->class_id, rng);
  ins.keyword = kw.text;
  ins.keyword_type = kw.type;
  std::vector<float> e = kw.vec;
  const double tg = bank.options().template_gain;

  if (scene.kind == SceneKind::pick) {
    switch (kw.type) {
      case KeywordType::concrete:
      case KeywordType::category: ins.template_id = std::uniform_int_distribution<int>(0, 1)(rng); break;
      case KeywordType::attribute: ins.template_id = std::uniform_int_distribution<int>(2, 3)(rng); break;
      case KeywordType::function: ins.template_id = 4; break;
    }
    ins.text = fill(kPickTemplates[ins.template_id], "target", kw.text);
    const auto tv = bank.template_vector(ins.template_id);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += static_cast<float>(tg * tv[i]);
  } else {
    const bool on = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    const int word = std::uniform_int_distribution<int>(0, 2)(rng) + (on ? 0 : 3);
    ins.relation = on ? Relation::on : Relation::around;
    ins.relation_word = std::string(kRelationWords[word]);
    ins.template_id = std::uniform_int_distribution<int>(0, 2)(rng);
    std::string text = fill(kPlaceTemplates[ins.template_id], "relation", ins.relation_word);
    text = fill(text, "direction", ins.relation_word);
    ins.text = fill(text, "reference", kw.text);
    const double rg = on ? -bank.options().relation_gain : bank.options().relation_gain;
    const auto table = bank.table_vector();
    const auto tv = bank.template_vector(5 + ins.template_id);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += static_cast<float>(rg * table[i] + tg * tv[i]);
  }
  normalize(e);
  ins.embedding = std::move(e);
  return ins;
}

// ---------------------------------------------------------------------------
// Config

std::string SimConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "dim=" << bank.dim << "\nbank_seed=" << bank.seed << "\nsigma_f=" << bank.sigma_f << "\nbleed=" << bank.bleed
     << "\nbleed_radius=" << bank.bleed_radius << "\nimage_width=" << image_width << "\nimage_height=" << image_height
     << "\nhfov_deg=" << hfov_deg << "\nmax_points=" << max_points << "\nvoxel=" << fusion.voxel
     << "\nplace_jitter=" << place_jitter << "\nmax_pick_steps=" << max_pick_steps << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Scenes

std::uint64_t scene_seed(std::uint64_t episode_seed, SceneKind kind) {
  return splitmix(episode_seed * 2 + static_cast<std::uint64_t>(kind));
}

namespace {

SceneObject make_object(int id, int class_id, Rng& rng) {
  const auto& spec = class_catalog().at(class_id);
  std::uniform_real_distribution<double> size(spec.size_min, spec.size_max);
  std::uniform_real_distribution<double> height(spec.height_min, spec.height_max);
  std::uniform_real_distribution<double> yaw(0.0, std::numbers::pi);
  SceneObject o;
  o.id = id;
  o.class_id = class_id;
  o.footprint.shape = spec.shape;
  if (spec.shape == Shape::disc) {
    o.footprint.radius = size(rng);
  } else {
    o.footprint.half_x = size(rng);
    o.footprint.half_y = size(rng);
  }
  o.height = height(rng);
  o.yaw = yaw(rng);
  return o;
}

bool clear_of(const std::vector<SceneObject>& placed, const SceneObject& o, double gap) {
  for (const auto& p : placed)
    if ((p.center - o.center).norm() < p.circumradius() + o.circumradius() + gap) return false;
  return true;
}

int pick_target_class(const EmbeddingBank& bank, Split split, Rng& rng) {
  if (split == Split::seen) {
    const auto pool = bank.classes_in(Split::seen);
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  }
  // Half of the unseen episodes name a held-out class, half a held-out keyword of a seen class.
  const bool novel_class = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
  const auto pool = bank.classes_in(novel_class ? Split::unseen : Split::seen);
  return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
}

std::vector<int> other_classes(const EmbeddingBank& bank, Split split, int target_class, std::size_t count,
                               Rng& rng) {
  std::vector<int> pool;
  for (int c = 0; c < bank.num_classes(); ++c)
    if (c != target_class && (split == Split::unseen || !bank.is_unseen_class(c))) pool.push_back(c);
  if (pool.size() < count) throw ValidationError("scene", "not enough classes for the object count");
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(count);
  return pool;
}

}  // namespace

Scene spawn_scene(SceneKind kind, std::uint64_t seed, Split split, const EmbeddingBank& bank,
                  const SimConfig& config) {
  Rng rng(splitmix(seed ^ 0x5ce9e5ULL));
  Scene scene;
  scene.kind = kind;
  scene.seed = seed;
  scene.split = split;
  scene.workspace.min = Eigen::Vector3d(-0.25, -0.25, kTableHeight - 0.01);
  scene.workspace.max = Eigen::Vector3d(0.25, 0.25, kTableHeight + 0.3);
  scene.workspace.table_height = kTableHeight;

  const int target_class = pick_target_class(bank, split, rng);
  const int count = kind == SceneKind::pick ? config.pick_objects : config.place_objects;
  const auto others = other_classes(bank, split, target_class, static_cast<std::size_t>(count - 1), rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int tries = 0;
  // Places one object; false restarts the layout.
  auto place = [&](SceneObject& o, auto&& propose) {
    for (int k = 0; k < 500; ++k) {
      if (++tries > 10000) throw ValidationError("seed", "object placement failed for seed " + std::to_string(seed));
      if (propose(o)) return true;
    }
    return false;
  };

  for (;;) {
    scene.objects.clear();
    bool ok = true;
    if (kind == SceneKind::pick) {
      const double half = 0.2;
      SceneObject target = make_object(0, target_class, rng);
      target.center = Eigen::Vector2d(0.24 * unit(rng) - 0.12, 0.24 * unit(rng) - 0.12);
      scene.objects.push_back(target);
      scene.target_id = 0;
      const int cluster = std::uniform_int_distribution<int>(2, 4)(rng);
      const double rt = target.circumradius();
      const double base_angle = std::numbers::pi * unit(rng);
      for (int k = 0; k < count - 1 && ok; ++k) {
        SceneObject o = make_object(k + 1, others[k], rng);
        ok = place(o, [&](SceneObject& c) {
          if (k < cluster) {
            const double ang = base_angle + 2.0 * std::numbers::pi * unit(rng);
            const double gap = 0.5 * rt * unit(rng);
            const Eigen::Vector2d dir(std::cos(ang), std::sin(ang));
            // separated along dir by exactly gap
            c.center = target.center + (0.5 * (target.extent_along(dir) + c.extent_along(dir)) + gap) * dir;
            if (std::abs(c.center.x()) > half || std::abs(c.center.y()) > half) return false;
            return clear_of(std::vector<SceneObject>(scene.objects.begin() + 1, scene.objects.end()), c, 0.0);
          }
          c.center = Eigen::Vector2d(2 * half * unit(rng) - half, 2 * half * unit(rng) - half);
          return clear_of(scene.objects, c, 0.003);
        });
        if (ok) scene.objects.push_back(o);
      }
    } else {
      const double half = 0.17;
      std::vector<int> classes = others;
      classes.push_back(target_class);
      std::shuffle(classes.begin(), classes.end(), rng);
      for (int k = 0; k < count && ok; ++k) {
        SceneObject o = make_object(k, classes[k], rng);
        ok = place(o, [&](SceneObject& c) {
          c.center = Eigen::Vector2d(2 * half * unit(rng) - half, 2 * half * unit(rng) - half);
          for (const auto& p : scene.objects)
            if ((p.center - c.center).norm() < std::max(config.place_spacing, p.circumradius() + c.circumradius() + 0.01))
              return false;
          return true;
        });
        if (!ok) break;
        if (classes[k] == target_class) scene.target_id = k;
        scene.objects.push_back(o);
      }
    }
    if (ok) break;
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Rendering

std::vector<CameraModel> default_cameras(const SimConfig& config) {
  struct Mount {
    double azimuth_deg, tilt_deg;
  };
  static constexpr std::array<Mount, 3> kMounts = {{{-90.0, 45.0}, {135.0, 50.0}, {45.0, 50.0}}};
  const double f = 0.5 * config.image_width / std::tan(0.5 * config.hfov_deg * std::numbers::pi / 180.0);
  std::vector<CameraModel> cams;
  for (const auto& m : kMounts) {
    const double az = m.azimuth_deg * std::numbers::pi / 180.0;
    const double tilt = m.tilt_deg * std::numbers::pi / 180.0;
    const double r = config.camera_radius;
    const Eigen::Vector3d eye(r * std::cos(az), r * std::sin(az), kTableHeight + r * std::tan(tilt));
    const Eigen::Vector3d forward = (Eigen::Vector3d(0, 0, kTableHeight) - eye).normalized();
    const Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitZ()).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d rot;
    rot.row(0) = right;
    rot.row(1) = down;
    rot.row(2) = forward;
    CameraModel cam;
    cam.fx = cam.fy = f;
    cam.cx = 0.5 * (config.image_width - 1);
    cam.cy = 0.5 * (config.image_height - 1);
    cam.width = config.image_width;
    cam.height = config.image_height;
    cam.cam_from_world.setIdentity();
    cam.cam_from_world.topLeftCorner<3, 3>() = rot;
    cam.cam_from_world.topRightCorner<3, 1>() = -rot * eye;
    cams.push_back(cam);
  }
  return cams;
}

void surface_feature(const Scene& scene, const EmbeddingBank& bank, int object_id, const Eigen::Vector2d& xy,
                     std::span<float> out) {
  const auto& opt = bank.options();
  const SceneObject* self = object_id >= 0 ? scene.find(object_id) : nullptr;
  const auto base = self != nullptr ? bank.class_vector(self->class_id) : bank.table_vector();
  std::copy(base.begin(), base.end(), out.begin());
  for (const auto& o : scene.objects) {
    if (o.id == object_id) continue;
    const double sd = std::max(o.signed_distance(xy), 0.0);
    if (sd >= opt.bleed_radius) continue;
    const auto w = static_cast<float>(opt.bleed * (1.0 - sd / opt.bleed_radius));
    const auto e = bank.class_vector(o.class_id);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * e[i];
  }
}

namespace {

template <class F>
void for_each_surface_sample(const SceneObject& o, double step, F&& emit) {
  const double top = kTableHeight + o.height;
  const int rings = std::max(1, static_cast<int>(std::ceil(o.height / step)));
  if (o.footprint.shape == Shape::disc) {
    const double r = o.footprint.radius;
    const int n = std::max(1, static_cast<int>(std::ceil(r / step)));
    for (int i = -n; i <= n; ++i)
      for (int j = -n; j <= n; ++j) {
        const Eigen::Vector2d d(i * step, j * step);
        if (d.norm() <= r) emit(Eigen::Vector3d(o.center.x() + d.x(), o.center.y() + d.y(), top), o.id);
      }
    const int around = std::max(8, static_cast<int>(std::ceil(2.0 * std::numbers::pi * r / step)));
    for (int a = 0; a < around; ++a) {
      const double ang = 2.0 * std::numbers::pi * a / around;
      const Eigen::Vector2d xy = o.center + r * Eigen::Vector2d(std::cos(ang), std::sin(ang));
      for (int k = 0; k <= rings; ++k) emit(Eigen::Vector3d(xy.x(), xy.y(), kTableHeight + o.height * k / rings), o.id);
    }
    return;
  }
  const Eigen::Vector2d ax(std::cos(o.yaw), std::sin(o.yaw));
  const Eigen::Vector2d ay(-ax.y(), ax.x());
  const double hx = o.footprint.half_x, hy = o.footprint.half_y;
  const int nx = std::max(1, static_cast<int>(std::ceil(hx / step)));
  const int ny = std::max(1, static_cast<int>(std::ceil(hy / step)));
  for (int i = -nx; i <= nx; ++i)
    for (int j = -ny; j <= ny; ++j) {
      const Eigen::Vector2d xy = o.center + (hx * i / nx) * ax + (hy * j / ny) * ay;
      emit(Eigen::Vector3d(xy.x(), xy.y(), top), o.id);
    }
  for (int i = -nx; i <= nx; ++i)
    for (int s : {-1, 1}) {
      const Eigen::Vector2d xy = o.center + (hx * i / nx) * ax + s * hy * ay;
      for (int k = 0; k <= rings; ++k) emit(Eigen::Vector3d(xy.x(), xy.y(), kTableHeight + o.height * k / rings), o.id);
    }
  for (int j = -ny; j <= ny; ++j)
    for (int s : {-1, 1}) {
      const Eigen::Vector2d xy = o.center + s * hx * ax + (hy * j / ny) * ay;
      for (int k = 0; k <= rings; ++k) emit(Eigen::Vector3d(xy.x(), xy.y(), kTableHeight + o.height * k / rings), o.id);
    }
}

}  // namespace

RenderedViews render_views(const Scene& scene, const EmbeddingBank& bank, const SimConfig& config, Rng& rng) {
  const auto cams = default_cameras(config);
  const std::size_t dim = bank.dim();
  const int w = config.image_width, h = config.image_height;
  std::uniform_int_distribution<std::size_t> pool(0, bank.options().noise_pool - 1);
  RenderedViews out;
  for (const auto& cam : cams) {
    ViewInput view;
    view.camera = cam;
    view.dim = dim;
    view.depth.assign(static_cast<std::size_t>(w) * h, 0.0f);
    view.features.assign(static_cast<std::size_t>(w) * h * dim, 0.0f);
    std::vector<std::uint32_t> mask(static_cast<std::size_t>(w) * h, 0);
    std::vector<Eigen::Vector3d> surface(static_cast<std::size_t>(w) * h);
    std::vector<int> owner(static_cast<std::size_t>(w) * h, -1);

    const Eigen::Matrix3d rot = cam.cam_from_world.topLeftCorner<3, 3>();
    const Eigen::Vector3d trans = cam.cam_from_world.topRightCorner<3, 1>();
    const Eigen::Vector3d eye = -rot.transpose() * trans;
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < w; ++u) {
        const Eigen::Vector3d dir = rot.transpose() * Eigen::Vector3d((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
        if (dir.z() >= 0.0) continue;
        const double s = (kTableHeight - eye.z()) / dir.z();
        const Eigen::Vector3d hit = eye + s * dir;
        if (std::abs(hit.x()) > config.table_extent || std::abs(hit.y()) > config.table_extent) continue;
        const std::size_t px = static_cast<std::size_t>(v) * w + u;
        view.depth[px] = static_cast<float>(s);
        surface[px] = hit;
      }

    for (const auto& o : scene.objects)
      for_each_surface_sample(o, config.surface_step, [&](const Eigen::Vector3d& p, int id) {
        const Eigen::Vector3d c = rot * p + trans;
        if (c.z() <= 0.0) return;
        const long u = std::lround(cam.fx * c.x() / c.z() + cam.cx);
        const long v = std::lround(cam.fy * c.y() / c.z() + cam.cy);
        if (u < 0 || v < 0 || u >= w || v >= h) return;
        const std::size_t px = static_cast<std::size_t>(v) * w + static_cast<std::size_t>(u);
        if (view.depth[px] != 0.0f && static_cast<float>(c.z()) >= view.depth[px]) return;
        view.depth[px] = static_cast<float>(c.z());
        mask[px] = static_cast<std::uint32_t>(id + 1);
        owner[px] = id;
        surface[px] = p;
      });

    for (std::size_t px = 0; px < view.depth.size(); ++px) {
      if (view.depth[px] == 0.0f) continue;
      std::span<float> f(view.features.data() + px * dim, dim);
      surface_feature(scene, bank, owner[px], surface[px].head<2>(), f);
      const auto n = bank.noise(pool(rng));
      for (std::size_t i = 0; i < dim; ++i) f[i] += n[i];
      normalize(f);
    }
    out.views.push_back(std::move(view));
    out.masks.push_back(std::move(mask));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Physics rules

world::OrientedRect grasp_corridor(const priors::GraspCandidate& grasp) {
  world::OrientedRect r;
  r.center = grasp.position.head<2>();
  const Eigen::Vector2d closing = grasp.rotation.col(0).head<2>();
  r.axis = closing.norm() > 1e-9 ? Eigen::Vector2d(closing.normalized()) : Eigen::Vector2d::UnitX();
  r.half_u = 0.5 * (grasp.width + 0.01);
  r.half_v = 0.02;
  return r;
}

int grasp_source(const Scene& scene, const priors::GraspCandidate& grasp) {
  if (grasp.source_object >= 0) return scene.find(grasp.source_object) != nullptr ? grasp.source_object : -1;
  int best = -1;
  double best_sd = 0.005;
  for (const auto& o : scene.objects) {
    const double sd = o.signed_distance(grasp.position.head<2>());
    if (sd <= best_sd && (best < 0 || sd < best_sd)) {
      best = o.id;
      best_sd = sd;
    }
  }
  return best;
}

bool grasp_feasible(const Scene& scene, const priors::GraspCandidate& grasp) {
  const int src = grasp_source(scene, grasp);
  if (src < 0) return false;
  const auto* obj = scene.find(src);
  if (obj->signed_distance(grasp.position.head<2>()) > 0.005) return false;
  if (grasp.rotation.col(0).head<2>().norm() < 1e-6) return false;
  const auto corridor = grasp_corridor(grasp);
  for (const auto& o : scene.objects)
    if (o.id != src && o.intersects(corridor)) return false;
  return true;
}

StepOutcome step_pick(Scene& scene, const priors::GraspCandidate& grasp) {
  StepOutcome out;
  out.placed = grasp.position;
  if (!grasp_feasible(scene, grasp)) return out;
  out.reward = 1;
  out.removed_object = grasp_source(scene, grasp);
  out.target_grasped = out.removed_object == scene.target_id;
  scene.remove(out.removed_object);
  return out;
}

StepOutcome step_place(const Scene& scene, const priors::PlaceCandidate& place, const Instruction& instruction,
                       double annulus) {
  StepOutcome out;
  out.placed = place.position;
  const auto* ref = scene.find(instruction.target_object);
  if (ref == nullptr || !instruction.relation) return out;
  out.reward = world::in_place_region(scene, *ref, *instruction.relation, place.position.head<2>(), annulus) ? 1 : 0;
  return out;
}

std::size_t expert_pick(const Scene& scene, int target, const priors::CandidateSet& candidates) {
  if (candidates.kind != priors::Kind::pick || candidates.empty())
    throw ValidationError("candidates", "expert_pick needs grasp candidates");
  const auto* t = scene.find(target);
  if (t == nullptr) throw ValidationError("target", "target object not in scene");
  std::optional<std::size_t> on_target, any;
  double best_t = 0.0, best_any = 0.0;
  for (std::size_t i = 0; i < candidates.grasps.size(); ++i) {
    const auto& g = candidates.grasps[i];
    if (!grasp_feasible(scene, g)) continue;
    const double d = (g.position.head<2>() - t->center).norm();
    if (grasp_source(scene, g) == target) {
      if (!on_target || d < best_t) on_target = i, best_t = d;
    } else if (!any || d < best_any) {
      any = i, best_any = d;
    }
  }
  if (on_target) return *on_target;
  if (any) return *any;
  throw ExpertStuckError("no feasible grasp among " + std::to_string(candidates.size()) + " candidates");
}

std::size_t expert_place(const Scene& scene, const Instruction& instruction, const priors::CandidateSet& candidates,
                         Rng& rng, double annulus) {
  if (candidates.kind != priors::Kind::place || candidates.empty())
    throw ValidationError("candidates", "expert_place needs place candidates");
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < candidates.places.size(); ++i)
    if (step_place(scene, candidates.places[i], instruction, annulus).reward == 1) valid.push_back(i);
  if (valid.empty()) throw ExpertStuckError("no valid place candidate");
  return valid[std::uniform_int_distribution<std::size_t>(0, valid.size() - 1)(rng)];
}

// ---------------------------------------------------------------------------
// Closed loop

Observation observe(const Scene& scene, const Instruction& instruction, const EmbeddingBank& bank,
                    const SimConfig& config, Rng& rng) {
  Observation obs;
  obs.rendered = render_views(scene, bank, config, rng);
  const auto mode = scene.kind == SceneKind::pick ? cloudfuse::CloudMode::pick : cloudfuse::CloudMode::place;
  obs.fused = cloudfuse::build_clouds(obs.rendered.views, instruction.embedding, scene.workspace, mode, config.fusion);
  obs.sampled = cloudfuse::prioritized_sample(obs.fused, config.max_points);

  if (scene.kind == SceneKind::pick) {
    std::map<int, int> pixels;
    for (const auto& m : obs.rendered.masks)
      for (auto v : m)
        if (v != 0) ++pixels[static_cast<int>(v) - 1];
    std::vector<int> visible;
    for (const auto& [id, count] : pixels)
      if (count >= 5) visible.push_back(id);
    obs.candidates = priors::synth_grasps(scene, visible, rng, config.grasps);
  } else {
    std::vector<priors::ObjectRegion> regions;
    for (std::size_t v = 0; v < obs.rendered.masks.size(); ++v) {
      const auto r = priors::region_proposals(obs.rendered.masks[v], config.image_width, config.image_height, 5,
                                              static_cast<int>(v));
      regions.insert(regions.end(), r.begin(), r.end());
    }
    obs.candidates = priors::sample_places(regions, scene, rng, config.places);
    if (config.place_jitter > 0.0) {
      std::normal_distribution<double> jitter(0.0, config.place_jitter);
      for (auto& p : obs.candidates.places) {
        p.position.x() += jitter(rng);
        p.position.y() += jitter(rng);
      }
    }
  }
  obs.rows = obs.candidates.encoded();
  return obs;
}

std::size_t ExpertAgent::choose(const Observation& obs, const Scene& scene, const Instruction& instruction,
                                Rng& rng) {
  if (scene.kind == SceneKind::pick) return expert_pick(scene, instruction.target_object, obs.candidates);
  return expert_place(scene, instruction, obs.candidates, rng, annulus_);
}

std::string_view task_name(Task task) {
  switch (task) {
    case Task::pick: return "pick";
    case Task::place: return "place";
    case Task::pick_n_place: return "pick-n-place";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "pick") return Task::pick;
  if (name == "place") return Task::place;
  if (name == "pick-n-place" || name == "picknplace") return Task::pick_n_place;
  throw ValidationError("kind", "unknown task '" + std::string(name) + "'");
}

EpisodeLog rollout(Agent& agent, Task task, std::uint64_t seed, Split split, const EmbeddingBank& bank,
                   const SimConfig& config, const StepHook& hook, std::uint64_t run) {
  EpisodeLog log;
  log.task = task;
  log.seed = seed;
  log.run = run;
  log.split = split;
  Rng rng(splitmix(splitmix(seed ^ 0xa11ce5eedULL) + run));

  auto episode = [&](SceneKind kind) -> bool {
    Scene scene = spawn_scene(kind, scene_seed(seed, kind), split, bank, config);
    const Instruction ins = make_instruction(bank, scene, rng);
    log.instructions.push_back(ins);
    const int cap = kind == SceneKind::pick ? config.max_pick_steps : 1;
    for (int step = 0; step < cap; ++step) {
      Observation obs = observe(scene, ins, bank, config, rng);
      if (obs.candidates.empty()) {
        log.diagnostic = "no candidates";
        return false;
      }
      std::size_t idx = 0;
      try {
        idx = agent.choose(obs, scene, ins, rng);
      } catch (const ExpertStuckError& e) {
        log.expert_stuck = true;
        log.diagnostic = e.what();
        return false;
      }
      if (idx >= obs.candidates.size()) throw ValidationError("action", "agent chose an out-of-range candidate");
      std::optional<Scene> before;
      if (hook) before = scene;
      StepOutcome out = kind == SceneKind::pick ? step_pick(scene, obs.candidates.grasps[idx])
                                                : step_place(scene, obs.candidates.places[idx], ins, config.annulus);
      out.action = idx;
      log.steps.push_back(out);
      if (hook) hook(*before, ins, obs, out);
      if (kind == SceneKind::pick && out.target_grasped) return true;
      if (kind == SceneKind::place) return out.reward == 1;
    }
    return false;
  };

  try {
    switch (task) {
      case Task::pick: log.success = episode(SceneKind::pick); break;
      case Task::place: log.success = episode(SceneKind::place); break;
      case Task::pick_n_place: log.success = episode(SceneKind::pick) && episode(SceneKind::place); break;
    }
  } catch (const NumericError& e) {
    log.success = false;
    log.diagnostic = e.what();
  } catch (const EmptyCloudError& e) {
    log.success = false;
    log.diagnostic = e.what();
  }
  return log;
}

}  // namespace a2::sim
