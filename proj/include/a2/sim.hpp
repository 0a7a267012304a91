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

// Desk-scale tabletop benchmark: a synthetic embedding model, scene spawning,
// depth/feature rendering from three fixed cameras, rule-based grasp and place
// outcomes, expert planners and closed-loop rollouts.

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "a2/cloudfuse.hpp"
#include "a2/priors.hpp"
#include "a2/world.hpp"

namespace a2::sim {

using priors::Rng;
using world::Relation;
using world::Scene;
using world::SceneKind;
using world::Split;

enum class KeywordType : std::uint8_t { concrete, category, attribute, function };
std::string_view keyword_type_name(KeywordType type);

struct ClassSpec {
  std::string name;
  world::Shape shape;
  double size_min, size_max;  // radius or half extent, meters
  double height_min, height_max;
  std::array<std::string, 4> keywords;  // indexed by KeywordType
};

// 24 household object classes.
const std::vector<ClassSpec>& class_catalog();

struct BankOptions {
  std::size_t dim = 32;
  std::uint64_t seed = 20240607;
  double sigma_f = 0.1;         // norm of the per-pixel feature noise
  double match_cos = 0.8;       // keyword vs its class
  double max_other_cos = 0.3;   // keyword vs every other class
  double bleed = 0.6;           // context mixing from neighbouring objects
  double bleed_radius = 0.04;   // m
  double relation_gain = 0.8;   // weight of the table direction in place instructions
  double template_gain = 0.1;
  std::size_t noise_pool = 1 << 14;
};

struct Keyword {
  std::string text;
  int class_id = 0;
  KeywordType type = KeywordType::concrete;
  bool held_out = false;
  std::vector<float> vec;
};

// Orthonormal class and table directions, keyword vectors blended from their
// class, and a pool of feature-noise vectors.
class EmbeddingBank {
 public:
  explicit EmbeddingBank(const BankOptions& options = {});

  const BankOptions& options() const { return options_; }
  std::size_t dim() const { return options_.dim; }
  int num_classes() const { return static_cast<int>(classes_.size()); }
  std::span<const float> class_vector(int class_id) const { return classes_.at(class_id); }
  std::span<const float> table_vector() const { return table_; }
  std::span<const float> template_vector(std::size_t index) const { return templates_.at(index); }
  bool is_unseen_class(int class_id) const;
  std::vector<int> classes_in(Split split) const;

  const std::vector<Keyword>& keywords() const { return keywords_; }
  const Keyword& keyword(int class_id, KeywordType type) const;
  // Keyword types follow 4:2:2:2 over the allowed set. The seen split never
  // returns a held-out keyword.
  const Keyword& sample_keyword(int class_id, bool held_out_only, bool allow_held_out, Rng& rng) const;

  std::span<const float> noise(std::size_t index) const;

 private:
  BankOptions options_;
  std::vector<std::vector<float>> classes_;
  std::vector<float> table_;
  std::vector<std::vector<float>> templates_;
  std::vector<Keyword> keywords_;
  std::vector<float> noise_;
};

inline constexpr std::array<std::string_view, 5> kPickTemplates = {
    "Give me the {target}", "I need a {target}", "Grasp a {target} object", "I want a {target} object",
    "Get something to {target}"};
inline constexpr std::array<std::string_view, 3> kPlaceTemplates = {
    "Put it {relation} the {reference}", "Place this {direction} the {reference}",
    "Move the object {direction} the {reference}"};
inline constexpr std::array<std::string_view, 6> kRelationWords = {"on top of", "into", "onto",
                                                                   "next to",   "near", "beside"};

// Throws ValidationError for words outside the relation vocabulary.
Relation resolve_relation(std::string_view word);

struct Instruction {
  SceneKind kind = SceneKind::pick;
  int template_id = 0;
  std::string text;
  std::string keyword;
  KeywordType keyword_type = KeywordType::concrete;
  int target_class = -1;
  int target_object = -1;  // pick target or place reference
  std::optional<Relation> relation;
  std::string relation_word;
  std::vector<float> embedding;
};

Instruction make_instruction(const EmbeddingBank& bank, const Scene& scene, Rng& rng);

struct SimConfig {
  BankOptions bank;
  int image_width = 112;
  int image_height = 84;
  double hfov_deg = 35.0;
  double camera_radius = 0.7;
  double surface_step = 0.002;
  double table_extent = 0.3;  // rendered table half size
  int pick_objects = 15;
  int place_objects = 8;
  double place_spacing = 0.1;
  double annulus = 0.06;
  int max_pick_steps = 8;
  std::size_t max_points = 500;
  double place_jitter = 0.0;  // candidate position noise (sigma, m)
  cloudfuse::FusionOptions fusion;
  priors::GraspSynthOptions grasps;
  priors::PlaceSynthOptions places;

  std::string serialize() const;
};

// Spawns a pick scene (15 objects, 2-4 of them crowding the target) or a place
// scene (8 objects, pairwise spacing >= 0.1 m). Throws ValidationError when
// placement fails after 10k tries.
Scene spawn_scene(SceneKind kind, std::uint64_t seed, Split split, const EmbeddingBank& bank,
                  const SimConfig& config);

std::vector<cloudfuse::CameraModel> default_cameras(const SimConfig& config);

struct RenderedViews {
  std::vector<cloudfuse::ViewInput> views;
  std::vector<std::vector<std::uint32_t>> masks;  // object id + 1, 0 for table/background
};

RenderedViews render_views(const Scene& scene, const EmbeddingBank& bank, const SimConfig& config, Rng& rng);

// Class and context feature of a surface point (before noise).
void surface_feature(const Scene& scene, const EmbeddingBank& bank, int object_id, const Eigen::Vector2d& xy,
                     std::span<float> out);

world::OrientedRect grasp_corridor(const priors::GraspCandidate& grasp);
// The grasp's source object; inferred from the footprints (5 mm slack) when
// the candidate carries none.
int grasp_source(const Scene& scene, const priors::GraspCandidate& grasp);
bool grasp_feasible(const Scene& scene, const priors::GraspCandidate& grasp);

struct StepOutcome {
  std::size_t action = 0;
  int reward = 0;
  int removed_object = -1;
  Eigen::Vector3d placed = Eigen::Vector3d::Zero();
  bool target_grasped = false;
};

StepOutcome step_pick(Scene& scene, const priors::GraspCandidate& grasp);
StepOutcome step_place(const Scene& scene, const priors::PlaceCandidate& place, const Instruction& instruction,
                       double annulus = 0.06);

std::size_t expert_pick(const Scene& scene, int target, const priors::CandidateSet& candidates);
std::size_t expert_place(const Scene& scene, const Instruction& instruction, const priors::CandidateSet& candidates,
                         Rng& rng, double annulus = 0.06);

struct Observation {
  RenderedViews rendered;
  cloudfuse::FusedClouds fused;
  cloudfuse::SampledClouds sampled;
  priors::CandidateSet candidates;
  std::vector<float> rows;  // L x 10
};

Observation observe(const Scene& scene, const Instruction& instruction, const EmbeddingBank& bank,
                    const SimConfig& config, Rng& rng);

class Agent {
 public:
  virtual ~Agent() = default;
  virtual std::size_t choose(const Observation& obs, const Scene& scene, const Instruction& instruction,
                             Rng& rng) = 0;
};

class ExpertAgent : public Agent {
 public:
  explicit ExpertAgent(double annulus = 0.06) : annulus_(annulus) {}
  std::size_t choose(const Observation& obs, const Scene& scene, const Instruction& instruction, Rng& rng) override;

 private:
  double annulus_;
};

enum class Task : std::uint8_t { pick, place, pick_n_place };
std::string_view task_name(Task task);
Task parse_task(std::string_view name);

struct EpisodeLog {
  Task task = Task::pick;
  std::uint64_t seed = 0;
  std::uint64_t run = 0;
  Split split = Split::seen;
  std::vector<Instruction> instructions;
  std::vector<StepOutcome> steps;
  bool success = false;
  bool expert_stuck = false;
  std::string diagnostic;
};

using StepHook = std::function<void(const Scene& before, const Instruction& instruction, const Observation& obs,
                                    const StepOutcome& outcome)>;

// Closed loop: observe, choose, step. Pick stops on a target grasp or after
// max_pick_steps; place takes exactly one step; pick-n-place runs a pick
// episode and then a place episode on a second scene. The scenes depend on
// `seed` only; `run` varies the instruction, sensor noise and candidates.
EpisodeLog rollout(Agent& agent, Task task, std::uint64_t seed, Split split, const EmbeddingBank& bank,
                   const SimConfig& config, const StepHook& hook = {}, std::uint64_t run = 0);

// Seeds of the sub-scenes used by an episode.
std::uint64_t scene_seed(std::uint64_t episode_seed, SceneKind kind);

}  // namespace a2::sim
