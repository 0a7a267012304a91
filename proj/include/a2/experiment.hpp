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

// Experiment runner behind the command-line tool: demonstration collection,
// policy agents, evaluation reports, the grounding baseline and the ablation
// suite.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "a2/sim.hpp"
#include "a2/train.hpp"

namespace a2::experiment {

using sim::Split;
using sim::Task;

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

// ---------------------------------------------------------------------------
// Agents

class PolicyAgent : public sim::Agent {
 public:
  explicit PolicyAgent(align::PolicyParams<float> params, bool adapted = false);
  std::size_t choose(const sim::Observation& obs, const sim::Scene& scene, const sim::Instruction& instruction,
                     sim::Rng& rng) override;
  align::ActionDistribution score(const sim::Observation& obs);

 private:
  align::PolicyParams<float> params_;
  bool adapted_;
  align::ForwardCache<float> cache_;
};

// Index of the candidate nearest to the point whose K nearest neighbours
// (itself included, K = max(1, round(0.05 n))) have the highest mean
// similarity. Ties go to the lowest index at every stage.
std::size_t grounding_baseline(const cloudfuse::SampledClouds& sampled, const priors::CandidateSet& candidates);
std::size_t knn_size(std::size_t n);

class GroundingAgent : public sim::Agent {
 public:
  std::size_t choose(const sim::Observation& obs, const sim::Scene& scene, const sim::Instruction& instruction,
                     sim::Rng& rng) override;
};

// ---------------------------------------------------------------------------
// Demonstrations

interchange::SceneBundle observation_bundle(const sim::Observation& obs, const sim::Instruction& instruction,
                                            const sim::Scene& scene);

struct GenConfig {
  std::size_t pick_episodes = 5000;
  std::size_t place_episodes = 5000;
  std::uint64_t first_seed = 1;
  Split split = Split::seen;
  bool multi_label = false;  // place only: every valid candidate is positive
};

struct GenReport {
  std::vector<train::ScoreSample> samples;
  std::size_t pick_episodes = 0, place_episodes = 0;
  std::size_t pick_demos = 0, place_demos = 0;
  std::size_t expert_stuck = 0;
  std::size_t rejected = 0;
};

GenReport generate_demos(const GenConfig& config, const sim::EmbeddingBank& bank, const sim::SimConfig& sim);

// Re-executes a recorded sample's labelled action on a freshly spawned copy
// of its scene and returns the reward.
int replay_reward(const train::ScoreSample& sample, const sim::EmbeddingBank& bank, const sim::SimConfig& sim);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalCase {
  Task task = Task::pick;
  std::uint64_t seed = 0;
  Split split = Split::seen;
};

// "kind,seed,split" per line.
std::vector<EvalCase> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<EvalCase>& cases);
std::vector<EvalCase> default_cases(Task task, std::size_t seen, std::size_t unseen, std::uint64_t first_seed);

struct CaseResult {
  EvalCase eval_case;
  std::size_t runs = 0;
  std::size_t successes = 0;
  std::size_t success_steps = 0;
  std::size_t expert_stuck = 0;

  double success_rate() const;  // percent
  std::optional<double> planning_steps() const;
};

struct EvalReport {
  std::vector<CaseResult> cases;
  double success_rate(std::optional<Task> task = {}, std::optional<Split> split = {}) const;
  std::optional<double> planning_steps(std::optional<Task> task = {}, std::optional<Split> split = {}) const;
  std::string csv() const;
};

using AgentFactory = std::function<std::unique_ptr<sim::Agent>()>;

EvalReport evaluate(const std::vector<EvalCase>& cases, std::size_t runs, const AgentFactory& make_agent,
                    const sim::EmbeddingBank& bank, const sim::SimConfig& sim, unsigned threads = 1);

// Mean total of Omega' over positive labels, without renormalizing.
double valid_mass(const align::PolicyParams<float>& params, bool adapted,
                  std::span<const train::ScoreSample> samples);

// ---------------------------------------------------------------------------
// Ranking

struct RankedCandidate {
  std::size_t index = 0;
  double score = 0.0;
};

std::vector<RankedCandidate> rank_candidates(const interchange::SceneBundle& bundle,
                                             const train::PolicySnapshot& snapshot);

// ---------------------------------------------------------------------------
// Flat key=value configuration

using KeyValues = std::map<std::string, std::string>;
KeyValues read_key_values(const std::filesystem::path& path);
// Unknown keys raise ValidationError; recognised keys are erased from `kv`.
void apply(KeyValues& kv, sim::SimConfig& sim);
void apply(KeyValues& kv, train::TrainConfig& train);
void apply(KeyValues& kv, GenConfig& gen);

// ---------------------------------------------------------------------------
// Ablation suite

struct TrendConfig {
  sim::SimConfig sim;
  train::TrainConfig train;
  GenConfig gen;
  std::size_t seeds = 3;
  std::size_t runs = 15;
  std::size_t pick_seen = 10, pick_unseen = 5;
  std::size_t place_seen = 20, place_unseen = 10;
  std::size_t adapt_holdout = 50;
  std::uint64_t eval_seed = 1'000'000;
  std::function<void(const std::string&)> log;

  // Budget that fits the suite in half an hour on one laptop core.
  static TrendConfig desk();
};

struct TrendSeed {
  std::uint64_t seed = 0;
  double shared_pick_seen = 0, shared_pick_unseen = 0, shared_place_seen = 0, shared_place_unseen = 0;
  double pick_only_pick = 0, place_only_place = 0, no_rope_pick = 0;
  double residual_place_seen = 0, full_place_seen = 0;
  double mass_before = 0, mass_after = 0;
  std::optional<double> shared_pick_steps;
};

struct TrendReport {
  std::size_t demos = 0, pick_demos = 0, place_demos = 0;
  std::size_t expert_stuck = 0, expert_episodes = 0;
  double grounding_pick = 0;
  std::vector<TrendSeed> seeds;
  TrendSeed median;
  double seconds = 0;
  std::string table() const;
};

TrendReport run_trend_suite(const TrendConfig& config);

}  // namespace a2::experiment
