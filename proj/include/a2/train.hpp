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

// Imitation training of the shared policy on score-labelled samples, residual
// adaptation on multi-labelled place samples, and the snapshot format.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "a2/align.hpp"
#include "a2/interchange.hpp"

namespace a2::train {

using interchange::SceneBundle;
using Task = interchange::CandidateKind;

// An observation (sampled clouds + candidates) and the demonstrated action row.
struct Demo {
  std::string id;
  SceneBundle observation;
  std::array<float, interchange::kActionDim> action{};
};

struct ScoreSample {
  std::string id;
  SceneBundle bundle;  // labels set
  Task task = Task::pick;
  std::string split = "seen";
};

struct DatasetBuild {
  std::vector<ScoreSample> samples;
  std::vector<std::string> rejected;  // demo ids whose action matched no candidate
};

// One-hot labels at the candidate whose position matches the demonstrated
// action within 1e-6.
DatasetBuild build_score_dataset(std::span<const Demo> demos);

double ce_loss(std::span<const double> omega, std::size_t label);
double bce_loss(std::span<const double> omega_prime, std::span<const std::uint8_t> labels);

enum class LossKind { ce, bce };

struct LossGrad {
  double loss = 0.0;
  std::vector<double> d_logits;      // empty when the base decoder gets no gradient
  std::vector<double> d_res_logits;  // empty for ce
};

LossGrad loss_and_grad(const align::ActionDistribution& dist, std::span<const std::uint8_t> labels, LossKind kind,
                       double alpha, bool base_gradient = true);

align::PolicyInput policy_input(const SceneBundle& bundle);

struct OptimState {
  std::vector<float> m, v;
  std::uint64_t step = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_step(align::PolicyParams<float>& params, std::span<const float> grads, OptimState& state,
               const AdamOptions& options, const align::FreezeMask& mask);

enum class TaskFilter { shared, pick_only, place_only };
std::string_view filter_name(TaskFilter filter);

struct TrainConfig {
  align::AlignConfig model = align::AlignConfig::desk();
  std::size_t epochs = 200;
  std::size_t adapt_epochs = 200;
  std::size_t adapt_samples = 100;
  double lr = 1e-3;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  TaskFilter filter = TaskFilter::shared;
  bool full_finetune = false;
  std::function<void(std::size_t epoch, double loss)> progress;
};

struct TrainingMeta {
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  std::vector<double> loss_curve;
  bool adapted = false;
  std::string filter = "shared";
  std::size_t samples = 0;
};

struct PolicySnapshot {
  align::PolicyParams<float> params;
  TrainingMeta meta;
};

std::vector<interchange::TensorRecord> snapshot_to_records(const PolicySnapshot& snapshot);
// Throws ValidationError when a layout tensor is missing, duplicated or misshapen.
PolicySnapshot snapshot_from_records(const std::vector<interchange::TensorRecord>& records);
void write_snapshot(const PolicySnapshot& snapshot, const std::filesystem::path& path);
PolicySnapshot read_snapshot(const std::filesystem::path& path);

std::vector<const ScoreSample*> select_samples(std::span<const ScoreSample> data, TaskFilter filter);

// Mean loss over `batch`; `grads` receives the mean gradient.
double batch_gradient(const align::PolicyParams<float>& params, std::span<const ScoreSample* const> batch,
                      LossKind kind, const align::FreezeMask& mask, std::span<float> grads);

PolicySnapshot train_policy(std::span<const ScoreSample> data, const TrainConfig& config);

// Residual-only by default (BCE on the blended distribution); full_finetune
// unfreezes every tensor.
PolicySnapshot adapt_policy(const PolicySnapshot& base, std::span<const ScoreSample> samples,
                            const TrainConfig& config);

// Dataset directory: one bundle per sample plus manifest.csv ("path,task,split").
void write_dataset(const std::filesystem::path& dir, std::span<const ScoreSample> samples);
std::vector<ScoreSample> read_dataset(const std::filesystem::path& dir);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::vector<double> per_tensor;  // by layout slot
  std::size_t checked = 0;
};

// Central differences in double precision over every parameter of a random
// policy on a random observation.
GradCheckReport gradient_check(const align::AlignConfig& config, std::uint64_t seed, std::size_t l, std::size_t n,
                               LossKind kind, double h = 1e-5);

}  // namespace a2::train
