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

// Fixtures shared by the unit and acceptance tests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include "a2/interchange.hpp"

namespace a2::testing {

inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("a2test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Random but valid bundle; sizes drawn from [1, max_*].
inline interchange::SceneBundle random_bundle(std::mt19937_64& rng, std::uint32_t max_n = 64,
                                              std::uint32_t max_l = 16, std::uint32_t max_d = 12) {
  std::uniform_int_distribution<std::uint32_t> un(1, max_n), ul(1, max_l), ud(1, max_d);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  interchange::SceneBundle b;
  b.n = un(rng);
  b.l = ul(rng);
  b.dim = ud(rng);
  b.points.resize(b.n * 3);
  b.features.resize(std::size_t{b.n} * b.dim);
  b.similarities.resize(b.n);
  b.candidates.resize(b.l * interchange::kActionDim);
  b.instruction_embedding.resize(b.dim);
  for (auto* v : {&b.points, &b.features, &b.similarities, &b.candidates, &b.instruction_embedding})
    for (auto& x : *v) x = u(rng);
  b.candidate_kind = rng() % 2 ? interchange::CandidateKind::pick : interchange::CandidateKind::place;
  const char* words[] = {"pick", "up", "the", "red", "mug", "near", "bowl", "ünïcode"};
  for (int i = 0, m = static_cast<int>(rng() % 6); i < m; ++i) b.instruction_text += std::string(words[rng() % 8]) + " ";
  if (rng() % 2) {
    std::vector<std::uint8_t> labels(b.l);
    for (auto& y : labels) y = rng() % 2;
    labels[rng() % b.l] = 1;
    b.labels = labels;
  }
  for (int i = 0, m = static_cast<int>(rng() % 4); i < m; ++i)
    b.meta["key" + std::to_string(i)] = std::to_string(rng() % 1000);
  if (rng() % 3 == 0)
    b.extras.push_back(interchange::TensorRecord::u32("extra/rgb", {2, 2}, {1, 2, 3, 4}));
  return b;
}

}  // namespace a2::testing
