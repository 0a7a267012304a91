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


#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "a2/errors.hpp"
#include "a2/experiment.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "policy_fixture.hpp"

using namespace a2;
using namespace a2::experiment;

namespace {

cloudfuse::SampledClouds random_cloud(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<float> u(-0.2f, 0.2f), s(-1.0f, 1.0f);
  cloudfuse::SampledClouds c;
  c.n = n;
  c.dim = 1;
  c.points.resize(3 * n);
  for (auto& x : c.points) x = u(rng);
  c.similarities.resize(n);
  for (auto& x : c.similarities) x = s(rng);
  c.features.assign(n, 0.0f);
  c.indices.resize(n);
  return c;
}

priors::CandidateSet random_places(std::mt19937_64& rng, std::size_t l) {
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  priors::CandidateSet set;
  set.kind = priors::Kind::place;
  for (std::size_t i = 0; i < l; ++i) set.places.push_back({{u(rng), u(rng), u(rng)}, world::Relation::on, 0});
  return set;
}

// Sorts every neighbour list in full.
std::size_t knn_oracle(const cloudfuse::SampledClouds& c, const priors::CandidateSet& set) {
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.05 * c.n)));
  std::size_t best = 0;
  double best_mean = -1e300;
  for (std::size_t i = 0; i < c.n; ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < c.n; ++j) {
      double e = 0;
      for (int a = 0; a < 3; ++a) e += std::pow(double(c.points[3 * i + a]) - c.points[3 * j + a], 2);
      d.push_back({e, j});
    }
    std::sort(d.begin(), d.end());
    double sum = 0;
    for (std::size_t m = 0; m < k; ++m) sum += c.similarities[d[m].second];
    if (sum / k > best_mean) best_mean = sum / k, best = i;
  }
  const Eigen::Vector3d p(c.points[3 * best], c.points[3 * best + 1], c.points[3 * best + 2]);
  std::size_t pick = 0;
  for (std::size_t q = 1; q < set.size(); ++q)
    if ((set.position(q) - p).squaredNorm() < (set.position(pick) - p).squaredNorm()) pick = q;
  return pick;
}

sim::SimConfig small_sim() {
  sim::SimConfig c;
  c.image_width = 56;
  c.image_height = 42;
  c.max_points = 128;
  return c;
}

const sim::EmbeddingBank& bank() {
  static const sim::EmbeddingBank b;
  return b;
}

}  // namespace

TEST_CASE("neighbourhood size is five percent of the points, at least one") {
  CHECK(knn_size(1) == 1);
  CHECK(knn_size(9) == 1);
  CHECK(knn_size(30) == 2);
  CHECK(knn_size(500) == 25);
  CHECK(knn_size(2000) == 100);
}

TEST_CASE("grounding baseline matches an exhaustive neighbour search") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 1 + rng() % 500;
    const auto c = random_cloud(rng, n);
    const auto set = random_places(rng, 1 + rng() % 40);
    CHECK(grounding_baseline(c, set) == knn_oracle(c, set));
  }
}

TEST_CASE("grounding baseline finds the high-similarity cluster") {
  std::mt19937_64 rng(2);
  auto c = random_cloud(rng, 200);
  std::normal_distribution<float> g(0.0f, 0.005f);
  for (std::size_t j = 0; j < 20; ++j) {
    c.points[3 * j] = 0.1f + g(rng);
    c.points[3 * j + 1] = -0.1f + g(rng);
    c.points[3 * j + 2] = 0.05f + g(rng);
    c.similarities[j] = 2.0f;
  }
  auto set = random_places(rng, 10);
  set.places[6].position = {0.1, -0.1, 0.06};
  CHECK(grounding_baseline(c, set) == 6);
}

TEST_CASE("equal similarities resolve to point zero's neighbourhood") {
  std::mt19937_64 rng(3);
  auto c = random_cloud(rng, 50);
  std::fill(c.similarities.begin(), c.similarities.end(), 0.5f);
  auto set = random_places(rng, 8);
  set.places[3].position = {c.points[0], c.points[1], c.points[2]};
  CHECK(grounding_baseline(c, set) == 3);
  set.places[5].position = set.places[3].position;
  CHECK(grounding_baseline(c, set) == 3);
}

TEST_CASE("success rates and planning steps") {
  CaseResult r;
  r.runs = 15;
  r.successes = 12;
  r.success_steps = 30;
  CHECK(r.success_rate() == doctest::Approx(80.0));
  CHECK(*r.planning_steps() == doctest::Approx(2.5));
  CaseResult none;
  none.runs = 15;
  CHECK_FALSE(none.planning_steps().has_value());

  EvalReport rep;
  r.eval_case = {Task::pick, 1000, Split::seen};
  none.eval_case = {Task::place, 1001, Split::unseen};
  rep.cases = {r, none};
  CHECK(rep.csv() ==
        "case_id,kind,split,success_rate,planning_steps,seed\n"
        "0,pick,seen,80.0,2.50,1000\n"
        "1,place,unseen,0.0,NA,1001\n");
  CHECK(rep.success_rate() == doctest::Approx(40.0));
  CHECK(rep.success_rate(Task::pick) == doctest::Approx(80.0));
  CHECK(rep.success_rate({}, Split::unseen) == doctest::Approx(0.0));
  CHECK(*rep.planning_steps(Task::pick) == doctest::Approx(2.5));
  CHECK_FALSE(rep.planning_steps(Task::place).has_value());
}

TEST_CASE("manifests round-trip") {
  const auto cases = default_cases(Task::pick_n_place, 3, 2, 500);
  REQUIRE(cases.size() == 5);
  CHECK(cases[3].split == Split::unseen);
  const auto dir = a2::testing::temp_dir("manifest");
  write_manifest(dir / "m.txt", cases);
  const auto back = read_manifest(dir / "m.txt");
  REQUIRE(back.size() == cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    CHECK(back[i].task == cases[i].task);
    CHECK(back[i].seed == cases[i].seed);
    CHECK(back[i].split == cases[i].split);
  }
  std::ofstream(dir / "bad.txt") << "pick,12\n";
  CHECK_THROWS_AS(read_manifest(dir / "bad.txt"), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("key=value configuration") {
  const auto dir = a2::testing::temp_dir("kv");
  std::ofstream(dir / "c.txt") << "# comment\n epochs = 7\nuse_rope=false\nmax_points=64\npick_episodes=3\n";
  auto kv = read_key_values(dir / "c.txt");
  sim::SimConfig s;
  train::TrainConfig t;
  GenConfig g;
  apply(kv, s);
  apply(kv, t);
  apply(kv, g);
  CHECK(kv.empty());
  CHECK(t.epochs == 7);
  CHECK_FALSE(t.model.use_rope);
  CHECK(s.max_points == 64);
  CHECK(g.pick_episodes == 3);

  KeyValues bad{{"use_rope", "maybe"}};
  CHECK_THROWS_AS(apply(bad, t), ValidationError);
  KeyValues filter{{"filter", "pick-only"}};
  apply(filter, t);
  CHECK(t.filter == train::TaskFilter::pick_only);
  CHECK_THROWS_AS(read_key_values(dir / "missing.txt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("generated demonstrations replay with reward one") {
  GenConfig g;
  g.pick_episodes = 6;
  g.place_episodes = 6;
  g.first_seed = 7;
  const auto a = generate_demos(g, bank(), small_sim());
  CHECK(a.pick_demos + a.place_demos == a.samples.size());
  CHECK(a.place_demos + a.expert_stuck == 6);
  for (const auto& s : a.samples) CHECK(replay_reward(s, bank(), small_sim()) == 1);
  const auto b = generate_demos(g, bank(), small_sim());
  CHECK(a.samples.size() == b.samples.size());

  g.pick_episodes = 0;
  g.multi_label = true;
  const auto m = generate_demos(g, bank(), small_sim());
  for (const auto& s : m.samples) {
    CHECK(s.task == train::Task::place);
    CHECK(replay_reward(s, bank(), small_sim()) == 1);
  }
}

TEST_CASE("evaluation is reproducible and independent of thread count") {
  auto cfg = small_sim();
  cfg.place_jitter = 0.003;
  const auto cases = default_cases(Task::place, 2, 1, 300);
  auto grounding = [] { return std::make_unique<GroundingAgent>(); };
  const auto a = evaluate(cases, 3, grounding, bank(), cfg, 1);
  const auto b = evaluate(cases, 3, grounding, bank(), cfg, 2);
  CHECK(a.csv() == b.csv());
  for (const auto& c : a.cases) CHECK(c.runs == 3);
  CHECK_THROWS_AS(evaluate(cases, 0, grounding, bank(), cfg), ValidationError);
}

TEST_CASE("valid mass sums the blended scores on positive candidates") {
  std::mt19937_64 rng(4);
  align::PolicyParams<float> p(a2::testing::small_config());
  p.initialize(3);
  const auto in = a2::testing::random_input(rng, 5, 6, 8);
  train::ScoreSample s;
  s.task = train::Task::place;
  s.bundle.n = 6;
  s.bundle.l = 5;
  s.bundle.dim = 8;
  s.bundle.points = in.points;
  s.bundle.features = in.features;
  s.bundle.similarities = in.similarities;
  s.bundle.candidates = in.actions;
  s.bundle.instruction_embedding.assign(8, 1.0f);
  s.bundle.candidate_kind = train::Task::place;
  s.bundle.labels = std::vector<std::uint8_t>{1, 0, 1, 0, 0};
  const auto d = align::forward(p, in.view(), true);
  CHECK(valid_mass(p, true, std::span(&s, 1)) == doctest::Approx(d.omega_prime[0] + d.omega_prime[2]).epsilon(1e-12));
  const auto base = align::forward(p, in.view(), false);
  CHECK(valid_mass(p, false, std::span(&s, 1)) == doctest::Approx(base.omega[0] + base.omega[2]).epsilon(1e-12));

  train::PolicySnapshot snap;
  snap.params = p;
  const auto ranked = rank_candidates(s.bundle, snap);
  REQUIRE(ranked.size() == 5);
  double total = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    total += ranked[i].score;
    if (i > 0) CHECK(ranked[i - 1].score >= ranked[i].score);
    CHECK(ranked[i].score == base.omega[ranked[i].index]);
  }
  CHECK(std::abs(total - 1.0) < 1e-6);
  s.bundle.dim = 4;
  CHECK_THROWS_AS(rank_candidates(s.bundle, snap), ValidationError);
}
