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

#include "a2/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "a2/errors.hpp"

namespace a2::experiment {

using interchange::SceneBundle;
using train::ScoreSample;

std::string_view split_name(Split split) { return split == Split::seen ? "seen" : "unseen"; }

Split parse_split(std::string_view name) {
  if (name == "seen") return Split::seen;
  if (name == "unseen") return Split::unseen;
  throw ValidationError("split", "expected seen or unseen, got '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Agents

PolicyAgent::PolicyAgent(align::PolicyParams<float> params, bool adapted)
    : params_(std::move(params)), adapted_(adapted) {}

align::ActionDistribution PolicyAgent::score(const sim::Observation& obs) {
  align::PolicyInput in;
  in.actions = obs.rows;
  in.points = obs.sampled.points;
  in.features = obs.sampled.features;
  in.similarities = obs.sampled.similarities;
  in.l = obs.candidates.size();
  in.n = obs.sampled.n;
  return align::forward(params_, in, adapted_, &cache_);
}

std::size_t PolicyAgent::choose(const sim::Observation& obs, const sim::Scene&, const sim::Instruction&, sim::Rng&) {
  return align::select_action(score(obs));
}

std::size_t knn_size(std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.05 * static_cast<double>(n))));
}

std::size_t grounding_baseline(const cloudfuse::SampledClouds& s, const priors::CandidateSet& candidates) {
  if (s.n == 0) throw ValidationError("points", "grounding needs at least one point");
  if (candidates.empty()) throw ValidationError("candidates", "grounding needs at least one candidate");
  const std::size_t k = std::min(knn_size(s.n), s.n);
  std::vector<std::pair<double, std::size_t>> dist(s.n);
  std::size_t best_point = 0;
  double best_mean = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.n; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double d = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double e = double(s.points[i * 3 + a]) - s.points[j * 3 + a];
        d += e * e;
      }
      dist[j] = {d, j};
    }
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
    double sum = 0.0;
    for (std::size_t m = 0; m < k; ++m) sum += s.similarities[dist[m].second];
    const double mean = sum / static_cast<double>(k);
    if (mean > best_mean) {
      best_mean = mean;
      best_point = i;
    }
  }
  const Eigen::Vector3d p(s.points[best_point * 3], s.points[best_point * 3 + 1], s.points[best_point * 3 + 2]);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double d = (candidates.position(c) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::size_t GroundingAgent::choose(const sim::Observation& obs, const sim::Scene&, const sim::Instruction&,
                                   sim::Rng&) {
  return grounding_baseline(obs.sampled, obs.candidates);
}

// ---------------------------------------------------------------------------
// Demonstrations

SceneBundle observation_bundle(const sim::Observation& obs, const sim::Instruction& ins, const sim::Scene& scene) {
  SceneBundle b;
  b.n = static_cast<std::uint32_t>(obs.sampled.n);
  b.dim = static_cast<std::uint32_t>(obs.sampled.dim);
  b.l = static_cast<std::uint32_t>(obs.candidates.size());
  b.points = obs.sampled.points;
  b.features = obs.sampled.features;
  b.similarities = obs.sampled.similarities;
  b.candidates = obs.rows;
  b.candidate_kind = obs.candidates.kind;
  b.instruction_embedding = ins.embedding;
  b.instruction_text = ins.text;
  b.meta["sampled"] = "1";
  b.meta["scene_seed"] = std::to_string(scene.seed);
  b.meta["split"] = std::string(split_name(scene.split));
  b.meta["keyword_type"] = std::string(sim::keyword_type_name(ins.keyword_type));
  b.meta["reference"] = std::to_string(ins.target_object);
  if (ins.relation) b.meta["relation"] = ins.relation == sim::Relation::on ? "on" : "around";
  return b;
}

namespace {

std::string join(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? ";" : "") + std::to_string(ids[i]);
  return out;
}

std::vector<int> split_ids(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ';'))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

const std::string& meta_at(const SceneBundle& b, const std::string& key) {
  auto it = b.meta.find(key);
  if (it == b.meta.end()) throw ValidationError("meta/" + key, "missing");
  return it->second;
}

}  // namespace

GenReport generate_demos(const GenConfig& cfg, const sim::EmbeddingBank& bank, const sim::SimConfig& simcfg) {
  GenReport report;
  std::vector<train::Demo> demos;
  sim::ExpertAgent expert(simcfg.annulus);

  auto run = [&](Task task, std::size_t episodes) {
    const auto kind = interchange::CandidateKind(task == Task::pick ? 0 : 1);
    for (std::size_t e = 0; e < episodes; ++e) {
      const std::uint64_t seed = cfg.first_seed + e;
      std::vector<int> removed;
      int step = 0;
      const auto log = sim::rollout(
          expert, task, seed, cfg.split, bank, simcfg,
          [&](const sim::Scene& before, const sim::Instruction& ins, const sim::Observation& obs,
              const sim::StepOutcome& out) {
            if (out.reward == 1) {
              SceneBundle b = observation_bundle(obs, ins, before);
              b.meta["removed"] = join(removed);
              b.meta["step"] = std::to_string(step);
              const std::string id = std::string(interchange::kind_name(kind)) + "_" + std::to_string(seed) + "_" +
                                     std::to_string(step);
              if (task == Task::pick) b.meta["source"] = std::to_string(out.removed_object);
              if (cfg.multi_label && task == Task::place) {
                std::vector<std::uint8_t> labels(obs.candidates.size(), 0);
                for (std::size_t k = 0; k < labels.size(); ++k)
                  labels[k] = static_cast<std::uint8_t>(
                      sim::step_place(before, obs.candidates.places[k], ins, simcfg.annulus).reward);
                b.labels = std::move(labels);
                ScoreSample s{id, std::move(b), kind, std::string(split_name(cfg.split))};
                report.samples.push_back(std::move(s));
              } else {
                train::Demo d;
                d.id = id;
                std::copy_n(obs.rows.begin() + static_cast<std::ptrdiff_t>(out.action * interchange::kActionDim),
                            interchange::kActionDim, d.action.begin());
                d.observation = std::move(b);
                demos.push_back(std::move(d));
              }
              (task == Task::pick ? report.pick_demos : report.place_demos)++;
            }
            if (out.removed_object >= 0) removed.push_back(out.removed_object);
            ++step;
          });
      if (log.expert_stuck) ++report.expert_stuck;
    }
  };
  if (!cfg.multi_label) {
    run(Task::pick, cfg.pick_episodes);
    report.pick_episodes = cfg.pick_episodes;
  }
  run(Task::place, cfg.place_episodes);
  report.place_episodes = cfg.place_episodes;

  if (!demos.empty()) {
    auto built = train::build_score_dataset(demos);
    report.rejected = built.rejected.size();
    for (auto& s : built.samples) report.samples.push_back(std::move(s));
  }
  return report;
}

int replay_reward(const ScoreSample& sample, const sim::EmbeddingBank& bank, const sim::SimConfig& simcfg) {
  const auto& b = sample.bundle;
  if (!b.labels) throw ValidationError("labels", "sample " + sample.id + " is unlabelled");
  const auto kind = sample.task == interchange::CandidateKind::pick ? sim::SceneKind::pick : sim::SceneKind::place;
  sim::Scene scene = sim::spawn_scene(kind, std::stoull(meta_at(b, "scene_seed")), parse_split(meta_at(b, "split")),
                                      bank, simcfg);
  if (auto it = b.meta.find("removed"); it != b.meta.end())
    for (int id : split_ids(it->second)) scene.remove(id);
  int reward = 1;
  for (std::size_t k = 0; k < b.l; ++k) {
    if ((*b.labels)[k] != 1) continue;
    std::span<const float, interchange::kActionDim> row(b.candidates.data() + k * interchange::kActionDim,
                                                       interchange::kActionDim);
    if (kind == sim::SceneKind::pick) {
      auto g = priors::decode_grasp(row);
      g.source_object = std::stoi(meta_at(b, "source"));
      reward = std::min(reward, sim::grasp_feasible(scene, g) ? 1 : 0);
    } else {
      sim::Instruction ins;
      ins.kind = kind;
      ins.target_object = std::stoi(meta_at(b, "reference"));
      ins.relation = meta_at(b, "relation") == "on" ? sim::Relation::on : sim::Relation::around;
      reward = std::min(reward, sim::step_place(scene, priors::decode_place(row), ins, simcfg.annulus).reward);
    }
  }
  return reward;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<EvalCase> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::vector<EvalCase> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string kind, seed, split;
    if (!std::getline(ss, kind, ',') || !std::getline(ss, seed, ',') || !std::getline(ss, split))
      throw ValidationError("manifest", "expected kind,seed,split in '" + line + "'");
    EvalCase c;
    c.task = sim::parse_task(kind);
    try {
      c.seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw ValidationError("manifest", "bad seed '" + seed + "'");
    }
    c.split = parse_split(split);
    out.push_back(c);
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<EvalCase>& cases) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& c : cases) out << sim::task_name(c.task) << ',' << c.seed << ',' << split_name(c.split) << '\n';
}

std::vector<EvalCase> default_cases(Task task, std::size_t seen, std::size_t unseen, std::uint64_t first_seed) {
  std::vector<EvalCase> out;
  for (std::size_t i = 0; i < seen; ++i) out.push_back({task, first_seed + i, Split::seen});
  for (std::size_t i = 0; i < unseen; ++i) out.push_back({task, first_seed + seen + i, Split::unseen});
  return out;
}

double CaseResult::success_rate() const {
  return runs == 0 ? 0.0 : 100.0 * static_cast<double>(successes) / static_cast<double>(runs);
}

std::optional<double> CaseResult::planning_steps() const {
  if (successes == 0) return std::nullopt;
  return static_cast<double>(success_steps) / static_cast<double>(successes);
}

namespace {

bool matches(const CaseResult& r, std::optional<Task> task, std::optional<Split> split) {
  return (!task || r.eval_case.task == *task) && (!split || r.eval_case.split == *split);
}

}  // namespace

double EvalReport::success_rate(std::optional<Task> task, std::optional<Split> split) const {
  std::size_t runs = 0, ok = 0;
  for (const auto& r : cases)
    if (matches(r, task, split)) runs += r.runs, ok += r.successes;
  return runs == 0 ? 0.0 : 100.0 * static_cast<double>(ok) / static_cast<double>(runs);
}

std::optional<double> EvalReport::planning_steps(std::optional<Task> task, std::optional<Split> split) const {
  std::size_t ok = 0, steps = 0;
  for (const auto& r : cases)
    if (matches(r, task, split)) ok += r.successes, steps += r.success_steps;
  if (ok == 0) return std::nullopt;
  return static_cast<double>(steps) / static_cast<double>(ok);
}

std::string EvalReport::csv() const {
  std::string out = "case_id,kind,split,success_rate,planning_steps,seed\n";
  char buf[64];
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& r = cases[i];
    out += std::to_string(i) + ',' + std::string(sim::task_name(r.eval_case.task)) + ',' +
           std::string(split_name(r.eval_case.split)) + ',';
    std::snprintf(buf, sizeof buf, "%.1f", r.success_rate());
    out += buf;
    out += ',';
    if (const auto steps = r.planning_steps()) {
      std::snprintf(buf, sizeof buf, "%.2f", *steps);
      out += buf;
    } else {
      out += "NA";
    }
    out += ',' + std::to_string(r.eval_case.seed) + '\n';
  }
  return out;
}

EvalReport evaluate(const std::vector<EvalCase>& cases, std::size_t runs, const AgentFactory& make_agent,
                    const sim::EmbeddingBank& bank, const sim::SimConfig& simcfg, unsigned threads) {
  if (runs < 1) throw ValidationError("runs", "must be at least 1");
  EvalReport report;
  report.cases.resize(cases.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    try {
      auto agent = make_agent();
      for (std::size_t i = next++; i < cases.size(); i = next++) {
        CaseResult r;
        r.eval_case = cases[i];
        for (std::size_t run = 0; run < runs; ++run) {
          const auto log = sim::rollout(*agent, cases[i].task, cases[i].seed, cases[i].split, bank, simcfg, {}, run);
          ++r.runs;
          if (log.expert_stuck) ++r.expert_stuck;
          if (log.success) {
            ++r.successes;
            r.success_steps += log.steps.size();
          }
        }
        report.cases[i] = r;
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cases.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return report;
}

double valid_mass(const align::PolicyParams<float>& params, bool adapted, std::span<const ScoreSample> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  align::ForwardCache<float> cache;
  for (const auto& s : samples) {
    const auto dist = align::forward(params, train::policy_input(s.bundle), adapted, &cache);
    for (std::size_t k = 0; k < dist.omega_prime.size(); ++k)
      if ((*s.bundle.labels)[k]) total += dist.omega_prime[k];
  }
  return total / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Ranking

std::vector<RankedCandidate> rank_candidates(const SceneBundle& bundle, const train::PolicySnapshot& snapshot) {
  interchange::validate_bundle(bundle);
  if (bundle.dim != snapshot.params.config.feature_dim)
    throw ValidationError("features", "bundle feature dimension " + std::to_string(bundle.dim) +
                                          " does not match the policy's " +
                                          std::to_string(snapshot.params.config.feature_dim));
  if (bundle.n == 0 || bundle.l == 0) throw ValidationError("bundle", "needs points and candidates");
  const auto dist = align::forward(snapshot.params, train::policy_input(bundle), snapshot.meta.adapted);
  std::vector<RankedCandidate> out;
  for (std::size_t k = 0; k < dist.omega_prime.size(); ++k) out.push_back({k, dist.omega_prime[k]});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  return out;
}

// ---------------------------------------------------------------------------
// Key=value configuration

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  KeyValues kv;
  std::string line;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config", "expected key=value, got '" + line + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace {

template <class T>
void take(KeyValues& kv, const std::string& key, T& field) {
  auto it = kv.find(key);
  if (it == kv.end()) return;
  std::istringstream is(it->second);
  if constexpr (std::is_same_v<T, bool>) {
    const auto& v = it->second;
    if (v == "1" || v == "true") field = true;
    else if (v == "0" || v == "false") field = false;
    else throw ValidationError(key, "expected a boolean");
  } else {
    T value{};
    is >> value;
    if (!is || !is.eof()) throw ValidationError(key, "cannot parse '" + it->second + "'");
    field = value;
  }
  kv.erase(it);
}

}  // namespace

void apply(KeyValues& kv, sim::SimConfig& s) {
  take(kv, "dim", s.bank.dim);
  take(kv, "bank_seed", s.bank.seed);
  take(kv, "sigma_f", s.bank.sigma_f);
  take(kv, "bleed", s.bank.bleed);
  take(kv, "bleed_radius", s.bank.bleed_radius);
  take(kv, "image_width", s.image_width);
  take(kv, "image_height", s.image_height);
  take(kv, "hfov_deg", s.hfov_deg);
  take(kv, "max_points", s.max_points);
  take(kv, "voxel", s.fusion.voxel);
  take(kv, "mu", s.fusion.mu);
  take(kv, "place_jitter", s.place_jitter);
  take(kv, "max_pick_steps", s.max_pick_steps);
  take(kv, "fusion_threads", s.fusion.threads);
  if (auto it = kv.find("depth_mode"); it != kv.end()) {
    if (it->second == "z") s.fusion.depth_mode = cloudfuse::DepthMode::z_depth;
    else if (it->second == "ray") s.fusion.depth_mode = cloudfuse::DepthMode::ray_distance;
    else throw ValidationError("depth_mode", "expected z or ray");
    kv.erase(it);
  }
}

void apply(KeyValues& kv, train::TrainConfig& t) {
  take(kv, "epochs", t.epochs);
  take(kv, "adapt_epochs", t.adapt_epochs);
  take(kv, "adapt_samples", t.adapt_samples);
  take(kv, "lr", t.lr);
  take(kv, "batch", t.batch);
  take(kv, "seed", t.seed);
  take(kv, "width", t.model.width);
  take(kv, "heads", t.model.heads);
  take(kv, "pe_bands", t.model.pe_bands);
  take(kv, "alpha", t.model.alpha);
  take(kv, "use_rope", t.model.use_rope);
  take(kv, "full_finetune", t.full_finetune);
  if (auto it = kv.find("attn_scale"); it != kv.end()) {
    if (it->second == "scaled") t.model.attn_scale = align::AttnScale::scaled;
    else if (it->second == "unscaled") t.model.attn_scale = align::AttnScale::unscaled;
    else throw ValidationError("attn_scale", "expected scaled or unscaled");
    kv.erase(it);
  }
  if (auto it = kv.find("filter"); it != kv.end()) {
    if (it->second == "shared") t.filter = train::TaskFilter::shared;
    else if (it->second == "pick-only") t.filter = train::TaskFilter::pick_only;
    else if (it->second == "place-only") t.filter = train::TaskFilter::place_only;
    else throw ValidationError("filter", "expected shared, pick-only or place-only");
    kv.erase(it);
  }
}

void apply(KeyValues& kv, GenConfig& g) {
  take(kv, "pick_episodes", g.pick_episodes);
  take(kv, "place_episodes", g.place_episodes);
  take(kv, "first_seed", g.first_seed);
  take(kv, "multi_label", g.multi_label);
  if (auto it = kv.find("split"); it != kv.end()) {
    g.split = parse_split(it->second);
    kv.erase(it);
  }
}

// ---------------------------------------------------------------------------
// Ablation suite

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

AgentFactory policy_factory(const align::PolicyParams<float>& params, bool adapted) {
  return [params, adapted] { return std::make_unique<PolicyAgent>(params, adapted); };
}

}  // namespace

std::string TrendReport::table() const {
  std::ostringstream os;
  char buf[256];
  os << "demos " << demos << " (pick " << pick_demos << ", place " << place_demos << "), expert stuck "
     << expert_stuck << "/" << expert_episodes << "\n";
  os << "seed    shared-pick  pick-only  shared-place  place-only  no-rope  unseen-pick  unseen-place  res-place  "
        "full-place  mass-before  mass-after\n";
  auto row = [&](const std::string& name, const TrendSeed& s) {
    std::snprintf(buf, sizeof buf,
                  "%-7s %11.1f %10.1f %13.1f %11.1f %8.1f %12.1f %13.1f %10.1f %11.1f %12.3f %11.3f\n", name.c_str(),
                  s.shared_pick_seen, s.pick_only_pick, s.shared_place_seen, s.place_only_place, s.no_rope_pick,
                  s.shared_pick_unseen, s.shared_place_unseen, s.residual_place_seen, s.full_place_seen,
                  s.mass_before, s.mass_after);
    os << buf;
  };
  for (const auto& s : seeds) row(std::to_string(s.seed), s);
  row("median", median);
  std::snprintf(buf, sizeof buf, "grounding baseline pick (seen): %.1f\nwall clock: %.0f s\n", grounding_pick, seconds);
  os << buf;
  return os.str();
}

TrendConfig TrendConfig::desk() {
  TrendConfig c;
  c.gen.pick_episodes = 850;
  c.gen.place_episodes = 850;
  c.train.epochs = 10;
  c.train.adapt_epochs = 200;
  c.sim.max_points = 256;
  return c;
}

TrendReport run_trend_suite(const TrendConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  auto log = [&](const std::string& msg) {
    if (cfg.log) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char buf[32];
      std::snprintf(buf, sizeof buf, "[%6.0fs] ", s);
      cfg.log(buf + msg);
    }
  };
  const sim::EmbeddingBank bank(cfg.sim.bank);
  TrendReport report;

  GenConfig gen = cfg.gen;
  gen.split = Split::seen;
  gen.multi_label = false;
  auto data = generate_demos(gen, bank, cfg.sim);
  report.pick_demos = data.pick_demos;
  report.place_demos = data.place_demos;
  report.demos = data.samples.size();
  report.expert_stuck = data.expert_stuck;
  report.expert_episodes = gen.pick_episodes + gen.place_episodes;
  log("collected " + std::to_string(report.demos) + " demonstrations");

  GenConfig multi;
  multi.multi_label = true;
  multi.split = Split::seen;
  multi.place_episodes = cfg.train.adapt_samples + cfg.adapt_holdout;
  multi.first_seed = 500'000;
  auto multi_data = generate_demos(multi, bank, cfg.sim).samples;
  const std::size_t n_adapt = std::min(cfg.train.adapt_samples, multi_data.size());
  std::vector<ScoreSample> adapt_set(multi_data.begin(), multi_data.begin() + static_cast<std::ptrdiff_t>(n_adapt));
  std::vector<ScoreSample> holdout(multi_data.begin() + static_cast<std::ptrdiff_t>(n_adapt), multi_data.end());

  sim::SimConfig eval_sim = cfg.sim;
  eval_sim.place_jitter = 0.003;
  const auto pick_cases = default_cases(Task::pick, cfg.pick_seen, cfg.pick_unseen, cfg.eval_seed);
  const auto place_cases = default_cases(Task::place, cfg.place_seen, cfg.place_unseen, cfg.eval_seed + 100'000);
  std::vector<EvalCase> pick_seen, place_seen;
  for (const auto& c : pick_cases)
    if (c.split == Split::seen) pick_seen.push_back(c);
  for (const auto& c : place_cases)
    if (c.split == Split::seen) place_seen.push_back(c);

  report.grounding_pick =
      evaluate(pick_seen, cfg.runs, [] { return std::make_unique<GroundingAgent>(); }, bank, eval_sim)
          .success_rate();
  log("grounding baseline pick " + std::to_string(report.grounding_pick));

  for (std::size_t k = 0; k < cfg.seeds; ++k) {
    TrendSeed s;
    s.seed = cfg.train.seed + k;
    train::TrainConfig tc = cfg.train;
    tc.seed = s.seed;
    tc.model.feature_dim = cfg.sim.bank.dim;

    tc.filter = train::TaskFilter::shared;
    const auto shared = train::train_policy(data.samples, tc);
    log("seed " + std::to_string(s.seed) + ": shared policy trained");
    const auto pick_eval = evaluate(pick_cases, cfg.runs, policy_factory(shared.params, false), bank, eval_sim);
    const auto place_eval = evaluate(place_cases, cfg.runs, policy_factory(shared.params, false), bank, eval_sim);
    s.shared_pick_seen = pick_eval.success_rate(Task::pick, Split::seen);
    s.shared_pick_unseen = pick_eval.success_rate(Task::pick, Split::unseen);
    s.shared_pick_steps = pick_eval.planning_steps(Task::pick, Split::seen);
    s.shared_place_seen = place_eval.success_rate(Task::place, Split::seen);
    s.shared_place_unseen = place_eval.success_rate(Task::place, Split::unseen);

    tc.filter = train::TaskFilter::pick_only;
    const auto pick_only = train::train_policy(data.samples, tc);
    s.pick_only_pick = evaluate(pick_seen, cfg.runs, policy_factory(pick_only.params, false), bank, eval_sim)
                           .success_rate();
    tc.filter = train::TaskFilter::place_only;
    const auto place_only = train::train_policy(data.samples, tc);
    s.place_only_place = evaluate(place_seen, cfg.runs, policy_factory(place_only.params, false), bank, eval_sim)
                             .success_rate();
    log("seed " + std::to_string(s.seed) + ": single-task policies done");

    tc.filter = train::TaskFilter::shared;
    tc.model.use_rope = false;
    const auto no_rope = train::train_policy(data.samples, tc);
    tc.model.use_rope = cfg.train.model.use_rope;
    s.no_rope_pick =
        evaluate(pick_seen, cfg.runs, policy_factory(no_rope.params, false), bank, eval_sim).success_rate();
    log("seed " + std::to_string(s.seed) + ": no-rope policy done");

    tc.full_finetune = false;
    const auto residual = train::adapt_policy(shared, adapt_set, tc);
    tc.full_finetune = true;
    const auto full = train::adapt_policy(shared, adapt_set, tc);
    s.residual_place_seen =
        evaluate(place_seen, cfg.runs, policy_factory(residual.params, true), bank, eval_sim).success_rate();
    s.full_place_seen =
        evaluate(place_seen, cfg.runs, policy_factory(full.params, true), bank, eval_sim).success_rate();
    s.mass_before = valid_mass(shared.params, false, holdout);
    s.mass_after = valid_mass(residual.params, true, holdout);
    log("seed " + std::to_string(s.seed) + ": adaptation done");
    report.seeds.push_back(s);
  }

  auto med = [&](double TrendSeed::*field) {
    std::vector<double> v;
    for (const auto& s : report.seeds) v.push_back(s.*field);
    return median(v);
  };
  report.median.shared_pick_seen = med(&TrendSeed::shared_pick_seen);
  report.median.shared_pick_unseen = med(&TrendSeed::shared_pick_unseen);
  report.median.shared_place_seen = med(&TrendSeed::shared_place_seen);
  report.median.shared_place_unseen = med(&TrendSeed::shared_place_unseen);
  report.median.pick_only_pick = med(&TrendSeed::pick_only_pick);
  report.median.place_only_place = med(&TrendSeed::place_only_place);
  report.median.no_rope_pick = med(&TrendSeed::no_rope_pick);
  report.median.residual_place_seen = med(&TrendSeed::residual_place_seen);
  report.median.full_place_seen = med(&TrendSeed::full_place_seen);
  report.median.mass_before = med(&TrendSeed::mass_before);
  report.median.mass_after = med(&TrendSeed::mass_after);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace a2::experiment
