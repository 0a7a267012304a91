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

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "a2/errors.hpp"
#include "a2/experiment.hpp"
#include "a2/interchange.hpp"
#include "a2/sim.hpp"
#include "a2/train.hpp"

namespace {

using namespace a2;

struct Settings {
  std::string config_path;
  std::vector<std::string> overrides;
  sim::SimConfig sim;
  train::TrainConfig train;
  experiment::GenConfig gen;
  bool quiet = false;
};

// Config file first, then --set overrides; every key must be claimed.
void resolve(Settings& s) {
  experiment::KeyValues kv;
  if (!s.config_path.empty()) kv = experiment::read_key_values(s.config_path);
  for (const auto& o : s.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("set", "expected key=value, got '" + o + "'");
    kv[o.substr(0, eq)] = o.substr(eq + 1);
  }
  experiment::apply(kv, s.sim);
  experiment::apply(kv, s.train);
  experiment::apply(kv, s.gen);
  if (!kv.empty()) throw ValidationError(kv.begin()->first, "unknown configuration key");
  s.train.model.feature_dim = s.sim.bank.dim;
}

void log_line(const Settings& s, const std::string& msg) {
  if (!s.quiet) std::cerr << msg << '\n';
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int cmd_gen_data(Settings& s, const std::string& out) {
  resolve(s);
  const sim::EmbeddingBank bank(s.sim.bank);
  const auto t0 = std::chrono::steady_clock::now();
  auto report = experiment::generate_demos(s.gen, bank, s.sim);
  train::write_dataset(out, report.samples);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::size_t episodes = report.pick_episodes + report.place_episodes;
  std::cout << "pick demos " << report.pick_demos << " from " << report.pick_episodes << " episodes\n"
            << "place demos " << report.place_demos << " from " << report.place_episodes << " episodes\n"
            << "samples written " << report.samples.size() << " (rejected " << report.rejected << ")\n"
            << "yield " << fmt("%.3f", episodes ? double(report.pick_demos + report.place_demos) / episodes : 0.0)
            << " demos per episode\n"
            << "expert stuck " << report.expert_stuck << "/" << episodes << "\n"
            << "elapsed " << fmt("%.1f", secs) << " s\n";
  return 0;
}

int cmd_train(Settings& s, const std::string& data, const std::string& out, bool pick_only, bool place_only,
              bool no_rope, const std::string& attn_scale) {
  if (pick_only && place_only) throw ValidationError("filter", "--pick-only and --place-only are exclusive");
  resolve(s);
  if (pick_only) s.train.filter = train::TaskFilter::pick_only;
  if (place_only) s.train.filter = train::TaskFilter::place_only;
  if (no_rope) s.train.model.use_rope = false;
  if (!attn_scale.empty()) {
    if (attn_scale == "scaled") s.train.model.attn_scale = align::AttnScale::scaled;
    else if (attn_scale == "unscaled") s.train.model.attn_scale = align::AttnScale::unscaled;
    else throw ValidationError("attn-scale", "expected scaled or unscaled");
  }
  const auto samples = train::read_dataset(data);
  if (!samples.empty()) s.train.model.feature_dim = samples.front().bundle.dim;
  s.train.progress = [&](std::size_t epoch, double loss) {
    log_line(s, "epoch " + std::to_string(epoch + 1) + " loss " + fmt("%.5f", loss));
  };
  const auto t0 = std::chrono::steady_clock::now();
  const auto snap = train::train_policy(samples, s.train);
  train::write_snapshot(snap, out);
  std::cout << "trained on " << snap.meta.samples << " samples (" << snap.meta.filter << ") for " << snap.meta.epochs
            << " epochs, final loss " << fmt("%.5f", snap.meta.loss_curve.back()) << ", "
            << fmt("%.1f", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) << " s\n";
  return 0;
}

int cmd_adapt(Settings& s, const std::string& base, const std::string& data, const std::string& out, bool full) {
  resolve(s);
  s.train.full_finetune = full;
  const auto snapshot = train::read_snapshot(base);
  const auto samples = train::read_dataset(data);
  s.train.progress = [&](std::size_t epoch, double loss) {
    log_line(s, "epoch " + std::to_string(epoch + 1) + " loss " + fmt("%.5f", loss));
  };
  const auto t0 = std::chrono::steady_clock::now();
  const auto snap = train::adapt_policy(snapshot, samples, s.train);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  train::write_snapshot(snap, out);
  std::cout << (full ? "full fine-tuning" : "residual adaptation") << " on " << snap.meta.samples << " samples, "
            << snap.meta.epochs << " epochs, final loss " << fmt("%.5f", snap.meta.loss_curve.back()) << "\n"
            << "adaptation wall clock " << fmt("%.1f", secs) << " s\n";
  return 0;
}

int cmd_eval(Settings& s, const std::string& policy, bool grounding, const std::string& manifest,
             const std::string& task, std::size_t seen, std::size_t unseen, std::uint64_t first_seed, std::size_t runs,
             const std::string& out, unsigned threads, bool jitter) {
  resolve(s);
  if (policy.empty() == !grounding) throw ValidationError("policy", "give exactly one of --policy or --grounding");
  if (jitter) s.sim.place_jitter = 0.003;
  std::vector<experiment::EvalCase> cases;
  if (!manifest.empty()) {
    cases = experiment::read_manifest(manifest);
  } else {
    for (const auto& name : {std::string("pick"), std::string("place"), std::string("pick-n-place")})
      if (task == "all" || task == name)
        for (auto& c : experiment::default_cases(sim::parse_task(name), seen, unseen, first_seed)) cases.push_back(c);
    if (cases.empty()) throw ValidationError("task", "no cases for '" + task + "'");
  }
  const sim::EmbeddingBank bank(s.sim.bank);
  experiment::AgentFactory factory;
  if (grounding) {
    factory = [] { return std::make_unique<experiment::GroundingAgent>(); };
  } else {
    const auto snap = train::read_snapshot(policy);
    if (snap.params.config.feature_dim != s.sim.bank.dim)
      throw ValidationError("dim", "policy expects feature dimension " +
                                       std::to_string(snap.params.config.feature_dim));
    factory = [snap] { return std::make_unique<experiment::PolicyAgent>(snap.params, snap.meta.adapted); };
  }
  const auto report = experiment::evaluate(cases, runs, factory, bank, s.sim, threads);
  const std::string csv = report.csv();
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw IoError("cannot write " + out);
    f << csv;
  }
  for (auto t : {sim::Task::pick, sim::Task::place, sim::Task::pick_n_place})
    for (auto sp : {sim::Split::seen, sim::Split::unseen}) {
      bool any = false;
      for (const auto& c : report.cases) any |= c.eval_case.task == t && c.eval_case.split == sp;
      if (!any) continue;
      const auto steps = report.planning_steps(t, sp);
      std::cerr << sim::task_name(t) << " " << experiment::split_name(sp) << ": success "
                << fmt("%.1f", report.success_rate(t, sp)) << "%, planning steps "
                << (steps ? fmt("%.2f", *steps) : std::string("NA")) << "\n";
    }
  return 0;
}

int cmd_fuse(Settings& s, const std::string& task, std::uint64_t seed, const std::string& split,
             const std::string& out) {
  resolve(s);
  const sim::EmbeddingBank bank(s.sim.bank);
  const auto kind = task == "pick" ? sim::SceneKind::pick
                    : task == "place"
                        ? sim::SceneKind::place
                        : throw ValidationError("task", "expected pick or place, got '" + task + "'");
  const auto sp = experiment::parse_split(split);
  const auto scene = sim::spawn_scene(kind, sim::scene_seed(seed, kind), sp, bank, s.sim);
  sim::Rng rng(seed);
  const auto ins = sim::make_instruction(bank, scene, rng);
  const auto obs = sim::observe(scene, ins, bank, s.sim, rng);
  auto bundle = experiment::observation_bundle(obs, ins, scene);
  interchange::write_bundle(bundle, out);
  std::cout << "instruction: " << ins.text << "\n"
            << "fused points " << obs.fused.n << ", kept " << obs.sampled.n << ", candidates "
            << obs.candidates.size() << "\n";
  return 0;
}

int cmd_rank(const std::string& bundle_path, const std::string& policy, std::size_t top) {
  const auto bundle = interchange::read_bundle(bundle_path);
  const auto snap = train::read_snapshot(policy);
  const auto ranked = experiment::rank_candidates(bundle, snap);
  std::cout << "rank,index,score\n";
  for (std::size_t r = 0; r < ranked.size() && (top == 0 || r < top); ++r)
    std::cout << r << ',' << ranked[r].index << ',' << fmt("%.6f", ranked[r].score) << '\n';
  return 0;
}

int cmd_ablate(Settings& s, std::size_t seeds, std::size_t runs, const std::string& out) {
  auto cfg = experiment::TrendConfig::desk();
  s.sim = cfg.sim;
  s.train = cfg.train;
  s.gen = cfg.gen;
  resolve(s);
  cfg.sim = s.sim;
  cfg.train = s.train;
  cfg.gen = s.gen;
  cfg.seeds = seeds;
  cfg.runs = runs;
  cfg.log = [&](const std::string& m) { log_line(s, m); };
  const auto report = experiment::run_trend_suite(cfg);
  const std::string table = report.table();
  std::cout << table;
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw IoError("cannot write " + out);
    f << table;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"a2: action-prior alignment at desk scale"};
  app.require_subcommand(1);
  Settings s;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", s.config_path, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("-s,--set", s.overrides, "override a configuration key (key=value)");
    sub->add_flag("-q,--quiet", s.quiet, "suppress progress output");
  };

  std::string out, data, base, policy, manifest, task = "all", split = "seen", attn_scale, bundle;
  bool pick_only = false, place_only = false, no_rope = false, full = false, grounding = false, no_jitter = false;
  std::size_t seen = 10, unseen = 5, runs = 15, top = 0, seeds = 3;
  std::uint64_t first_seed = 1'000'000, seed = 1;
  unsigned threads = 1;

  auto* gen = app.add_subcommand("gen-data", "collect expert demonstrations into a dataset directory");
  common(gen);
  gen->add_option("-o,--out", out, "dataset directory")->required();
  gen->add_option("--pick-episodes", s.gen.pick_episodes);
  gen->add_option("--place-episodes", s.gen.place_episodes);
  gen->add_option("--first-seed", s.gen.first_seed);
  gen->add_flag("--multi-label", s.gen.multi_label, "place episodes labelled with every valid candidate");

  auto* tr = app.add_subcommand("train", "train a policy by imitation");
  common(tr);
  tr->add_option("-d,--data", data, "dataset directory")->required();
  tr->add_option("-o,--out", out, "snapshot path")->required();
  tr->add_flag("--pick-only", pick_only);
  tr->add_flag("--place-only", place_only);
  tr->add_flag("--no-rope", no_rope);
  tr->add_option("--attn-scale", attn_scale, "scaled or unscaled");

  auto* ad = app.add_subcommand("adapt", "adapt a trained policy with multi-labelled place data");
  common(ad);
  ad->add_option("-b,--base", base, "base snapshot")->required()->check(CLI::ExistingFile);
  ad->add_option("-d,--data", data, "multi-label dataset directory")->required();
  ad->add_option("-o,--out", out, "snapshot path")->required();
  ad->add_flag("--full-finetune", full, "update every parameter instead of the residual decoder only");

  auto* ev = app.add_subcommand("eval", "closed-loop evaluation, one CSV row per case");
  common(ev);
  ev->add_option("-p,--policy", policy, "policy snapshot");
  ev->add_flag("--grounding", grounding, "evaluate the grounding baseline instead of a policy");
  ev->add_option("-m,--manifest", manifest, "case manifest (kind,seed,split per line)")->check(CLI::ExistingFile);
  ev->add_option("--task", task, "pick, place, pick-n-place or all (without a manifest)");
  ev->add_option("--seen", seen, "seen cases per task");
  ev->add_option("--unseen", unseen, "unseen cases per task");
  ev->add_option("--first-seed", first_seed);
  ev->add_option("-r,--runs", runs, "runs per case")->check(CLI::PositiveNumber);
  ev->add_option("-o,--out", out, "CSV path (stdout when omitted)");
  ev->add_option("-j,--threads", threads)->check(CLI::PositiveNumber);
  ev->add_flag("--no-jitter", no_jitter, "disable place candidate jitter");

  auto* fu = app.add_subcommand("fuse", "render a simulated scene and write its fused bundle");
  common(fu);
  fu->add_option("--task", task, "pick or place")->required();
  fu->add_option("--seed", seed);
  fu->add_option("--split", split);
  fu->add_option("-o,--out", out, "bundle path")->required();

  auto* rk = app.add_subcommand("rank", "score the candidates of a bundle with a policy");
  rk->add_option("bundle", bundle)->required()->check(CLI::ExistingFile);
  rk->add_option("policy", policy)->required()->check(CLI::ExistingFile);
  rk->add_option("--top", top, "print only the first N");

  auto* ab = app.add_subcommand("ablate", "run the desk-scale ablation suite");
  common(ab);
  ab->add_option("--seeds", seeds)->check(CLI::PositiveNumber);
  ab->add_option("-r,--runs", runs)->check(CLI::PositiveNumber);
  ab->add_option("-o,--out", out, "also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(s, out);
    if (*tr) return cmd_train(s, data, out, pick_only, place_only, no_rope, attn_scale);
    if (*ad) return cmd_adapt(s, base, data, out, full);
    if (*ev) return cmd_eval(s, policy, grounding, manifest, task, seen, unseen, first_seed, runs, out, threads,
                             !no_jitter);
    if (*fu) return cmd_fuse(s, task, seed, split, out);
    if (*rk) return cmd_rank(bundle, policy, top);
    if (*ab) return cmd_ablate(s, seeds, runs, out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
