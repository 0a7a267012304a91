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

#include "a2/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "a2/errors.hpp"

namespace a2::train {

using align::FreezeMask;
using align::PolicyParams;
using interchange::TensorRecord;

DatasetBuild build_score_dataset(std::span<const Demo> demos) {
  DatasetBuild out;
  for (const auto& demo : demos) {
    const auto& b = demo.observation;
    std::optional<std::size_t> hit;
    for (std::size_t k = 0; k < b.l && !hit; ++k) {
      const float* row = b.candidates.data() + k * interchange::kActionDim;
      bool same = true;
      for (int a = 0; a < 3; ++a) same = same && std::abs(double(row[a]) - demo.action[a]) <= 1e-6;
      if (same) hit = k;
    }
    if (!hit) {
      out.rejected.push_back(demo.id);
      continue;
    }
    ScoreSample s;
    s.id = demo.id;
    s.bundle = b;
    s.bundle.labels = std::vector<std::uint8_t>(b.l, 0);
    (*s.bundle.labels)[*hit] = 1;
    s.task = b.candidate_kind;
    if (auto it = b.meta.find("split"); it != b.meta.end()) s.split = it->second;
    out.samples.push_back(std::move(s));
  }
  return out;
}

double ce_loss(std::span<const double> omega, std::size_t label) {
  if (label >= omega.size()) throw ValidationError("labels", "label index out of range");
  return -std::log(std::max(omega[label], 1e-12));
}

double bce_loss(std::span<const double> q, std::span<const std::uint8_t> labels) {
  if (q.size() != labels.size() || q.empty()) throw ValidationError("labels", "length mismatch");
  double sum = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    sum -= std::log(std::max(labels[k] ? q[k] : 1.0 - q[k], 1e-12));
  }
  return sum / static_cast<double>(q.size());
}

LossGrad loss_and_grad(const align::ActionDistribution& dist, std::span<const std::uint8_t> labels, LossKind kind,
                       double alpha, bool base_gradient) {
  const std::size_t l = dist.omega.size();
  if (labels.size() != l) throw ValidationError("labels", "length does not match the candidate count");
  LossGrad g;
  if (kind == LossKind::ce) {
    const auto it = std::find(labels.begin(), labels.end(), std::uint8_t{1});
    if (it == labels.end()) throw ValidationError("labels", "no positive label");
    const auto label = static_cast<std::size_t>(it - labels.begin());
    g.loss = ce_loss(dist.omega, label);
    g.d_logits.assign(dist.omega.begin(), dist.omega.end());
    g.d_logits[label] -= 1.0;
    return g;
  }
  if (!dist.adapted) throw ValidationError("distribution", "bce needs the blended distribution");
  g.loss = bce_loss(dist.omega_prime, labels);
  std::vector<double> dq(l, 0.0);
  for (std::size_t k = 0; k < l; ++k) {
    const double q = dist.omega_prime[k];
    if (q <= 1e-12 || q >= 1.0 - 1e-12) continue;
    dq[k] = (q - labels[k]) / (q * (1.0 - q)) / static_cast<double>(l);
  }
  g.d_res_logits.resize(l);
  for (std::size_t k = 0; k < l; ++k) {
    const double r = dist.omega_residual[k];
    g.d_res_logits[k] = dq[k] * (1.0 - alpha) * r * (1.0 - r);
  }
  if (base_gradient) {
    double inner = 0.0;
    for (std::size_t k = 0; k < l; ++k) inner += dq[k] * dist.omega[k];
    g.d_logits.resize(l);
    for (std::size_t k = 0; k < l; ++k) g.d_logits[k] = alpha * dist.omega[k] * (dq[k] - inner);
  }
  return g;
}

align::PolicyInput policy_input(const SceneBundle& b) {
  align::PolicyInput in;
  in.actions = b.candidates;
  in.points = b.points;
  in.features = b.features;
  in.similarities = b.similarities;
  in.l = b.l;
  in.n = b.n;
  return in;
}

void adam_step(PolicyParams<float>& params, std::span<const float> grads, OptimState& st, const AdamOptions& o,
               const FreezeMask& mask) {
  const std::size_t total = params.values.size();
  if (grads.size() != total) throw ValidationError("grads", "size does not match the parameters");
  if (st.m.size() != total) {
    st.m.assign(total, 0.0f);
    st.v.assign(total, 0.0f);
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(st.step));
  const auto b1 = static_cast<float>(o.beta1), b2 = static_cast<float>(o.beta2);
  for (std::size_t s = 0; s < params.layout.slots.size(); ++s) {
    if (!mask.is_trainable(s)) continue;
    const auto& slot = params.layout.slots[s];
    for (std::size_t i = slot.offset; i < slot.offset + slot.size(); ++i) {
      const float g = grads[i];
      st.m[i] = b1 * st.m[i] + (1.0f - b1) * g;
      st.v[i] = b2 * st.v[i] + (1.0f - b2) * g * g;
      const double mh = st.m[i] / c1;
      const double vh = st.v[i] / c2;
      params.values[i] -= static_cast<float>(o.lr * mh / (std::sqrt(vh) + o.eps));
    }
  }
}

std::string_view filter_name(TaskFilter f) {
  switch (f) {
    case TaskFilter::shared: return "shared";
    case TaskFilter::pick_only: return "pick-only";
    case TaskFilter::place_only: return "place-only";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Snapshots

std::vector<TensorRecord> snapshot_to_records(const PolicySnapshot& snap) {
  std::vector<TensorRecord> out;
  out.push_back(TensorRecord::bytes("config", snap.params.config.serialize()));
  for (const auto& slot : snap.params.layout.slots) {
    std::vector<float> v(snap.params.values.begin() + static_cast<std::ptrdiff_t>(slot.offset),
                         snap.params.values.begin() + static_cast<std::ptrdiff_t>(slot.offset + slot.size()));
    out.push_back(TensorRecord::f32("param/" + slot.name,
                                    {static_cast<std::uint32_t>(slot.rows), static_cast<std::uint32_t>(slot.cols)},
                                    std::move(v)));
  }
  std::ostringstream meta;
  meta << "epochs=" << snap.meta.epochs << "\nseed=" << snap.meta.seed << "\nadapted=" << (snap.meta.adapted ? 1 : 0)
       << "\nfilter=" << snap.meta.filter << "\nsamples=" << snap.meta.samples << "\n";
  out.push_back(TensorRecord::bytes("meta", meta.str()));
  out.push_back(TensorRecord::f64("loss_curve", {static_cast<std::uint32_t>(snap.meta.loss_curve.size())},
                                  snap.meta.loss_curve));
  return out;
}

PolicySnapshot snapshot_from_records(const std::vector<TensorRecord>& records) {
  const TensorRecord* config = nullptr;
  const TensorRecord* meta = nullptr;
  const TensorRecord* curve = nullptr;
  std::map<std::string, const TensorRecord*> params;
  for (const auto& r : records) {
    if (r.name == "config") config = &r;
    else if (r.name == "meta") meta = &r;
    else if (r.name == "loss_curve") curve = &r;
    else if (r.name.starts_with("param/")) {
      if (!params.emplace(r.name.substr(6), &r).second) throw ValidationError(r.name, "duplicated parameter tensor");
    }
  }
  if (config == nullptr) throw ValidationError("config", "snapshot has no config record");
  PolicySnapshot snap;
  snap.params = PolicyParams<float>(align::AlignConfig::parse(config->text()));
  for (const auto& slot : snap.params.layout.slots) {
    auto it = params.find(slot.name);
    if (it == params.end()) throw ValidationError("param/" + slot.name, "missing parameter tensor");
    const auto& r = *it->second;
    if (r.dtype() != interchange::DType::f32 || r.shape.size() != 2 || r.shape[0] != slot.rows ||
        r.shape[1] != slot.cols)
      throw ValidationError("param/" + slot.name, "shape does not match the layout");
    std::copy(r.as<float>().begin(), r.as<float>().end(),
              snap.params.values.begin() + static_cast<std::ptrdiff_t>(slot.offset));
    params.erase(it);
  }
  if (!params.empty()) throw ValidationError("param/" + params.begin()->first, "not part of the layout");
  if (meta != nullptr) {
    std::istringstream is(meta->text());
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "epochs") snap.meta.epochs = std::stoull(value);
      else if (key == "seed") snap.meta.seed = std::stoull(value);
      else if (key == "adapted") snap.meta.adapted = value == "1";
      else if (key == "filter") snap.meta.filter = value;
      else if (key == "samples") snap.meta.samples = std::stoull(value);
    }
  }
  if (curve != nullptr && curve->dtype() == interchange::DType::f64) snap.meta.loss_curve = curve->as<double>();
  return snap;
}

void write_snapshot(const PolicySnapshot& snapshot, const std::filesystem::path& path) {
  interchange::write_records(path, snapshot_to_records(snapshot));
}

PolicySnapshot read_snapshot(const std::filesystem::path& path) {
  return snapshot_from_records(interchange::read_records(path));
}

// ---------------------------------------------------------------------------
// Training

std::vector<const ScoreSample*> select_samples(std::span<const ScoreSample> data, TaskFilter filter) {
  std::vector<const ScoreSample*> out;
  for (const auto& s : data) {
    if (filter == TaskFilter::pick_only && s.task != Task::pick) continue;
    if (filter == TaskFilter::place_only && s.task != Task::place) continue;
    out.push_back(&s);
  }
  return out;
}

namespace {

void check_sample(const align::AlignConfig& cfg, const ScoreSample& s) {
  if (s.bundle.dim != cfg.feature_dim)
    throw ValidationError("features", "sample " + s.id + " has feature dimension " + std::to_string(s.bundle.dim));
  if (!s.bundle.labels) throw ValidationError("labels", "sample " + s.id + " is unlabelled");
}

template <class T>
std::vector<T> to(const std::vector<double>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

double batch_gradient(const PolicyParams<float>& params, std::span<const ScoreSample* const> batch, LossKind kind,
                      const FreezeMask& mask, std::span<float> grads) {
  std::fill(grads.begin(), grads.end(), 0.0f);
  align::ForwardCache<float> cache;
  double total = 0.0;
  const bool adapted = kind == LossKind::bce;
  for (const auto* s : batch) {
    check_sample(params.config, *s);
    const auto dist = align::forward(params, policy_input(s->bundle), adapted, &cache);
    const auto g = loss_and_grad(dist, *s->bundle.labels, kind, params.config.alpha);
    total += g.loss;
    const auto dl = to<float>(g.d_logits), dr = to<float>(g.d_res_logits);
    align::backward<float>(params, cache, dl, dr, grads, mask);
  }
  const float inv = 1.0f / static_cast<float>(std::max<std::size_t>(batch.size(), 1));
  for (auto& g : grads) g *= inv;
  return total / static_cast<double>(std::max<std::size_t>(batch.size(), 1));
}

PolicySnapshot train_policy(std::span<const ScoreSample> data, const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ValidationError("epochs", "must be at least 1");
  if (!(cfg.lr > 0.0)) throw ValidationError("lr", "must be positive");
  if (cfg.batch < 1) throw ValidationError("batch", "must be at least 1");
  const auto selected = select_samples(data, cfg.filter);
  if (selected.empty()) throw ValidationError("dataset", "no samples for filter " + std::string(filter_name(cfg.filter)));
  for (const auto* s : selected) check_sample(cfg.model, *s);

  PolicySnapshot snap;
  snap.params = PolicyParams<float>(cfg.model);
  snap.params.initialize(cfg.seed);
  snap.meta.seed = cfg.seed;
  snap.meta.epochs = cfg.epochs;
  snap.meta.filter = std::string(filter_name(cfg.filter));
  snap.meta.samples = selected.size();

  std::mt19937_64 rng(cfg.seed ^ 0x7a11u);
  std::vector<std::size_t> order(selected.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  OptimState state;
  const AdamOptions adam{cfg.lr};
  const auto mask = FreezeMask::all();
  std::vector<float> grads(snap.params.values.size());
  std::vector<const ScoreSample*> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch); ++i) batch.push_back(selected[order[i]]);
      total += batch_gradient(snap.params, batch, LossKind::ce, mask, grads) * static_cast<double>(batch.size());
      adam_step(snap.params, grads, state, adam, mask);
    }
    const double mean = total / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw NumericError("train", "loss diverged at epoch " + std::to_string(epoch));
    snap.meta.loss_curve.push_back(mean);
    if (cfg.progress) cfg.progress(epoch, mean);
  }
  return snap;
}

PolicySnapshot adapt_policy(const PolicySnapshot& base, std::span<const ScoreSample> samples,
                            const TrainConfig& cfg) {
  if (cfg.adapt_epochs < 1) throw ValidationError("adapt_epochs", "must be at least 1");
  if (samples.empty()) throw ValidationError("dataset", "adaptation needs at least one sample");
  std::vector<const ScoreSample*> selected;
  for (const auto& s : samples) {
    check_sample(base.params.config, s);
    if (std::find(s.bundle.labels->begin(), s.bundle.labels->end(), 1) == s.bundle.labels->end())
      throw ValidationError("labels", "sample " + s.id + " has no positive label");
    selected.push_back(&s);
    if (selected.size() == cfg.adapt_samples) break;
  }

  PolicySnapshot snap = base;
  snap.meta.adapted = true;
  snap.meta.loss_curve.clear();
  snap.meta.epochs = cfg.adapt_epochs;
  snap.meta.samples = selected.size();
  const FreezeMask mask = cfg.full_finetune ? FreezeMask::all() : FreezeMask::residual_only();
  std::mt19937_64 rng(cfg.seed ^ 0xada9u);
  std::vector<std::size_t> order(selected.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  OptimState state;
  const AdamOptions adam{cfg.lr};
  std::vector<float> grads(snap.params.values.size());

  // With the encoders frozen the fused features never change, so each
  // sample's forward pass is computed once and only the decoders rerun.
  std::vector<align::ForwardCache<float>> caches;
  if (!cfg.full_finetune) {
    caches.resize(selected.size());
    for (std::size_t i = 0; i < selected.size(); ++i)
      align::forward(snap.params, policy_input(selected[i]->bundle), true, &caches[i]);
  }

  for (std::size_t epoch = 0; epoch < cfg.adapt_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      if (cfg.full_finetune) {
        std::vector<const ScoreSample*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(selected[order[i]]);
        total += batch_gradient(snap.params, batch, LossKind::bce, mask, grads) * static_cast<double>(batch.size());
      } else {
        std::fill(grads.begin(), grads.end(), 0.0f);
        for (std::size_t i = start; i < end; ++i) {
          auto& cache = caches[order[i]];
          const auto dist = align::readout(snap.params, cache, true);
          const auto g = loss_and_grad(dist, *selected[order[i]]->bundle.labels, LossKind::bce,
                                       snap.params.config.alpha, false);
          total += g.loss;
          const auto dr = to<float>(g.d_res_logits);
          align::backward<float>(snap.params, cache, {}, dr, grads, mask);
        }
        const float inv = 1.0f / static_cast<float>(end - start);
        for (auto& g : grads) g *= inv;
      }
      adam_step(snap.params, grads, state, adam, mask);
    }
    const double mean = total / static_cast<double>(order.size());
    if (!std::isfinite(mean)) throw NumericError("adapt", "loss diverged at epoch " + std::to_string(epoch));
    snap.meta.loss_curve.push_back(mean);
    if (cfg.progress) cfg.progress(epoch, mean);
  }
  return snap;
}

// ---------------------------------------------------------------------------
// Dataset directories

void write_dataset(const std::filesystem::path& dir, std::span<const ScoreSample> samples) {
  std::filesystem::create_directories(dir / "samples");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.csv").string());
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.id).second) throw ValidationError("id", "duplicate sample id " + s.id);
    const std::string rel = "samples/" + s.id + ".apa2";
    interchange::write_bundle(s.bundle, dir / rel);
    manifest << rel << ',' << interchange::kind_name(s.task) << ',' << s.split << '\n';
  }
}

std::vector<ScoreSample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot read " + (dir / "manifest.csv").string());
  std::vector<ScoreSample> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw ValidationError("manifest", "malformed line " + line);
    ScoreSample s;
    const std::string rel = line.substr(0, c1);
    s.id = std::filesystem::path(rel).stem().string();
    s.task = interchange::parse_kind(line.substr(c1 + 1, c2 - c1 - 1));
    s.split = line.substr(c2 + 1);
    s.bundle = interchange::read_bundle(dir / rel);
    if (!s.bundle.labels) throw ValidationError("labels", "sample " + s.id + " is unlabelled");
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport gradient_check(const align::AlignConfig& config, std::uint64_t seed, std::size_t l, std::size_t n,
                               LossKind kind, double h) {
  PolicyParams<double> p(config);
  p.initialize(seed);
  std::mt19937_64 rng(seed * 7919 + 1);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_real_distribution<float> pos(-0.2f, 0.2f);
  std::vector<float> actions(l * interchange::kActionDim), points(n * 3), features(n * config.feature_dim),
      sims(n);
  for (auto& x : actions) x = 0.3f * normal(rng);
  for (auto& x : points) x = pos(rng);
  for (auto& x : features) x = normal(rng);
  for (auto& x : sims) x = std::uniform_real_distribution<float>(-1.0f, 1.0f)(rng);
  align::PolicyInput in{actions, points, features, sims, l, n};
  std::vector<std::uint8_t> labels(l, 0);
  labels[std::uniform_int_distribution<std::size_t>(0, l - 1)(rng)] = 1;
  if (kind == LossKind::bce && l > 2) labels[(std::find(labels.begin(), labels.end(), 1) - labels.begin() + 2) % l] = 1;
  const bool adapted = kind == LossKind::bce;
  // Residual weights start random so the blended path has a non-trivial gradient.
  if (adapted)
    for (std::size_t s = align::kResB0; s <= align::kResB2; s += 2)
      for (auto& b : p.tensor(s)) b = 0.1 * normal(rng);
  for (std::size_t s = align::kMlp1B0; s < align::kResB0; s += 2)
    if (p.layout.slots[s].rows == 1)
      for (auto& b : p.tensor(s)) b = 0.1 * normal(rng);

  auto loss = [&] {
    const auto d = align::forward(p, in, adapted);
    return kind == LossKind::ce ? ce_loss(d.omega, static_cast<std::size_t>(std::find(labels.begin(), labels.end(), 1) - labels.begin()))
                                : bce_loss(d.omega_prime, labels);
  };
  align::ForwardCache<double> cache;
  const auto dist = align::forward(p, in, adapted, &cache);
  const auto g = loss_and_grad(dist, labels, kind, config.alpha);
  std::vector<double> grads(p.values.size(), 0.0);
  align::backward<double>(p, cache, g.d_logits, g.d_res_logits, grads, FreezeMask::all());

  GradCheckReport report;
  report.per_tensor.assign(p.layout.slots.size(), 0.0);
  for (std::size_t s = 0; s < p.layout.slots.size(); ++s) {
    if (!adapted && align::is_residual_slot(s)) continue;
    const auto& slot = p.layout.slots[s];
    for (std::size_t i = slot.offset; i < slot.offset + slot.size(); ++i) {
      const double v = p.values[i];
      p.values[i] = v + h;
      const double lp = loss();
      p.values[i] = v - h;
      const double lm = loss();
      p.values[i] = v;
      const double numeric = (lp - lm) / (2.0 * h);
      const double err = std::abs(grads[i] - numeric) / std::max({std::abs(grads[i]), std::abs(numeric), 1e-6});
      report.per_tensor[s] = std::max(report.per_tensor[s], err);
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_tensor = slot.name;
      }
    }
  }
  return report;
}

}  // namespace a2::train
