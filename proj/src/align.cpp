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

#include "a2/align.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "a2/errors.hpp"
#include "a2/linalg.hpp"

namespace a2::align {

namespace {
constexpr std::size_t kActionDimForLayout = 10;
}

// ---------------------------------------------------------------------------
// Config and layout

AlignConfig AlignConfig::desk(std::size_t feature_dim) {
  AlignConfig c;
  c.width = 64;
  c.heads = 8;
  c.feature_dim = feature_dim;
  return c;
}

void AlignConfig::validate() const {
  if (width == 0 || heads == 0) throw ValidationError("config", "width and heads must be positive");
  if (width % (2 * heads) != 0) throw ValidationError("config.width", "width must be divisible by 2 * heads");
  if (rope_width() < 6) throw ValidationError("config.width", "width must be at least 6");
  if (layers != 1) throw ValidationError("config.layers", "exactly one attention layer is supported");
  if (decoder_depth != 3) throw ValidationError("config.decoder_depth", "decoders have three layers");
  if (feature_dim == 0) throw ValidationError("config.feature_dim", "must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("config.alpha", "must lie in [0, 1]");
  if (!(rope_base > 1.0) || !(rope_scale > 0.0)) throw ValidationError("config.rope", "invalid RoPE constants");
}

std::string AlignConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "width=" << width << "\nheads=" << heads << "\nlayers=" << layers << "\nfeature_dim=" << feature_dim
     << "\npe_bands=" << pe_bands << "\nrope_base=" << rope_base << "\nrope_scale=" << rope_scale
     << "\nalpha=" << alpha << "\nattn_scale=" << (attn_scale == AttnScale::scaled ? "scaled" : "unscaled")
     << "\nuse_rope=" << (use_rope ? 1 : 0) << "\nmax_candidates=" << max_candidates
     << "\ndecoder_depth=" << decoder_depth << "\n";
  return os.str();
}

AlignConfig AlignConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config", "malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  AlignConfig c;
  auto num = [&](const char* key, auto& field) {
    auto it = kv.find(key);
    if (it == kv.end()) throw ValidationError(std::string("config.") + key, "missing");
    std::istringstream v(it->second);
    v >> field;
    if (!v) throw ValidationError(std::string("config.") + key, "not a number");
  };
  num("width", c.width);
  num("heads", c.heads);
  num("layers", c.layers);
  num("feature_dim", c.feature_dim);
  num("pe_bands", c.pe_bands);
  num("rope_base", c.rope_base);
  num("rope_scale", c.rope_scale);
  num("alpha", c.alpha);
  num("max_candidates", c.max_candidates);
  num("decoder_depth", c.decoder_depth);
  int rope = 1;
  num("use_rope", rope);
  c.use_rope = rope != 0;
  const auto scale = kv.count("attn_scale") ? kv["attn_scale"] : std::string("scaled");
  if (scale == "scaled") c.attn_scale = AttnScale::scaled;
  else if (scale == "unscaled") c.attn_scale = AttnScale::unscaled;
  else throw ValidationError("config.attn_scale", "expected scaled or unscaled");
  c.validate();
  return c;
}

ParamLayout ParamLayout::build(const AlignConfig& c) {
  c.validate();
  const std::size_t w = c.width;
  ParamLayout layout;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    layout.slots.push_back({name + ".w", out, in, 0});
    layout.slots.push_back({name + ".b", 1, out, 0});
  };
  linear("mlp1.0", kActionDimForLayout, w);
  linear("mlp1.1", w, w);
  linear("mlp2.0", c.pe_dim(), w);
  linear("mlp2.1", w, w);
  linear("adapter", c.feature_dim, w);
  linear("attn.q", w, w);
  linear("attn.k", w, w);
  linear("attn.v", w, w);
  linear("attn.o", w, w);
  linear("decoder.0", w, w);
  linear("decoder.1", w, w);
  linear("decoder.2", w, 1);
  linear("residual.0", w, w);
  linear("residual.1", w, w);
  linear("residual.2", w, 1);
  std::size_t offset = 0;
  for (auto& s : layout.slots) {
    s.offset = offset;
    offset += s.size();
  }
  layout.total = offset;
  return layout;
}

std::size_t ParamLayout::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (slots[i].name == name) return i;
  throw ValidationError(name, "unknown parameter tensor");
}

bool is_residual_slot(std::size_t slot) { return slot >= kResW0 && slot <= kResB2; }

FreezeMask FreezeMask::residual_only() {
  FreezeMask m{std::vector<bool>(kSlotCount, false)};
  for (std::size_t s = kResW0; s <= kResB2; ++s) m.trainable[s] = true;
  return m;
}

template <class T>
PolicyParams<T>::PolicyParams(const AlignConfig& cfg) : config(cfg), layout(ParamLayout::build(cfg)) {
  values.assign(layout.total, T(0));
}

template <class T>
void PolicyParams<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& s : layout.slots) {
    T* dst = values.data() + s.offset;
    if (s.rows == 1 && s.name.ends_with(".b")) {
      std::fill(dst, dst + s.size(), T(0));
      continue;
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(s.cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < s.size(); ++i) dst[i] = static_cast<T>(dist(rng));
  }
}

// ---------------------------------------------------------------------------
// Elementwise pieces

namespace {

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <class T>
void check_finite(std::span<const T> v, const char* stage) {
  for (T x : v)
    if (!std::isfinite(x)) throw NumericError(stage, "non-finite value");
}

// Y[m x out] = X[m x in] W^T + b
template <class T>
void linear_forward(const std::vector<T>& x, std::size_t m, std::size_t in, std::size_t out, std::span<const T> w,
                    std::span<const T> b, std::vector<T>& y) {
  y.resize(m * out);
  linalg::gemm_nt(m, out, in, x.data(), w.data(), y.data(), false);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t o = 0; o < out; ++o) y[i * out + o] += b[o];
}

// Accumulates dW, db; writes (or skips) dX.
template <class T>
void linear_backward(const std::vector<T>& x, std::size_t m, std::size_t in, std::size_t out, std::span<const T> w,
                     const std::vector<T>& dy, T* dw, T* db, std::vector<T>* dx) {
  if (dw != nullptr) linalg::gemm_tn(out, in, m, dy.data(), x.data(), dw, true);
  if (db != nullptr)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t o = 0; o < out; ++o) db[o] += dy[i * out + o];
  if (dx != nullptr) {
    dx->resize(m * in);
    linalg::gemm_nn(m, in, out, dy.data(), w.data(), dx->data(), false);
  }
}

template <class T>
void gelu_forward(const std::vector<T>& pre, std::vector<T>& act) {
  act.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) act[i] = gelu(pre[i]);
}

template <class T>
void gelu_backward(const std::vector<T>& pre, std::vector<T>& d) {
  for (std::size_t i = 0; i < pre.size(); ++i) d[i] *= gelu_grad(pre[i]);
}

void rope_tables(std::span<const float> points, std::size_t n, std::size_t rope_width, double base, double scale,
                 auto& cos_out, auto& sin_out) {
  const std::size_t group = rope_width / 3;
  const std::size_t pairs = group / 2;
  cos_out.resize(n * 3 * pairs);
  sin_out.resize(n * 3 * pairs);
  std::vector<double> freq(pairs);
  for (std::size_t t = 0; t < pairs; ++t)
    freq[t] = scale * std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(group));
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t t = 0; t < pairs; ++t) {
        const double ang = static_cast<double>(points[j * 3 + a]) * freq[t];
        cos_out[(j * 3 + a) * pairs + t] = std::cos(ang);
        sin_out[(j * 3 + a) * pairs + t] = std::sin(ang);
      }
}

// Rotates rows of x (n x width) in place; sign = -1 applies the inverse.
template <class T>
void rope_apply_rows(std::vector<T>& x, std::size_t n, std::size_t width, std::size_t rope_width,
                     const std::vector<T>& cs, const std::vector<T>& sn, T sign) {
  const std::size_t group = rope_width / 3;
  const std::size_t pairs = group / 2;
  for (std::size_t j = 0; j < n; ++j) {
    T* row = x.data() + j * width;
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t t = 0; t < pairs; ++t) {
        const T c = cs[(j * 3 + a) * pairs + t];
        const T s = sign * sn[(j * 3 + a) * pairs + t];
        T& x0 = row[a * group + 2 * t];
        T& x1 = row[a * group + 2 * t + 1];
        const T y0 = x0 * c - x1 * s;
        const T y1 = x0 * s + x1 * c;
        x0 = y0;
        x1 = y1;
      }
  }
}

template <class T>
void to_heads(const std::vector<T>& x, std::size_t rows, std::size_t heads, std::size_t dh, std::vector<T>& out) {
  out.resize(rows * heads * dh);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(x.data() + i * heads * dh + h * dh, dh, out.data() + (h * rows + i) * dh);
}

template <class T>
void from_heads(const std::vector<T>& x, std::size_t rows, std::size_t heads, std::size_t dh, std::vector<T>& out) {
  out.resize(rows * heads * dh);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(x.data() + (h * rows + i) * dh, dh, out.data() + i * heads * dh + h * dh);
}

template <class T>
T attention_scale(const AlignConfig& c) {
  return c.attn_scale == AttnScale::scaled ? T(1.0 / std::sqrt(static_cast<double>(c.head_dim()))) : T(1);
}

// Projections, per-head softmax attention and output projection.
template <class T>
void attention_forward(const PolicyParams<T>& p, const std::vector<T>& q0, const std::vector<T>& k0,
                       const std::vector<T>& v0, std::size_t l, std::size_t n, ForwardCache<T>& c) {
  const auto& cfg = p.config;
  const std::size_t w = cfg.width, heads = cfg.heads, dh = cfg.head_dim();
  std::vector<T> qp, kp, vp;
  linear_forward(q0, l, w, w, p.tensor(kQW), p.tensor(kQB), qp);
  linear_forward(k0, n, w, w, p.tensor(kKW), p.tensor(kKB), kp);
  linear_forward(v0, n, w, w, p.tensor(kVW), p.tensor(kVB), vp);
  to_heads(qp, l, heads, dh, c.qh);
  to_heads(kp, n, heads, dh, c.kh);
  to_heads(vp, n, heads, dh, c.vh);
  const T scale = attention_scale<T>(cfg);
  c.attn.resize(heads * l * n);
  std::vector<T> out_h(heads * l * dh);
  for (std::size_t h = 0; h < heads; ++h) {
    T* a = c.attn.data() + h * l * n;
    linalg::gemm_nt(l, n, dh, c.qh.data() + h * l * dh, c.kh.data() + h * n * dh, a, false);
    for (std::size_t i = 0; i < l; ++i) {
      T* row = a + i * n;
      T mx = row[0] * scale;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] *= scale;
        mx = std::max(mx, row[j]);
      }
      T sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
    }
    linalg::gemm_nn(l, dh, n, a, c.vh.data() + h * n * dh, out_h.data() + h * l * dh, false);
  }
  from_heads(out_h, l, heads, dh, c.heads_out);
  linear_forward(c.heads_out, l, w, w, p.tensor(kOW), p.tensor(kOB), c.fusion);
}

template <class T>
void decoder_forward(const PolicyParams<T>& p, std::size_t first, const std::vector<T>& fusion, std::size_t l,
                     std::vector<T>& pre0, std::vector<T>& act0, std::vector<T>& pre1, std::vector<T>& act1,
                     std::vector<T>& out) {
  const std::size_t w = p.config.width;
  linear_forward(fusion, l, w, w, p.tensor(first), p.tensor(first + 1), pre0);
  gelu_forward(pre0, act0);
  linear_forward(act0, l, w, w, p.tensor(first + 2), p.tensor(first + 3), pre1);
  gelu_forward(pre1, act1);
  linear_forward(act1, l, w, 1, p.tensor(first + 4), p.tensor(first + 5), out);
}

template <class T>
T* grad_ptr(const PolicyParams<T>& p, std::span<T> grads, const FreezeMask& mask, std::size_t slot) {
  return mask.is_trainable(slot) ? grads.data() + p.layout.slots[slot].offset : nullptr;
}

// Backprop through one decoder; adds into d_fusion when requested.
template <class T>
void decoder_backward(const PolicyParams<T>& p, std::size_t first, const std::vector<T>& fusion,
                      const std::vector<T>& pre0, const std::vector<T>& act0, const std::vector<T>& pre1,
                      const std::vector<T>& act1, std::span<const T> d_out, std::size_t l, std::span<T> grads,
                      const FreezeMask& mask, std::vector<T>* d_fusion) {
  const std::size_t w = p.config.width;
  std::vector<T> d2(d_out.begin(), d_out.end());
  std::vector<T> d_act1, d_act0, d_in;
  linear_backward(act1, l, w, 1, p.tensor(first + 4), d2, grad_ptr(p, grads, mask, first + 4),
                  grad_ptr(p, grads, mask, first + 5), &d_act1);
  gelu_backward(pre1, d_act1);
  linear_backward(act0, l, w, w, p.tensor(first + 2), d_act1, grad_ptr(p, grads, mask, first + 2),
                  grad_ptr(p, grads, mask, first + 3), &d_act0);
  gelu_backward(pre0, d_act0);
  linear_backward(fusion, l, w, w, p.tensor(first), d_act0, grad_ptr(p, grads, mask, first),
                  grad_ptr(p, grads, mask, first + 1), d_fusion != nullptr ? &d_in : nullptr);
  if (d_fusion != nullptr)
    for (std::size_t i = 0; i < d_in.size(); ++i) (*d_fusion)[i] += d_in[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// Public operations

std::vector<double> nerf_pe(std::span<const double, 3> p, std::size_t bands) {
  std::vector<double> out;
  out.reserve(3 + 6 * bands);
  out.insert(out.end(), p.begin(), p.end());
  for (std::size_t k = 0; k < bands; ++k) {
    const double f = std::ldexp(std::numbers::pi, static_cast<int>(k));
    for (int a = 0; a < 3; ++a) out.push_back(std::sin(f * p[a]));
    for (int a = 0; a < 3; ++a) out.push_back(std::cos(f * p[a]));
  }
  return out;
}

template <class T>
void rope_rotate(std::span<T> x, std::span<const double, 3> p, double base, double scale) {
  const std::size_t rw = x.size() - x.size() % 6;
  const std::size_t group = rw / 3, pairs = group / 2;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t t = 0; t < pairs; ++t) {
      const double ang = p[a] * scale * std::pow(base, -2.0 * static_cast<double>(t) / static_cast<double>(group));
      const T c = static_cast<T>(std::cos(ang)), s = static_cast<T>(std::sin(ang));
      T& x0 = x[a * group + 2 * t];
      T& x1 = x[a * group + 2 * t + 1];
      const T y0 = x0 * c - x1 * s, y1 = x0 * s + x1 * c;
      x0 = y0;
      x1 = y1;
    }
}

template <class T>
void rope_rotate_inverse(std::span<T> x, std::span<const double, 3> p, double base, double scale) {
  const double neg[3] = {-p[0], -p[1], -p[2]};
  rope_rotate<T>(x, std::span<const double, 3>(neg, 3), base, scale);
}

template <class T>
std::vector<T> cross_attention(const PolicyParams<T>& params, std::span<const T> queries, std::span<const T> keys,
                               std::span<const T> values, std::size_t l, std::size_t n, std::vector<T>* attn) {
  const std::size_t w = params.config.width;
  if (queries.size() != l * w || keys.size() != n * w || values.size() != n * w || n == 0)
    throw ValidationError("cross_attention", "inconsistent shapes");
  ForwardCache<T> c;
  attention_forward(params, std::vector<T>(queries.begin(), queries.end()), std::vector<T>(keys.begin(), keys.end()),
                    std::vector<T>(values.begin(), values.end()), l, n, c);
  if (attn != nullptr) *attn = c.attn;
  return c.fusion;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (out[i] = std::exp(logits[i] - mx));
  for (auto& o : out) o /= sum;
  return out;
}

template <class T>
ActionDistribution forward(const PolicyParams<T>& p, const PolicyInput& in, bool adapted, ForwardCache<T>* cache) {
  const auto& cfg = p.config;
  const std::size_t w = cfg.width, dim = cfg.feature_dim, l = in.l, n = in.n;
  if (l == 0) throw ValidationError("candidates", "need at least one candidate");
  if (n == 0) throw ValidationError("points", "need at least one sampled point");
  if (in.actions.size() != l * kActionDimForLayout || in.points.size() != n * 3 || in.features.size() != n * dim ||
      in.similarities.size() != n)
    throw ValidationError("policy_input", "inconsistent input shapes");

  ForwardCache<T> local;
  ForwardCache<T>& c = cache != nullptr ? *cache : local;
  c.l = l;
  c.n = n;

  c.actions.assign(in.actions.begin(), in.actions.end());
  linear_forward(c.actions, l, kActionDimForLayout, w, p.tensor(kMlp1W0), p.tensor(kMlp1B0), c.mlp1_pre);
  gelu_forward(c.mlp1_pre, c.mlp1_act);
  linear_forward(c.mlp1_act, l, w, w, p.tensor(kMlp1W1), p.tensor(kMlp1B1), c.q0);
  check_finite<T>(c.q0, "action_encoder");

  const std::size_t pe_dim = cfg.pe_dim();
  c.pe.resize(n * pe_dim);
  for (std::size_t j = 0; j < n; ++j) {
    const double pj[3] = {in.points[j * 3], in.points[j * 3 + 1], in.points[j * 3 + 2]};
    const auto e = nerf_pe(std::span<const double, 3>(pj, 3), cfg.pe_bands);
    std::copy(e.begin(), e.end(), c.pe.begin() + j * pe_dim);
  }
  linear_forward(c.pe, n, pe_dim, w, p.tensor(kMlp2W0), p.tensor(kMlp2B0), c.mlp2_pre);
  gelu_forward(c.mlp2_pre, c.mlp2_act);
  linear_forward(c.mlp2_act, n, w, w, p.tensor(kMlp2W1), p.tensor(kMlp2B1), c.k_rot_in);

  c.value_in.resize(n * dim);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t d = 0; d < dim; ++d)
      c.value_in[j * dim + d] = static_cast<T>(in.features[j * dim + d]) * static_cast<T>(in.similarities[j]);
  linear_forward(c.value_in, n, dim, w, p.tensor(kAdapterW), p.tensor(kAdapterB), c.v_rot_in);

  c.k0 = c.k_rot_in;
  c.v0 = c.v_rot_in;
  if (cfg.use_rope) {
    rope_tables(in.points, n, cfg.rope_width(), cfg.rope_base, cfg.rope_scale, c.rope_cos, c.rope_sin);
    rope_apply_rows(c.k0, n, w, cfg.rope_width(), c.rope_cos, c.rope_sin, T(1));
    rope_apply_rows(c.v0, n, w, cfg.rope_width(), c.rope_cos, c.rope_sin, T(1));
  }
  check_finite<T>(c.k0, "position_encoder");
  check_finite<T>(c.v0, "value_adapter");

  attention_forward(p, c.q0, c.k0, c.v0, l, n, c);
  check_finite<T>(c.fusion, "cross_attention");

  return readout(p, c, adapted);
}

template <class T>
ActionDistribution readout(const PolicyParams<T>& p, ForwardCache<T>& c, bool adapted) {
  const std::size_t l = c.l;
  decoder_forward(p, kDecW0, c.fusion, l, c.dec_pre0, c.dec_act0, c.dec_pre1, c.dec_act1, c.logits);
  check_finite<T>(c.logits, "decoder");

  ActionDistribution dist;
  dist.adapted = adapted;
  dist.logits.assign(c.logits.begin(), c.logits.end());
  dist.omega = softmax(dist.logits);
  if (adapted) {
    decoder_forward(p, kResW0, c.fusion, l, c.res_pre0, c.res_act0, c.res_pre1, c.res_act1, c.res_logits);
    check_finite<T>(c.res_logits, "residual_decoder");
    dist.omega_residual.resize(l);
    for (std::size_t k = 0; k < l; ++k)
      dist.omega_residual[k] = 1.0 / (1.0 + std::exp(-static_cast<double>(c.res_logits[k])));
    dist.omega_prime = blend(dist.omega, dist.omega_residual, p.config.alpha);
  } else {
    dist.omega_prime = dist.omega;
  }
  return dist;
}

template <class T>
void backward(const PolicyParams<T>& p, const ForwardCache<T>& c, std::span<const T> d_logits,
              std::span<const T> d_res_logits, std::span<T> grads, const FreezeMask& mask) {
  const auto& cfg = p.config;
  const std::size_t w = cfg.width, heads = cfg.heads, dh = cfg.head_dim(), l = c.l, n = c.n;
  if (grads.size() != p.layout.total) throw ValidationError("grads", "size does not match the parameter layout");

  bool upstream = false;
  for (std::size_t s = 0; s < kDecW0; ++s) upstream = upstream || mask.is_trainable(s);

  std::vector<T> d_fusion(upstream ? l * w : 0, T(0));
  if (!d_logits.empty())
    decoder_backward(p, kDecW0, c.fusion, c.dec_pre0, c.dec_act0, c.dec_pre1, c.dec_act1, d_logits, l, grads, mask,
                     upstream ? &d_fusion : nullptr);
  if (!d_res_logits.empty())
    decoder_backward(p, kResW0, c.fusion, c.res_pre0, c.res_act0, c.res_pre1, c.res_act1, d_res_logits, l, grads,
                     mask, upstream ? &d_fusion : nullptr);
  if (!upstream) return;
  check_finite<T>(d_fusion, "backward.decoder");

  std::vector<T> d_heads_out;
  linear_backward(c.heads_out, l, w, w, p.tensor(kOW), d_fusion, grad_ptr(p, grads, mask, kOW),
                  grad_ptr(p, grads, mask, kOB), &d_heads_out);
  std::vector<T> d_out_h;
  to_heads(d_heads_out, l, heads, dh, d_out_h);

  const T scale = attention_scale<T>(cfg);
  std::vector<T> dqh(heads * l * dh), dkh(heads * n * dh), dvh(heads * n * dh), d_attn(l * n);
  for (std::size_t h = 0; h < heads; ++h) {
    const T* a = c.attn.data() + h * l * n;
    const T* d_o = d_out_h.data() + h * l * dh;
    linalg::gemm_nt(l, n, dh, d_o, c.vh.data() + h * n * dh, d_attn.data(), false);
    linalg::gemm_tn(n, dh, l, a, d_o, dvh.data() + h * n * dh, false);
    for (std::size_t i = 0; i < l; ++i) {
      T* da = d_attn.data() + i * n;
      const T* ai = a + i * n;
      const T inner = simd::dot(da, ai, n);
      for (std::size_t j = 0; j < n; ++j) da[j] = ai[j] * (da[j] - inner) * scale;
    }
    linalg::gemm_nn(l, dh, n, d_attn.data(), c.kh.data() + h * n * dh, dqh.data() + h * l * dh, false);
    linalg::gemm_tn(n, dh, l, d_attn.data(), c.qh.data() + h * l * dh, dkh.data() + h * n * dh, false);
  }
  std::vector<T> dqp, dkp, dvp;
  from_heads(dqh, l, heads, dh, dqp);
  from_heads(dkh, n, heads, dh, dkp);
  from_heads(dvh, n, heads, dh, dvp);

  const bool need_q = mask.is_trainable(kMlp1W0) || mask.is_trainable(kMlp1B0) || mask.is_trainable(kMlp1W1) ||
                      mask.is_trainable(kMlp1B1);
  const bool need_k = mask.is_trainable(kMlp2W0) || mask.is_trainable(kMlp2B0) || mask.is_trainable(kMlp2W1) ||
                      mask.is_trainable(kMlp2B1);
  const bool need_v = mask.is_trainable(kAdapterW) || mask.is_trainable(kAdapterB);

  std::vector<T> dq0, dk0, dv0;
  linear_backward(c.q0, l, w, w, p.tensor(kQW), dqp, grad_ptr(p, grads, mask, kQW), grad_ptr(p, grads, mask, kQB),
                  need_q ? &dq0 : nullptr);
  linear_backward(c.k0, n, w, w, p.tensor(kKW), dkp, grad_ptr(p, grads, mask, kKW), grad_ptr(p, grads, mask, kKB),
                  need_k ? &dk0 : nullptr);
  linear_backward(c.v0, n, w, w, p.tensor(kVW), dvp, grad_ptr(p, grads, mask, kVW), grad_ptr(p, grads, mask, kVB),
                  need_v ? &dv0 : nullptr);

  if (need_q) {
    std::vector<T> d_act;
    linear_backward(c.mlp1_act, l, w, w, p.tensor(kMlp1W1), dq0, grad_ptr(p, grads, mask, kMlp1W1),
                    grad_ptr(p, grads, mask, kMlp1B1), &d_act);
    gelu_backward(c.mlp1_pre, d_act);
    linear_backward(c.actions, l, kActionDimForLayout, w, p.tensor(kMlp1W0), d_act,
                    grad_ptr(p, grads, mask, kMlp1W0), grad_ptr(p, grads, mask, kMlp1B0), static_cast<std::vector<T>*>(nullptr));
  }
  if (need_k) {
    if (cfg.use_rope) rope_apply_rows(dk0, n, w, cfg.rope_width(), c.rope_cos, c.rope_sin, T(-1));
    std::vector<T> d_act;
    linear_backward(c.mlp2_act, n, w, w, p.tensor(kMlp2W1), dk0, grad_ptr(p, grads, mask, kMlp2W1),
                    grad_ptr(p, grads, mask, kMlp2B1), &d_act);
    gelu_backward(c.mlp2_pre, d_act);
    linear_backward(c.pe, n, cfg.pe_dim(), w, p.tensor(kMlp2W0), d_act, grad_ptr(p, grads, mask, kMlp2W0),
                    grad_ptr(p, grads, mask, kMlp2B0), static_cast<std::vector<T>*>(nullptr));
  }
  if (need_v) {
    if (cfg.use_rope) rope_apply_rows(dv0, n, w, cfg.rope_width(), c.rope_cos, c.rope_sin, T(-1));
    linear_backward(c.value_in, n, cfg.feature_dim, w, p.tensor(kAdapterW), dv0, grad_ptr(p, grads, mask, kAdapterW),
                    grad_ptr(p, grads, mask, kAdapterB), static_cast<std::vector<T>*>(nullptr));
  }
  check_finite<T>(std::span<const T>(grads.data(), grads.size()), "backward");
}

std::vector<double> blend(std::span<const double> omega, std::span<const double> omega_residual, double alpha) {
  if (omega.size() != omega_residual.size()) throw ValidationError("distribution", "blend length mismatch");
  std::vector<double> out(omega.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = alpha * omega[k] + (1.0 - alpha) * omega_residual[k];
  return out;
}

std::size_t select_action(const ActionDistribution& dist) {
  const auto& v = dist.omega_prime.empty() ? dist.omega : dist.omega_prime;
  if (v.empty()) throw ValidationError("distribution", "empty distribution");
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

template struct PolicyParams<float>;
template struct PolicyParams<double>;
template void rope_rotate<float>(std::span<float>, std::span<const double, 3>, double, double);
template void rope_rotate<double>(std::span<double>, std::span<const double, 3>, double, double);
template void rope_rotate_inverse<float>(std::span<float>, std::span<const double, 3>, double, double);
template void rope_rotate_inverse<double>(std::span<double>, std::span<const double, 3>, double, double);
template std::vector<float> cross_attention<float>(const PolicyParams<float>&, std::span<const float>,
                                                   std::span<const float>, std::span<const float>, std::size_t,
                                                   std::size_t, std::vector<float>*);
template std::vector<double> cross_attention<double>(const PolicyParams<double>&, std::span<const double>,
                                                     std::span<const double>, std::span<const double>, std::size_t,
                                                     std::size_t, std::vector<double>*);
template ActionDistribution forward<float>(const PolicyParams<float>&, const PolicyInput&, bool,
                                           ForwardCache<float>*);
template ActionDistribution forward<double>(const PolicyParams<double>&, const PolicyInput&, bool,
                                            ForwardCache<double>*);
template ActionDistribution readout<float>(const PolicyParams<float>&, ForwardCache<float>&, bool);
template ActionDistribution readout<double>(const PolicyParams<double>&, ForwardCache<double>&, bool);
template void backward<float>(const PolicyParams<float>&, const ForwardCache<float>&, std::span<const float>,
                              std::span<const float>, std::span<float>, const FreezeMask&);
template void backward<double>(const PolicyParams<double>&, const ForwardCache<double>&, std::span<const double>,
                               std::span<const double>, std::span<double>, const FreezeMask&);

}  // namespace a2::align
