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

// Single cross-attention layer that scores L candidate actions against N
// sampled points.
//
//   Q = MLP1(actions)
//   K = rope(MLP2(pe(p)), p)
//   V = rope(Adapter(f * s), p)
//   F = Attention(Q, K, V)            (multi-head, with Q/K/V/output projections)
//   omega   = softmax(Decoder(F))
//   omega_r = sigmoid(ResidualDecoder(F))
//   omega'  = alpha * omega + (1 - alpha) * omega_r     (adapted policies only)
//
// Everything is templated on the scalar type: float for training and
// inference, double for gradient checks.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace a2::align {

enum class AttnScale { scaled, unscaled };

struct AlignConfig {
  std::size_t width = 768;
  std::size_t heads = 8;
  std::size_t layers = 1;
  std::size_t feature_dim = 32;
  std::size_t pe_bands = 6;
  double rope_base = 10000.0;
  double rope_scale = 100.0;  // rad per meter at the fastest band
  double alpha = 0.2;
  AttnScale attn_scale = AttnScale::scaled;
  bool use_rope = true;
  std::size_t max_candidates = 256;
  std::size_t decoder_depth = 3;

  // Desk-scale preset: width 64, 8 heads.
  static AlignConfig desk(std::size_t feature_dim = 32);

  std::size_t head_dim() const { return width / heads; }
  std::size_t pe_dim() const { return 3 + 6 * pe_bands; }
  // Channels rotated by RoPE: the largest multiple of 6 not above width.
  std::size_t rope_width() const { return width - width % 6; }

  void validate() const;
  std::string serialize() const;
  static AlignConfig parse(const std::string& text);

  bool operator==(const AlignConfig&) const = default;
};

// Parameter tensors in storage order.
enum Slot : std::size_t {
  kMlp1W0, kMlp1B0, kMlp1W1, kMlp1B1,
  kMlp2W0, kMlp2B0, kMlp2W1, kMlp2B1,
  kAdapterW, kAdapterB,
  kQW, kQB, kKW, kKB, kVW, kVB, kOW, kOB,
  kDecW0, kDecB0, kDecW1, kDecB1, kDecW2, kDecB2,
  kResW0, kResB0, kResW1, kResB1, kResW2, kResB2,
  kSlotCount
};

struct TensorSlot {
  std::string name;
  std::size_t rows = 0;  // output features (1 for biases)
  std::size_t cols = 0;  // input features (bias length for biases)
  std::size_t offset = 0;
  std::size_t size() const { return rows * cols; }
};

struct ParamLayout {
  std::vector<TensorSlot> slots;
  std::size_t total = 0;

  static ParamLayout build(const AlignConfig& config);
  std::size_t index_of(const std::string& name) const;
};

bool is_residual_slot(std::size_t slot);

template <class T>
struct PolicyParams {
  AlignConfig config;
  ParamLayout layout;
  std::vector<T> values;

  PolicyParams() = default;
  explicit PolicyParams(const AlignConfig& cfg);

  // Linear weights uniform in +-sqrt(1/fan_in), biases zero.
  void initialize(std::uint64_t seed);

  std::span<T> tensor(std::size_t slot) { return {values.data() + layout.slots[slot].offset, layout.slots[slot].size()}; }
  std::span<const T> tensor(std::size_t slot) const {
    return {values.data() + layout.slots[slot].offset, layout.slots[slot].size()};
  }

  template <class U>
  PolicyParams<U> cast() const {
    PolicyParams<U> out;
    out.config = config;
    out.layout = layout;
    out.values.assign(values.begin(), values.end());
    return out;
  }
};

// Observation for one forward pass. Spans are row-major float buffers.
struct PolicyInput {
  std::span<const float> actions;       // L x 10
  std::span<const float> points;        // N x 3
  std::span<const float> features;      // N x D
  std::span<const float> similarities;  // N
  std::size_t l = 0;
  std::size_t n = 0;
};

struct ActionDistribution {
  std::vector<double> logits;
  std::vector<double> omega;           // softmax(logits)
  std::vector<double> omega_residual;  // empty unless adapted
  std::vector<double> omega_prime;     // blend when adapted, else omega
  bool adapted = false;
};

// Intermediate activations kept for backward.
template <class T>
struct ForwardCache {
  std::size_t l = 0, n = 0;
  std::vector<T> actions, mlp1_pre, mlp1_act, q0;
  std::vector<T> pe, mlp2_pre, mlp2_act, k_rot_in, k0;
  std::vector<T> value_in, v_rot_in, v0;
  std::vector<T> rope_cos, rope_sin;  // N x rope_width/2
  std::vector<T> qh, kh, vh;          // head-major [H][rows][dh]
  std::vector<T> attn;                // [H][L][N]
  std::vector<T> heads_out;           // L x W, heads concatenated
  std::vector<T> fusion;              // L x W
  std::vector<T> dec_pre0, dec_act0, dec_pre1, dec_act1, logits;
  std::vector<T> res_pre0, res_act0, res_pre1, res_act1, res_logits;
};

std::vector<double> nerf_pe(std::span<const double, 3> p, std::size_t bands);

// In-place RoPE on a width-W vector for 3D position p. Channels
// [0, rope_width) are split into three axis groups of G = rope_width/3; pair t
// of group a turns by p[a] * scale * base^(-2t/G). Remaining channels pass through.
template <class T>
void rope_rotate(std::span<T> x, std::span<const double, 3> p, double base, double scale);
template <class T>
void rope_rotate_inverse(std::span<T> x, std::span<const double, 3> p, double base, double scale);

// Multi-head attention with projections. queries L x W, keys/values N x W.
// `attn` (optional) receives [H][L][N] weights.
template <class T>
std::vector<T> cross_attention(const PolicyParams<T>& params, std::span<const T> queries, std::span<const T> keys,
                               std::span<const T> values, std::size_t l, std::size_t n, std::vector<T>* attn = nullptr);

// Throws NumericError naming the stage that produced a non-finite value.
template <class T>
ActionDistribution forward(const PolicyParams<T>& params, const PolicyInput& input, bool adapted,
                           ForwardCache<T>* cache = nullptr);

// Re-runs only the decoders on the fusion already stored in `cache`.
template <class T>
ActionDistribution readout(const PolicyParams<T>& params, ForwardCache<T>& cache, bool adapted);

// Which tensors receive gradients. Empty = all.
struct FreezeMask {
  std::vector<bool> trainable;  // per slot
  static FreezeMask all(std::size_t slots = kSlotCount) { return {std::vector<bool>(slots, true)}; }
  static FreezeMask residual_only();
  bool is_trainable(std::size_t slot) const { return trainable.empty() || trainable[slot]; }
};

// Accumulates d(loss)/d(params) into `grads` given the loss gradient with
// respect to the base logits and (if adapted) the residual logits.
template <class T>
void backward(const PolicyParams<T>& params, const ForwardCache<T>& cache, std::span<const T> d_logits,
              std::span<const T> d_res_logits, std::span<T> grads, const FreezeMask& mask);

// argmax of omega' (omega when not adapted), lowest index on ties.
std::size_t select_action(const ActionDistribution& dist);

std::vector<double> softmax(std::span<const double> logits);

// omega' = alpha * omega + (1 - alpha) * omega_r, elementwise.
std::vector<double> blend(std::span<const double> omega, std::span<const double> omega_residual, double alpha);

}  // namespace a2::align
