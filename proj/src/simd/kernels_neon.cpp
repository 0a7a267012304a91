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

#include <arm_neon.h>

#include <type_traits>

#include "a2/simd/kernels.hpp"

namespace a2::simd {
namespace {

float dot_f32(const float* x, const float* y, std::size_t n) {
  float32x4_t a0 = vdupq_n_f32(0.0f);
  float32x4_t a1 = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = vfmaq_f32(a0, vld1q_f32(x + i), vld1q_f32(y + i));
    a1 = vfmaq_f32(a1, vld1q_f32(x + i + 4), vld1q_f32(y + i + 4));
  }
  for (; i + 4 <= n; i += 4) a0 = vfmaq_f32(a0, vld1q_f32(x + i), vld1q_f32(y + i));
  float acc = vaddvq_f32(vaddq_f32(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double dot_f64(const double* x, const double* y, std::size_t n) {
  float64x2_t a0 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) a0 = vfmaq_f64(a0, vld1q_f64(x + i), vld1q_f64(y + i));
  double acc = vaddvq_f64(a0);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void dot4_f32(const float* x, const float* rows, std::size_t stride, std::size_t n, float* out) {
  for (std::size_t r = 0; r < 4; ++r) out[r] = dot_f32(x, rows + r * stride, n);
}

void dot4_f64(const double* x, const double* rows, std::size_t stride, std::size_t n, double* out) {
  for (std::size_t r = 0; r < 4; ++r) out[r] = dot_f64(x, rows + r * stride, n);
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
  const float32x4_t av = vdupq_n_f32(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), av, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  const float64x2_t av = vdupq_n_f64(a);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), av, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
    for (std::size_t p = 0; p < k; ++p) {
      if constexpr (std::is_same_v<T, float>) axpy_f32(a[i * k + p], b + p * n, ci, n);
      else axpy_f64(a[i * k + p], b + p * n, ci, n);
    }
  }
}

}  // namespace

const KernelTable& neon_table() {
  static const KernelTable table{Isa::neon, &dot_f32, &dot_f64, &dot4_f32, &dot4_f64, &axpy_f32, &axpy_f64,
                                 &gemm<float>, &gemm<double>};
  return table;
}

}  // namespace a2::simd
