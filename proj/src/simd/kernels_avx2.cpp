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

// Compiled with -mavx2 -mfma. Only reached after a CPUID check.

#include <immintrin.h>

#include "a2/simd/kernels.hpp"

namespace a2::simd {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

float dot_f32(const float* x, const float* y, std::size_t n) {
  __m256 a0 = _mm256_setzero_ps();
  __m256 a1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    a0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), a0);
    a1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), a1);
  }
  for (; i + 8 <= n; i += 8) a0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), a0);
  float acc = hsum(_mm256_add_ps(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double dot_f64(const double* x, const double* y, std::size_t n) {
  __m256d a0 = _mm256_setzero_pd();
  __m256d a1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
    a1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), a1);
  }
  for (; i + 4 <= n; i += 4) a0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), a0);
  double acc = hsum(_mm256_add_pd(a0, a1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void dot4_f32(const float* x, const float* rows, std::size_t stride, std::size_t n, float* out) {
  const float* r0 = rows;
  const float* r1 = rows + stride;
  const float* r2 = rows + 2 * stride;
  const float* r3 = rows + 3 * stride;
  __m256 a0 = _mm256_setzero_ps(), a1 = _mm256_setzero_ps();
  __m256 a2 = _mm256_setzero_ps(), a3 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    a0 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(r0 + i), a0);
    a1 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(r1 + i), a1);
    a2 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(r2 + i), a2);
    a3 = _mm256_fmadd_ps(xv, _mm256_loadu_ps(r3 + i), a3);
  }
  float s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
  for (; i < n; ++i) {
    s0 += x[i] * r0[i];
    s1 += x[i] * r1[i];
    s2 += x[i] * r2[i];
    s3 += x[i] * r3[i];
  }
  out[0] = s0;
  out[1] = s1;
  out[2] = s2;
  out[3] = s3;
}

void dot4_f64(const double* x, const double* rows, std::size_t stride, std::size_t n, double* out) {
  const double* r0 = rows;
  const double* r1 = rows + stride;
  const double* r2 = rows + 2 * stride;
  const double* r3 = rows + 3 * stride;
  __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
  __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    a0 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(r0 + i), a0);
    a1 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(r1 + i), a1);
    a2 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(r2 + i), a2);
    a3 = _mm256_fmadd_pd(xv, _mm256_loadu_pd(r3 + i), a3);
  }
  double s0 = hsum(a0), s1 = hsum(a1), s2 = hsum(a2), s3 = hsum(a3);
  for (; i < n; ++i) {
    s0 += x[i] * r0[i];
    s1 += x[i] * r1[i];
    s2 += x[i] * r2[i];
    s3 += x[i] * r3[i];
  }
  out[0] = s0;
  out[1] = s1;
  out[2] = s2;
  out[3] = s3;
}

void axpy_f32(float a, const float* x, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

void axpy_f64(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t width = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V splat(T x) { return _mm256_set1_ps(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t width = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V splat(T x) { return _mm256_set1_pd(x); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
};

// R rows by C vectors of c, accumulated over all of k in registers.
template <class Ops, int R, int C>
void gemm_block(std::size_t n, std::size_t k, const typename Ops::T* a, const typename Ops::T* b,
                typename Ops::T* c, bool accumulate) {
  typename Ops::V acc[R][C];
  for (int r = 0; r < R; ++r)
    for (int q = 0; q < C; ++q) acc[r][q] = Ops::zero();
  for (std::size_t p = 0; p < k; ++p) {
    typename Ops::V bv[C];
    for (int q = 0; q < C; ++q) bv[q] = Ops::load(b + p * n + q * Ops::width);
    for (int r = 0; r < R; ++r) {
      const auto av = Ops::splat(a[r * k + p]);
      for (int q = 0; q < C; ++q) acc[r][q] = Ops::fma(av, bv[q], acc[r][q]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int q = 0; q < C; ++q) {
      auto* out = c + r * n + q * Ops::width;
      Ops::store(out, accumulate ? Ops::add(acc[r][q], Ops::load(out)) : acc[r][q]);
    }
}

template <class Ops, int R>
void gemm_rows(std::size_t n, std::size_t k, const typename Ops::T* a, const typename Ops::T* b, typename Ops::T* c,
               bool accumulate) {
  constexpr std::size_t w = Ops::width;
  std::size_t j = 0;
  for (; j + 2 * w <= n; j += 2 * w) gemm_block<Ops, R, 2>(n, k, a, b + j, c + j, accumulate);
  for (; j + w <= n; j += w) gemm_block<Ops, R, 1>(n, k, a, b + j, c + j, accumulate);
  for (; j < n; ++j)
    for (int r = 0; r < R; ++r) {
      typename Ops::T s = 0;
      for (std::size_t p = 0; p < k; ++p) s += a[r * k + p] * b[p * n + j];
      c[r * n + j] = accumulate ? c[r * n + j] + s : s;
    }
}

template <class Ops>
void gemm(std::size_t m, std::size_t n, std::size_t k, const typename Ops::T* a, const typename Ops::T* b,
          typename Ops::T* c, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<Ops, 4>(n, k, a + i * k, b, c + i * n, accumulate);
  for (; i < m; ++i) gemm_rows<Ops, 1>(n, k, a + i * k, b, c + i * n, accumulate);
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Isa::avx2,     &dot_f32,      &dot_f64,      &dot4_f32, &dot4_f64,
                                 &axpy_f32,     &axpy_f64,     &gemm<F32>,    &gemm<F64>};
  return table;
}

}  // namespace a2::simd
