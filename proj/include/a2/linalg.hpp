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

// Row-major dense helpers over the dispatched SIMD kernels. All matrices are
// contiguous with leading dimension equal to their column count.

#include <cstddef>
#include <span>
#include <vector>

#include "a2/simd/kernels.hpp"

namespace a2::linalg {

namespace detail {

inline auto dot_fn(const simd::KernelTable& t, float) { return t.dot_f32; }
inline auto dot_fn(const simd::KernelTable& t, double) { return t.dot_f64; }
inline auto dot4_fn(const simd::KernelTable& t, float) { return t.dot4_f32; }
inline auto dot4_fn(const simd::KernelTable& t, double) { return t.dot4_f64; }
inline auto axpy_fn(const simd::KernelTable& t, float) { return t.axpy_f32; }
inline auto axpy_fn(const simd::KernelTable& t, double) { return t.axpy_f64; }
inline auto gemm_fn(const simd::KernelTable& t, float) { return t.gemm_f32; }
inline auto gemm_fn(const simd::KernelTable& t, double) { return t.gemm_f64; }

template <class T>
std::vector<T>& transpose_scratch(std::size_t rows, std::size_t cols, const T* src) {
  thread_local std::vector<T> buf;
  buf.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) buf[c * rows + r] = src[r * cols + c];
  return buf;
}

}  // namespace detail

// C[m x n] (+)= A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const auto& table = simd::active();
  if (m >= 4) {
    const auto& bt = detail::transpose_scratch(n, k, b);
    detail::gemm_fn(table, T{})(m, n, k, a, bt.data(), c, accumulate);
    return;
  }
  const auto dot = detail::dot_fn(table, T{});
  const auto dot4 = detail::dot4_fn(table, T{});
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    std::size_t j = 0;
    T out[4];
    for (; j + 4 <= n; j += 4) {
      dot4(ai, b + j * k, k, k, out);
      for (std::size_t r = 0; r < 4; ++r) ci[j + r] = accumulate ? ci[j + r] + out[r] : out[r];
    }
    for (; j < n; ++j) {
      const T v = dot(ai, b + j * k, k);
      ci[j] = accumulate ? ci[j] + v : v;
    }
  }
}

// C[m x n] (+)= A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  detail::gemm_fn(simd::active(), T{})(m, n, k, a, b, c, accumulate);
}

// C[m x n] (+)= A[k x m]^T * B[k x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  const auto& at = detail::transpose_scratch(k, m, a);
  detail::gemm_fn(simd::active(), T{})(m, n, k, at.data(), b, c, accumulate);
}

}  // namespace a2::linalg
