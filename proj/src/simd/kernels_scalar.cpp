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

#include "a2/simd/kernels.hpp"

namespace a2::simd {
namespace {

template <class T>
T dot_ref(const T* x, const T* y, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class T>
void dot4_ref(const T* x, const T* rows, std::size_t stride, std::size_t n, T* out) {
  for (std::size_t r = 0; r < 4; ++r) out[r] = dot_ref(x, rows + r * stride, n);
}

template <class T>
void axpy_ref(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void gemm_ref(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) ci[j] = T(0);
    for (std::size_t p = 0; p < k; ++p) axpy_ref(a[i * k + p], b + p * n, ci, n);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar,       &dot_ref<float>,   &dot_ref<double>,  &dot4_ref<float>,
                                 &dot4_ref<double>, &axpy_ref<float>,  &axpy_ref<double>, &gemm_ref<float>,
                                 &gemm_ref<double>};
  return table;
}

}  // namespace a2::simd
