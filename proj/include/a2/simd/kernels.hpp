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

// Inner-loop arithmetic kernels with one scalar reference implementation and
// per-ISA variants (AVX2+FMA on x86-64, NEON on aarch64). The active table is
// chosen once at startup from CPUID; A2_SIMD=scalar forces the reference path.

#include <cstddef>
#include <string_view>

namespace a2::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  float (*dot_f32)(const float* x, const float* y, std::size_t n);
  double (*dot_f64)(const double* x, const double* y, std::size_t n);
  // out[r] = <x, rows + r * stride> for r in [0, 4)
  void (*dot4_f32)(const float* x, const float* rows, std::size_t stride, std::size_t n, float* out);
  void (*dot4_f64)(const double* x, const double* rows, std::size_t stride, std::size_t n, double* out);
  // y += a * x
  void (*axpy_f32)(float a, const float* x, float* y, std::size_t n);
  void (*axpy_f64)(double a, const double* x, double* y, std::size_t n);
  // c (m x n) = a (m x k) * b (k x n), row-major; adds into c when accumulate
  void (*gemm_f32)(std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b, float* c,
                   bool accumulate);
  void (*gemm_f64)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                   bool accumulate);
};

const KernelTable& scalar_table();
// nullptr when the ISA was not compiled in or the CPU lacks it.
const KernelTable* table_for(Isa isa);
bool isa_supported(Isa isa);

// The dispatched table. Thread-safe after first use.
const KernelTable& active();
// Test hook; not thread-safe against concurrent kernel calls.
void set_active(Isa isa);

inline float dot(const float* x, const float* y, std::size_t n) { return active().dot_f32(x, y, n); }
inline double dot(const double* x, const double* y, std::size_t n) { return active().dot_f64(x, y, n); }
inline void dot4(const float* x, const float* rows, std::size_t stride, std::size_t n, float* out) {
  active().dot4_f32(x, rows, stride, n, out);
}
inline void dot4(const double* x, const double* rows, std::size_t stride, std::size_t n, double* out) {
  active().dot4_f64(x, rows, stride, n, out);
}
inline void axpy(float a, const float* x, float* y, std::size_t n) { active().axpy_f32(a, x, y, n); }
inline void axpy(double a, const double* x, double* y, std::size_t n) { active().axpy_f64(a, x, y, n); }

}  // namespace a2::simd
