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

#include <atomic>
#include <cstdlib>
#include <cstring>

#include "a2/simd/kernels.hpp"

namespace a2::simd {

#if defined(A2_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(A2_HAVE_NEON)
const KernelTable& neon_table();
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(A2_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(A2_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable* table_for(Isa isa) {
  if (!isa_supported(isa)) return nullptr;
  switch (isa) {
    case Isa::scalar: return &scalar_table();
#if defined(A2_HAVE_AVX2)
    case Isa::avx2: return &avx2_table();
#endif
#if defined(A2_HAVE_NEON)
    case Isa::neon: return &neon_table();
#endif
    default: return nullptr;
  }
}

namespace {

const KernelTable* detect() {
  if (const char* env = std::getenv("A2_SIMD"); env != nullptr && std::strcmp(env, "scalar") == 0)
    return &scalar_table();
  for (Isa isa : {Isa::avx2, Isa::neon})
    if (const KernelTable* t = table_for(isa)) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{detect()};
  return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void set_active(Isa isa) {
  const KernelTable* t = table_for(isa);
  slot().store(t != nullptr ? t : &scalar_table(), std::memory_order_release);
}

}  // namespace a2::simd
