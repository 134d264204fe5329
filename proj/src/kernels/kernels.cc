/*
 * Copyright 2026 The RecRank Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "recrank/kernels.h"

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "recrank/common.h"

namespace recrank::kernels {

#if !defined(RECRANK_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif

bool cpu_supports_avx2() {
#if defined(RECRANK_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* choose() {
  const char* env = std::getenv("RECRANK_SIMD");
  const std::string_view want = env ? env : "auto";
  if (want == "scalar") return &scalar_table();
  if (avx2_table() != nullptr && cpu_supports_avx2()) return avx2_table();
  return &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{choose()};
  return table;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void select(Isa isa) {
  if (isa == Isa::kScalar) {
    slot().store(&scalar_table(), std::memory_order_release);
    return;
  }
  if (avx2_table() == nullptr || !cpu_supports_avx2()) throw InvalidArgument("AVX2 kernels unavailable on this host");
  slot().store(avx2_table(), std::memory_order_release);
}

}  // namespace recrank::kernels
