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

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

// Dense inner-loop kernels. Every routine has a portable scalar reference
// and, on x86-64, an AVX2/FMA variant. The variant is chosen once at
// startup from CPUID; RECRANK_SIMD=scalar|avx2|auto overrides the choice.

namespace recrank::kernels {

enum class Isa { kScalar, kAvx2 };

struct AdamStep {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias1;  // 1 - beta1^t
  double bias2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;
  const char* name;
  double (*dot)(const double* a, const double* b, size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, size_t n);
  double (*squared_distance)(const double* a, const double* b, size_t n);
  // out[r] = dot(mat.row(r), x) for a row-major rows x cols matrix
  void (*gemv)(const double* mat, size_t rows, size_t cols, const double* x, double* out);
  void (*adam)(double* param, double* m, double* v, const double* grad, size_t n, const AdamStep& step);
  // c += a * b, all row-major: a is m x k, b is k x n, c is m x n
  void (*gemm)(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
  // out = sum_e w[e] * rows[idx[e]], rows is row-major with n columns
  void (*gather_sum)(const double* rows, size_t n, const uint32_t* idx, const double* w, size_t nnz, double* out);
  // x[i] = exp(x[i] - shift); returns the sum of the new values
  double (*exp_shift_sum)(double* x, size_t n, double shift);
};

const KernelTable& scalar_table();

// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool cpu_supports_avx2();

// Table in use for this process.
const KernelTable& active();

// Forces a specific table (tests, benchmarks). Throws if unavailable.
void select(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) { return active().dot(a.data(), b.data(), a.size()); }

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), y.size());
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return active().squared_distance(a.data(), b.data(), a.size());
}

}  // namespace recrank::kernels
