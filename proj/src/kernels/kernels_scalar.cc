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

#include <cmath>

#include "recrank/kernels.h"

namespace recrank::kernels {

namespace {

double dot_scalar(const double* a, const double* b, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double squared_distance_scalar(const double* a, const double* b, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void gemv_scalar(const double* mat, size_t rows, size_t cols, const double* x, double* out) {
  for (size_t r = 0; r < rows; ++r) out[r] = dot_scalar(mat + r * cols, x, cols);
}

void adam_scalar(double* param, double* m, double* v, const double* grad, size_t n, const AdamStep& st) {
  for (size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
    v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * (g * g);
    const double mhat = m[i] / st.bias1;
    const double vhat = v[i] / st.bias2;
    param[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
  }
}

void gemm_scalar(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gather_sum_scalar(const double* rows, size_t n, const uint32_t* idx, const double* w, size_t nnz, double* out) {
  for (size_t j = 0; j < n; ++j) out[j] = 0.0;
  for (size_t e = 0; e < nnz; ++e) {
    const double* r = rows + static_cast<size_t>(idx[e]) * n;
    for (size_t j = 0; j < n; ++j) out[j] += w[e] * r[j];
  }
}

double exp_shift_sum_scalar(double* x, size_t n, double shift) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - shift);
    s += x[i];
  }
  return s;
}

constexpr KernelTable kScalar{
    Isa::kScalar, "scalar", dot_scalar, axpy_scalar, squared_distance_scalar, gemv_scalar, adam_scalar, gemm_scalar,
    gather_sum_scalar,
    exp_shift_sum_scalar,
};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace recrank::kernels
