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

// Compiled with -mavx2 -mfma. Only reached after a CPUID check.

#include <immintrin.h>

#include <cmath>

#include "recrank/kernels.h"

namespace recrank::kernels {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double squared_distance_avx2(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void gemv_avx2(const double* mat, size_t rows, size_t cols, const double* x, double* out) {
  for (size_t r = 0; r < rows; ++r) out[r] = dot_avx2(mat + r * cols, x, cols);
}

void adam_avx2(double* param, double* m, double* v, const double* grad, size_t n, const AdamStep& st) {
  const __m256d b1 = _mm256_set1_pd(st.beta1);
  const __m256d b2 = _mm256_set1_pd(st.beta2);
  const __m256d c1 = _mm256_set1_pd(1.0 - st.beta1);
  const __m256d c2 = _mm256_set1_pd(1.0 - st.beta2);
  const __m256d bias1 = _mm256_set1_pd(st.bias1);
  const __m256d bias2 = _mm256_set1_pd(st.bias2);
  const __m256d lr = _mm256_set1_pd(st.lr);
  const __m256d eps = _mm256_set1_pd(st.eps);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(c1, g));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(c2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d mhat = _mm256_div_pd(mi, bias1);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_div_pd(vi, bias2)), eps);
    const __m256d upd = _mm256_div_pd(_mm256_mul_pd(lr, mhat), denom);
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), upd));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
    v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * (g * g);
    param[i] -= st.lr * (m[i] / st.bias1) / (std::sqrt(v[i] / st.bias2) + st.eps);
  }
}

// 6 x 8 register tile (12 accumulators, so nothing spills); edge rows
// and columns fall back to axpy-style loops.
void gemm_avx2(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  constexpr size_t kR = 6;
  size_t i = 0;
  const size_t n8 = n - n % 8;
  for (; i + kR <= m; i += kR) {
    const double* a0 = a + i * k;
    for (size_t j = 0; j < n8; j += 8) {
      __m256d acc[kR][2];
      for (size_t r = 0; r < kR; ++r) {
        acc[r][0] = _mm256_loadu_pd(c + (i + r) * n + j);
        acc[r][1] = _mm256_loadu_pd(c + (i + r) * n + j + 4);
      }
      for (size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        for (size_t r = 0; r < kR; ++r) {
          const __m256d av = _mm256_broadcast_sd(a0 + r * k + p);
          acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
          acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
        }
      }
      for (size_t r = 0; r < kR; ++r) {
        _mm256_storeu_pd(c + (i + r) * n + j, acc[r][0]);
        _mm256_storeu_pd(c + (i + r) * n + j + 4, acc[r][1]);
      }
    }
    if (n8 < n) {
      for (size_t r = i; r < i + kR; ++r) {
        for (size_t p = 0; p < k; ++p) axpy_avx2(a[r * k + p], b + p * n + n8, c + r * n + n8, n - n8);
      }
    }
  }
  for (; i < m; ++i) {
    for (size_t p = 0; p < k; ++p) axpy_avx2(a[i * k + p], b + p * n, c + i * n, n);
  }
}

void gather_sum_avx2(const double* rows, size_t n, const uint32_t* idx, const double* w, size_t nnz, double* out) {
  size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256d a0 = _mm256_setzero_pd(), a1 = _mm256_setzero_pd();
    __m256d a2 = _mm256_setzero_pd(), a3 = _mm256_setzero_pd();
    for (size_t e = 0; e < nnz; ++e) {
      const double* r = rows + static_cast<size_t>(idx[e]) * n + j;
      const __m256d we = _mm256_broadcast_sd(w + e);
      a0 = _mm256_fmadd_pd(we, _mm256_loadu_pd(r), a0);
      a1 = _mm256_fmadd_pd(we, _mm256_loadu_pd(r + 4), a1);
      a2 = _mm256_fmadd_pd(we, _mm256_loadu_pd(r + 8), a2);
      a3 = _mm256_fmadd_pd(we, _mm256_loadu_pd(r + 12), a3);
    }
    _mm256_storeu_pd(out + j, a0);
    _mm256_storeu_pd(out + j + 4, a1);
    _mm256_storeu_pd(out + j + 8, a2);
    _mm256_storeu_pd(out + j + 12, a3);
  }
  for (; j < n; ++j) {
    double s = 0.0;
    for (size_t e = 0; e < nnz; ++e) s += w[e] * rows[static_cast<size_t>(idx[e]) * n + j];
    out[j] = s;
  }
}

// exp via x = n ln2 + r, |r| <= ln2/2, degree-12 Taylor for e^r and an
// exponent-field 2^n. Below -708 the result flushes to zero.
inline __m256d exp4(__m256d x) {
  const __m256d lo = _mm256_set1_pd(-708.0);
  const __m256d under = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
  x = _mm256_max_pd(_mm256_min_pd(x, _mm256_set1_pd(709.0)), lo);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(1.4426950408889634)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, _mm256_set1_pd(6.93147180369123816490e-01), x);
  r = _mm256_fnmadd_pd(n, _mm256_set1_pd(1.90821492927058770002e-10), r);
  static constexpr double kInvFact[] = {1.0 / 479001600, 1.0 / 39916800, 1.0 / 3628800, 1.0 / 362880, 1.0 / 40320,
                                        1.0 / 5040,      1.0 / 720,      1.0 / 120,     1.0 / 24,     1.0 / 6,
                                        0.5,             1.0,            1.0};
  __m256d p = _mm256_set1_pd(kInvFact[0]);
  for (size_t k = 1; k < 13; ++k) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact[k]));
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);  // 1.5 * 2^52
  const __m256i ni = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(n, magic)), _mm256_castpd_si256(magic));
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(ni, _mm256_set1_epi64x(1023)), 52);
  return _mm256_andnot_pd(under, _mm256_mul_pd(p, _mm256_castsi256_pd(bits)));
}

double exp_shift_sum_avx2(double* x, size_t n, double shift) {
  const __m256d sh = _mm256_set1_pd(shift);
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp4(_mm256_sub_pd(_mm256_loadu_pd(x + i), sh));
    _mm256_storeu_pd(x + i, e);
    acc = _mm256_add_pd(acc, e);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    x[i] = std::exp(x[i] - shift);
    s += x[i];
  }
  return s;
}

constexpr KernelTable kAvx2{
    Isa::kAvx2, "avx2", dot_avx2, axpy_avx2, squared_distance_avx2, gemv_avx2, adam_avx2, gemm_avx2,
    gather_sum_avx2,
    exp_shift_sum_avx2,
};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace recrank::kernels
