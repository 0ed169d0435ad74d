// SPDX-License-Identifier: Apache-2.0
// AVX2 + FMA kernels. Functions carry a target attribute instead of the TU
// being built with -mavx2, so nothing here leaks into code that runs on CPUs
// without AVX2; the dispatcher only hands these out after a cpuid check.

#include "crossmo/simd.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cstring>
#include <vector>

#define CROSSMO_AVX2 __attribute__((target("avx2,fma")))

namespace crossmo::simd {
namespace {

CROSSMO_AVX2 inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// 4 rows x 8 columns of C against one packed 8-wide panel of B.
CROSSMO_AVX2 inline void micro_4x8(const double* a, std::size_t lda, const double* panel,
                                   double* c, std::size_t ldc, std::size_t k) {
  __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
  __m256d c10 = _mm256_loadu_pd(c + ldc), c11 = _mm256_loadu_pd(c + ldc + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* a3 = a + 3 * lda;
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(panel + p * 8);
    const __m256d b1 = _mm256_loadu_pd(panel + p * 8 + 4);
    __m256d av = _mm256_broadcast_sd(a0 + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a1 + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a2 + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a3 + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + ldc, c10);
  _mm256_storeu_pd(c + ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20);
  _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30);
  _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

CROSSMO_AVX2 inline void micro_1x8(const double* a, const double* panel, double* c,
                                   std::size_t k) {
  __m256d c0 = _mm256_loadu_pd(c), c1 = _mm256_loadu_pd(c + 4);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(panel + p * 8), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(panel + p * 8 + 4), c1);
  }
  _mm256_storeu_pd(c, c0);
  _mm256_storeu_pd(c + 4, c1);
}

CROSSMO_AVX2 void gemm_avx2(const double* a, const double* b, double* c, std::size_t m,
                            std::size_t n, std::size_t k, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * m * n);
  if (m == 0 || n == 0 || k == 0) return;
  const std::size_t n8 = n / 8 * 8;
  if (n8 > 0) {
    thread_local std::vector<double> pack;
    pack.resize(n8 * k);
    for (std::size_t jb = 0; jb < n8; jb += 8) {
      double* panel = pack.data() + jb * k;
      for (std::size_t p = 0; p < k; ++p) std::memcpy(panel + p * 8, b + p * n + jb, 8 * sizeof(double));
    }
    for (std::size_t jb = 0; jb < n8; jb += 8) {
      const double* panel = pack.data() + jb * k;
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) micro_4x8(a + i * k, k, panel, c + i * n + jb, n, k);
      for (; i < m; ++i) micro_1x8(a + i * k, panel, c + i * n + jb, k);
    }
  }
  if (n8 < n) {
    const std::size_t rem = n - n8;
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n + n8;
      const double* arow = a + i * k;
      if (rem >= 4) {
        __m256d acc = _mm256_loadu_pd(crow);
        for (std::size_t p = 0; p < k; ++p)
          acc = _mm256_fmadd_pd(_mm256_broadcast_sd(arow + p), _mm256_loadu_pd(b + p * n + n8), acc);
        _mm256_storeu_pd(crow, acc);
      }
      for (std::size_t j = rem >= 4 ? 4 : 0; j < rem; ++j) {
        double s = crow[j];
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * b[p * n + n8 + j];
        crow[j] = s;
      }
    }
  }
}

CROSSMO_AVX2 double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

CROSSMO_AVX2 void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

CROSSMO_AVX2 void add_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

CROSSMO_AVX2 void mul_avx2(const double* x, const double* y, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

CROSSMO_AVX2 void mul_acc_avx2(const double* x, const double* y, double* acc, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                                              _mm256_loadu_pd(acc + i)));
  for (; i < n; ++i) acc[i] += x[i] * y[i];
}

CROSSMO_AVX2 void scale_avx2(double alpha, double* x, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

CROSSMO_AVX2 double sum_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

CROSSMO_AVX2 double sum_sq_avx2(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

CROSSMO_AVX2 double sq_dist_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

}  // namespace

namespace detail {
const KernelTable kAvx2Table{
    Isa::kAvx2,   gemm_avx2, dot_avx2,    axpy_avx2,   add_avx2,     mul_avx2,
    mul_acc_avx2, scale_avx2, sum_avx2, sum_sq_avx2, sq_dist_avx2,
};
}  // namespace detail

}  // namespace crossmo::simd

#endif
