// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel inner loops used by the autograd engine. Every kernel has a
// portable scalar reference and, where the CPU supports it, an AVX2+FMA
// variant. The variant is picked once at startup; CROSSMO_SIMD=scalar forces
// the reference path.

#include <cstddef>
#include <string_view>

namespace crossmo::simd {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  // c[m x n] = a[m x k] * b[k x n] (or += when accumulate), row-major, dense.
  void (*gemm)(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
               std::size_t k, bool accumulate);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = x + y
  void (*add)(const double* x, const double* y, double* out, std::size_t n);
  // out = x * y (elementwise)
  void (*mul)(const double* x, const double* y, double* out, std::size_t n);
  // acc += x * y (elementwise)
  void (*mul_acc)(const double* x, const double* y, double* acc, std::size_t n);
  void (*scale)(double alpha, double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*sum_sq)(const double* x, std::size_t n);
  // sum_i (x_i - y_i)^2
  double (*sq_dist)(const double* x, const double* y, std::size_t n);
};

/// The table used by the library. Selected on first call from CPU features
/// and the CROSSMO_SIMD environment variable.
const KernelTable& kernels();

const KernelTable& scalar_kernels();

/// Nullptr when the binary was built without AVX2 support or the CPU lacks it.
const KernelTable* avx2_kernels();

/// Test hook: switch the active table. Not thread-safe; call before work starts.
void force_isa(Isa isa);

Isa active_isa();

// Implementation tables, one per translation unit.
namespace detail {
extern const KernelTable kScalarTable;
#if defined(__x86_64__) || defined(_M_X64)
extern const KernelTable kAvx2Table;
#endif
}  // namespace detail

}  // namespace crossmo::simd
