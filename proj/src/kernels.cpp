#include "advx/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace advx::kernels {
namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 16;
constexpr std::size_t kColBlock = 256;

bool worth_parallel(std::size_t n, std::size_t k, std::size_t m) {
  return n * k * m >= kParallelWork;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const auto blocks = static_cast<std::int64_t>((n + 3) / 4);
#pragma omp parallel for schedule(static) if (worth_parallel(n, k, m))
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * 4;
    const std::size_t rows = std::min<std::size_t>(4, n - i0);
    for (std::size_t j0 = 0; j0 < m; j0 += kColBlock) {
      const std::size_t jn = std::min(m, j0 + kColBlock);
      for (std::size_t r = 0; r < rows; ++r) {
        std::fill(C + (i0 + r) * m + j0, C + (i0 + r) * m + jn, 0.0);
      }
      if (rows == 4) {
        double* c0 = C + i0 * m;
        double* c1 = c0 + m;
        double* c2 = c1 + m;
        double* c3 = c2 + m;
        const double* a0 = A + i0 * k;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * m;
          const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
#pragma omp simd
          for (std::size_t j = j0; j < jn; ++j) {
            const double bj = brow[j];
            c0[j] += v0 * bj;
            c1[j] += v1 * bj;
            c2[j] += v2 * bj;
            c3[j] += v3 * bj;
          }
        }
      } else {
        for (std::size_t r = 0; r < rows; ++r) {
          double* crow = C + (i0 + r) * m;
          const double* arow = A + (i0 + r) * k;
          for (std::size_t p = 0; p < k; ++p) {
            const double v = arow[p];
            const double* brow = B + p * m;
#pragma omp simd
            for (std::size_t j = j0; j < jn; ++j) crow[j] += v * brow[j];
          }
        }
      }
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const auto blocks = static_cast<std::int64_t>((n + 3) / 4);
#pragma omp parallel for schedule(static) if (worth_parallel(n, k, m))
  for (std::int64_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = static_cast<std::size_t>(blk) * 4;
    const std::size_t rows = std::min<std::size_t>(4, n - i0);
    for (std::size_t j0 = 0; j0 < m; j0 += kColBlock) {
      const std::size_t jn = std::min(m, j0 + kColBlock);
      for (std::size_t r = 0; r < rows; ++r) {
        std::fill(C + (i0 + r) * m + j0, C + (i0 + r) * m + jn, 0.0);
      }
      if (rows == 4) {
        double* c0 = C + i0 * m;
        double* c1 = c0 + m;
        double* c2 = c1 + m;
        double* c3 = c2 + m;
        for (std::size_t p = 0; p < k; ++p) {
          const double* acol = A + p * n + i0;
          const double* brow = B + p * m;
          const double v0 = acol[0], v1 = acol[1], v2 = acol[2], v3 = acol[3];
#pragma omp simd
          for (std::size_t j = j0; j < jn; ++j) {
            const double bj = brow[j];
            c0[j] += v0 * bj;
            c1[j] += v1 * bj;
            c2[j] += v2 * bj;
            c3[j] += v3 * bj;
          }
        }
      } else {
        for (std::size_t r = 0; r < rows; ++r) {
          double* crow = C + (i0 + r) * m;
          for (std::size_t p = 0; p < k; ++p) {
            const double v = A[p * n + i0 + r];
            const double* brow = B + p * m;
#pragma omp simd
            for (std::size_t j = j0; j < jn; ++j) crow[j] += v * brow[j];
          }
        }
      }
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (worth_parallel(n, k, m))
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    const double* arow = A + i * k;
    std::size_t j = 0;
    for (; j + 4 <= m; j += 4) {
      const double* b0 = B + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
      for (std::size_t p = 0; p < k; ++p) {
        const double v = arow[p];
        s0 += v * b0[p];
        s1 += v * b1[p];
        s2 += v * b2[p];
        s3 += v * b3[p];
      }
      C[i * m + j] = s0;
      C[i * m + j + 1] = s1;
      C[i * m + j + 2] = s2;
      C[i * m + j + 3] = s3;
    }
    for (; j < m; ++j) {
      const double* brow = B + j * k;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      C[i * m + j] = s;
    }
  }
}

void column_sums(std::span<const double> a, std::span<double> out, std::size_t n,
                 std::size_t m) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data() + i * m;
#pragma omp simd
    for (std::size_t j = 0; j < m; ++j) out[j] += arow[j];
  }
}

namespace reference {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * m + j];
      c[i * m + j] = s;
    }
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * n + i] * b[p * m + j];
      c[i * m + j] = s;
    }
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * m + j] = s;
    }
  }
}

void column_sums(std::span<const double> a, std::span<double> out, std::size_t n,
                 std::size_t m) {
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i * m + j];
    out[j] = s;
  }
}

}  // namespace reference
}  // namespace advx::kernels
