#pragma once

#include <cstddef>
#include <span>

// Dense matrix kernels used by the autodiff engine.
//
// All matrices are row-major. Each kernel overwrites `c`. The parallel
// versions split work over output rows, so every output element is produced
// by exactly one thread with a fixed accumulation order: results do not depend
// on the thread count.
namespace advx::kernels {

// c[n,m] = a[n,k] * b[k,m]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);

// c[n,m] = a[k,n]^T * b[k,m]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);

// c[n,m] = a[n,k] * b[m,k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);

// out[j] = sum_i a[i,j] for a[n,m]
void column_sums(std::span<const double> a, std::span<double> out, std::size_t n,
                 std::size_t m);

// Number of threads the parallel kernels will use.
int max_threads();

// Triple-loop serial versions. Kept as the test oracle and benchmark baseline.
namespace reference {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);
void column_sums(std::span<const double> a, std::span<double> out, std::size_t n,
                 std::size_t m);

}  // namespace reference
}  // namespace advx::kernels
