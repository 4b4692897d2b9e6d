#pragma once

#include <cstddef>

// Dense row-major matrix-product kernels.
//
// Every kernel computes C (m x n) = op(A) * op(B), optionally accumulating into
// C, where op(A) is m x k and op(B) is k x n. Each output row is produced by the
// same row-range routine in the serial and the OpenMP variants, so both return
// bit-identical results regardless of the thread count.

namespace ssmtl::kernels {

enum class Transpose { No, Yes };

struct GemmShape {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
};

// Single-threaded reference implementation.
void gemm_serial(Transpose trans_a, Transpose trans_b, GemmShape shape,
                 const double* a, const double* b, double* c, bool accumulate);

// Rows of C are distributed over OpenMP threads.
void gemm_parallel(Transpose trans_a, Transpose trans_b, GemmShape shape,
                   const double* a, const double* b, double* c, bool accumulate);

// Picks the parallel kernel for products large enough to amortize the fork.
void gemm(Transpose trans_a, Transpose trans_b, GemmShape shape,
          const double* a, const double* b, double* c, bool accumulate);

int max_threads();

}  // namespace ssmtl::kernels
