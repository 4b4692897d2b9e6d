#include "ssmtl/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstddef>
#include <vector>

namespace ssmtl::kernels {

namespace {

// Minimum m*n*k before the parallel path is taken.
constexpr std::size_t kParallelThreshold = 1u << 16;
// Depth of one k-panel; keeps the touched rows of B cache resident across rows of C.
constexpr std::size_t kPanel = 128;

// Row-major copy of the transpose of a rows x cols matrix.
std::vector<double> transposed(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

// C[i0:i1, :] += A[i0:i1, :] * B with A m x k and B k x n, both row-major. Every
// C entry sums its k products in increasing p, whatever the row range, so any
// partition of rows gives identical bits.
void gemm_rows(GemmShape s, const double* a, const double* b, double* c, std::size_t i0,
               std::size_t i1) {
  for (std::size_t p0 = 0; p0 < s.k; p0 += kPanel) {
    const std::size_t p1 = std::min(s.k, p0 + kPanel);
    std::size_t i = i0;
    // Four rows of C share each row of B.
    for (; i + 4 <= i1; i += 4) {
      double* c0 = c + i * s.n;
      double* c1 = c0 + s.n;
      double* c2 = c1 + s.n;
      double* c3 = c2 + s.n;
      const double* a0 = a + i * s.k;
      const double* a1 = a0 + s.k;
      const double* a2 = a1 + s.k;
      const double* a3 = a2 + s.k;
      for (std::size_t p = p0; p < p1; ++p) {
        const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
        const double* b_row = b + p * s.n;
        for (std::size_t j = 0; j < s.n; ++j) {
          const double bj = b_row[j];
          c0[j] += v0 * bj;
          c1[j] += v1 * bj;
          c2[j] += v2 * bj;
          c3[j] += v3 * bj;
        }
      }
    }
    for (; i < i1; ++i) {
      double* c_row = c + i * s.n;
      const double* a_row = a + i * s.k;
      for (std::size_t p = p0; p < p1; ++p) {
        const double a_ip = a_row[p];
        const double* b_row = b + p * s.n;
        for (std::size_t j = 0; j < s.n; ++j) c_row[j] += a_ip * b_row[j];
      }
    }
  }
}

struct Packed {
  const double* a;
  const double* b;
  std::vector<double> a_buf;
  std::vector<double> b_buf;
};

// Brings both operands into the untransposed layout.
Packed pack(Transpose trans_a, Transpose trans_b, GemmShape s, const double* a,
            const double* b) {
  Packed p{a, b, {}, {}};
  if (trans_a == Transpose::Yes) {
    p.a_buf = transposed(a, s.k, s.m);
    p.a = p.a_buf.data();
  }
  if (trans_b == Transpose::Yes) {
    p.b_buf = transposed(b, s.n, s.k);
    p.b = p.b_buf.data();
  }
  return p;
}

}  // namespace

void gemm_serial(Transpose trans_a, Transpose trans_b, GemmShape shape,
                 const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + shape.m * shape.n, 0.0);
  const Packed p = pack(trans_a, trans_b, shape, a, b);
  gemm_rows(shape, p.a, p.b, c, 0, shape.m);
}

void gemm_parallel(Transpose trans_a, Transpose trans_b, GemmShape shape,
                   const double* a, const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + shape.m * shape.n, 0.0);
  const Packed p = pack(trans_a, trans_b, shape, a, b);
#pragma omp parallel
  {
    const auto threads = static_cast<std::size_t>(omp_get_num_threads());
    const auto t = static_cast<std::size_t>(omp_get_thread_num());
    const std::size_t chunk = (shape.m + threads - 1) / threads;
    const std::size_t i0 = std::min(shape.m, t * chunk);
    const std::size_t i1 = std::min(shape.m, i0 + chunk);
    gemm_rows(shape, p.a, p.b, c, i0, i1);
  }
}

void gemm(Transpose trans_a, Transpose trans_b, GemmShape shape,
          const double* a, const double* b, double* c, bool accumulate) {
  const std::size_t work = shape.m * shape.n * shape.k;
  if (work >= kParallelThreshold && shape.m > 1 && max_threads() > 1) {
    gemm_parallel(trans_a, trans_b, shape, a, b, c, accumulate);
  } else {
    gemm_serial(trans_a, trans_b, shape, a, b, c, accumulate);
  }
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace ssmtl::kernels
