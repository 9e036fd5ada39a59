// SPDX-License-Identifier: Apache-2.0
//
// Row-major GEMM helpers shared by the tensor, operator and autodiff code.
// All pointers address contiguous row-major storage.
#pragma once

#include <cstddef>

namespace mixt::kernels {

// C[m,n] = beta*C + alpha * op(A) * op(B), where op(A) is m x k and op(B) is k x n.
// trans_a: A is stored k x m; trans_b: B is stored n x k.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, const double* b, double beta, double* c);

// Swap the last two axes of a [outer, rows, cols] block: dst is [outer, cols, rows].
void transpose_inner(const double* src, double* dst, std::size_t outer, std::size_t rows,
                     std::size_t cols);

}  // namespace mixt::kernels
