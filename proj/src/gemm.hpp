#pragma once

#include <cstdint>

namespace densecount::detail {

// C[m, n] = sum_k A[m, k] * B[k, n] for row-major operands with leading
// dimensions lda, ldb, ldc. Each output element accumulates its K products
// strictly in ascending k with one running sum, so inserting or removing
// terms whose A entry is zero leaves every other element bitwise unchanged
// and row count does not affect a row's result. The forward convolution uses
// this so that pruning all-zero channels is an exact no-op.
template <typename T>
void sequential_gemm(const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T* c, std::int64_t ldc,
                     std::int64_t m, std::int64_t k, std::int64_t n);

}  // namespace densecount::detail
