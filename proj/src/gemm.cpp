#include "gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace densecount::detail {

namespace {

// Register budget: 32 vector registers with AVX-512, 16 otherwise.
#if defined(__AVX512F__)
constexpr int kVectorBytes = 64;
constexpr int kMaxRows = 12;
#else
constexpr int kVectorBytes = 32;
constexpr int kMaxRows = 6;
#endif

template <typename T>
struct Vec {
  typedef T type __attribute__((vector_size(kVectorBytes)));
  static constexpr int kLanes = kVectorBytes / static_cast<int>(sizeof(T));
};

constexpr int kPanelVectors = 2;

// Rows [0, R) of a tile against one packed B panel of kPanelVectors vectors.
template <typename T, int R>
void micro_kernel(const T* a, std::int64_t lda, const T* panel, std::int64_t k, T* c, std::int64_t ldc) {
  using V = typename Vec<T>::type;
  constexpr int L = Vec<T>::kLanes;
  V acc[R][kPanelVectors];
  for (int r = 0; r < R; ++r) {
    for (int v = 0; v < kPanelVectors; ++v) acc[r][v] = V{};
  }
  for (std::int64_t p = 0; p < k; ++p) {
    V bv[kPanelVectors];
    std::memcpy(bv, panel + p * kPanelVectors * L, sizeof(bv));
    for (int r = 0; r < R; ++r) {
      const T s = a[r * lda + p];
      for (int v = 0; v < kPanelVectors; ++v) acc[r][v] += s * bv[v];
    }
  }
  for (int r = 0; r < R; ++r) std::memcpy(c + r * ldc, acc[r], sizeof(acc[r]));
}

template <typename T>
void row_tile(int rows, const T* a, std::int64_t lda, const T* panel, std::int64_t k, T* c, std::int64_t ldc) {
  switch (rows) {
    case 12: micro_kernel<T, 12>(a, lda, panel, k, c, ldc); break;
    case 11: micro_kernel<T, 11>(a, lda, panel, k, c, ldc); break;
    case 10: micro_kernel<T, 10>(a, lda, panel, k, c, ldc); break;
    case 9: micro_kernel<T, 9>(a, lda, panel, k, c, ldc); break;
    case 8: micro_kernel<T, 8>(a, lda, panel, k, c, ldc); break;
    case 7: micro_kernel<T, 7>(a, lda, panel, k, c, ldc); break;
    case 6: micro_kernel<T, 6>(a, lda, panel, k, c, ldc); break;
    case 5: micro_kernel<T, 5>(a, lda, panel, k, c, ldc); break;
    case 4: micro_kernel<T, 4>(a, lda, panel, k, c, ldc); break;
    case 3: micro_kernel<T, 3>(a, lda, panel, k, c, ldc); break;
    case 2: micro_kernel<T, 2>(a, lda, panel, k, c, ldc); break;
    default: micro_kernel<T, 1>(a, lda, panel, k, c, ldc); break;
  }
}

}  // namespace

template <typename T>
void sequential_gemm(const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T* c, std::int64_t ldc,
                     std::int64_t m, std::int64_t k, std::int64_t n) {
  constexpr std::int64_t width = kPanelVectors * Vec<T>::kLanes;
  std::vector<T> panel(static_cast<std::size_t>(k * width));
  T staging[kMaxRows * width];
  for (std::int64_t j0 = 0; j0 < n; j0 += width) {
    const std::int64_t cols = std::min(width, n - j0);
    // Pack B[:, j0:j0+width] contiguously, zero-filling the ragged edge.
    for (std::int64_t p = 0; p < k; ++p) {
      T* dst = panel.data() + p * width;
      const T* src = b + p * ldb + j0;
      std::copy(src, src + cols, dst);
      std::fill(dst + cols, dst + width, T(0));
    }
    for (std::int64_t i0 = 0; i0 < m; i0 += kMaxRows) {
      const int rows = static_cast<int>(std::min<std::int64_t>(kMaxRows, m - i0));
      if (cols == width) {
        row_tile(rows, a + i0 * lda, lda, panel.data(), k, c + i0 * ldc + j0, ldc);
      } else {
        row_tile(rows, a + i0 * lda, lda, panel.data(), k, staging, width);
        for (int r = 0; r < rows; ++r) std::copy(staging + r * width, staging + r * width + cols, c + (i0 + r) * ldc + j0);
      }
    }
  }
}

template void sequential_gemm(const float*, std::int64_t, const float*, std::int64_t, float*, std::int64_t,
                              std::int64_t, std::int64_t, std::int64_t);
template void sequential_gemm(const double*, std::int64_t, const double*, std::int64_t, double*, std::int64_t,
                              std::int64_t, std::int64_t, std::int64_t);

}  // namespace densecount::detail
