#pragma once

// Internal numeric kernels shared by the ops. Row-major, contiguous.

#include <algorithm>
#include <cstdint>
#include <vector>

namespace gcanet::kernels {

/// C (M x N) = op(A) * op(B), or C += when `accumulate`. op(A) is M x K: A is
/// stored M x K, or K x M when `ta`. op(B) is K x N: B is stored K x N, or
/// N x K when `tb`.
template <class T>
void gemm(bool ta, bool tb, std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B,
          T* C, bool accumulate) {
  std::vector<T> bt;
  if (tb) {
    bt.resize(static_cast<std::size_t>(K * N));
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t k = 0; k < K; ++k) bt[k * N + n] = B[n * K + k];
    B = bt.data();
  }
  if (!accumulate) std::fill(C, C + M * N, T{0});
  constexpr std::int64_t kBlock = 512;
  for (std::int64_t j0 = 0; j0 < N; j0 += kBlock) {
    const std::int64_t j1 = std::min(N, j0 + kBlock);
    for (std::int64_t i = 0; i < M; ++i) {
      T* crow = C + i * N;
      for (std::int64_t k = 0; k < K; ++k) {
        const T a = ta ? A[k * M + i] : A[i * K + k];
        const T* brow = B + k * N;
        for (std::int64_t j = j0; j < j1; ++j) crow[j] += a * brow[j];
      }
    }
  }
}

/// Output index range [lo, hi) whose input coordinate o*stride - pad + tap
/// falls inside [0, in).
inline void valid_range(std::int64_t out, std::int64_t in, int stride, std::int64_t offset,
                        std::int64_t& lo, std::int64_t& hi) {
  // need 0 <= o*stride + offset < in
  lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  hi = out;
  const std::int64_t limit = in - offset;  // o*stride < limit
  if (limit <= 0) {
    hi = 0;
  } else {
    hi = std::min(out, (limit + stride - 1) / stride);
  }
  if (hi < lo) hi = lo;
}

}  // namespace gcanet::kernels
