#pragma once

#include <cstdint>

#include "core/parallel.hpp"

namespace vqss::core {

// Small dense double GEMM kernels, row-major. Each output row is produced by
// exactly one worker with a fixed accumulation order, so results are
// independent of the thread count.

// C[M,N] = (accumulate ? C : 0) + A[M,K] * B[K,N]
inline void gemm_nn(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C,
                    bool accumulate) {
  parallel_for(M, [&](int64_t i) {
    double* c = C + i * N;
    if (!accumulate)
      for (int64_t j = 0; j < N; ++j) c[j] = 0.0;
    const double* a = A + i * K;
    for (int64_t k = 0; k < K; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      const double* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  });
}

// C[M,N] = (accumulate ? C : 0) + A[M,K] * B[N,K]^T
inline void gemm_nt(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C,
                    bool accumulate) {
  parallel_for(M, [&](int64_t i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double acc = 0.0;
      for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] = accumulate ? c[j] + acc : acc;
    }
  });
}

// C[M,N] = (accumulate ? C : 0) + A[K,M]^T * B[K,N]
inline void gemm_tn(int64_t M, int64_t N, int64_t K, const double* A, const double* B, double* C,
                    bool accumulate) {
  parallel_for(M, [&](int64_t i) {
    double* c = C + i * N;
    if (!accumulate)
      for (int64_t j = 0; j < N; ++j) c[j] = 0.0;
    for (int64_t k = 0; k < K; ++k) {
      const double av = A[k * M + i];
      if (av == 0.0) continue;
      const double* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  });
}

}  // namespace vqss::core
