#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vqss::core {

// Global worker count for data-parallel loops. 0 means "hardware default".
void set_num_threads(int n);
int num_threads();

// Static-split parallel loop. Every index is computed by exactly one worker
// and all accumulation happens inside the body, so results do not depend on
// the thread count. Bodies must write disjoint outputs.
template <typename F>
void parallel_for(int64_t n, F&& body) {
  if (n <= 0) return;
#ifdef _OPENMP
  if (num_threads() > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(num_threads())
    for (int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (int64_t i = 0; i < n; ++i) body(i);
}

// Chunked variant for elementwise kernels: body(lo, hi) handles [lo, hi).
// Safe only when every element is computed independently.
template <typename F>
void parallel_chunks(int64_t n, F&& body) {
  if (n <= 0) return;
  const int nt = num_threads();
  if (nt <= 1 || n < 4096) {
    body(0, n);
    return;
  }
  const int64_t chunk = (n + nt - 1) / nt;
  parallel_for(nt, [&](int64_t t) {
    const int64_t lo = t * chunk;
    const int64_t hi = lo + chunk < n ? lo + chunk : n;
    if (lo < hi) body(lo, hi);
  });
}

}  // namespace vqss::core
