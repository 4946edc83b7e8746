// Allocator tuning for the training workload: the graph allocates and frees
// multi-megabyte activation buffers every step. Keeping large chunks in the
// heap instead of round-tripping them through mmap avoids re-faulting the
// same pages thousands of times.

#if defined(__GLIBC__) || defined(__linux__)
#include <malloc.h>

namespace {

struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, -1);
  }
};

const MallocTuning g_malloc_tuning{};

}  // namespace
#endif
