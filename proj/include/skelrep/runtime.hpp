#pragma once

// Process-level tuning knobs for the numeric workloads. Training churns
// multi-megabyte tensors every step; with glibc defaults those allocations
// round-trip through mmap and fresh page faults. Raising the thresholds once
// at startup keeps them on the heap free list.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace skelrep {

inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace skelrep
