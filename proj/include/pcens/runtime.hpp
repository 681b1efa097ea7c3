#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace pcens {

/// Training allocates and frees a few hundred KB per sample. glibc would hand
/// that memory back to the OS after every sample and fault it in again, so
/// executables call this once at startup to keep it in the heap.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace pcens
