#include "knnmts/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace knnmts {

void configure_allocator() {
#if defined(__GLIBC__)
  // 32 MiB is the largest mmap threshold glibc accepts; larger values are
  // rejected and leave the dynamic default in place.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace knnmts
