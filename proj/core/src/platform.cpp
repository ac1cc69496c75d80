#include "fedlips/platform.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fedlips {

void configure_allocator() noexcept {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace fedlips
