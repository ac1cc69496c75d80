#pragma once

namespace fedlips {

// Keeps freed heap memory in the process instead of returning it to the OS.
// Training allocates and frees many same-sized activation buffers of a few
// hundred KiB each; with glibc's defaults every one of them is a fresh mmap
// and a round of page faults. Call once at program start. No-op on non-glibc
// platforms.
void configure_allocator() noexcept;

}  // namespace fedlips
