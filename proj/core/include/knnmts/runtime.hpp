#pragma once

namespace knnmts {

/// Keeps freed tensor buffers in the process heap instead of returning them
/// to the OS after every op. Training allocates and frees many multi-megabyte
/// buffers per step, and with the default glibc thresholds each one becomes
/// a fresh mmap with page faults. No-op on other C libraries.
void configure_allocator();

}  // namespace knnmts
