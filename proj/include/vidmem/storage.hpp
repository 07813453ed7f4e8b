#pragma once

#include <cstddef>
#include <memory>
#include <new>

namespace vidmem {

// Byte counters for token storage, tracked per thread so that independent
// pipelines on worker threads measure only their own frames.
struct StorageStats {
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;
};

StorageStats token_storage_stats() noexcept;

// Restarts the high-water mark at the current live byte count.
void reset_token_storage_peak() noexcept;

namespace detail {
void note_alloc(std::size_t bytes) noexcept;
void note_free(std::size_t bytes) noexcept;
}  // namespace detail

template <class T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <class U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    detail::note_alloc(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    detail::note_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <class U>
  bool operator==(const CountingAllocator<U>&) const noexcept { return true; }
};

}  // namespace vidmem
