#include "vidmem/storage.hpp"

#include <algorithm>

namespace vidmem {

namespace {
thread_local StorageStats tls_stats;
}

StorageStats token_storage_stats() noexcept { return tls_stats; }

void reset_token_storage_peak() noexcept { tls_stats.peak_bytes = tls_stats.live_bytes; }

namespace detail {

void note_alloc(std::size_t bytes) noexcept {
  tls_stats.live_bytes += bytes;
  tls_stats.peak_bytes = std::max(tls_stats.peak_bytes, tls_stats.live_bytes);
}

// Frames freed on another thread than they were allocated on can drive a
// counter below zero; saturate instead of wrapping.
void note_free(std::size_t bytes) noexcept {
  tls_stats.live_bytes -= std::min(bytes, tls_stats.live_bytes);
}

}  // namespace detail
}  // namespace vidmem
