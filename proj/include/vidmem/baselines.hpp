#pragma once

// Comparator memory policies. Each returns WeightedFrames so the harness can
// score them with the same provenance metrics as the consolidating pipeline.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vidmem/tensor.hpp"

namespace vidmem {

enum class PolicyId { no_memory, spatial_pool, temporal_pool, ema, moviechat, moviechat_plus };

const char* to_string(PolicyId id) noexcept;
PolicyId parse_policy(const std::string& text);

/// Uniformly samples frames floor(i * T / count), deduplicated.
std::vector<WeightedFrame> no_memory(std::span<const TokenMatrix> frames,
                                     std::size_t sample_count = 16);

/// One single-token frame per input frame (mean over tokens).
std::vector<WeightedFrame> spatial_pool(std::span<const TokenMatrix> frames);

/// Token-wise mean over time. May be degenerate (see degenerate_rows).
WeightedFrame temporal_pool(std::span<const TokenMatrix> frames);

/// m_0 = x_0, m_t = lambda * m_{t-1} + (1 - lambda) * x_t.
WeightedFrame ema(std::span<const TokenMatrix> frames, double lambda);

/// Tokens handed to a decoder under each policy's budget.
std::size_t policy_token_count(std::span<const WeightedFrame> output);

}  // namespace vidmem
