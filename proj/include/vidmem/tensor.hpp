#pragma once

// Numeric primitives shared by every memory structure: token matrices,
// weighted frames with provenance, cosine kernels and weighted merging.
// Storage is 64-bit so that chains of weighted merges stay within 1e-9 of
// the exact constituent mean.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vidmem/storage.hpp"

namespace vidmem {

using TokenStorage = std::vector<double, CountingAllocator<double>>;

/// Norm below which a vector is treated as degenerate.
inline constexpr double kZeroNorm = 1e-12;

struct FrameShape {
  std::size_t tokens = 0;  // N
  std::size_t dims = 0;    // D
  bool operator==(const FrameShape&) const = default;
};

/// N x D row-major matrix of finite values.
class TokenMatrix {
 public:
  /// Zero matrix.
  TokenMatrix(std::size_t rows, std::size_t cols);
  TokenMatrix(std::size_t rows, std::size_t cols, std::span<const double> values);
  TokenMatrix(std::size_t rows, std::size_t cols, std::span<const float> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  FrameShape shape() const noexcept { return {rows_, cols_}; }

  std::span<const double> row(std::size_t j) const noexcept {
    return {values_.data() + j * cols_, cols_};
  }
  std::span<double> row(std::size_t j) noexcept { return {values_.data() + j * cols_, cols_}; }
  std::span<const double> values() const noexcept { return {values_.data(), values_.size()}; }
  std::span<double> values() noexcept { return {values_.data(), values_.size()}; }

  double at(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }

  bool operator==(const TokenMatrix& other) const noexcept;

 private:
  std::size_t rows_;
  std::size_t cols_;
  TokenStorage values_;
};

/// Half-open range [begin, end) of source frame indices.
struct Interval {
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::uint64_t length() const noexcept { return end - begin; }
  auto operator<=>(const Interval&) const = default;
};

/// Sorted interval multiset. Touching intervals are coalesced; overlapping
/// ones are kept separately so that total length always equals merge weight.
using Provenance = std::vector<Interval>;

Provenance merge_provenance(const Provenance& a, const Provenance& b);
std::uint64_t provenance_length(const Provenance& p) noexcept;

struct WeightedFrame {
  TokenMatrix tokens;
  std::uint64_t weight = 1;
  Provenance provenance;
  bool context = false;  // injected by short-term re-initialization

  /// Unmerged frame for source index `index`.
  static WeightedFrame source(TokenMatrix tokens, std::uint64_t index);

  bool operator==(const WeightedFrame&) const = default;
};

double cosine(std::span<const double> u, std::span<const double> v);

/// Token mean, L2-normalized.
std::vector<double> frame_descriptor(const TokenMatrix& x);

/// Mean over token index j of cosine(a_j, b_j).
double frame_pair_similarity(const TokenMatrix& a, const TokenMatrix& b);
inline double frame_pair_similarity(const WeightedFrame& a, const WeightedFrame& b) {
  return frame_pair_similarity(a.tokens, b.tokens);
}

WeightedFrame weighted_merge(const WeightedFrame& a, const WeightedFrame& b);

/// Rows whose norm is below kZeroNorm.
std::vector<std::size_t> degenerate_rows(const TokenMatrix& x);

void normalize_in_place(std::span<double> v);

}  // namespace vidmem
