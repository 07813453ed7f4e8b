#include "vidmem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vidmem/error.hpp"

namespace vidmem {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ZeroNorm: return "ZeroNorm";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::IoFailure: return "IoFailure";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::Truncated: return "Truncated";
    case Errc::InvalidSpec: return "InvalidSpec";
    case Errc::BufferNotEmpty: return "BufferNotEmpty";
    case Errc::SeedTooLarge: return "SeedTooLarge";
    case Errc::PositionOutOfRange: return "PositionOutOfRange";
    case Errc::MemoryTooLongForTable: return "MemoryTooLongForTable";
    case Errc::InvalidTarget: return "InvalidTarget";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::MissingQuestion: return "MissingQuestion";
    case Errc::InvalidLambda: return "InvalidLambda";
    case Errc::NotFlushed: return "NotFlushed";
    case Errc::StaleTimestamp: return "StaleTimestamp";
    case Errc::GridTooLarge: return "GridTooLarge";
    case Errc::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

namespace {

void check_shape(std::size_t rows, std::size_t cols, std::size_t count) {
  if (rows == 0 || cols == 0) {
    throw Error(Errc::ShapeMismatch, "token matrix needs N >= 1 and D >= 1");
  }
  if (count != rows * cols) {
    throw Error(Errc::ShapeMismatch, "expected " + std::to_string(rows * cols) + " values, got " +
                                         std::to_string(count));
  }
}

template <class T>
void check_finite(std::span<const T> values, std::size_t cols) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(Errc::NonFiniteValue, "token " + std::to_string(i / cols) + ", dim " +
                                            std::to_string(i % cols));
    }
  }
}

double dot(std::span<const double> u, std::span<const double> v) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

}  // namespace

TokenMatrix::TokenMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  check_shape(rows, cols, rows * cols);
  values_.assign(rows * cols, 0.0);
}

TokenMatrix::TokenMatrix(std::size_t rows, std::size_t cols, std::span<const double> values)
    : rows_(rows), cols_(cols) {
  check_shape(rows, cols, values.size());
  check_finite(values, cols);
  values_.assign(values.begin(), values.end());
}

TokenMatrix::TokenMatrix(std::size_t rows, std::size_t cols, std::span<const float> values)
    : rows_(rows), cols_(cols) {
  check_shape(rows, cols, values.size());
  check_finite(values, cols);
  values_.assign(values.begin(), values.end());
}

bool TokenMatrix::operator==(const TokenMatrix& other) const noexcept {
  return rows_ == other.rows_ && cols_ == other.cols_ &&
         std::equal(values_.begin(), values_.end(), other.values_.begin());
}

Provenance merge_provenance(const Provenance& a, const Provenance& b) {
  Provenance all;
  all.reserve(a.size() + b.size());
  all.insert(all.end(), a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());

  Provenance out;
  out.reserve(all.size());
  for (const Interval& iv : all) {
    if (!out.empty() && out.back().end == iv.begin) {
      out.back().end = iv.end;
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

std::uint64_t provenance_length(const Provenance& p) noexcept {
  std::uint64_t n = 0;
  for (const Interval& iv : p) n += iv.length();
  return n;
}

WeightedFrame WeightedFrame::source(TokenMatrix tokens, std::uint64_t index) {
  return WeightedFrame{std::move(tokens), 1, {Interval{index, index + 1}}, false};
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(Errc::DimensionMismatch,
                std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  }
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu < kZeroNorm || nv < kZeroNorm) throw Error(Errc::ZeroNorm, "cosine of a zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

void normalize_in_place(std::span<double> v) {
  const double n = std::sqrt(dot(v, v));
  if (n < kZeroNorm) throw Error(Errc::ZeroNorm, "cannot normalize a zero vector");
  for (double& x : v) x /= n;
}

std::vector<double> frame_descriptor(const TokenMatrix& x) {
  std::vector<double> mean(x.cols(), 0.0);
  for (std::size_t j = 0; j < x.rows(); ++j) {
    const auto r = x.row(j);
    for (std::size_t d = 0; d < r.size(); ++d) mean[d] += r[d];
  }
  for (double& m : mean) m /= static_cast<double>(x.rows());
  normalize_in_place(mean);
  return mean;
}

double frame_pair_similarity(const TokenMatrix& a, const TokenMatrix& b) {
  if (a.shape() != b.shape()) {
    throw Error(Errc::DimensionMismatch, "frame shapes differ");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < a.rows(); ++j) {
    try {
      total += cosine(a.row(j), b.row(j));
    } catch (const Error& e) {
      if (e.code() != Errc::ZeroNorm) throw;
      throw Error(Errc::ZeroNorm, "degenerate token " + std::to_string(j));
    }
  }
  return total / static_cast<double>(a.rows());
}

WeightedFrame weighted_merge(const WeightedFrame& a, const WeightedFrame& b) {
  if (a.tokens.shape() != b.tokens.shape()) {
    throw Error(Errc::DimensionMismatch, "cannot merge frames of different shape");
  }
  const double wa = static_cast<double>(a.weight);
  const double wb = static_cast<double>(b.weight);
  const double total = wa + wb;

  TokenMatrix merged(a.tokens.rows(), a.tokens.cols());
  auto out = merged.values();
  const auto va = a.tokens.values();
  const auto vb = b.tokens.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (wa * va[i] + wb * vb[i]) / total;

  return WeightedFrame{std::move(merged), a.weight + b.weight,
                       merge_provenance(a.provenance, b.provenance), a.context && b.context};
}

std::vector<std::size_t> degenerate_rows(const TokenMatrix& x) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < x.rows(); ++j) {
    const auto r = x.row(j);
    if (std::sqrt(dot(r, r)) < kZeroNorm) out.push_back(j);
  }
  return out;
}

}  // namespace vidmem
