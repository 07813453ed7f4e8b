#pragma once

// Shared test helpers: seeded generators and from-scratch reference
// implementations used as oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vidmem/consolidation.hpp"
#include "vidmem/tensor.hpp"

namespace testsupport {

using namespace vidmem;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::size_t uniform_int(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(gen_);
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen_); }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline TokenMatrix random_matrix(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<double> v(n * d);
  for (double& x : v) x = rng.normal();
  return TokenMatrix(n, d, v);
}

inline std::vector<WeightedFrame> random_window(Rng& rng, std::size_t k, std::size_t n, std::size_t d,
                                                std::uint64_t first_index = 0) {
  std::vector<WeightedFrame> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(WeightedFrame::source(random_matrix(rng, n, d), first_index + i));
  return out;
}

/// Extended-precision cosine, written without the library's helpers.
inline long double oracle_cosine(std::span<const double> u, std::span<const double> v) {
  long double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += static_cast<long double>(u[i]) * v[i];
    uu += static_cast<long double>(u[i]) * u[i];
    vv += static_cast<long double>(v[i]) * v[i];
  }
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

inline long double oracle_pair_similarity(const TokenMatrix& a, const TokenMatrix& b) {
  long double s = 0;
  for (std::size_t j = 0; j < a.rows(); ++j) s += oracle_cosine(a.row(j), b.row(j));
  return s / static_cast<long double>(a.rows());
}

struct ReferenceResult {
  std::vector<WeightedFrame> frames;
  std::vector<MergeStep> trace;
};

/// Greedy adjacent merge recomputing every adjacent similarity from scratch
/// on each iteration, as written in the pseudocode.
inline ReferenceResult reference_greedy_merge(std::vector<WeightedFrame> frames, std::size_t target) {
  ReferenceResult r;
  std::size_t step = 0;
  while (frames.size() > target) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t m = 0; m + 1 < frames.size(); ++m) {
      const double s = frame_pair_similarity(frames[m].tokens, frames[m + 1].tokens);
      if (s > best_sim) {
        best_sim = s;
        best = m;
      }
    }
    WeightedFrame merged = weighted_merge(frames[best], frames[best + 1]);
    frames[best] = std::move(merged);
    frames.erase(frames.begin() + static_cast<std::ptrdiff_t>(best) + 1);
    r.trace.push_back({step++, best, best_sim});
  }
  r.frames = std::move(frames);
  return r;
}

/// Weighted mean over the original source frames named by a provenance list
/// (intervals may repeat; each occurrence counts).
inline std::vector<long double> provenance_mean(const Provenance& p, const std::vector<TokenMatrix>& sources) {
  const std::size_t size = sources.front().values().size();
  std::vector<long double> acc(size, 0);
  std::uint64_t count = 0;
  for (const Interval& iv : p) {
    for (std::uint64_t i = iv.begin; i < iv.end; ++i) {
      const auto v = sources[i].values();
      for (std::size_t k = 0; k < size; ++k) acc[k] += v[k];
      ++count;
    }
  }
  for (auto& x : acc) x /= static_cast<long double>(count);
  return acc;
}

inline double max_abs_diff(std::span<const double> a, const std::vector<long double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(a[i]) - b[i])));
  }
  return worst;
}

/// Frame whose every token equals `row`.
inline TokenMatrix constant_frame(std::size_t n, const std::vector<double>& row) {
  std::vector<double> v;
  for (std::size_t j = 0; j < n; ++j) v.insert(v.end(), row.begin(), row.end());
  return TokenMatrix(n, row.size(), v);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vidmem_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
