#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "vidmem/consolidation.hpp"
#include "vidmem/tensor.hpp"

namespace vidmem {

// ---------------------------------------------------------------------------
// Short-term memory

struct Accepted {};
struct Full {
  std::vector<WeightedFrame> popped;
};
using IngestOutcome = std::variant<Accepted, Full>;

/// Fixed-capacity buffer of K = C * G frames. Filling past K pops the whole
/// buffer; the frame that overflowed starts the next fill.
class ShortTermBuffer {
 public:
  ShortTermBuffer(FrameShape shape, std::size_t window_size, std::size_t windows_per_fill);

  IngestOutcome push_frame(TokenMatrix frame);

  /// True when the next push would overflow.
  bool full() const noexcept { return frames_.size() >= capacity_; }

  /// Removes and returns the current contents.
  std::vector<WeightedFrame> drain();

  /// Seeds an empty buffer with consolidated frames (flagged as context).
  void reinit(std::vector<WeightedFrame> seed);

  /// Restores raw contents, e.g. from a snapshot; no flags are touched.
  void restore(std::vector<WeightedFrame> frames, std::uint64_t next_source_index);

  std::span<const WeightedFrame> frames() const noexcept { return frames_; }
  std::size_t size() const noexcept { return frames_.size(); }
  bool empty() const noexcept { return frames_.empty(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t window_size() const noexcept { return window_size_; }
  std::size_t windows_per_fill() const noexcept { return windows_per_fill_; }
  FrameShape shape() const noexcept { return shape_; }
  std::uint64_t next_source_index() const noexcept { return next_source_index_; }
  /// Number of complete C-frame sliding windows pushed so far.
  std::uint64_t windows_completed() const noexcept { return next_source_index_ / window_size_; }

 private:
  FrameShape shape_;
  std::size_t window_size_;
  std::size_t windows_per_fill_;
  std::size_t capacity_;
  std::vector<WeightedFrame> frames_;
  std::uint64_t next_source_index_ = 0;
};

// ---------------------------------------------------------------------------
// Long-term memory

/// Append-ordered consolidated frames with strictly increasing position ids.
/// Overflow past the capacity is compacted by greedy adjacent merging; a
/// merged entry keeps the smaller position id.
class LongTermMemory {
 public:
  LongTermMemory(FrameShape shape, std::size_t capacity);

  void append(std::vector<WeightedFrame> frames);

  /// Merges the most similar adjacent entries until size() <= capacity().
  /// Returns the merge steps taken.
  std::vector<MergeStep> overflow_compact();

  std::span<const WeightedFrame> entries() const noexcept { return entries_; }
  std::span<const std::uint64_t> position_ids() const noexcept { return ids_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t capacity() const noexcept { return capacity_; }
  FrameShape shape() const noexcept { return shape_; }
  std::uint64_t total_weight() const noexcept;
  std::uint64_t compactions() const noexcept { return compaction_merges_; }

  /// Snapshot metadata; token matrices travel in the MCES sidecar.
  nlohmann::json metadata_json() const;
  /// Rebuilds from metadata plus tokens (one matrix per entry, same order).
  static LongTermMemory from_parts(FrameShape shape, std::size_t capacity,
                                   const nlohmann::json& metadata,
                                   std::vector<TokenMatrix> tokens);

 private:
  FrameShape shape_;
  std::size_t capacity_;
  std::vector<WeightedFrame> entries_;
  std::vector<std::uint64_t> ids_;
  std::vector<double> sims_;  // cached adjacent similarities
  std::uint64_t next_id_ = 0;
  std::uint64_t compaction_merges_ = 0;
};

nlohmann::json frame_metadata_json(const WeightedFrame& f);
WeightedFrame frame_from_metadata(const nlohmann::json& j, TokenMatrix tokens);

/// Writes `<stem>.json` and, if non-empty, `<stem>.mces`. Returns the JSON path.
std::filesystem::path export_snapshot(const LongTermMemory& ltm, const std::filesystem::path& stem);
LongTermMemory import_snapshot(const std::filesystem::path& json_path);

// ---------------------------------------------------------------------------
// Positional encodings

/// Base table of n encodings extended to n^2 positions: position k >= n
/// maps to blend * base[k / n] + (1 - blend) * base[k % n].
class PositionalTable {
 public:
  PositionalTable(std::vector<std::vector<double>> base, double blend = 0.4);

  /// Fixed sinusoidal base table (no learned parameters).
  static PositionalTable sinusoidal(std::size_t base_length, std::size_t dim, double blend = 0.4);

  std::size_t base_length() const noexcept { return base_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  double blend() const noexcept { return blend_; }
  std::uint64_t max_positions() const noexcept {
    return std::uint64_t{base_.size()} * base_.size();
  }
  std::span<const double> base(std::size_t i) const noexcept { return base_[i]; }

  std::vector<double> extended_position(std::uint64_t k) const;

 private:
  std::vector<std::vector<double>> base_;
  std::size_t dim_;
  double blend_;
};

/// All position pairs (a < b) whose encodings lie within `tolerance`
/// (Euclidean). Brute force over the n^2 extended table.
std::vector<std::pair<std::uint64_t, std::uint64_t>> find_collisions(const PositionalTable& table,
                                                                     double tolerance = 1e-9);

std::vector<std::pair<WeightedFrame, std::vector<double>>> assign_positions(
    const LongTermMemory& ltm, const PositionalTable& table);

}  // namespace vidmem
