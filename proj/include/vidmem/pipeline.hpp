#pragma once

// Streaming orchestration: frames enter the short-term buffer; each time it
// overflows, the popped window is consolidated into long-term memory and the
// buffer is re-seeded. Representations are assembled in global mode (long-term
// only) or breakpoint mode (long-term, short-term and the live frame).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "vidmem/consolidation.hpp"
#include "vidmem/memory.hpp"
#include "vidmem/tensor.hpp"

namespace vidmem {

enum class ReinitMode { merged_tokens, last_k, uniform_sample, none };

const char* to_string(ReinitMode mode) noexcept;
/// Accepts the CLI spellings (merged, last, uniform, none) and the long forms.
ReinitMode parse_reinit(const std::string& text);

struct PipelineConfig {
  ConsolidationConfig consolidation;
  std::size_t ltm_capacity = 256;
  ReinitMode reinit = ReinitMode::merged_tokens;
  std::size_t pe_base_length = 32;
  std::size_t pe_dim = 64;
  double pe_blend = 0.4;

  void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& cfg);
void from_json(const nlohmann::json& j, PipelineConfig& cfg);

struct Buffered {};
struct Consolidated {
  ConsolidationReport report;
};
using StepEvent = std::variant<Buffered, Consolidated>;

struct PipelineCounters {
  std::uint64_t frames_pushed = 0;
  std::uint64_t consolidations_run = 0;  // includes flushes
  std::uint64_t seeded_weight = 0;       // cumulative weight re-injected by reinit
  // Full-window consolidations only; drive the amortized accounting.
  std::uint64_t window_inputs = 0;
  std::uint64_t window_outputs = 0;
  bool operator==(const PipelineCounters&) const = default;
};

struct AccountingRecord {
  double raw_bytes_per_frame = 0.0;
  double amortized_bytes_per_frame = 0.0;
  std::uint64_t peak_resident_bytes = 0;
};

/// Per-slot bookkeeping charged on top of token bytes in the peak model.
inline constexpr std::uint64_t kSlotOverheadBytes = 64;
/// Bytes per stored scalar in the accounting model (32-bit interchange).
inline constexpr std::uint64_t kModelScalarBytes = 4;

enum class RepresentationMode { global, breakpoint };

struct RepresentationEntry {
  WeightedFrame frame;
  std::optional<std::vector<double>> position;
};

struct VideoRepresentation {
  RepresentationMode mode = RepresentationMode::global;
  std::vector<RepresentationEntry> entries;
  std::optional<std::uint64_t> timestamp;
};

class Pipeline {
 public:
  Pipeline(FrameShape shape, PipelineConfig cfg,
           std::optional<std::vector<double>> question = std::nullopt);

  StepEvent step(TokenMatrix frame);

  /// Consolidates whatever is left in the short-term buffer.
  std::optional<ConsolidationReport> flush();

  VideoRepresentation assemble_global() const;
  /// `t` must be the index of the most recently pushed frame.
  VideoRepresentation assemble_breakpoint(std::uint64_t t) const;

  AccountingRecord bytes_model() const;

  const ShortTermBuffer& short_term() const noexcept { return short_; }
  const LongTermMemory& long_term() const noexcept { return long_; }
  const PipelineConfig& config() const noexcept { return cfg_; }
  const std::optional<std::vector<double>>& question() const noexcept { return question_; }
  const PipelineCounters& counters() const noexcept { return counters_; }
  const PositionalTable& positions() const noexcept { return table_; }
  FrameShape shape() const noexcept { return shape_; }
  /// Nothing left in the short-term buffer.
  bool flushed() const noexcept { return short_.empty(); }

  /// Total weight across both memories.
  std::uint64_t resident_weight() const noexcept;

  /// Writes `<stem>.json` and `<stem>.mces` (long-term entries, then
  /// short-term frames, then the live frame; question in the header slot).
  std::filesystem::path export_snapshot(const std::filesystem::path& stem) const;
  static Pipeline import_snapshot(const std::filesystem::path& json_path);

 private:
  std::vector<WeightedFrame> seed_for_reinit(const std::vector<WeightedFrame>& popped,
                                             const std::vector<WeightedFrame>& consolidated,
                                             std::size_t target) const;

  FrameShape shape_;
  PipelineConfig cfg_;
  std::optional<std::vector<double>> question_;
  ShortTermBuffer short_;
  LongTermMemory long_;
  PositionalTable table_;
  PipelineCounters counters_;
  std::optional<TokenMatrix> current_;
};

nlohmann::json representation_json(const VideoRepresentation& rep);

}  // namespace vidmem
