#pragma once

// Experiment drivers: policy runs over one stream, planted-relevance
// comparisons, the memory-growth benchmark and hyperparameter sweeps.
// Reports carry a canonical section ({spec_echo, rows}) that is a pure
// function of the experiment spec; wall times live outside it.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "vidmem/baselines.hpp"
#include "vidmem/pipeline.hpp"
#include "vidmem/streamio.hpp"

namespace vidmem {

inline constexpr const char* kVersion = "0.1.0";
const char* build_hash() noexcept;

struct StreamSource {
  std::optional<std::filesystem::path> path;
  std::optional<SyntheticSpec> synthetic;
  // Ground truth for file streams; synthetic streams carry their own.
  std::vector<PlantedSegment> planted;
};

/// Axes default to empty (not swept). Points enumerate in declaration order,
/// last axis fastest.
struct SweepGrid {
  std::vector<std::size_t> ltm_cap;
  std::vector<std::size_t> k;
  std::vector<std::size_t> m0;
  std::vector<double> alpha;
  std::vector<double> sigma;
  std::vector<RelevanceBasis> basis;
  std::vector<ReinitMode> reinit;

  std::size_t point_count() const noexcept;
  /// Each point as a partial PipelineConfig JSON override.
  std::vector<nlohmann::json> points() const;
};

struct ExperimentSpec {
  StreamSource stream;
  std::optional<std::vector<double>> question;  // overrides the stream's question
  PipelineConfig pipeline;
  std::vector<PolicyId> policies{PolicyId::moviechat_plus};
  std::optional<SweepGrid> sweep;
  std::vector<std::uint64_t> seeds{0};
  double ema_lambda = 0.9;
  std::size_t sample_count = 16;
  std::size_t max_grid_points = 4096;
  std::vector<std::uint64_t> bench_frames{100, 1000, 10000};
  double bench_relevance = 0.8;
  std::size_t jobs = 1;  // not part of the canonical echo

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);
void to_json(nlohmann::json& j, const SweepGrid& g);
void from_json(const nlohmann::json& j, SweepGrid& g);
void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);

struct RelevanceMetrics {
  double relevant_mass_fraction = 0.0;
  // Entries (slots) overlapping a planted segment over all entries.
  double relevant_slot_fraction = 0.0;
  double slot_recall = 0.0;
  double q_affinity = 0.0;
};

/// Provenance-based retention metrics of a memory against planted segments.
RelevanceMetrics relevance_metrics(std::span<const WeightedFrame> memory,
                                   std::span<const PlantedSegment> planted,
                                   const std::optional<std::vector<double>>& q);

struct ReportRow {
  PolicyId policy = PolicyId::moviechat_plus;
  std::uint64_t seed = 0;
  PipelineConfig config;
  RelevanceMetrics metrics;
  AccountingRecord accounting;
  std::uint64_t instrumented_peak_bytes = 0;
  std::size_t output_frames = 0;
  std::size_t token_count = 0;
  std::uint64_t consolidations = 0;
  double wall_ms = 0.0;
};

struct Report {
  nlohmann::json spec_echo;
  std::vector<ReportRow> rows;

  nlohmann::json canonical_json() const;
  std::uint64_t canonical_hash() const;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Every (policy, grid point, seed) combination; all-or-nothing.
Report run(const ExperimentSpec& spec);

/// Same as run(); refuses grids above spec.max_grid_points.
Report sweep(const ExperimentSpec& spec);

struct PlantEvalSeed {
  std::uint64_t seed = 0;
  double aware = 0.0;
  double agnostic = 0.0;
  double difference = 0.0;
  double aware_slots = 0.0;  // relevant_slot_fraction of each run
  double agnostic_slots = 0.0;
};

struct PlantEvalResult {
  bool applicable = true;
  std::vector<PlantEvalSeed> seeds;
  double mean_difference = 0.0;
  std::size_t wins = 0;  // aware strictly above agnostic
  std::size_t ties = 0;

  nlohmann::json to_json() const;
};

/// Question-aware (configured alpha) against question-agnostic (alpha = 1)
/// on the same synthetic streams, one pair per seed.
PlantEvalResult plant_eval(const ExperimentSpec& spec);

struct BenchRow {
  std::uint64_t frames = 0;
  std::uint64_t peak_resident_bytes = 0;
  std::uint64_t instrumented_peak_bytes = 0;
  double amortized_bytes_per_frame = 0.0;
  double expected_amortized_bytes_per_frame = 0.0;
  std::size_t ltm_entries = 0;
  double wall_ms = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::uint64_t instrumented_bound_bytes = 0;
  bool peak_constant = false;
  bool amortized_within_1pct = false;
  bool instrumented_bounded = false;
  double time_fit_r2 = 0.0;

  bool passed() const noexcept {
    return peak_constant && amortized_within_1pct && instrumented_bounded && time_fit_r2 > 0.95;
  }
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Streams a fully question-relevant synthetic video of each length in
/// spec.bench_frames through the pipeline without materializing it.
BenchResult bench_mem(const ExperimentSpec& spec);

/// Shortest round-trip decimal text for a double.
std::string format_number(double x);

std::uint64_t fnv1a64(std::string_view bytes) noexcept;

}  // namespace vidmem
