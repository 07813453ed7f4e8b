#pragma once

// Question-aware consolidation: relevance gating picks a target count M,
// then the most similar adjacent pair of frames is merged (weighted
// average) until M frames remain.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "vidmem/tensor.hpp"

namespace vidmem {

enum class RelevanceBasis { mean, min, max };

/// How a frame is compared against the question vector.
enum class QuestionPooling {
  descriptor,  // cosine(frame_descriptor(x), q)
  per_token,   // mean_j cosine(x_j, q)
};

struct ConsolidationConfig {
  std::size_t k = 16;  // short-term capacity, = c * g
  std::size_t c = 8;   // sliding-window length
  std::size_t g = 2;   // windows per fill
  std::size_t m0 = 4;
  double alpha = 0.25;
  double sigma = 0.25;
  RelevanceBasis basis = RelevanceBasis::mean;
  QuestionPooling pooling = QuestionPooling::descriptor;
  bool question_required = false;
  // Leave re-initialization frames out of the relevance score.
  bool exclude_context_frames = false;

  void validate() const;
  /// round-half-up(alpha * m0) clamped to [1, m0].
  std::size_t weak_target() const noexcept;
};

struct MergeStep {
  std::size_t step = 0;
  std::size_t index = 0;  // left member of the merged pair
  double similarity = 0.0;
  bool operator==(const MergeStep&) const = default;
};

struct ConsolidationReport {
  std::size_t input_count = 0;
  std::size_t output_count = 0;
  std::optional<double> s_q;  // absent in question-agnostic mode
  bool relevant = true;
  std::size_t target = 0;
  std::vector<MergeStep> trace;

  bool operator==(const ConsolidationReport&) const = default;
};

void to_json(nlohmann::json& j, const ConsolidationReport& r);
void from_json(const nlohmann::json& j, ConsolidationReport& r);

struct MergeResult {
  std::vector<WeightedFrame> frames;
  ConsolidationReport report;
};

double frame_relevance(const WeightedFrame& frame, std::span<const double> q,
                       QuestionPooling pooling = QuestionPooling::descriptor);

double relevance_score(std::span<const WeightedFrame> frames, std::span<const double> q,
                       RelevanceBasis basis,
                       QuestionPooling pooling = QuestionPooling::descriptor);

std::size_t target_count(double s_q, const ConsolidationConfig& cfg);

/// s^f between each adjacent pair; size() - 1 entries.
std::vector<double> adjacent_similarities(std::span<const WeightedFrame> frames);

/// In-place greedy adjacent merge. `sims` must hold the current adjacent
/// similarities and is kept up to date; only the two neighbours of a merge
/// are recomputed. Ties go to the lowest index.
void merge_adjacent_until(std::vector<WeightedFrame>& frames, std::vector<double>& sims,
                          std::size_t target,
                          const std::function<void(const MergeStep&)>& on_merge = {});

MergeResult greedy_merge(std::vector<WeightedFrame> frames, std::size_t target);

struct ConsolidationPlan {
  std::optional<double> s_q;
  bool relevant = true;
  std::size_t target = 0;
};

/// Relevance gating only. Without a question the plan is M = m0.
ConsolidationPlan plan_consolidation(std::span<const WeightedFrame> frames,
                                     const std::optional<std::vector<double>>& q,
                                     const ConsolidationConfig& cfg);

MergeResult consolidate(std::vector<WeightedFrame> frames,
                        const std::optional<std::vector<double>>& q,
                        const ConsolidationConfig& cfg);

const char* to_string(RelevanceBasis basis) noexcept;
RelevanceBasis parse_basis(const std::string& text);
const char* to_string(QuestionPooling pooling) noexcept;
QuestionPooling parse_pooling(const std::string& text);

}  // namespace vidmem
