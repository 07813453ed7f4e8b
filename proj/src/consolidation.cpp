#include "vidmem/consolidation.hpp"

#include <algorithm>
#include <cmath>

#include "vidmem/error.hpp"

namespace vidmem {

void ConsolidationConfig::validate() const {
  if (k == 0 || c == 0 || g == 0) throw Error(Errc::InvalidConfig, "K, C and G must be >= 1");
  if (k != c * g) {
    throw Error(Errc::InvalidConfig, "K must equal C * G (" + std::to_string(k) +
                                         " != " + std::to_string(c) + " * " + std::to_string(g) +
                                         ")");
  }
  if (m0 < 1 || m0 > k) throw Error(Errc::InvalidConfig, "M0 must be in [1, K]");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(Errc::InvalidConfig, "alpha must be in (0, 1]");
  if (!(sigma >= -1.0 && sigma <= 1.0)) throw Error(Errc::InvalidConfig, "sigma must be in [-1, 1]");
}

std::size_t ConsolidationConfig::weak_target() const noexcept {
  const double scaled = std::floor(alpha * static_cast<double>(m0) + 0.5);
  const auto rounded = static_cast<std::size_t>(std::max(scaled, 1.0));
  return std::clamp<std::size_t>(rounded, 1, m0);
}

void to_json(nlohmann::json& j, const ConsolidationReport& r) {
  nlohmann::json trace = nlohmann::json::array();
  for (const MergeStep& s : r.trace) {
    trace.push_back({{"step", s.step}, {"index", s.index}, {"similarity", s.similarity}});
  }
  j = {{"input_count", r.input_count},
       {"output_count", r.output_count},
       {"s_q", r.s_q ? nlohmann::json(*r.s_q) : nlohmann::json(nullptr)},
       {"relevant", r.relevant},
       {"target", r.target},
       {"trace", std::move(trace)}};
}

void from_json(const nlohmann::json& j, ConsolidationReport& r) {
  r.input_count = j.at("input_count").get<std::size_t>();
  r.output_count = j.at("output_count").get<std::size_t>();
  r.s_q = j.at("s_q").is_null() ? std::nullopt : std::optional<double>(j.at("s_q").get<double>());
  r.relevant = j.at("relevant").get<bool>();
  r.target = j.at("target").get<std::size_t>();
  r.trace.clear();
  for (const auto& s : j.at("trace")) {
    r.trace.push_back({s.at("step").get<std::size_t>(), s.at("index").get<std::size_t>(),
                       s.at("similarity").get<double>()});
  }
}

double frame_relevance(const WeightedFrame& frame, std::span<const double> q,
                       QuestionPooling pooling) {
  if (pooling == QuestionPooling::descriptor) {
    return cosine(frame_descriptor(frame.tokens), q);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < frame.tokens.rows(); ++j) total += cosine(frame.tokens.row(j), q);
  return total / static_cast<double>(frame.tokens.rows());
}

double relevance_score(std::span<const WeightedFrame> frames, std::span<const double> q,
                       RelevanceBasis basis, QuestionPooling pooling) {
  if (frames.empty()) throw Error(Errc::EmptyInput, "relevance of an empty window");
  double sum = 0.0;
  double lo = 1.0;
  double hi = -1.0;
  for (const WeightedFrame& f : frames) {
    const double s = frame_relevance(f, q, pooling);
    sum += s;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  switch (basis) {
    case RelevanceBasis::min: return lo;
    case RelevanceBasis::max: return hi;
    case RelevanceBasis::mean: break;
  }
  return sum / static_cast<double>(frames.size());
}

std::size_t target_count(double s_q, const ConsolidationConfig& cfg) {
  return s_q > cfg.sigma ? cfg.m0 : cfg.weak_target();
}

std::vector<double> adjacent_similarities(std::span<const WeightedFrame> frames) {
  std::vector<double> sims;
  if (frames.size() < 2) return sims;
  sims.reserve(frames.size() - 1);
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    sims.push_back(frame_pair_similarity(frames[i], frames[i + 1]));
  }
  return sims;
}

void merge_adjacent_until(std::vector<WeightedFrame>& frames, std::vector<double>& sims,
                          std::size_t target,
                          const std::function<void(const MergeStep&)>& on_merge) {
  if (target < 1) throw Error(Errc::InvalidTarget, "merge target must be >= 1");
  std::size_t step = 0;
  while (frames.size() > target) {
    std::size_t m = 0;
    for (std::size_t i = 1; i < sims.size(); ++i) {
      if (sims[i] > sims[m]) m = i;
    }
    const MergeStep record{step++, m, sims[m]};

    frames[m] = weighted_merge(frames[m], frames[m + 1]);
    frames.erase(frames.begin() + static_cast<std::ptrdiff_t>(m) + 1);
    sims.erase(sims.begin() + static_cast<std::ptrdiff_t>(m));
    if (m > 0) sims[m - 1] = frame_pair_similarity(frames[m - 1], frames[m]);
    if (m + 1 < frames.size()) sims[m] = frame_pair_similarity(frames[m], frames[m + 1]);

    if (on_merge) on_merge(record);
  }
}

MergeResult greedy_merge(std::vector<WeightedFrame> frames, std::size_t target) {
  if (target < 1) throw Error(Errc::InvalidTarget, "merge target must be >= 1");
  MergeResult out;
  out.report.input_count = frames.size();
  out.report.target = target;
  std::vector<double> sims = adjacent_similarities(frames);
  merge_adjacent_until(frames, sims, target,
                       [&](const MergeStep& s) { out.report.trace.push_back(s); });
  out.report.output_count = frames.size();
  out.frames = std::move(frames);
  return out;
}

ConsolidationPlan plan_consolidation(std::span<const WeightedFrame> frames,
                                     const std::optional<std::vector<double>>& q,
                                     const ConsolidationConfig& cfg) {
  if (frames.empty()) throw Error(Errc::EmptyInput, "nothing to consolidate");
  if (!q) {
    if (cfg.question_required) throw Error(Errc::MissingQuestion, "config requires a question");
    return {std::nullopt, true, cfg.m0};
  }

  std::vector<WeightedFrame> fresh;
  std::span<const WeightedFrame> scored = frames;
  if (cfg.exclude_context_frames) {
    for (const WeightedFrame& f : frames) {
      if (!f.context) fresh.push_back(f);
    }
    if (!fresh.empty()) scored = fresh;
  }
  const double s_q = relevance_score(scored, *q, cfg.basis, cfg.pooling);
  const std::size_t target = target_count(s_q, cfg);
  return {s_q, s_q > cfg.sigma, target};
}

MergeResult consolidate(std::vector<WeightedFrame> frames,
                        const std::optional<std::vector<double>>& q,
                        const ConsolidationConfig& cfg) {
  const ConsolidationPlan plan = plan_consolidation(frames, q, cfg);
  MergeResult out = greedy_merge(std::move(frames), plan.target);
  out.report.s_q = plan.s_q;
  out.report.relevant = plan.relevant;
  return out;
}

const char* to_string(RelevanceBasis basis) noexcept {
  switch (basis) {
    case RelevanceBasis::mean: return "mean";
    case RelevanceBasis::min: return "min";
    case RelevanceBasis::max: return "max";
  }
  return "mean";
}

RelevanceBasis parse_basis(const std::string& text) {
  if (text == "mean") return RelevanceBasis::mean;
  if (text == "min") return RelevanceBasis::min;
  if (text == "max") return RelevanceBasis::max;
  throw Error(Errc::InvalidConfig, "unknown relevance basis '" + text + "'");
}

const char* to_string(QuestionPooling pooling) noexcept {
  return pooling == QuestionPooling::descriptor ? "descriptor" : "per_token";
}

QuestionPooling parse_pooling(const std::string& text) {
  if (text == "descriptor") return QuestionPooling::descriptor;
  if (text == "per_token") return QuestionPooling::per_token;
  throw Error(Errc::InvalidConfig, "unknown question pooling '" + text + "'");
}

}  // namespace vidmem
