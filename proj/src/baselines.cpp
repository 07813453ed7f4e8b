#include "vidmem/baselines.hpp"

#include "vidmem/error.hpp"

namespace vidmem {

namespace {

void require_nonempty(std::span<const TokenMatrix> frames) {
  if (frames.empty()) throw Error(Errc::EmptyInput, "policy needs at least one frame");
  for (const TokenMatrix& f : frames) {
    if (f.shape() != frames.front().shape()) {
      throw Error(Errc::ShapeMismatch, "frames of different shape in one stream");
    }
  }
}

Provenance whole_stream(std::size_t frames) { return {Interval{0, frames}}; }

}  // namespace

const char* to_string(PolicyId id) noexcept {
  switch (id) {
    case PolicyId::no_memory: return "no_memory";
    case PolicyId::spatial_pool: return "spatial_pool";
    case PolicyId::temporal_pool: return "temporal_pool";
    case PolicyId::ema: return "ema";
    case PolicyId::moviechat: return "moviechat";
    case PolicyId::moviechat_plus: return "moviechat_plus";
  }
  return "moviechat_plus";
}

PolicyId parse_policy(const std::string& text) {
  for (PolicyId id : {PolicyId::no_memory, PolicyId::spatial_pool, PolicyId::temporal_pool,
                      PolicyId::ema, PolicyId::moviechat, PolicyId::moviechat_plus}) {
    if (text == to_string(id)) return id;
  }
  throw Error(Errc::InvalidConfig, "unknown policy '" + text + "'");
}

std::vector<WeightedFrame> no_memory(std::span<const TokenMatrix> frames, std::size_t sample_count) {
  require_nonempty(frames);
  if (sample_count == 0) throw Error(Errc::InvalidConfig, "sample_count must be >= 1");
  const std::size_t t = frames.size();
  std::vector<WeightedFrame> out;
  std::size_t last = t;  // sentinel: nothing taken yet
  for (std::size_t i = 0; i < sample_count; ++i) {
    const std::size_t idx = i * t / sample_count;
    if (idx == last) continue;
    out.push_back(WeightedFrame::source(frames[idx], idx));
    last = idx;
  }
  return out;
}

std::vector<WeightedFrame> spatial_pool(std::span<const TokenMatrix> frames) {
  require_nonempty(frames);
  std::vector<WeightedFrame> out;
  out.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const TokenMatrix& f = frames[t];
    TokenMatrix pooled(1, f.cols());
    auto acc = pooled.row(0);
    for (std::size_t j = 0; j < f.rows(); ++j) {
      const auto r = f.row(j);
      for (std::size_t d = 0; d < r.size(); ++d) acc[d] += r[d];
    }
    for (double& x : acc) x /= static_cast<double>(f.rows());
    out.push_back(WeightedFrame::source(std::move(pooled), t));
  }
  return out;
}

WeightedFrame temporal_pool(std::span<const TokenMatrix> frames) {
  require_nonempty(frames);
  TokenMatrix pooled(frames.front().rows(), frames.front().cols());
  auto acc = pooled.values();
  for (const TokenMatrix& f : frames) {
    const auto v = f.values();
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  for (double& x : acc) x /= static_cast<double>(frames.size());
  return WeightedFrame{std::move(pooled), frames.size(), whole_stream(frames.size()), false};
}

WeightedFrame ema(std::span<const TokenMatrix> frames, double lambda) {
  require_nonempty(frames);
  if (!(lambda >= 0.0 && lambda < 1.0)) throw Error(Errc::InvalidLambda, "lambda must be in [0, 1)");
  TokenMatrix state = frames.front();
  auto m = state.values();
  for (std::size_t t = 1; t < frames.size(); ++t) {
    const auto x = frames[t].values();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = lambda * m[i] + (1.0 - lambda) * x[i];
  }
  return WeightedFrame{std::move(state), frames.size(), whole_stream(frames.size()), false};
}

std::size_t policy_token_count(std::span<const WeightedFrame> output) {
  std::size_t n = 0;
  for (const WeightedFrame& f : output) n += f.tokens.rows();
  return n;
}

}  // namespace vidmem
