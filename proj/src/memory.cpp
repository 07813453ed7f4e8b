#include "vidmem/memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vidmem/error.hpp"
#include "vidmem/streamio.hpp"

namespace vidmem {

namespace {

void require_shape(const TokenMatrix& m, FrameShape expected, const char* where) {
  if (m.shape() != expected) {
    throw Error(Errc::ShapeMismatch,
                std::string(where) + ": got " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected " + std::to_string(expected.tokens) +
                    "x" + std::to_string(expected.dims));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ShortTermBuffer::ShortTermBuffer(FrameShape shape, std::size_t window_size,
                                 std::size_t windows_per_fill)
    : shape_(shape),
      window_size_(window_size),
      windows_per_fill_(windows_per_fill),
      capacity_(window_size * windows_per_fill) {
  if (shape.tokens == 0 || shape.dims == 0) {
    throw Error(Errc::ShapeMismatch, "frame shape needs N, D >= 1");
  }
  if (capacity_ == 0) throw Error(Errc::InvalidConfig, "short-term capacity must be >= 1");
  frames_.reserve(capacity_);
}

IngestOutcome ShortTermBuffer::push_frame(TokenMatrix frame) {
  require_shape(frame, shape_, "short-term push");
  IngestOutcome outcome = Accepted{};
  if (full()) outcome = Full{drain()};
  frames_.push_back(WeightedFrame::source(std::move(frame), next_source_index_++));
  return outcome;
}

std::vector<WeightedFrame> ShortTermBuffer::drain() {
  std::vector<WeightedFrame> out = std::move(frames_);
  frames_.clear();
  frames_.reserve(capacity_);
  return out;
}

void ShortTermBuffer::reinit(std::vector<WeightedFrame> seed) {
  if (!frames_.empty()) throw Error(Errc::BufferNotEmpty, "reinit needs an empty buffer");
  if (seed.size() >= capacity_) {
    throw Error(Errc::SeedTooLarge, std::to_string(seed.size()) + " seed frames for capacity " +
                                        std::to_string(capacity_));
  }
  for (WeightedFrame& f : seed) {
    require_shape(f.tokens, shape_, "short-term reinit");
    f.context = true;
  }
  frames_ = std::move(seed);
}

void ShortTermBuffer::restore(std::vector<WeightedFrame> frames, std::uint64_t next_source_index) {
  if (frames.size() > capacity_) throw Error(Errc::SeedTooLarge, "restored buffer exceeds K");
  for (const WeightedFrame& f : frames) require_shape(f.tokens, shape_, "short-term restore");
  frames_ = std::move(frames);
  next_source_index_ = next_source_index;
}

// ---------------------------------------------------------------------------

LongTermMemory::LongTermMemory(FrameShape shape, std::size_t capacity)
    : shape_(shape), capacity_(capacity) {
  if (capacity == 0) throw Error(Errc::InvalidConfig, "long-term capacity must be >= 1");
}

void LongTermMemory::append(std::vector<WeightedFrame> frames) {
  for (const WeightedFrame& f : frames) require_shape(f.tokens, shape_, "long-term append");
  for (WeightedFrame& f : frames) {
    if (!entries_.empty()) sims_.push_back(frame_pair_similarity(entries_.back(), f));
    entries_.push_back(std::move(f));
    ids_.push_back(next_id_++);
  }
  if (entries_.size() > capacity_) overflow_compact();
}

std::vector<MergeStep> LongTermMemory::overflow_compact() {
  std::vector<MergeStep> steps;
  merge_adjacent_until(entries_, sims_, capacity_, [&](const MergeStep& s) {
    ids_.erase(ids_.begin() + static_cast<std::ptrdiff_t>(s.index) + 1);
    steps.push_back(s);
  });
  compaction_merges_ += steps.size();
  return steps;
}

std::uint64_t LongTermMemory::total_weight() const noexcept {
  std::uint64_t w = 0;
  for (const WeightedFrame& f : entries_) w += f.weight;
  return w;
}

nlohmann::json frame_metadata_json(const WeightedFrame& f) {
  nlohmann::json prov = nlohmann::json::array();
  for (const Interval& iv : f.provenance) prov.push_back({iv.begin, iv.end});
  return {{"weight", f.weight}, {"provenance", std::move(prov)}, {"context_flag", f.context}};
}

WeightedFrame frame_from_metadata(const nlohmann::json& j, TokenMatrix tokens) {
  WeightedFrame f{std::move(tokens), j.at("weight").get<std::uint64_t>(), {},
                  j.at("context_flag").get<bool>()};
  for (const auto& iv : j.at("provenance")) {
    f.provenance.push_back({iv.at(0).get<std::uint64_t>(), iv.at(1).get<std::uint64_t>()});
  }
  if (f.weight == 0 || provenance_length(f.provenance) != f.weight) {
    throw Error(Errc::InvalidSpec, "snapshot entry weight does not match its provenance");
  }
  return f;
}

nlohmann::json LongTermMemory::metadata_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    nlohmann::json e = frame_metadata_json(entries_[i]);
    e["position_id"] = ids_[i];
    entries.push_back(std::move(e));
  }
  return {{"capacity", capacity_},
          {"tokens_per_frame", shape_.tokens},
          {"dims", shape_.dims},
          {"next_position_id", next_id_},
          {"compaction_merges", compaction_merges_},
          {"entries", std::move(entries)}};
}

LongTermMemory LongTermMemory::from_parts(FrameShape shape, std::size_t capacity,
                                          const nlohmann::json& metadata,
                                          std::vector<TokenMatrix> tokens) {
  LongTermMemory ltm(shape, capacity);
  const auto& entries = metadata.at("entries");
  if (entries.size() != tokens.size()) {
    throw Error(Errc::ShapeMismatch, "snapshot metadata and token sidecar disagree on length");
  }
  if (entries.size() > capacity) throw Error(Errc::InvalidSpec, "snapshot exceeds its capacity");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    require_shape(tokens[i], shape, "snapshot import");
    const auto id = entries[i].at("position_id").get<std::uint64_t>();
    if (!ltm.ids_.empty() && id <= ltm.ids_.back()) {
      throw Error(Errc::InvalidSpec, "snapshot position ids are not increasing");
    }
    ltm.entries_.push_back(frame_from_metadata(entries[i], std::move(tokens[i])));
    ltm.ids_.push_back(id);
  }
  ltm.next_id_ = metadata.value("next_position_id",
                                ltm.ids_.empty() ? std::uint64_t{0} : ltm.ids_.back() + 1);
  ltm.compaction_merges_ = metadata.value("compaction_merges", std::uint64_t{0});
  ltm.sims_ = adjacent_similarities(ltm.entries_);
  return ltm;
}

std::filesystem::path export_snapshot(const LongTermMemory& ltm, const std::filesystem::path& stem) {
  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::filesystem::path mces_path = stem;
  mces_path += ".mces";

  nlohmann::json doc = ltm.metadata_json();
  if (ltm.empty()) {
    doc["tokens_file"] = nullptr;
  } else {
    std::vector<TokenMatrix> tokens;
    tokens.reserve(ltm.size());
    for (const WeightedFrame& f : ltm.entries()) tokens.push_back(f.tokens);
    write_stream_file(mces_path, StreamHeader::make(tokens.size(), ltm.shape(), false), tokens,
                      std::nullopt);
    doc["tokens_file"] = mces_path.filename().string();
  }
  std::ofstream out(json_path);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + json_path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(Errc::IoFailure, "cannot write " + json_path.string());
  return json_path;
}

LongTermMemory import_snapshot(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + json_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidSpec, std::string("snapshot JSON: ") + e.what());
  }
  const FrameShape shape{doc.at("tokens_per_frame").get<std::size_t>(),
                         doc.at("dims").get<std::size_t>()};
  std::vector<TokenMatrix> tokens;
  if (!doc.at("tokens_file").is_null()) {
    const auto sidecar = json_path.parent_path() / doc.at("tokens_file").get<std::string>();
    tokens = read_stream_file(sidecar).frames;
  }
  return LongTermMemory::from_parts(shape, doc.at("capacity").get<std::size_t>(), doc,
                                    std::move(tokens));
}

// ---------------------------------------------------------------------------

PositionalTable::PositionalTable(std::vector<std::vector<double>> base, double blend)
    : base_(std::move(base)), dim_(base_.empty() ? 0 : base_.front().size()), blend_(blend) {
  if (base_.size() < 2) throw Error(Errc::InvalidConfig, "positional base needs n >= 2");
  if (dim_ == 0) throw Error(Errc::InvalidConfig, "positional encodings need dim >= 1");
  if (!(blend > 0.0 && blend < 1.0)) throw Error(Errc::InvalidConfig, "blend must be in (0, 1)");
  for (const auto& row : base_) {
    if (row.size() != dim_) throw Error(Errc::InvalidConfig, "ragged positional base table");
    for (double x : row) {
      if (!std::isfinite(x)) throw Error(Errc::NonFiniteValue, "positional base table");
    }
  }
  for (std::size_t i = 0; i < base_.size(); ++i) {
    for (std::size_t j = i + 1; j < base_.size(); ++j) {
      if (base_[i] == base_[j]) {
        throw Error(Errc::InvalidConfig, "positional base rows " + std::to_string(i) + " and " +
                                             std::to_string(j) + " are identical");
      }
    }
  }
}

PositionalTable PositionalTable::sinusoidal(std::size_t base_length, std::size_t dim,
                                            double blend) {
  std::vector<std::vector<double>> base(base_length, std::vector<double>(dim));
  for (std::size_t pos = 0; pos < base_length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      base[pos][i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return PositionalTable(std::move(base), blend);
}

std::vector<double> PositionalTable::extended_position(std::uint64_t k) const {
  const std::uint64_t n = base_.size();
  if (k >= n * n) {
    throw Error(Errc::PositionOutOfRange,
                "position " + std::to_string(k) + " >= n^2 = " + std::to_string(n * n));
  }
  if (k < n) return base_[k];
  const auto& hi = base_[k / n];
  const auto& lo = base_[k % n];
  std::vector<double> out(dim_);
  for (std::size_t d = 0; d < dim_; ++d) out[d] = blend_ * hi[d] + (1.0 - blend_) * lo[d];
  return out;
}

std::vector<std::pair<std::uint64_t, std::uint64_t>> find_collisions(const PositionalTable& table,
                                                                     double tolerance) {
  const std::uint64_t count = table.max_positions();
  std::vector<std::vector<double>> all;
  all.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) all.push_back(table.extended_position(k));

  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  for (std::uint64_t a = 0; a < count; ++a) {
    for (std::uint64_t b = a + 1; b < count; ++b) {
      double dist2 = 0.0;
      for (std::size_t d = 0; d < table.dim(); ++d) {
        const double diff = all[a][d] - all[b][d];
        dist2 += diff * diff;
      }
      if (std::sqrt(dist2) <= tolerance) out.emplace_back(a, b);
    }
  }
  return out;
}

std::vector<std::pair<WeightedFrame, std::vector<double>>> assign_positions(
    const LongTermMemory& ltm, const PositionalTable& table) {
  if (ltm.size() > table.max_positions()) {
    throw Error(Errc::MemoryTooLongForTable,
                std::to_string(ltm.size()) + " entries, table covers " +
                    std::to_string(table.max_positions()));
  }
  std::vector<std::pair<WeightedFrame, std::vector<double>>> out;
  out.reserve(ltm.size());
  for (std::size_t r = 0; r < ltm.size(); ++r) {
    out.emplace_back(ltm.entries()[r], table.extended_position(r));
  }
  return out;
}

}  // namespace vidmem
