#include "vidmem/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vidmem/error.hpp"
#include "vidmem/streamio.hpp"

namespace vidmem {

const char* to_string(ReinitMode mode) noexcept {
  switch (mode) {
    case ReinitMode::merged_tokens: return "merged_tokens";
    case ReinitMode::last_k: return "last_k";
    case ReinitMode::uniform_sample: return "uniform_sample";
    case ReinitMode::none: return "none";
  }
  return "none";
}

ReinitMode parse_reinit(const std::string& text) {
  if (text == "merged" || text == "merged_tokens") return ReinitMode::merged_tokens;
  if (text == "last" || text == "last_k") return ReinitMode::last_k;
  if (text == "uniform" || text == "uniform_sample") return ReinitMode::uniform_sample;
  if (text == "none") return ReinitMode::none;
  throw Error(Errc::InvalidConfig, "unknown reinit mode '" + text + "'");
}

void PipelineConfig::validate() const {
  consolidation.validate();
  if (ltm_capacity == 0) throw Error(Errc::InvalidConfig, "long-term capacity must be >= 1");
  if (reinit != ReinitMode::none && consolidation.m0 >= consolidation.k) {
    throw Error(Errc::InvalidConfig, "re-initialization needs M0 < K so seeds leave room");
  }
  if (pe_base_length < 2 || pe_dim == 0) {
    throw Error(Errc::InvalidConfig, "positional table needs n >= 2 and dim >= 1");
  }
  if (!(pe_blend > 0.0 && pe_blend < 1.0)) {
    throw Error(Errc::InvalidConfig, "positional blend must be in (0, 1)");
  }
}

void to_json(nlohmann::json& j, const PipelineConfig& cfg) {
  const ConsolidationConfig& c = cfg.consolidation;
  j = {{"k", c.k},
       {"c", c.c},
       {"g", c.g},
       {"m0", c.m0},
       {"alpha", c.alpha},
       {"sigma", c.sigma},
       {"basis", to_string(c.basis)},
       {"pooling", to_string(c.pooling)},
       {"question_required", c.question_required},
       {"exclude_context_frames", c.exclude_context_frames},
       {"ltm_cap", cfg.ltm_capacity},
       {"reinit", to_string(cfg.reinit)},
       {"pe_base_length", cfg.pe_base_length},
       {"pe_dim", cfg.pe_dim},
       {"pe_blend", cfg.pe_blend}};
}

// Missing keys keep their current values, so a partial object overrides.
void from_json(const nlohmann::json& j, PipelineConfig& cfg) {
  ConsolidationConfig& c = cfg.consolidation;
  const bool k_given = j.contains("k");
  c.k = j.value("k", c.k);
  if (k_given && !j.contains("c") && !j.contains("g")) {
    // Keep the window length when it still divides K; otherwise one window per fill.
    if (c.c != 0 && c.k % c.c == 0) {
      c.g = c.k / c.c;
    } else {
      c.c = c.k;
      c.g = 1;
    }
  }
  c.c = j.value("c", c.c);
  c.g = j.value("g", c.g);
  c.m0 = j.value("m0", c.m0);
  c.alpha = j.value("alpha", c.alpha);
  c.sigma = j.value("sigma", c.sigma);
  if (j.contains("basis")) c.basis = parse_basis(j.at("basis").get<std::string>());
  if (j.contains("pooling")) c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  c.question_required = j.value("question_required", c.question_required);
  c.exclude_context_frames = j.value("exclude_context_frames", c.exclude_context_frames);
  cfg.ltm_capacity = j.value("ltm_cap", cfg.ltm_capacity);
  if (j.contains("reinit")) cfg.reinit = parse_reinit(j.at("reinit").get<std::string>());
  cfg.pe_base_length = j.value("pe_base_length", cfg.pe_base_length);
  cfg.pe_dim = j.value("pe_dim", cfg.pe_dim);
  cfg.pe_blend = j.value("pe_blend", cfg.pe_blend);
}

// ---------------------------------------------------------------------------

namespace {

PipelineConfig validated(PipelineConfig cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

Pipeline::Pipeline(FrameShape shape, PipelineConfig cfg, std::optional<std::vector<double>> question)
    : shape_(shape),
      cfg_(validated(std::move(cfg))),
      question_(std::move(question)),
      short_(shape, cfg_.consolidation.c, cfg_.consolidation.g),
      long_(shape, cfg_.ltm_capacity),
      table_(PositionalTable::sinusoidal(cfg_.pe_base_length, cfg_.pe_dim, cfg_.pe_blend)) {
  if (question_) {
    if (question_->size() != shape.dims) {
      throw Error(Errc::DimensionMismatch, "question has " + std::to_string(question_->size()) +
                                               " dims, frames have " + std::to_string(shape.dims));
    }
    std::vector<double> probe = *question_;
    normalize_in_place(probe);  // throws ZeroNorm for a degenerate question
  } else if (cfg_.consolidation.question_required) {
    throw Error(Errc::MissingQuestion, "config requires a question vector");
  }
}

std::vector<WeightedFrame> Pipeline::seed_for_reinit(const std::vector<WeightedFrame>& popped,
                                                     const std::vector<WeightedFrame>& consolidated,
                                                     std::size_t target) const {
  const std::size_t m = std::min(target, popped.size());
  switch (cfg_.reinit) {
    case ReinitMode::merged_tokens: return consolidated;
    case ReinitMode::last_k:
      return {popped.end() - static_cast<std::ptrdiff_t>(m), popped.end()};
    case ReinitMode::uniform_sample: {
      std::vector<WeightedFrame> seed;
      for (std::size_t i = 0; i < m; ++i) seed.push_back(popped[i * popped.size() / m]);
      return seed;
    }
    case ReinitMode::none: break;
  }
  return {};
}

StepEvent Pipeline::step(TokenMatrix frame) {
  if (frame.shape() != shape_) throw Error(Errc::ShapeMismatch, "frame shape differs from stream");

  StepEvent event = Buffered{};
  if (short_.full()) {
    std::vector<WeightedFrame> popped = short_.drain();
    MergeResult merged = consolidate(popped, question_, cfg_.consolidation);

    std::vector<WeightedFrame> seed = seed_for_reinit(popped, merged.frames, merged.report.target);
    for (const WeightedFrame& f : seed) counters_.seeded_weight += f.weight;

    counters_.consolidations_run += 1;
    counters_.window_inputs += merged.report.input_count;
    counters_.window_outputs += merged.report.output_count;
    long_.append(std::move(merged.frames));
    short_.reinit(std::move(seed));
    event = Consolidated{std::move(merged.report)};
  }

  current_ = frame;
  short_.push_frame(std::move(frame));
  counters_.frames_pushed += 1;
  return event;
}

std::optional<ConsolidationReport> Pipeline::flush() {
  if (short_.empty()) return std::nullopt;
  std::vector<WeightedFrame> residue = short_.drain();
  const ConsolidationPlan plan = plan_consolidation(residue, question_, cfg_.consolidation);

  const std::size_t len = residue.size();
  const std::size_t k = short_.capacity();
  const std::size_t scaled = (plan.target * len + k - 1) / k;
  const std::size_t target = std::clamp<std::size_t>(scaled, 1, len);

  MergeResult merged = greedy_merge(std::move(residue), target);
  merged.report.s_q = plan.s_q;
  merged.report.relevant = plan.relevant;
  counters_.consolidations_run += 1;
  long_.append(std::move(merged.frames));
  return merged.report;
}

VideoRepresentation Pipeline::assemble_global() const {
  if (!short_.empty()) throw Error(Errc::NotFlushed, "flush before assembling global mode");
  VideoRepresentation rep;
  rep.mode = RepresentationMode::global;
  for (auto& [frame, pos] : assign_positions(long_, table_)) {
    rep.entries.push_back({std::move(frame), std::move(pos)});
  }
  return rep;
}

VideoRepresentation Pipeline::assemble_breakpoint(std::uint64_t t) const {
  if (counters_.frames_pushed == 0 || t + 1 != counters_.frames_pushed) {
    throw Error(Errc::StaleTimestamp,
                "breakpoint " + std::to_string(t) + " is not the live head (" +
                    std::to_string(counters_.frames_pushed) + " frames pushed)");
  }
  VideoRepresentation rep;
  rep.mode = RepresentationMode::breakpoint;
  rep.timestamp = t;
  for (auto& [frame, pos] : assign_positions(long_, table_)) {
    rep.entries.push_back({std::move(frame), std::move(pos)});
  }
  for (const WeightedFrame& f : short_.frames()) rep.entries.push_back({f, std::nullopt});
  rep.entries.push_back({WeightedFrame::source(*current_, t), std::nullopt});
  return rep;
}

AccountingRecord Pipeline::bytes_model() const {
  const std::uint64_t frame_bytes = shape_.tokens * shape_.dims * kModelScalarBytes;
  const ConsolidationConfig& c = cfg_.consolidation;
  AccountingRecord rec;
  rec.raw_bytes_per_frame = static_cast<double>(frame_bytes);
  // Before the first full window, charge the uncompressed-by-relevance target.
  const double ratio = counters_.window_inputs > 0
                           ? static_cast<double>(counters_.window_outputs) /
                                 static_cast<double>(counters_.window_inputs)
                           : static_cast<double>(c.m0) / static_cast<double>(c.k);
  rec.amortized_bytes_per_frame = ratio * rec.raw_bytes_per_frame;
  rec.peak_resident_bytes = (c.k + cfg_.ltm_capacity) * (frame_bytes + kSlotOverheadBytes);
  return rec;
}

std::uint64_t Pipeline::resident_weight() const noexcept {
  std::uint64_t w = long_.total_weight();
  for (const WeightedFrame& f : short_.frames()) w += f.weight;
  return w;
}

// ---------------------------------------------------------------------------

std::filesystem::path Pipeline::export_snapshot(const std::filesystem::path& stem) const {
  std::filesystem::path json_path = stem;
  json_path += ".json";
  std::filesystem::path mces_path = stem;
  mces_path += ".mces";

  std::vector<TokenMatrix> tokens;
  for (const WeightedFrame& f : long_.entries()) tokens.push_back(f.tokens);
  nlohmann::json short_entries = nlohmann::json::array();
  for (const WeightedFrame& f : short_.frames()) {
    tokens.push_back(f.tokens);
    short_entries.push_back(frame_metadata_json(f));
  }
  if (current_) tokens.push_back(*current_);

  nlohmann::json doc;
  doc["config"] = cfg_;
  doc["tokens_per_frame"] = shape_.tokens;
  doc["dims"] = shape_.dims;
  doc["question"] = question_ ? nlohmann::json(*question_) : nlohmann::json(nullptr);
  doc["counters"] = {{"frames_pushed", counters_.frames_pushed},
                     {"consolidations_run", counters_.consolidations_run},
                     {"seeded_weight", counters_.seeded_weight},
                     {"window_inputs", counters_.window_inputs},
                     {"window_outputs", counters_.window_outputs}};
  doc["long_term"] = long_.metadata_json();
  doc["short_term"] = {{"entries", std::move(short_entries)},
                       {"next_source_index", short_.next_source_index()}};
  doc["has_current_frame"] = current_.has_value();

  if (tokens.empty()) {
    doc["tokens_file"] = nullptr;
  } else {
    write_stream_file(mces_path, StreamHeader::make(tokens.size(), shape_, question_.has_value()),
                      tokens, question_);
    doc["tokens_file"] = mces_path.filename().string();
  }

  std::ofstream out(json_path);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + json_path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(Errc::IoFailure, "cannot write " + json_path.string());
  return json_path;
}

Pipeline Pipeline::import_snapshot(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + json_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidSpec, std::string("snapshot JSON: ") + e.what());
  }

  try {
    const FrameShape shape{doc.at("tokens_per_frame").get<std::size_t>(),
                           doc.at("dims").get<std::size_t>()};
    PipelineConfig cfg;
    from_json(doc.at("config"), cfg);
    std::optional<std::vector<double>> question;
    if (!doc.at("question").is_null()) question = doc.at("question").get<std::vector<double>>();

    Pipeline p(shape, cfg, question);
    std::vector<TokenMatrix> tokens;
    if (!doc.at("tokens_file").is_null()) {
      tokens = read_stream_file(json_path.parent_path() / doc.at("tokens_file").get<std::string>())
                   .frames;
    }

    const auto& lt = doc.at("long_term");
    const auto& st = doc.at("short_term");
    const std::size_t n_long = lt.at("entries").size();
    const std::size_t n_short = st.at("entries").size();
    const bool has_current = doc.at("has_current_frame").get<bool>();
    if (tokens.size() != n_long + n_short + (has_current ? 1 : 0)) {
      throw Error(Errc::ShapeMismatch, "snapshot sidecar frame count does not match metadata");
    }

    auto it = tokens.begin();
    std::vector<TokenMatrix> long_tokens(std::make_move_iterator(it),
                                         std::make_move_iterator(it + n_long));
    it += static_cast<std::ptrdiff_t>(n_long);
    p.long_ = LongTermMemory::from_parts(shape, cfg.ltm_capacity, lt, std::move(long_tokens));

    std::vector<WeightedFrame> short_frames;
    for (const auto& meta : st.at("entries")) {
      short_frames.push_back(frame_from_metadata(meta, std::move(*it++)));
    }
    p.short_.restore(std::move(short_frames), st.at("next_source_index").get<std::uint64_t>());
    if (has_current) p.current_ = std::move(*it);

    const auto& c = doc.at("counters");
    p.counters_.frames_pushed = c.at("frames_pushed").get<std::uint64_t>();
    p.counters_.consolidations_run = c.at("consolidations_run").get<std::uint64_t>();
    p.counters_.seeded_weight = c.at("seeded_weight").get<std::uint64_t>();
    p.counters_.window_inputs = c.at("window_inputs").get<std::uint64_t>();
    p.counters_.window_outputs = c.at("window_outputs").get<std::uint64_t>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidSpec, std::string("snapshot JSON: ") + e.what());
  }
}

nlohmann::json representation_json(const VideoRepresentation& rep) {
  nlohmann::json entries = nlohmann::json::array();
  for (const RepresentationEntry& e : rep.entries) {
    nlohmann::json j = frame_metadata_json(e.frame);
    j["has_position"] = e.position.has_value();
    entries.push_back(std::move(j));
  }
  return {{"mode", rep.mode == RepresentationMode::global ? "global" : "breakpoint"},
          {"timestamp", rep.timestamp ? nlohmann::json(*rep.timestamp) : nlohmann::json(nullptr)},
          {"entries", std::move(entries)}};
}

}  // namespace vidmem
