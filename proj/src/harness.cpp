#include "vidmem/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

#include "vidmem/error.hpp"

#ifndef VIDMEM_BUILD_HASH
#define VIDMEM_BUILD_HASH "unknown"
#endif

namespace vidmem {

const char* build_hash() noexcept { return VIDMEM_BUILD_HASH; }

std::string format_number(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Spec (de)serialization

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& seg : s.segments) {
    segs.push_back({{"start", seg.start}, {"end", seg.end}, {"relevance", seg.relevance}});
  }
  j = {{"frames", s.frames},
       {"tokens", s.tokens},
       {"dims", s.dims},
       {"segments", std::move(segs)},
       {"noise_scale", s.noise_scale},
       {"seed", s.seed},
       {"temporal_correlation", s.temporal_correlation}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s.frames = j.value("frames", s.frames);
  s.tokens = j.value("tokens", s.tokens);
  s.dims = j.value("dims", s.dims);
  s.noise_scale = j.value("noise_scale", s.noise_scale);
  s.seed = j.value("seed", s.seed);
  s.temporal_correlation = j.value("temporal_correlation", s.temporal_correlation);
  if (j.contains("segments")) {
    s.segments.clear();
    for (const auto& seg : j.at("segments")) {
      s.segments.push_back({seg.at("start").get<std::uint64_t>(), seg.at("end").get<std::uint64_t>(),
                            seg.at("relevance").get<double>()});
    }
  }
  if (j.contains("plant_every")) {
    const auto& p = j.at("plant_every");
    const auto extra = planted_every(s.frames, p.at("block").get<std::uint64_t>(),
                                     p.at("length").get<std::uint64_t>(),
                                     p.at("relevance").get<double>(), p.value("seed", std::uint64_t{0}));
    s.segments.insert(s.segments.end(), extra.begin(), extra.end());
  }
}

std::size_t SweepGrid::point_count() const noexcept {
  auto axis = [](std::size_t n) { return std::max<std::size_t>(n, 1); };
  return axis(ltm_cap.size()) * axis(k.size()) * axis(m0.size()) * axis(alpha.size()) *
         axis(sigma.size()) * axis(basis.size()) * axis(reinit.size());
}

std::vector<nlohmann::json> SweepGrid::points() const {
  std::vector<nlohmann::json> out{nlohmann::json::object()};
  auto expand = [&out](const char* key, const std::vector<nlohmann::json>& values) {
    if (values.empty()) return;
    std::vector<nlohmann::json> next;
    next.reserve(out.size() * values.size());
    for (const auto& base : out) {
      for (const auto& v : values) {
        nlohmann::json p = base;
        p[key] = v;
        next.push_back(std::move(p));
      }
    }
    out = std::move(next);
  };
  auto as_json = [](const auto& values) {
    std::vector<nlohmann::json> js;
    for (const auto& v : values) js.emplace_back(v);
    return js;
  };
  std::vector<nlohmann::json> bases;
  for (RelevanceBasis b : basis) bases.emplace_back(to_string(b));
  std::vector<nlohmann::json> reinits;
  for (ReinitMode r : reinit) reinits.emplace_back(to_string(r));

  expand("ltm_cap", as_json(ltm_cap));
  expand("k", as_json(k));
  expand("m0", as_json(m0));
  expand("alpha", as_json(alpha));
  expand("sigma", as_json(sigma));
  expand("basis", bases);
  expand("reinit", reinits);
  return out;
}

void to_json(nlohmann::json& j, const SweepGrid& g) {
  nlohmann::json bases = nlohmann::json::array();
  for (RelevanceBasis b : g.basis) bases.push_back(to_string(b));
  nlohmann::json reinits = nlohmann::json::array();
  for (ReinitMode r : g.reinit) reinits.push_back(to_string(r));
  j = {{"ltm_cap", g.ltm_cap}, {"k", g.k},         {"m0", g.m0},          {"alpha", g.alpha},
       {"sigma", g.sigma},     {"basis", bases}, {"reinit", reinits}};
}

void from_json(const nlohmann::json& j, SweepGrid& g) {
  g.ltm_cap = j.value("ltm_cap", g.ltm_cap);
  g.k = j.value("k", g.k);
  g.m0 = j.value("m0", g.m0);
  g.alpha = j.value("alpha", g.alpha);
  g.sigma = j.value("sigma", g.sigma);
  if (j.contains("basis")) {
    g.basis.clear();
    for (const auto& b : j.at("basis")) g.basis.push_back(parse_basis(b.get<std::string>()));
  }
  if (j.contains("reinit")) {
    g.reinit.clear();
    for (const auto& r : j.at("reinit")) g.reinit.push_back(parse_reinit(r.get<std::string>()));
  }
}

void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  nlohmann::json stream;
  if (s.stream.path) {
    stream["path"] = s.stream.path->generic_string();
    nlohmann::json planted = nlohmann::json::array();
    for (const auto& seg : s.stream.planted) {
      planted.push_back({{"start", seg.start}, {"end", seg.end}, {"relevance", seg.relevance}});
    }
    stream["planted"] = std::move(planted);
  }
  if (s.stream.synthetic) stream["synthetic"] = *s.stream.synthetic;
  nlohmann::json policies = nlohmann::json::array();
  for (PolicyId p : s.policies) policies.push_back(to_string(p));
  j = {{"stream", std::move(stream)},
       {"question", s.question ? nlohmann::json(*s.question) : nlohmann::json(nullptr)},
       {"pipeline", s.pipeline},
       {"policies", std::move(policies)},
       {"sweep", s.sweep ? nlohmann::json(*s.sweep) : nlohmann::json(nullptr)},
       {"seeds", s.seeds},
       {"ema_lambda", s.ema_lambda},
       {"sample_count", s.sample_count},
       {"max_grid_points", s.max_grid_points},
       {"bench", {{"frames", s.bench_frames}, {"relevance", s.bench_relevance}}}};
}

void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  if (j.contains("stream")) {
    const auto& st = j.at("stream");
    if (st.contains("path")) s.stream.path = st.at("path").get<std::string>();
    if (st.contains("planted")) {
      s.stream.planted.clear();
      for (const auto& seg : st.at("planted")) {
        s.stream.planted.push_back({seg.at("start").get<std::uint64_t>(),
                                    seg.at("end").get<std::uint64_t>(),
                                    seg.at("relevance").get<double>()});
      }
    }
    if (st.contains("synthetic")) {
      SyntheticSpec syn = s.stream.synthetic.value_or(SyntheticSpec{});
      from_json(st.at("synthetic"), syn);
      s.stream.synthetic = syn;
    }
  }
  if (j.contains("question") && !j.at("question").is_null()) {
    s.question = j.at("question").get<std::vector<double>>();
  }
  if (j.contains("pipeline")) from_json(j.at("pipeline"), s.pipeline);
  if (j.contains("policies")) {
    s.policies.clear();
    for (const auto& p : j.at("policies")) s.policies.push_back(parse_policy(p.get<std::string>()));
  }
  if (j.contains("sweep") && !j.at("sweep").is_null()) {
    SweepGrid g;
    from_json(j.at("sweep"), g);
    s.sweep = g;
  }
  s.seeds = j.value("seeds", s.seeds);
  s.ema_lambda = j.value("ema_lambda", s.ema_lambda);
  s.sample_count = j.value("sample_count", s.sample_count);
  s.max_grid_points = j.value("max_grid_points", s.max_grid_points);
  s.jobs = j.value("jobs", s.jobs);
  if (j.contains("bench")) {
    s.bench_frames = j.at("bench").value("frames", s.bench_frames);
    s.bench_relevance = j.at("bench").value("relevance", s.bench_relevance);
  }
}

void ExperimentSpec::validate() const {
  if (stream.path.has_value() == stream.synthetic.has_value()) {
    throw Error(Errc::InvalidConfig, "exactly one of stream.path and stream.synthetic is required");
  }
  if (stream.synthetic) stream.synthetic->validate();
  if (policies.empty()) throw Error(Errc::InvalidConfig, "at least one policy is required");
  if (seeds.empty()) throw Error(Errc::InvalidConfig, "at least one seed is required");
  if (!(ema_lambda >= 0.0 && ema_lambda < 1.0)) {
    throw Error(Errc::InvalidLambda, "ema_lambda must be in [0, 1)");
  }
  if (sample_count == 0) throw Error(Errc::InvalidConfig, "sample_count must be >= 1");
  pipeline.validate();
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

bool overlaps(const Interval& iv, const PlantedSegment& seg) {
  return iv.begin < seg.end && seg.start < iv.end;
}

}  // namespace

RelevanceMetrics relevance_metrics(std::span<const WeightedFrame> memory,
                                   std::span<const PlantedSegment> planted,
                                   const std::optional<std::vector<double>>& q) {
  RelevanceMetrics m;

  if (!planted.empty() && !memory.empty()) {
    std::uint64_t total = 0;
    std::uint64_t relevant = 0;
    std::size_t relevant_slots = 0;
    std::vector<Interval> covered;
    for (const WeightedFrame& f : memory) {
      total += f.weight;
      const bool hit = std::any_of(f.provenance.begin(), f.provenance.end(), [&](const Interval& iv) {
        return std::any_of(planted.begin(), planted.end(),
                           [&](const PlantedSegment& s) { return overlaps(iv, s); });
      });
      if (hit) {
        relevant += f.weight;
        ++relevant_slots;
      }
      covered.insert(covered.end(), f.provenance.begin(), f.provenance.end());
    }
    m.relevant_mass_fraction = total == 0 ? 0.0 : static_cast<double>(relevant) / static_cast<double>(total);
    m.relevant_slot_fraction = static_cast<double>(relevant_slots) / static_cast<double>(memory.size());

    std::sort(covered.begin(), covered.end());
    std::vector<Interval> merged;
    for (const Interval& iv : covered) {
      if (!merged.empty() && iv.begin <= merged.back().end) {
        merged.back().end = std::max(merged.back().end, iv.end);
      } else {
        merged.push_back(iv);
      }
    }
    std::uint64_t planted_frames = 0;
    std::uint64_t recalled = 0;
    for (const PlantedSegment& s : planted) {
      planted_frames += s.end - s.start;
      for (const Interval& iv : merged) {
        const std::uint64_t lo = std::max(iv.begin, s.start);
        const std::uint64_t hi = std::min(iv.end, s.end);
        if (lo < hi) recalled += hi - lo;
      }
    }
    m.slot_recall =
        planted_frames == 0 ? 0.0 : static_cast<double>(recalled) / static_cast<double>(planted_frames);
  }

  if (q) {
    double sum = 0.0;
    std::size_t used = 0;
    for (const WeightedFrame& f : memory) {
      try {
        sum += cosine(frame_descriptor(f.tokens), *q);
        ++used;
      } catch (const Error& e) {
        if (e.code() != Errc::ZeroNorm) throw;
      }
    }
    m.q_affinity = used == 0 ? 0.0 : sum / static_cast<double>(used);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the lowest-index failure.
template <class Fn>
void for_each_index(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct LoadedStream {
  std::vector<TokenMatrix> frames;
  std::optional<std::vector<double>> question;
  std::vector<PlantedSegment> planted;
};

LoadedStream load_stream(const ExperimentSpec& spec, const EmbeddingStream* file,
                         std::uint64_t seed) {
  LoadedStream s;
  if (file) {
    s.frames = file->frames;
    s.question = file->question;
    s.planted = spec.stream.planted;
  } else {
    SyntheticSpec syn = *spec.stream.synthetic;
    syn.seed = seed;
    SyntheticStream gen = generate_synthetic(syn);
    s.frames = std::move(gen.frames);
    s.question = std::move(gen.question);
    s.planted = syn.segments;
  }
  if (spec.question) s.question = spec.question;
  return s;
}

struct PolicyOutput {
  std::vector<WeightedFrame> memory;
  AccountingRecord accounting;
  std::uint64_t consolidations = 0;
};

PolicyOutput run_pipeline(const std::vector<TokenMatrix>& frames, const PipelineConfig& cfg,
                          const std::optional<std::vector<double>>& q) {
  Pipeline p(frames.front().shape(), cfg, q);
  for (const TokenMatrix& f : frames) p.step(f);
  p.flush();
  PolicyOutput out;
  out.memory.assign(p.long_term().entries().begin(), p.long_term().entries().end());
  out.accounting = p.bytes_model();
  out.consolidations = p.counters().consolidations_run;
  return out;
}

AccountingRecord baseline_accounting(std::span<const WeightedFrame> memory, FrameShape shape,
                                     std::size_t frames) {
  AccountingRecord rec;
  rec.raw_bytes_per_frame = static_cast<double>(shape.tokens * shape.dims * kModelScalarBytes);
  const std::uint64_t stored = policy_token_count(memory) * shape.dims * kModelScalarBytes +
                               memory.size() * kSlotOverheadBytes;
  rec.peak_resident_bytes = stored;
  rec.amortized_bytes_per_frame = static_cast<double>(stored) / static_cast<double>(frames);
  return rec;
}

ReportRow evaluate(const ExperimentSpec& spec, const EmbeddingStream* file, PolicyId policy,
                   const nlohmann::json& point, std::uint64_t seed) {
  PipelineConfig cfg = spec.pipeline;
  from_json(point, cfg);
  cfg.validate();

  const LoadedStream stream = load_stream(spec, file, seed);
  const FrameShape shape = stream.frames.front().shape();

  reset_token_storage_peak();
  const std::size_t live_before = token_storage_stats().live_bytes;
  const auto start = Clock::now();

  PolicyOutput out;
  switch (policy) {
    case PolicyId::moviechat_plus: out = run_pipeline(stream.frames, cfg, stream.question); break;
    case PolicyId::moviechat: {
      PipelineConfig agnostic = cfg;
      agnostic.consolidation.question_required = false;
      out = run_pipeline(stream.frames, agnostic, std::nullopt);
      break;
    }
    case PolicyId::no_memory: out.memory = no_memory(stream.frames, spec.sample_count); break;
    case PolicyId::spatial_pool: out.memory = spatial_pool(stream.frames); break;
    case PolicyId::temporal_pool: out.memory = {temporal_pool(stream.frames)}; break;
    case PolicyId::ema: out.memory = {ema(stream.frames, spec.ema_lambda)}; break;
  }
  if (policy != PolicyId::moviechat_plus && policy != PolicyId::moviechat) {
    out.accounting = baseline_accounting(out.memory, shape, stream.frames.size());
  }

  ReportRow row;
  row.wall_ms = elapsed_ms(start);
  row.instrumented_peak_bytes = token_storage_stats().peak_bytes - live_before;
  row.policy = policy;
  row.seed = seed;
  row.config = cfg;
  row.metrics = relevance_metrics(out.memory, stream.planted, stream.question);
  row.accounting = out.accounting;
  row.output_frames = out.memory.size();
  row.token_count = policy_token_count(out.memory);
  row.consolidations = out.consolidations;
  return row;
}

nlohmann::json row_json(const ReportRow& r) {
  return {{"policy", to_string(r.policy)},
          {"seed", r.seed},
          {"config", r.config},
          {"metrics",
           {{"relevant_mass_fraction", r.metrics.relevant_mass_fraction},
            {"relevant_slot_fraction", r.metrics.relevant_slot_fraction},
            {"slot_recall", r.metrics.slot_recall},
            {"q_affinity", r.metrics.q_affinity}}},
          {"accounting",
           {{"raw_bytes_per_frame", r.accounting.raw_bytes_per_frame},
            {"amortized_bytes_per_frame", r.accounting.amortized_bytes_per_frame},
            {"peak_resident_bytes", r.accounting.peak_resident_bytes},
            {"instrumented_peak_bytes", r.instrumented_peak_bytes}}},
          {"output_frames", r.output_frames},
          {"token_count", r.token_count},
          {"consolidations", r.consolidations}};
}

}  // namespace

Report run(const ExperimentSpec& spec) {
  spec.validate();
  const std::vector<nlohmann::json> points =
      spec.sweep ? spec.sweep->points() : std::vector<nlohmann::json>{nlohmann::json::object()};
  if (points.size() > spec.max_grid_points) {
    throw Error(Errc::GridTooLarge, std::to_string(points.size()) + " grid points exceed the cap of " +
                                        std::to_string(spec.max_grid_points));
  }

  std::optional<EmbeddingStream> file;
  if (spec.stream.path) file = read_stream_file(*spec.stream.path);

  struct Task {
    PolicyId policy;
    const nlohmann::json* point;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (PolicyId policy : spec.policies) {
    for (const auto& point : points) {
      for (std::uint64_t seed : spec.seeds) tasks.push_back({policy, &point, seed});
    }
  }

  Report report;
  report.spec_echo = spec;
  report.rows.resize(tasks.size());
  for_each_index(tasks.size(), spec.jobs, [&](std::size_t i) {
    const Task& t = tasks[i];
    report.rows[i] = evaluate(spec, file ? &*file : nullptr, t.policy, *t.point, t.seed);
  });
  return report;
}

Report sweep(const ExperimentSpec& spec) {
  const std::size_t points = spec.sweep ? spec.sweep->point_count() : 1;
  if (points > spec.max_grid_points) {
    throw Error(Errc::GridTooLarge, std::to_string(points) + " grid points exceed the cap of " +
                                        std::to_string(spec.max_grid_points));
  }
  return run(spec);
}

nlohmann::json Report::canonical_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const ReportRow& r : rows) rows_json.push_back(row_json(r));
  return {{"spec_echo", spec_echo}, {"rows", std::move(rows_json)}};
}

std::uint64_t Report::canonical_hash() const { return fnv1a64(canonical_json().dump()); }

nlohmann::json Report::to_json() const {
  nlohmann::json doc = canonical_json();
  nlohmann::json timing = nlohmann::json::array();
  for (const ReportRow& r : rows) timing.push_back(r.wall_ms);
  std::ostringstream hash;
  hash << std::hex << canonical_hash();
  doc["environment"] = {{"version", kVersion},
                        {"build_hash", build_hash()},
                        {"canonical_hash", hash.str()},
                        {"timing_ms", std::move(timing)}};
  return doc;
}

std::string Report::to_csv() const {
  std::ostringstream out;
  out << "policy,seed,k,c,g,m0,alpha,sigma,basis,reinit,ltm_cap,relevant_mass_fraction,"
         "relevant_slot_fraction,slot_recall,q_affinity,raw_bytes_per_frame,amortized_bytes_per_frame,"
         "peak_resident_bytes,instrumented_peak_bytes,output_frames,token_count,consolidations\n";
  for (const ReportRow& r : rows) {
    const ConsolidationConfig& c = r.config.consolidation;
    out << to_string(r.policy) << ',' << r.seed << ',' << c.k << ',' << c.c << ',' << c.g << ','
        << c.m0 << ',' << format_number(c.alpha) << ',' << format_number(c.sigma) << ','
        << to_string(c.basis) << ',' << to_string(r.config.reinit) << ',' << r.config.ltm_capacity
        << ',' << format_number(r.metrics.relevant_mass_fraction) << ','
        << format_number(r.metrics.relevant_slot_fraction) << ','
        << format_number(r.metrics.slot_recall) << ',' << format_number(r.metrics.q_affinity) << ','
        << format_number(r.accounting.raw_bytes_per_frame) << ','
        << format_number(r.accounting.amortized_bytes_per_frame) << ','
        << r.accounting.peak_resident_bytes << ',' << r.instrumented_peak_bytes << ','
        << r.output_frames << ',' << r.token_count << ',' << r.consolidations << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Planted relevance

nlohmann::json PlantEvalResult::to_json() const {
  nlohmann::json per_seed = nlohmann::json::array();
  for (const PlantEvalSeed& s : seeds) {
    per_seed.push_back({{"seed", s.seed},
                        {"aware", s.aware},
                        {"agnostic", s.agnostic},
                        {"difference", s.difference},
                        {"aware_slots", s.aware_slots},
                        {"agnostic_slots", s.agnostic_slots}});
  }
  return {{"applicable", applicable},   {"seeds", std::move(per_seed)},
          {"mean_difference", mean_difference}, {"wins", wins},
          {"ties", ties}};
}

PlantEvalResult plant_eval(const ExperimentSpec& spec) {
  spec.validate();
  if (!spec.stream.synthetic) throw Error(Errc::InvalidSpec, "plant-eval needs a synthetic stream");
  const SyntheticSpec& base = *spec.stream.synthetic;

  PlantEvalResult result;
  if (base.segments.empty()) {
    result.applicable = false;
    for (std::uint64_t seed : spec.seeds) result.seeds.push_back({seed, 0.0, 0.0, 0.0, 0.0, 0.0});
    return result;
  }
  const bool strong = std::any_of(base.segments.begin(), base.segments.end(),
                                  [](const PlantedSegment& s) { return s.relevance >= 0.6; });
  if (!strong) throw Error(Errc::InvalidSpec, "plant-eval needs a segment with relevance >= 0.6");
  if (!(spec.pipeline.consolidation.alpha < 1.0)) {
    throw Error(Errc::InvalidSpec, "question-aware run needs alpha < 1");
  }

  PipelineConfig aware = spec.pipeline;
  PipelineConfig agnostic = spec.pipeline;
  agnostic.consolidation.alpha = 1.0;

  result.seeds.resize(spec.seeds.size());
  for_each_index(spec.seeds.size(), spec.jobs, [&](std::size_t i) {
    const std::uint64_t seed = spec.seeds[i];
    const LoadedStream stream = load_stream(spec, nullptr, seed);
    const PolicyOutput a = run_pipeline(stream.frames, aware, stream.question);
    const PolicyOutput b = run_pipeline(stream.frames, agnostic, stream.question);
    const RelevanceMetrics ma = relevance_metrics(a.memory, stream.planted, stream.question);
    const RelevanceMetrics mb = relevance_metrics(b.memory, stream.planted, stream.question);
    result.seeds[i] = {seed,
                       ma.relevant_mass_fraction,
                       mb.relevant_mass_fraction,
                       ma.relevant_mass_fraction - mb.relevant_mass_fraction,
                       ma.relevant_slot_fraction,
                       mb.relevant_slot_fraction};
  });

  double total = 0.0;
  for (const PlantEvalSeed& s : result.seeds) {
    total += s.difference;
    if (s.difference > 0.0) ++result.wins;
    if (s.difference == 0.0) ++result.ties;
  }
  result.mean_difference = total / static_cast<double>(result.seeds.size());
  return result;
}

// ---------------------------------------------------------------------------
// Memory growth benchmark

namespace {

double linear_fit_r2(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 1.0;
  return (sxy * sxy) / (sxx * syy);
}

}  // namespace

nlohmann::json BenchResult::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const BenchRow& r : rows) {
    rows_json.push_back({{"frames", r.frames},
                         {"peak_resident_bytes", r.peak_resident_bytes},
                         {"instrumented_peak_bytes", r.instrumented_peak_bytes},
                         {"amortized_bytes_per_frame", r.amortized_bytes_per_frame},
                         {"expected_amortized_bytes_per_frame", r.expected_amortized_bytes_per_frame},
                         {"ltm_entries", r.ltm_entries},
                         {"wall_ms", r.wall_ms}});
  }
  return {{"rows", std::move(rows_json)},
          {"instrumented_bound_bytes", instrumented_bound_bytes},
          {"peak_constant", peak_constant},
          {"amortized_within_1pct", amortized_within_1pct},
          {"instrumented_bounded", instrumented_bounded},
          {"time_fit_r2", time_fit_r2},
          {"passed", passed()}};
}

std::string BenchResult::to_csv() const {
  std::ostringstream out;
  out << "frames,peak_resident_bytes,instrumented_peak_bytes,amortized_bytes_per_frame,"
         "expected_amortized_bytes_per_frame,ltm_entries,wall_ms\n";
  for (const BenchRow& r : rows) {
    out << r.frames << ',' << r.peak_resident_bytes << ',' << r.instrumented_peak_bytes << ','
        << format_number(r.amortized_bytes_per_frame) << ','
        << format_number(r.expected_amortized_bytes_per_frame) << ',' << r.ltm_entries << ','
        << format_number(r.wall_ms) << '\n';
  }
  return out.str();
}

BenchResult bench_mem(const ExperimentSpec& spec) {
  spec.validate();
  if (!spec.stream.synthetic) throw Error(Errc::InvalidSpec, "bench-mem needs a synthetic stream");
  if (spec.bench_frames.empty()) throw Error(Errc::InvalidSpec, "bench-mem needs frame counts");
  if (!(spec.bench_relevance > spec.pipeline.consolidation.sigma && spec.bench_relevance <= 1.0)) {
    throw Error(Errc::InvalidSpec, "bench relevance must exceed sigma so every window is relevant");
  }

  const PipelineConfig& cfg = spec.pipeline;
  const ConsolidationConfig& c = cfg.consolidation;
  const SyntheticSpec& base = *spec.stream.synthetic;
  const std::uint64_t frame_bytes = base.tokens * base.dims * sizeof(double);

  BenchResult result;
  // Short-term buffer plus the popped window, long-term memory plus one
  // pending append, merge outputs and seeds in flight, and a few loose frames
  // (live copy, generator output, merge temporary).
  result.instrumented_bound_bytes = (2 * c.k + cfg.ltm_capacity + 3 * c.m0 + 4) * frame_bytes;

  std::vector<double> xs;
  std::vector<double> ys;
  for (std::uint64_t frames : spec.bench_frames) {
    SyntheticSpec syn = base;
    syn.frames = frames;
    syn.segments = {{0, frames, spec.bench_relevance}};
    syn.seed = spec.seeds.front();

    reset_token_storage_peak();
    const std::size_t live_before = token_storage_stats().live_bytes;
    const auto start = Clock::now();
    std::uint64_t ltm_entries = 0;
    AccountingRecord acc;
    {
      SyntheticSource source(syn);
      Pipeline p(source.shape(), cfg, source.question());
      while (auto f = source.next()) p.step(std::move(*f));
      p.flush();
      acc = p.bytes_model();
      ltm_entries = p.long_term().size();
    }
    BenchRow row;
    row.wall_ms = elapsed_ms(start);
    row.frames = frames;
    row.instrumented_peak_bytes = token_storage_stats().peak_bytes - live_before;
    row.peak_resident_bytes = acc.peak_resident_bytes;
    row.amortized_bytes_per_frame = acc.amortized_bytes_per_frame;
    row.expected_amortized_bytes_per_frame =
        static_cast<double>(c.m0) / static_cast<double>(c.k) * acc.raw_bytes_per_frame;
    row.ltm_entries = ltm_entries;
    result.rows.push_back(row);
    xs.push_back(static_cast<double>(frames));
    ys.push_back(row.wall_ms);
  }

  result.peak_constant = std::all_of(result.rows.begin(), result.rows.end(), [&](const BenchRow& r) {
    return r.peak_resident_bytes == result.rows.front().peak_resident_bytes;
  });
  result.amortized_within_1pct = std::all_of(result.rows.begin(), result.rows.end(), [](const BenchRow& r) {
    return std::abs(r.amortized_bytes_per_frame - r.expected_amortized_bytes_per_frame) <=
           0.01 * r.expected_amortized_bytes_per_frame;
  });
  result.instrumented_bounded = std::all_of(result.rows.begin(), result.rows.end(), [&](const BenchRow& r) {
    return r.instrumented_peak_bytes <= result.instrumented_bound_bytes;
  });
  result.time_fit_r2 = xs.size() >= 2 ? linear_fit_r2(xs, ys) : 1.0;
  return result;
}

}  // namespace vidmem
