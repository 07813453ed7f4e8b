#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "vidmem/error.hpp"
#include "vidmem/pipeline.hpp"
#include "vidmem/streamio.hpp"

using namespace vidmem;
using testsupport::Rng;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::InvalidConfig;
}

PipelineConfig small_config(std::size_t k, std::size_t m0, ReinitMode reinit, std::size_t cap = 256) {
  PipelineConfig cfg;
  cfg.consolidation.k = k;
  cfg.consolidation.c = k;
  cfg.consolidation.g = 1;
  cfg.consolidation.m0 = m0;
  cfg.reinit = reinit;
  cfg.ltm_capacity = cap;
  return cfg;
}

bool consolidated(const StepEvent& e) { return std::holds_alternative<Consolidated>(e); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("constant stream with one slot per window") {
  PipelineConfig cfg = small_config(4, 1, ReinitMode::none);
  const TokenMatrix f(2, 3, std::vector<double>{1, 2, 3, -1, 0.5, 2});
  Pipeline p(FrameShape{2, 3}, cfg);
  int events = 0;
  for (int i = 0; i < 8; ++i) events += consolidated(p.step(f));
  CHECK(events == 1);
  REQUIRE(p.flush().has_value());
  CHECK(p.counters().consolidations_run == 2);
  REQUIRE(p.long_term().size() == 2);
  for (const auto& e : p.long_term().entries()) {
    CHECK(e.tokens == f);
    CHECK(e.weight == 4);
  }
}

TEST_CASE("merged-token seeding shortens later fills") {
  Rng rng(1);
  const std::vector<double> q{1, 0, 0, 0};
  Pipeline p(FrameShape{2, 4}, PipelineConfig{}, q);
  std::vector<std::uint64_t> fired;
  for (std::uint64_t t = 0; t < 100; ++t) {
    std::vector<double> v;
    for (int j = 0; j < 2; ++j) v.insert(v.end(), {1.0, 0.05 * rng.normal(), 0.05 * rng.normal(), 0.05 * rng.normal()});
    if (consolidated(p.step(TokenMatrix(2, 4, v)))) fired.push_back(t);
  }
  // push index t (0-based) fires when the buffer already holds 16 frames:
  // first at t = 16, then every 12 fresh frames because 4 seeds stay behind.
  REQUIRE(fired.size() >= 3);
  CHECK(fired[0] == 16);
  for (std::size_t i = 1; i < fired.size(); ++i) CHECK(fired[i] - fired[i - 1] == 12);
  CHECK(p.counters().seeded_weight > 0);
}

TEST_CASE("long weak stream: one entry per window") {
  PipelineConfig cfg = small_config(16, 4, ReinitMode::none, 1000);
  cfg.consolidation.c = 8;
  cfg.consolidation.g = 2;
  const std::vector<double> q{0, 0, 1};
  Pipeline p(FrameShape{1, 3}, cfg, q);
  Rng rng(2);
  std::uint64_t events = 0;
  for (int t = 0; t < 10000; ++t) {
    events += consolidated(p.step(TokenMatrix(1, 3, std::vector<double>{rng.normal(), rng.normal(), 0.0})));
  }
  // 10,000 = 625 * 16: the last window is only consolidated by the flush.
  CHECK(events == 624);
  CHECK(p.long_term().size() == 624);
  p.flush();
  CHECK(p.long_term().size() == 625);
  CHECK(p.long_term().compactions() == 0);
  CHECK(p.long_term().total_weight() == 10000);
  const VideoRepresentation rep = p.assemble_global();
  CHECK(rep.entries.size() == 625);
  for (const auto& e : rep.entries) CHECK(e.position.has_value());
}

TEST_CASE("flush") {
  const std::vector<double> q{1, 0};
  Pipeline empty(FrameShape{1, 2}, PipelineConfig{}, q);
  CHECK_FALSE(empty.flush().has_value());

  Pipeline one(FrameShape{1, 2}, PipelineConfig{}, q);
  one.step(TokenMatrix(1, 2, std::vector<double>{1, 0.1}));
  const auto r1 = one.flush();
  REQUIRE(r1.has_value());
  CHECK(r1->target == 1);
  REQUIRE(one.long_term().size() == 1);
  CHECK(one.long_term().entries()[0].weight == 1);

  Pipeline eight(FrameShape{1, 2}, PipelineConfig{}, q);
  Rng rng(3);
  for (int i = 0; i < 8; ++i) eight.step(TokenMatrix(1, 2, std::vector<double>{1, 0.1 * rng.normal()}));
  const auto r8 = eight.flush();
  REQUIRE(r8.has_value());
  CHECK(r8->relevant);
  CHECK(r8->target == 2);
  CHECK(eight.long_term().size() == 2);
  CHECK(eight.flushed());
}

TEST_CASE("global assembly") {
  Rng rng(4);
  Pipeline p(FrameShape{1, 2}, small_config(4, 2, ReinitMode::none));
  CHECK(p.assemble_global().entries.empty());
  for (int i = 0; i < 10; ++i) p.step(testsupport::random_matrix(rng, 1, 2));
  CHECK(code_of([&] { p.assemble_global(); }) == Errc::NotFlushed);
  p.flush();
  const VideoRepresentation rep = p.assemble_global();
  CHECK(rep.mode == RepresentationMode::global);
  REQUIRE(rep.entries.size() == p.long_term().size());
  std::uint64_t prev_end = 0;
  for (std::size_t i = 0; i < rep.entries.size(); ++i) {
    CHECK(rep.entries[i].frame.provenance.front().begin == prev_end);
    prev_end = rep.entries[i].frame.provenance.back().end;
    CHECK(*rep.entries[i].position == p.positions().extended_position(i));
  }
  CHECK(prev_end == 10);
}

TEST_CASE("breakpoint assembly") {
  Rng rng(5);
  Pipeline p(FrameShape{1, 2}, small_config(4, 2, ReinitMode::none));
  CHECK(code_of([&] { p.assemble_breakpoint(0); }) == Errc::StaleTimestamp);
  const TokenMatrix x0 = testsupport::random_matrix(rng, 1, 2);
  p.step(x0);
  VideoRepresentation cold = p.assemble_breakpoint(0);
  REQUIRE(cold.entries.size() == 2);
  CHECK(cold.entries[0].frame.tokens == x0);
  CHECK(cold.entries[1].frame.tokens == x0);
  CHECK(*cold.timestamp == 0);
  CHECK(code_of([&] { p.assemble_breakpoint(1); }) == Errc::StaleTimestamp);

  for (std::uint64_t t = 1; t < 40; ++t) {
    const StepEvent ev = p.step(testsupport::random_matrix(rng, 1, 2));
    const VideoRepresentation rep = p.assemble_breakpoint(t);
    CHECK(rep.entries.size() == p.long_term().size() + p.short_term().size() + 1);
    CHECK(rep.entries.back().frame.provenance == Provenance{{t, t + 1}});
    if (consolidated(ev)) {
      // only the frame that triggered the event is buffered
      REQUIRE(p.short_term().size() == 1);
      CHECK(p.short_term().frames()[0].provenance == Provenance{{t, t + 1}});
    }
    for (std::size_t i = 0; i < p.long_term().size(); ++i) {
      CHECK(rep.entries[i].frame.provenance == p.long_term().entries()[i].provenance);
    }
  }
}

TEST_CASE("accounting model") {
  const std::vector<double> q{1, 0};
  PipelineConfig cfg;  // K 16, M0 4
  Pipeline p(FrameShape{32, 768}, cfg);
  CHECK(p.bytes_model().raw_bytes_per_frame == 32 * 768 * 4);
  CHECK(p.bytes_model().amortized_bytes_per_frame == 24576);

  Pipeline none(FrameShape{1, 2}, small_config(4, 4, ReinitMode::none));
  for (int i = 0; i < 20; ++i) none.step(TokenMatrix(1, 2, std::vector<double>{1, 1.0 * i}));
  CHECK(none.bytes_model().amortized_bytes_per_frame == none.bytes_model().raw_bytes_per_frame);

  // peak does not depend on stream length
  Pipeline a(FrameShape{2, 2}, cfg, q), b(FrameShape{2, 2}, cfg, q);
  Rng rng(6);
  for (int i = 0; i < 10; ++i) a.step(testsupport::random_matrix(rng, 2, 2));
  for (int i = 0; i < 3000; ++i) b.step(testsupport::random_matrix(rng, 2, 2));
  CHECK(a.bytes_model().peak_resident_bytes == b.bytes_model().peak_resident_bytes);
  CHECK(a.bytes_model().peak_resident_bytes == (16 + 256) * (2 * 2 * 4 + kSlotOverheadBytes));
}

TEST_CASE("weight bookkeeping across reinit modes") {
  for (ReinitMode mode : {ReinitMode::none, ReinitMode::merged_tokens, ReinitMode::last_k, ReinitMode::uniform_sample}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      const std::size_t k = rng.uniform_int(2, 8);
      PipelineConfig cfg = small_config(k, rng.uniform_int(1, k - 1), mode, rng.uniform_int(2, 12));
      cfg.consolidation.alpha = rng.uniform(0.1, 1.0);
      std::vector<double> q{rng.normal(), rng.normal(), rng.normal()};
      Pipeline p(FrameShape{2, 3}, cfg, q);
      const std::size_t total = rng.uniform_int(1, 200);
      for (std::size_t t = 0; t < total; ++t) {
        p.step(testsupport::random_matrix(rng, 2, 3));
        CHECK(p.short_term().size() <= k);
        CHECK(p.long_term().size() <= cfg.ltm_capacity);
        CHECK(p.resident_weight() == p.counters().frames_pushed + p.counters().seeded_weight);
      }
      p.flush();
      CHECK(p.long_term().total_weight() == total + p.counters().seeded_weight);
      if (mode == ReinitMode::none) CHECK(p.counters().seeded_weight == 0);
    }
  }
}

TEST_CASE("long-term length bound before compaction") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 40);
    const std::size_t k = 8;
    const std::size_t m0 = rng.uniform_int(1, 7);
    PipelineConfig cfg = small_config(k, m0, seed % 2 ? ReinitMode::merged_tokens : ReinitMode::none, 100000);
    Pipeline p(FrameShape{1, 3}, cfg, std::vector<double>{1, 0, 0});
    const std::size_t total = rng.uniform_int(1, 500);
    for (std::size_t t = 0; t < total; ++t) p.step(testsupport::random_matrix(rng, 1, 3));
    p.flush();
    const std::size_t seeded = cfg.reinit == ReinitMode::none ? 0 : m0;
    const std::size_t bound = (total + (k - seeded) - 1) / (k - seeded) * m0 + 1;
    CHECK(p.long_term().size() <= bound);
  }
}

TEST_CASE("snapshot export is deterministic and resumable") {
  Rng rng(7);
  SyntheticSpec spec{300, 2, 5, {{40, 80, 0.9}}, 0.1, 11, 0.5};
  const SyntheticStream s = generate_synthetic(spec);
  PipelineConfig cfg = small_config(8, 3, ReinitMode::none, 20);

  auto run_to = [&](std::size_t upto) {
    Pipeline p(FrameShape{2, 5}, cfg, s.question);
    for (std::size_t t = 0; t < upto; ++t) p.step(s.frames[t]);
    return p;
  };
  const auto dir = testsupport::temp_dir("pipeline_snapshot");
  const Pipeline a = run_to(150), b = run_to(150);
  a.export_snapshot(dir / "a");
  b.export_snapshot(dir / "b");
  // Identical apart from the sidecar file name each snapshot records.
  std::string ja = slurp(dir / "a.json");
  const std::string jb = slurp(dir / "b.json");
  ja.replace(ja.find("\"a.mces\""), 8, "\"b.mces\"");
  CHECK(ja == jb);
  CHECK(slurp(dir / "a.mces") == slurp(dir / "b.mces"));

  Pipeline resumed = Pipeline::import_snapshot(dir / "a.json");
  CHECK(resumed.counters() == a.counters());
  CHECK(resumed.short_term().size() == a.short_term().size());
  CHECK(resumed.assemble_breakpoint(149).entries.size() == a.assemble_breakpoint(149).entries.size());

  Pipeline straight = run_to(300);
  for (std::size_t t = 150; t < 300; ++t) resumed.step(s.frames[t]);
  straight.flush();
  resumed.flush();
  REQUIRE(resumed.long_term().size() == straight.long_term().size());
  for (std::size_t i = 0; i < straight.long_term().size(); ++i) {
    const auto& x = straight.long_term().entries()[i];
    const auto& y = resumed.long_term().entries()[i];
    CHECK(x.provenance == y.provenance);
    CHECK(x.weight == y.weight);
    for (std::size_t v = 0; v < x.tokens.values().size(); ++v) {
      CHECK(std::fabs(x.tokens.values()[v] - y.tokens.values()[v]) < 1e-6);
    }
  }
}

TEST_CASE("construction and step errors") {
  CHECK(code_of([] { Pipeline(FrameShape{1, 2}, PipelineConfig{}, std::vector<double>{1, 0, 0}); }) ==
        Errc::DimensionMismatch);
  CHECK(code_of([] { Pipeline(FrameShape{1, 2}, PipelineConfig{}, std::vector<double>{0, 0}); }) == Errc::ZeroNorm);
  PipelineConfig required;
  required.consolidation.question_required = true;
  CHECK(code_of([&] { Pipeline(FrameShape{1, 2}, required); }) == Errc::MissingQuestion);
  PipelineConfig seeds_fill_buffer = small_config(4, 4, ReinitMode::merged_tokens);
  CHECK(code_of([&] { Pipeline(FrameShape{1, 2}, seeds_fill_buffer); }) == Errc::InvalidConfig);
  Pipeline p(FrameShape{1, 2}, PipelineConfig{});
  CHECK(code_of([&] { p.step(TokenMatrix(2, 2)); }) == Errc::ShapeMismatch);
}

TEST_CASE("config JSON overrides") {
  PipelineConfig cfg;
  from_json(nlohmann::json{{"k", 12}, {"m0", 3}, {"reinit", "last"}, {"basis", "max"}}, cfg);
  CHECK(cfg.consolidation.k == 12);
  CHECK(cfg.consolidation.c * cfg.consolidation.g == 12);
  CHECK(cfg.consolidation.m0 == 3);
  CHECK(cfg.reinit == ReinitMode::last_k);
  CHECK(cfg.consolidation.basis == RelevanceBasis::max);
  CHECK(cfg.consolidation.alpha == 0.25);

  PipelineConfig back;
  from_json(nlohmann::json(cfg), back);
  CHECK(nlohmann::json(back) == nlohmann::json(cfg));
  CHECK(code_of([] { parse_reinit("sometimes"); }) == Errc::InvalidConfig);
}

TEST_CASE("representation JSON lists entries in order") {
  Pipeline p(FrameShape{1, 2}, small_config(2, 1, ReinitMode::none));
  for (int i = 0; i < 5; ++i) p.step(TokenMatrix(1, 2, std::vector<double>{1, 0.5 * i}));
  const nlohmann::json j = representation_json(p.assemble_breakpoint(4));
  CHECK(j.at("mode") == "breakpoint");
  CHECK(j.at("entries").size() == p.long_term().size() + p.short_term().size() + 1);
}
