#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "vidmem/error.hpp"
#include "vidmem/storage.hpp"
#include "vidmem/tensor.hpp"

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

WeightedFrame frame_of(std::size_t n, std::size_t d, std::vector<double> v, std::uint64_t weight,
                       std::uint64_t index) {
  WeightedFrame f = WeightedFrame::source(TokenMatrix(n, d, v), index);
  f.weight = weight;
  f.provenance = {Interval{index, index + weight}};
  return f;
}

}  // namespace

TEST_CASE("token matrix validates shape and finiteness") {
  std::vector<double> ok{1, 2, 3, 4};
  CHECK_NOTHROW(TokenMatrix(2, 2, ok));
  CHECK(code_of([&] { TokenMatrix(3, 2, ok); }) == Errc::ShapeMismatch);
  CHECK(code_of([&] { TokenMatrix(0, 4, std::vector<double>{}); }) == Errc::ShapeMismatch);
  std::vector<double> bad{1, std::numeric_limits<double>::quiet_NaN(), 3, 4};
  CHECK(code_of([&] { TokenMatrix(2, 2, bad); }) == Errc::NonFiniteValue);
  std::vector<float> inf{1, 2, std::numeric_limits<float>::infinity(), 4};
  CHECK(code_of([&] { TokenMatrix(2, 2, std::span<const float>(inf)); }) == Errc::NonFiniteValue);

  TokenMatrix m(2, 2, ok);
  CHECK(m.at(1, 0) == 3);
  CHECK(m.row(1)[1] == 4);
}

TEST_CASE("cosine examples") {
  const std::vector<double> e1{1, 0, 0};
  CHECK(cosine(e1, e1) == 1.0);
  CHECK(cosine(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  const double c = cosine(std::vector<double>{3, 4}, std::vector<double>{4, 3});
  CHECK(c == doctest::Approx(24.0 / 25.0).epsilon(1e-15));
  CHECK(std::fabs(c - static_cast<double>(24.0L / 25.0L)) < 1e-15);
}

TEST_CASE("cosine errors") {
  CHECK(code_of([] { cosine(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}); }) ==
        Errc::DimensionMismatch);
  CHECK(code_of([] { cosine(std::vector<double>{0, 0}, std::vector<double>{1, 0}); }) == Errc::ZeroNorm);
  CHECK(code_of([] { cosine(std::vector<double>{1e-13, 0}, std::vector<double>{1, 0}); }) == Errc::ZeroNorm);
}

TEST_CASE("cosine properties on random vectors") {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t d = rng.uniform_int(1, 16);
    std::vector<double> u(d), v(d);
    for (auto& x : u) x = rng.normal() * std::pow(10.0, rng.uniform(-3, 3));
    for (auto& x : v) x = rng.normal();
    const double uv = cosine(u, v);
    CHECK(uv == cosine(v, u));
    CHECK(uv >= -1.0);
    CHECK(uv <= 1.0);
    CHECK(std::fabs(uv - static_cast<double>(testsupport::oracle_cosine(u, v))) < 1e-12);
    CHECK(std::fabs(cosine(u, u) - 1.0) < 1e-15);
    // scale invariance
    std::vector<double> scaled = u;
    for (auto& x : scaled) x *= 7.5;
    CHECK(std::fabs(cosine(scaled, v) - uv) < 1e-14);
  }
}

TEST_CASE("frame descriptor examples") {
  const auto d1 = frame_descriptor(TokenMatrix(1, 3, std::vector<double>{0, 2, 0}));
  CHECK(d1 == std::vector<double>{0, 1, 0});

  CHECK(code_of([] { frame_descriptor(TokenMatrix(2, 2, std::vector<double>{1, 0, -1, 0})); }) ==
        Errc::ZeroNorm);

  const auto d2 = frame_descriptor(TokenMatrix(2, 2, std::vector<double>{1, 0, 0, 1}));
  const double half_root2 = static_cast<double>(std::sqrt(2.0L) / 2.0L);
  CHECK(std::fabs(d2[0] - half_root2) < 1e-15);
  CHECK(std::fabs(d2[1] - half_root2) < 1e-15);
}

TEST_CASE("frame pair similarity examples") {
  Rng rng(5);
  const TokenMatrix a = testsupport::random_matrix(rng, 4, 8);
  CHECK(std::fabs(frame_pair_similarity(a, a) - 1.0) < 1e-15);

  // rows: identical pair and orthogonal pair
  const TokenMatrix x(2, 2, std::vector<double>{1, 0, 1, 0});
  const TokenMatrix y(2, 2, std::vector<double>{1, 0, 0, 1});
  CHECK(frame_pair_similarity(x, y) == 0.5);

  for (int trial = 0; trial < 200; ++trial) {
    const TokenMatrix p = testsupport::random_matrix(rng, 4, 8);
    const TokenMatrix q = testsupport::random_matrix(rng, 4, 8);
    const double got = frame_pair_similarity(p, q);
    CHECK(std::fabs(got - static_cast<double>(testsupport::oracle_pair_similarity(p, q))) < 1e-12);
  }
}

TEST_CASE("frame pair similarity errors name the token") {
  const TokenMatrix a(2, 2, std::vector<double>{1, 0, 0, 0});
  const TokenMatrix b(2, 2, std::vector<double>{1, 0, 1, 0});
  try {
    frame_pair_similarity(a, b);
    FAIL("expected ZeroNorm");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ZeroNorm);
    CHECK(std::string(e.what()).find("token 1") != std::string::npos);
  }
  CHECK(code_of([] {
          frame_pair_similarity(TokenMatrix(1, 2, std::vector<double>{1, 0}),
                                TokenMatrix(2, 1, std::vector<double>{1, 0}));
        }) == Errc::DimensionMismatch);
}

TEST_CASE("weighted merge examples") {
  const WeightedFrame a = frame_of(1, 2, {4, 0}, 1, 0);
  const WeightedFrame same = weighted_merge(a, frame_of(1, 2, {4, 0}, 1, 1));
  CHECK(same.tokens == a.tokens);
  CHECK(same.weight == 2);
  CHECK(same.provenance == Provenance{{0, 2}});

  const WeightedFrame b = frame_of(1, 2, {0, 4}, 3, 1);
  const WeightedFrame m = weighted_merge(a, b);
  CHECK(m.tokens.at(0, 0) == 1.0);
  CHECK(m.tokens.at(0, 1) == 3.0);
  CHECK(m.weight == 4);
  CHECK(m.provenance == Provenance{{0, 4}});

  CHECK(code_of([&] { weighted_merge(a, frame_of(2, 1, {0, 4}, 1, 1)); }) == Errc::DimensionMismatch);
}

TEST_CASE("weighted merge context flag is a conjunction") {
  WeightedFrame a = frame_of(1, 1, {1}, 1, 0);
  WeightedFrame b = frame_of(1, 1, {2}, 1, 1);
  a.context = true;
  CHECK_FALSE(weighted_merge(a, b).context);
  b.context = true;
  CHECK(weighted_merge(a, b).context);
}

TEST_CASE("weighted merge is commutative") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    WeightedFrame a = WeightedFrame::source(testsupport::random_matrix(rng, 3, 5), 0);
    WeightedFrame b = WeightedFrame::source(testsupport::random_matrix(rng, 3, 5), 1);
    a.weight = rng.uniform_int(1, 9);
    a.provenance = {Interval{0, a.weight}};
    b.weight = rng.uniform_int(1, 9);
    b.provenance = {Interval{a.weight, a.weight + b.weight}};
    const WeightedFrame ab = weighted_merge(a, b);
    const WeightedFrame ba = weighted_merge(b, a);
    CHECK(ab.weight == ba.weight);
    CHECK(ab.provenance == ba.provenance);
    for (std::size_t i = 0; i < ab.tokens.values().size(); ++i) {
      CHECK(std::fabs(ab.tokens.values()[i] - ba.tokens.values()[i]) < 1e-12);
    }
  }
}

TEST_CASE("any merge tree reproduces the plain mean") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t k = rng.uniform_int(2, 12);
    std::vector<TokenMatrix> sources;
    std::vector<WeightedFrame> pool;
    for (std::size_t i = 0; i < k; ++i) {
      sources.push_back(testsupport::random_matrix(rng, 2, 4));
      pool.push_back(WeightedFrame::source(sources.back(), i));
    }
    // merge random pairs (not necessarily adjacent) until one frame remains
    while (pool.size() > 1) {
      const std::size_t i = rng.uniform_int(0, pool.size() - 1);
      std::size_t j = rng.uniform_int(0, pool.size() - 2);
      if (j >= i) ++j;
      WeightedFrame m = weighted_merge(pool[i], pool[j]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(std::max(i, j)));
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(std::min(i, j)));
      pool.push_back(std::move(m));
    }
    const WeightedFrame& all = pool.front();
    CHECK(all.weight == k);
    CHECK(all.provenance == Provenance{{0, k}});
    CHECK(testsupport::max_abs_diff(all.tokens.values(), testsupport::provenance_mean(all.provenance, sources)) <
          1e-9);
  }
}

TEST_CASE("provenance union coalesces touching intervals and keeps repeats") {
  CHECK(merge_provenance({{0, 2}}, {{2, 5}}) == Provenance{{0, 5}});
  CHECK(merge_provenance({{4, 6}}, {{0, 2}}) == Provenance{{0, 2}, {4, 6}});
  const Provenance repeated = merge_provenance({{0, 2}}, {{1, 3}});
  CHECK(provenance_length(repeated) == 4);
}

TEST_CASE("degenerate rows are reported") {
  const TokenMatrix m(3, 2, std::vector<double>{0, 0, 1, 0, 0, 1e-14});
  CHECK(degenerate_rows(m) == std::vector<std::size_t>{0, 2});
}

TEST_CASE("token storage is counted") {
  const std::size_t before = token_storage_stats().live_bytes;
  reset_token_storage_peak();
  {
    TokenMatrix m(4, 8);
    CHECK(token_storage_stats().live_bytes == before + 4 * 8 * sizeof(double));
    TokenMatrix copy = m;
    CHECK(token_storage_stats().peak_bytes >= before + 2 * 4 * 8 * sizeof(double));
  }
  CHECK(token_storage_stats().live_bytes == before);
}
