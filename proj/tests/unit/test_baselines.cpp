#include <cmath>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "vidmem/baselines.hpp"
#include "vidmem/error.hpp"

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

std::vector<TokenMatrix> random_stream(Rng& rng, std::size_t t, std::size_t n, std::size_t d) {
  std::vector<TokenMatrix> out;
  for (std::size_t i = 0; i < t; ++i) out.push_back(testsupport::random_matrix(rng, n, d));
  return out;
}

std::vector<std::uint64_t> indices(const std::vector<WeightedFrame>& frames) {
  std::vector<std::uint64_t> out;
  for (const auto& f : frames) out.push_back(f.provenance.front().begin);
  return out;
}

}  // namespace

TEST_CASE("no_memory sampling") {
  Rng rng(1);
  const auto s16 = random_stream(rng, 16, 2, 3);
  const auto all = no_memory(s16);
  REQUIRE(all.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(all[i].tokens == s16[i]);
    CHECK(all[i].weight == 1);
  }

  const auto s32 = random_stream(rng, 32, 1, 2);
  std::vector<std::uint64_t> even;
  for (std::uint64_t i = 0; i < 32; i += 2) even.push_back(i);
  CHECK(indices(no_memory(s32)) == even);

  const auto s5 = random_stream(rng, 5, 1, 2);
  CHECK(indices(no_memory(s5)) == std::vector<std::uint64_t>{0, 1, 2, 3, 4});

  // index-formula oracle for arbitrary lengths
  for (std::size_t t = 1; t < 60; ++t) {
    const auto s = random_stream(rng, t, 1, 1);
    std::vector<std::uint64_t> expect;
    for (std::size_t i = 0; i < 16; ++i) {
      const std::uint64_t idx = i * t / 16;
      if (expect.empty() || expect.back() != idx) expect.push_back(idx);
    }
    CHECK(indices(no_memory(s)) == expect);
  }
  CHECK(code_of([] { no_memory({}); }) == Errc::EmptyInput);
}

TEST_CASE("spatial pool") {
  Rng rng(2);
  const auto single = random_stream(rng, 4, 1, 3);
  const auto same = spatial_pool(single);
  for (std::size_t i = 0; i < 4; ++i) CHECK(same[i].tokens == single[i]);

  const std::vector<TokenMatrix> two{TokenMatrix(2, 2, std::vector<double>{2, 0, 0, 2})};
  const auto pooled = spatial_pool(two);
  CHECK(pooled[0].tokens == TokenMatrix(1, 2, std::vector<double>{1, 1}));

  const auto s = random_stream(rng, 20, 4, 5);
  const auto out = spatial_pool(s);
  REQUIRE(out.size() == 20);
  for (std::size_t t = 0; t < 20; ++t) {
    for (std::size_t d = 0; d < 5; ++d) {
      long double mean = 0;
      for (std::size_t j = 0; j < 4; ++j) mean += s[t].at(j, d);
      mean /= 4;
      CHECK(std::fabs(out[t].tokens.at(0, d) - static_cast<double>(mean)) < 1e-12);
    }
  }
  CHECK(policy_token_count(out) == 20);
}

TEST_CASE("temporal pool") {
  Rng rng(3);
  const auto one = random_stream(rng, 1, 3, 2);
  CHECK(temporal_pool(one).tokens == one[0]);

  const TokenMatrix f(1, 2, std::vector<double>{1.5, -2});
  const TokenMatrix neg(1, 2, std::vector<double>{-1.5, 2});
  const WeightedFrame zero = temporal_pool(std::vector<TokenMatrix>{f, neg});
  CHECK(zero.tokens == TokenMatrix(1, 2));
  CHECK(degenerate_rows(zero.tokens).size() == 1);

  const auto s = random_stream(rng, 37, 3, 4);
  const WeightedFrame out = temporal_pool(s);
  CHECK(out.weight == 37);
  CHECK(out.provenance == Provenance{{0, 37}});
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t d = 0; d < 4; ++d) {
      long double mean = 0;
      for (const auto& m : s) mean += m.at(j, d);
      mean /= 37;
      CHECK(std::fabs(out.tokens.at(j, d) - static_cast<double>(mean)) < 1e-12);
    }
  }
  CHECK(policy_token_count(std::vector<WeightedFrame>{out}) == 3);
}

TEST_CASE("ema") {
  Rng rng(4);
  const auto s = random_stream(rng, 9, 2, 3);
  CHECK(ema(s, 0.0).tokens == s.back());
  CHECK(ema(s, 0.0).weight == 9);

  const TokenMatrix c(2, 2, std::vector<double>{0.5, 1, -2, 4});
  const std::vector<TokenMatrix> constant(7, c);
  for (double lambda : {0.0, 0.25, 0.5, 0.9, 0.999}) CHECK(ema(constant, lambda).tokens == c);

  const std::vector<TokenMatrix> steps{TokenMatrix(1, 1, std::vector<double>{0}),
                                       TokenMatrix(1, 1, std::vector<double>{1})};
  CHECK(ema(steps, 0.5).tokens.at(0, 0) == 0.5);

  CHECK(code_of([&] { ema(s, 1.0); }) == Errc::InvalidLambda);
  CHECK(code_of([&] { ema(s, -0.1); }) == Errc::InvalidLambda);
}

TEST_CASE("policy ids round trip") {
  for (PolicyId id : {PolicyId::no_memory, PolicyId::spatial_pool, PolicyId::temporal_pool, PolicyId::ema,
                      PolicyId::moviechat, PolicyId::moviechat_plus}) {
    CHECK(parse_policy(to_string(id)) == id);
  }
  CHECK(code_of([] { parse_policy("lstm"); }) == Errc::InvalidConfig);
}

TEST_CASE("mixed shapes are rejected") {
  const std::vector<TokenMatrix> s{TokenMatrix(1, 2), TokenMatrix(2, 1)};
  CHECK(code_of([&] { temporal_pool(s); }) == Errc::ShapeMismatch);
}
