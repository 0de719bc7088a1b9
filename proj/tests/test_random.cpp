#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "doctest.h"
#include "nestedg/random.hpp"
#include "oracles.hpp"

using namespace nestedg;

namespace {

using oracle::Moments;
using oracle::moments;

void check_moments(const std::function<double(RandomStream&)>& draw, double mean, double var, std::uint64_t key) {
  RandomStream rng(key, 0);
  std::vector<double> x(100000);
  for (auto& v : x) v = draw(rng);
  const Moments mo = moments(x);
  CHECK(std::abs(mo.mean - mean) < 5.0 * mo.se_mean);
  CHECK(std::abs(mo.var - var) < 5.0 * mo.se_var);
}

}  // namespace

TEST_SUITE("random") {
  TEST_CASE("philox known-answer vectors") {
    using C = Philox4x32::Counter;
    using K = Philox4x32::Key;
    CHECK(Philox4x32::block(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(Philox4x32::block(C{0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, K{0xffffffff, 0xffffffff}) ==
          C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(Philox4x32::block(C{0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, K{0xa4093822, 0x299f31d0}) ==
          C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
  }

  TEST_CASE("streams are reproducible and positioned by substream") {
    RandomStream a(42, 7), b(42, 7), c(42, 8), d(43, 7);
    std::vector<std::uint64_t> va, vb, vc, vd;
    for (int i = 0; i < 20; ++i) {
      va.push_back(a());
      vb.push_back(b());
      vc.push_back(c());
      vd.push_back(d());
    }
    CHECK(va == vb);
    CHECK(va != vc);
    CHECK(va != vd);
  }

  TEST_CASE("derive_key depends on tag order") {
    CHECK(derive_key(1, {2, 3}) != derive_key(1, {3, 2}));
    CHECK(derive_key(1, {2}) != derive_key(2, {2}));
    CHECK(derive_key(9, {stream_tag::kMonteCarlo, 0}) == derive_key(9, {stream_tag::kMonteCarlo, 0}));
  }

  TEST_CASE("uniform is open and below stays in range") {
    RandomStream rng(5, 0);
    for (int i = 0; i < 100000; ++i) {
      const double u = rng.uniform();
      REQUIRE(u > 0.0);
      REQUIRE(u < 1.0);
    }
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 10000; ++i) {
      const auto v = rng.below(7);
      REQUIRE(v < 7);
      seen.insert(v);
    }
    CHECK(seen.size() == 7);
  }

  TEST_CASE("sampler moments at 1e5 draws") {
    SUBCASE("uniform") { check_moments([](RandomStream& r) { return r.uniform(); }, 0.5, 1.0 / 12.0, 11); }
    SUBCASE("normal") { check_moments([](RandomStream& r) { return draw_normal(r, 3.0, 2.0); }, 3.0, 2.0, 12); }
    SUBCASE("gamma shape 8") {
      check_moments([](RandomStream& r) { return draw_gamma(r, 15.0, 1.0 / 8.0); }, 15.0, 225.0 / 8.0, 13);
    }
    SUBCASE("gamma shape below one") {
      check_moments([](RandomStream& r) { return draw_gamma(r, 2.0, 2.0); }, 2.0, 8.0, 14);
    }
    SUBCASE("inverse gaussian") {
      check_moments([](RandomStream& r) { return draw_inverse_gaussian(r, 15.0, 40.0); }, 15.0, 3375.0 / 40.0, 15);
    }
    SUBCASE("bernoulli") {
      check_moments([](RandomStream& r) { return draw_bernoulli(r, 0.3) ? 1.0 : 0.0; }, 0.3, 0.21, 16);
    }
  }

  TEST_CASE("inverse gaussian skewness exceeds gamma skewness at equal mean") {
    // Skewness 3 sqrt(mu / lambda) vs 2 / sqrt(shape).
    auto skew = [](const std::vector<double>& x) {
      const Moments m = moments(x);
      double s3 = 0.0;
      for (double v : x) s3 += std::pow(v - m.mean, 3);
      return s3 / static_cast<double>(x.size()) / std::pow(m.var, 1.5);
    };
    RandomStream r1(21, 0), r2(22, 0);
    std::vector<double> ig(100000), ga(100000);
    for (auto& v : ig) v = draw_inverse_gaussian(r1, 15.0, 40.0);
    for (auto& v : ga) v = draw_gamma(r2, 15.0, 1.0 / 8.0);
    CHECK(skew(ig) == doctest::Approx(3.0 * std::sqrt(15.0 / 40.0)).epsilon(0.1));
    CHECK(skew(ga) == doctest::Approx(2.0 / std::sqrt(8.0)).epsilon(0.1));
  }
}
