#include "doctest.h"

#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "calicausal/rng.hpp"

using namespace calicausal;

TEST_CASE("rng streams are deterministic and independent") {
  Rng a(derive_seed(42, "alpha"));
  Rng b(derive_seed(42, "alpha"));
  Rng c(derive_seed(42, "beta"));
  bool any_diff = false;
  for (int i = 0; i < 32; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    if (va != c.next_u64()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("indexed streams differ") {
  std::set<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 100; ++i) seeds.insert(derive_seed(7, "slate", i));
  CHECK(seeds.size() == 100);
}

TEST_CASE("uniform01 stays in [0,1) and has the right mean") {
  Rng rng(123);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.005);
}

TEST_CASE("normal moments") {
  Rng rng(99);
  double sum = 0.0, sumsq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sumsq / n - 1.0) < 0.02);
}

TEST_CASE("lognormal with zero sigma is exact") {
  Rng rng(5);
  CHECK(rng.lognormal(0.7, 0.0) == doctest::Approx(std::exp(0.7)).epsilon(1e-15));
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(17);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  rng.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 10);
}

TEST_CASE("sample_without_replacement draws distinct indices") {
  Rng rng(3);
  const auto picks = rng.sample_without_replacement(50, 20);
  std::set<std::size_t> s(picks.begin(), picks.end());
  CHECK(picks.size() == 20);
  CHECK(s.size() == 20);
  for (auto p : picks) CHECK(p < 50);
  CHECK_THROWS_AS(rng.sample_without_replacement(3, 5), std::invalid_argument);
}
