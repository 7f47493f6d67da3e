#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "bbseg/rng.hpp"

using namespace bbseg;

TEST_CASE("splitmix64 matches the published reference sequence") {
  // First outputs of the reference generator seeded with 0: the counter
  // design makes Rng(s) emit exactly that stream.
  Rng rng(0);
  CHECK(rng.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(rng.next_u64() == 0x910a2dec89025cc1ULL);
  CHECK(rng.next_u64() == 0x975835de1c9756ceULL);
}

TEST_CASE("identical seeds give identical streams") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("keyed construction behaves like stream offsets") {
  // Rng(s) skipping one draw lands on Rng(s+1)'s stream, so per-item keys
  // mix_seed(...) must be used rather than raw offsets; check both facts.
  Rng a(7);
  (void)a.next_u64();
  Rng b(8);
  CHECK(a.next_u64() == b.next_u64());
  CHECK(mix_seed(7, 0) != mix_seed(8, 0));
  CHECK(mix_seed(7, 1) != mix_seed(7, 2));
}

TEST_CASE("mix_seed produces no collisions over a small key grid") {
  std::set<uint64_t> seen;
  for (uint64_t a = 0; a < 64; ++a)
    for (uint64_t b = 0; b < 64; ++b) seen.insert(mix_seed(a, b));
  CHECK(seen.size() == 64 * 64);
  std::set<uint64_t> seen3;
  for (uint64_t a = 0; a < 16; ++a)
    for (uint64_t b = 0; b < 16; ++b)
      for (uint64_t c = 0; c < 16; ++c) seen3.insert(mix_seed(a, b, c));
  CHECK(seen3.size() == 16 * 16 * 16);
}

TEST_CASE("next_double stays in [0,1) and fills the range") {
  Rng rng(99);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.001);
  CHECK(hi > 0.999);
}

TEST_CASE("next_int is bounded and roughly uniform") {
  Rng rng(5);
  std::vector<int> counts(10, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const int v = rng.next_int(10);
    REQUIRE(v >= 0);
    REQUIRE(v < 10);
    ++counts[v];
  }
  for (int c : counts) {
    CHECK(c > n / 10 - 600);  // ~6 sigma band around n/10
    CHECK(c < n / 10 + 600);
  }
}

TEST_CASE("next_normal has standard moments") {
  Rng rng(17);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.next_normal();
    sum += z;
    sum2 += z * z;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("next_uniform covers its interval") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.next_uniform(-2.5, 4.0);
    CHECK(v >= -2.5);
    CHECK(v < 4.0);
  }
}
