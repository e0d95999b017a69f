#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cseg/rng.hpp"

using cseg::Rng;

TEST_CASE("matches reference xoshiro256** outputs (frozen from independent implementation)") {
  // splitmix64-expanded seeds, first four raw outputs each
  {
    Rng r(0);
    CHECK(r.next_u64() == 0x99ec5f36cb75f2b4ull);
    CHECK(r.next_u64() == 0xbf6e1f784956452aull);
    CHECK(r.next_u64() == 0x1a5f849d4933e6e0ull);
    CHECK(r.next_u64() == 0x6aa594f1262d2d2cull);
  }
  {
    Rng r(42);
    CHECK(r.next_u64() == 0x15780b2e0c2ec716ull);
    CHECK(r.next_u64() == 0x6104d9866d113a7eull);
    CHECK(r.next_u64() == 0xae17533239e499a1ull);
    CHECK(r.next_u64() == 0xecb8ad4703b360a1ull);
  }
  {
    Rng r(123456789);
    CHECK(r.next_u64() == 0xd1eea10c836f0cc2ull);
    CHECK(r.next_u64() == 0xe1bb9dfa08f02548ull);
  }
}

TEST_CASE("tag hashing matches reference fnv-1a values") {
  CHECK(cseg::hash_tag("weights") == 0xb1494b6ef08a411eull);
  CHECK(cseg::hash_tag("shuffle") == 0x477c62bf680bf6aeull);
}

TEST_CASE("same seed, same stream") {
  Rng a(7), b(7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derived streams are independent of parent consumption") {
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) (void)a.next_u64();  // consume a only
  Rng sa = a.stream("weights"), sb = b.stream("weights");
  for (int i = 0; i < 100; ++i) CHECK(sa.next_u64() == sb.next_u64());
}

TEST_CASE("distinct tags give distinct streams") {
  Rng r(5);
  Rng a = r.stream("weights"), b = r.stream("shuffle"), c = r.stream("dropout");
  CHECK(a.next_u64() != b.next_u64());
  CHECK(a.next_u64() != c.next_u64());
  // and distinct seeds shift a given stream
  CHECK(Rng(6).stream("weights").next_u64() !=
        Rng(5).stream("weights").next_u64());
}

TEST_CASE("uniform lies in [0,1) and concentrates at mean 1/2") {
  Rng r(11);
  double s = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    s += u;
  }
  CHECK(std::abs(s / n - 0.5) < 0.005);
}

TEST_CASE("normal has mean 0 and unit variance") {
  Rng r(12);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("bounded stays in range and is roughly uniform") {
  Rng r(13);
  std::vector<int> hist(10, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto v = r.bounded(10);
    REQUIRE(v < 10);
    ++hist[size_t(v)];
  }
  for (int h : hist) CHECK(std::abs(h - n / 10) < 600);
}

TEST_CASE("shuffle permutes and is reproducible") {
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  Rng a(21);
  a.shuffle(v.begin(), v.end());
  std::vector<int> w(100);
  std::iota(w.begin(), w.end(), 0);
  Rng b(21);
  b.shuffle(w.begin(), w.end());
  CHECK(v == w);
  CHECK(v != [] {
    std::vector<int> id(100);
    std::iota(id.begin(), id.end(), 0);
    return id;
  }());
  std::sort(v.begin(), v.end());
  for (int i = 0; i < 100; ++i) CHECK(v[size_t(i)] == i);
}

TEST_CASE("bernoulli tracks its probability") {
  Rng r(31);
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) hits += r.bernoulli(0.3);
  CHECK(std::abs(hits / double(n) - 0.3) < 0.005);
}
