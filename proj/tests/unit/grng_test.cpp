#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "shiftbnn/error.hpp"
#include "shiftbnn/grng.hpp"

using namespace shiftbnn;

namespace {

// Mixer transcribed independently for the oracle.
std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xFF51AFD7ED558CCDull;
  x ^= x >> 33;
  x *= 0xC4CEB9FE1A85EC53ull;
  x ^= x >> 33;
  return x;
}

}  // namespace

TEST_CASE("seed derivation follows the finalizer mixer") {
  const auto seed = derive_seed(1, 0, 256);
  REQUIRE(seed.size() == 4);
  for (std::uint64_t j = 0; j < 4; ++j) CHECK(seed[j] == mix(1 + j));
  const auto other = derive_seed(1, 1, 256);
  CHECK(other != seed);
  CHECK(other[0] == mix(1 + 0x9E3779B97F4A7C15ull));

  const auto narrow = derive_seed(1, 0, 8);
  CHECK(narrow[0] == (mix(1) & 0xFF));
}

TEST_CASE("fresh stream state") {
  GrngStream g(1, 0, TapSet::default_for(8));
  CHECK(g.lfsr().to_u64() != 0);
  CHECK(g.running_sum() == popcount_state(g.lfsr()));
  CHECK(g.mode() == GrngMode::Idle);
  CHECK(g.position() == 0);
}

TEST_CASE("standardization examples") {
  CHECK(standardize(128, 256) == 0.0);
  CHECK(standardize(136, 256) == 1.0);
  CHECK(standardize(120, 256) == -1.0);
  CHECK(standardize(256, 256) == 16.0);
  CHECK(standardize(0, 256) == -16.0);
}

TEST_CASE("emitted value matches its count exactly") {
  GrngStream g(5, 3, TapSet::default_for(256));
  for (int i = 0; i < 1000; ++i) {
    const Epsilon e = g.generate_forward();
    REQUIRE(e.value == (e.count - 128.0) / 8.0);
    REQUIRE(std::abs(e.value) <= 16.0);
  }
}

TEST_CASE("single draw comes back with the same count") {
  GrngStream g(2, 0, TapSet::default_for(256));
  const Epsilon f = g.generate_forward();
  const Epsilon b = g.retrieve_backward();
  CHECK(f.count == b.count);
  CHECK(f.value == b.value);
  CHECK(g.position() == 0);
}

TEST_CASE("a 3x3 kernel of draws comes back reversed") {
  GrngStream g(11, 4, TapSet::default_for(256));
  std::vector<int> forward;
  for (int i = 0; i < 9; ++i) forward.push_back(g.generate_forward().count);
  for (int i = 8; i >= 0; --i) CHECK(g.retrieve_backward().count == forward[static_cast<std::size_t>(i)]);
}

TEST_CASE("long replay restores the post-init state") {
  GrngStream g(17, 0, TapSet::default_for(256));
  const auto initial = g.lfsr().to_words();
  const int sum0 = g.running_sum();
  constexpr int k = 100000;
  std::vector<int> trace(k);
  for (int i = 0; i < k; ++i) trace[static_cast<std::size_t>(i)] = g.generate_forward().count;
  for (int i = k - 1; i >= 0; --i)
    REQUIRE(g.retrieve_backward().count == trace[static_cast<std::size_t>(i)]);
  CHECK(g.lfsr().to_words() == initial);
  CHECK(g.running_sum() == sum0);
}

TEST_CASE("retrieving before any generation underflows") {
  GrngStream g(1, 0, TapSet::default_for(256));
  g.set_mode(GrngMode::Backward);
  try {
    g.retrieve_backward();
    FAIL("expected underflow");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnderflowBeforeSeed);
  }
}

TEST_CASE("idle ticks leave the stream alone") {
  GrngStream g(1, 0, TapSet::default_for(64));
  g.generate_forward();
  const auto before = g.lfsr().to_words();
  g.set_mode(GrngMode::Idle);
  for (int i = 0; i < 10; ++i) CHECK_FALSE(g.tick().has_value());
  CHECK(g.lfsr().to_words() == before);
  CHECK(g.position() == 1);
}

TEST_CASE("mode round trips do not disturb the sequence") {
  GrngStream a(9, 2, TapSet::default_for(256));
  GrngStream b(9, 2, TapSet::default_for(256));
  std::vector<int> plain;
  for (int i = 0; i < 50; ++i) plain.push_back(a.generate_forward().count);

  std::vector<int> mixed;
  for (int i = 0; i < 30; ++i) mixed.push_back(b.generate_forward().count);
  for (int i = 0; i < 10; ++i) b.retrieve_backward();
  CHECK(b.mode() == GrngMode::Backward);
  for (int i = 0; i < 10; ++i) REQUIRE(b.generate_forward().count == mixed[static_cast<std::size_t>(20 + i)]);
  for (int i = 30; i < 50; ++i) mixed.push_back(b.generate_forward().count);
  CHECK(mixed == plain);
  CHECK(b.backward_to_forward_switches() == 1);
}

TEST_CASE("running sum tracks popcount through random interleavings") {
  GrngStream g(3, 7, TapSet::default_for(256));
  std::mt19937_64 gen(1234);
  for (int i = 0; i < 200000; ++i) {
    if (g.position() > 0 && (gen() & 1)) {
      g.retrieve_backward();
    } else {
      g.generate_forward();
    }
    REQUIRE(g.running_sum() == popcount_state(g.lfsr()));
  }
}

TEST_CASE("streams are pure functions of seed, id and call index") {
  GrngStream a(42, 5, TapSet::default_for(256));
  GrngStream b(42, 5, TapSet::default_for(256));
  for (int i = 0; i < 1000; ++i) REQUIRE(a.generate_forward().count == b.generate_forward().count);
}

TEST_CASE("full-period counts of a 16-bit register have binomial moments") {
  // Over one period every nonzero pattern appears once, so the count sum is
  // n * 2^(n-1) and the square sum follows from the binomial identity
  // sum_k k^2 C(n,k) = n(n+1) 2^(n-2).
  GrngStream g(1, 0, TapSet::default_for(16));
  const std::uint64_t period = (1ull << 16) - 1;
  std::uint64_t sum = 0, sq = 0;
  for (std::uint64_t i = 0; i < period; ++i) {
    const auto c = static_cast<std::uint64_t>(g.generate_forward().count);
    sum += c;
    sq += c * c;
  }
  CHECK(sum == 16ull * (1ull << 15));
  CHECK(sq == 16ull * 17ull * (1ull << 14));
}

TEST_CASE("epsilon log round trip") {
  const auto path = std::filesystem::temp_directory_path() / "shiftbnn_epsl_test.bin";
  EpsLog log;
  log.width = 256;
  log.counts = {0, 1, 128, 256, 77};
  log.write(path);
  const EpsLog back = EpsLog::read(path);
  CHECK(back.width == 256);
  CHECK(back.counts == log.counts);

  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  try {
    EpsLog::read(path);
    FAIL("expected bad magic");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadMagic);
  }
  std::filesystem::remove(path);
}
