#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "osdsr/core.hpp"
#include "osdsr/error.hpp"

using namespace osdsr;

namespace {

std::uint64_t splitmix_oracle(std::uint64_t g, std::uint64_t i) {
  std::uint64_t z = g ^ (i * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an osdsr::Error");
  return ErrorKind::Config;
}

}  // namespace

TEST_CASE("schedule: first alpha bar is 1 - beta_start") {
  const auto s = make_schedule(1000, 1e-4, 0.02);
  CHECK(s.alpha_bars.size() == 1000);
  CHECK(s.alpha_bars[0] == doctest::Approx(0.9999).epsilon(1e-15));
  CHECK(alpha_bar_at(s, 0) == s.alpha_bars[0]);
  CHECK(s.betas.back() == doctest::Approx(0.02).epsilon(1e-15));
}

TEST_CASE("schedule: single step") {
  const auto s = make_schedule(1, 0.5, 0.5);
  REQUIRE(s.alpha_bars.size() == 1);
  CHECK(s.alpha_bars[0] == 0.5);
  CHECK(alpha_bar_at(s, 0) == 0.5);
}

TEST_CASE("schedule: cumulative product matches a direct loop") {
  const auto s = make_schedule(50, 1e-3, 0.2);
  double prod = 1.0;
  for (int t = 0; t < 50; ++t) {
    const double beta = 1e-3 + (0.2 - 1e-3) * t / 49.0;
    prod *= 1.0 - beta;
    CHECK(s.alpha_bars[t] == doctest::Approx(prod).epsilon(1e-12));
  }
}

TEST_CASE("schedule: alpha bars strictly decrease for random valid schedules") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int T = 1 + static_cast<int>(rng.below(2000));
    const double b0 = rng.uniform(1e-6, 0.5);
    const double b1 = rng.uniform(b0, 0.999);
    const auto s = make_schedule(T, b0, b1);
    // Long, steep schedules underflow to 0; strictness is only checked while
    // the previous value is a normal double.
    for (int t = 1; t < T; ++t) {
      REQUIRE(s.alpha_bars[t] <= s.alpha_bars[t - 1]);
      if (s.alpha_bars[t - 1] > 1e-300) REQUIRE(s.alpha_bars[t] < s.alpha_bars[t - 1]);
    }
    CHECK(s.alpha_bars[0] <= 1.0);
    CHECK(s.alpha_bars.back() >= 0.0);
  }
}

TEST_CASE("schedule: invalid parameters") {
  CHECK(kind_of([] { make_schedule(0, 1e-4, 0.02); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([] { make_schedule(10, 0.0, 0.02); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([] { make_schedule(10, 0.03, 0.02); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([] { make_schedule(10, 1e-4, 1.0); }) == ErrorKind::InvalidRange);
  const auto s = default_schedule();
  CHECK(kind_of([&] { alpha_bar_at(s, 1000); }) == ErrorKind::OutOfRange);
  CHECK(kind_of([&] { alpha_bar_at(s, -1); }) == ErrorKind::OutOfRange);
}

TEST_CASE("derive_sample_seed: golden values") {
  CHECK(derive_sample_seed(0, 0) == 0x8209b480faed1b10ULL);
  CHECK(derive_sample_seed(0, 1) == 0x2d0f28c7e7e786b2ULL);
  CHECK(derive_sample_seed(42, 0) == 0x6bb150a2df30d29bULL);
  CHECK(derive_sample_seed(42, 7) == 0x67d6aad286339380ULL);
  CHECK(derive_sample_seed(123456789, 1000) == 0x4e4891c73cb0d71cULL);
  CHECK(derive_sample_seed(0, 0) != derive_sample_seed(0, 1));
}

TEST_CASE("derive_sample_seed: matches an independent mixer and is pure") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t g = rng.next_u64(), k = rng.below(1u << 20);
    CHECK(derive_sample_seed(g, k) == splitmix_oracle(g, k));
  }
  const std::uint64_t first = derive_sample_seed(99, 5);
  for (int i = 0; i < 10000; ++i) REQUIRE(derive_sample_seed(99, 5) == first);
}

TEST_CASE("image batch: range and shape validation") {
  CHECK_NOTHROW(ImageBatch(Tensor({1, 3, 2, 2}, 0.5)));
  CHECK(kind_of([] { ImageBatch(Tensor({1, 3, 2, 2}, 1.5)); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([] { ImageBatch(Tensor({1, 3, 2, 2}, std::nan(""))); }) == ErrorKind::InvalidRange);
  CHECK(kind_of([] { ImageBatch(Tensor({1, 1, 2, 2}, 0.5)); }) == ErrorKind::ShapeMismatch);
  CHECK(kind_of([] { ImageBatch(Tensor({3, 2, 2}, 0.5)); }) == ErrorKind::ShapeMismatch);
  Tensor t({1, 3, 1, 2}, 0.0);
  t[0] = -0.25;
  t[1] = 1.25;
  const auto c = ImageBatch::clamped(t);
  CHECK(c.tensor()[0] == 0.0);
  CHECK(c.tensor()[1] == 1.0);
}

TEST_CASE("image batch: stack and item") {
  const auto a = testing::random_image(1, 4, 5, 1), b = testing::random_image(1, 4, 5, 2);
  const auto s = ImageBatch::stack({a, b});
  CHECK(s.batch() == 2);
  CHECK(s.item(1).tensor().vec() == b.tensor().vec());
  CHECK_THROWS_AS(ImageBatch::stack({a, testing::random_image(1, 4, 4, 3)}), Error);
}

TEST_CASE("latent batch requires rank 4") {
  CHECK_NOTHROW(LatentBatch(Tensor({1, 4, 2, 2})));
  CHECK(kind_of([] { LatentBatch(Tensor({4, 2, 2})); }) == ErrorKind::ShapeMismatch);
}

TEST_CASE("rng: serialize round trip continues the stream") {
  Rng a(5);
  a.normal();
  a.uniform();
  Rng b(0);
  b.deserialize(a.serialize());
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}
