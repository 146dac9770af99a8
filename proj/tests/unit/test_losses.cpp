#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "osdsr/error.hpp"
#include "osdsr/losses.hpp"

using namespace osdsr;

TEST_CASE("mse examples") {
  const auto a = testing::random_image(2, 4, 4, 1), b = testing::random_image(2, 4, 4, 2);
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(ImageBatch::filled(1, 3, 3, 0.75), ImageBatch::filled(1, 3, 3, 0.25)) == 0.25);
  CHECK(mse_loss(a, b) == mse_loss(b, a));
  CHECK_THROWS_AS(mse_loss(a, testing::random_image(1, 4, 4, 3)), Error);
}

TEST_CASE("perceptual distance with the identity extractor on a 2x2 image") {
  // Hand oracle: unit-normalise each pixel's RGB vector, then average the
  // squared differences over the 12 elements.
  Tensor ta({1, 3, 2, 2}), tb({1, 3, 2, 2});
  const double av[12] = {0.1, 0.9, 0.3, 0.5, 0.2, 0.2, 0.7, 0.5, 0.6, 0.0, 0.1, 0.5};
  const double bv[12] = {0.4, 0.8, 0.3, 0.1, 0.9, 0.2, 0.1, 0.5, 0.2, 0.7, 0.4, 0.5};
  std::copy(av, av + 12, ta.ptr());
  std::copy(bv, bv + 12, tb.ptr());
  double expected = 0.0;
  for (int px = 0; px < 4; ++px) {
    double na = 0, nb = 0;
    for (int c = 0; c < 3; ++c) {
      na += av[c * 4 + px] * av[c * 4 + px];
      nb += bv[c * 4 + px] * bv[c * 4 + px];
    }
    na = std::sqrt(na + 1e-10);
    nb = std::sqrt(nb + 1e-10);
    for (int c = 0; c < 3; ++c) {
      const double d = av[c * 4 + px] / na - bv[c * 4 + px] / nb;
      expected += d * d / 12.0;
    }
  }
  const IdentityFeatureExtractor id;
  CHECK(perceptual_distance(ImageBatch(ta), ImageBatch(tb), id) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("perceptual distance: zero on identical inputs, non-negative, differentiable") {
  const ToyFeatureExtractor fx(3);
  for (const auto& p : fx.parameters()) CHECK_FALSE(p.var.requires_grad());
  CHECK(fx.features(ag::constant(testing::random_image(1, 8, 8, 1).tensor())).size() == 2);
  for (int i = 0; i < 10; ++i) {
    const auto a = testing::random_image(1, 8, 8, 10 + i), b = testing::random_image(1, 8, 8, 30 + i);
    CHECK(perceptual_distance(a, a, fx) == 0.0);
    CHECK(perceptual_distance(a, b, fx) > 0.0);
  }
  ag::Var x(testing::random_image(1, 8, 8, 4).tensor(), true);
  const auto gt = ag::constant(testing::random_image(1, 8, 8, 5).tensor());
  CHECK(testing::gradcheck([&] { return perceptual_distance(x, gt, fx); }, {x}) < 1e-6);
}

TEST_CASE("total loss") {
  const LossWeights w;
  CHECK(w.lambda1 == 2.0);
  CHECK(w.lambda2 == 5.0);
  CHECK(w.lambda3 == 1.0);
  CHECK(w.lambda4 == 0.5);
  const auto r = total_loss({0.1, 0.2, 0.3, 0.4}, w);
  CHECK(std::abs(r.total - 1.7) <= 1e-9);
  CHECK(r.mse == 0.1);
  CHECK(r.id_sal == 0.4);
  CHECK(total_loss({0, 0, 0, 0}, w).total == 0.0);
  CHECK_THROWS_AS(total_loss({std::numeric_limits<double>::quiet_NaN(), 0, 0, 0}, w), Error);
  CHECK_THROWS_AS(total_loss({0, std::numeric_limits<double>::infinity(), 0, 0}, w), Error);
  CHECK_THROWS_AS(total_loss({0, 0, 0, 0}, LossWeights{-1, 0, 0, 0}), Error);
}

TEST_CASE("total loss is linear in terms and weights") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    LossTerms t{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    LossWeights w{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5)};
    const double base = total_loss(t, w).total;
    LossTerms t2 = t;
    t2.perceptual *= 2;
    CHECK(total_loss(t2, w).total - base == doctest::Approx(w.lambda2 * t.perceptual).epsilon(1e-9));
    LossWeights w2 = w;
    w2.lambda4 *= 3;
    CHECK(total_loss(t, w2).total - base == doctest::Approx(2 * w.lambda4 * t.id_sal).epsilon(1e-9));
    LossWeights w0 = w;
    w0.lambda3 = 0;
    LossTerms t3 = t;
    t3.td_pal = rng.uniform(0, 100);
    CHECK(total_loss(t, w0).total == total_loss(t3, w0).total);
  }
}

TEST_CASE("loss CSV row") {
  CHECK(loss_csv_header() == "step,mse,perceptual,td_pal,id_sal,total");
  CHECK(format_loss_row(3, {0.1, 0.2, 0.3, 0.4, 1.7}) == "3,0.1,0.2,0.3,0.4,1.7");
}
