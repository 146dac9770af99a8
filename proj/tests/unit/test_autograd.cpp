#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "osdsr/autograd.hpp"
#include "osdsr/error.hpp"

using namespace osdsr;
using testing::gradcheck;
using testing::random_tensor;

namespace {

ag::Var leaf(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return ag::Var(random_tensor(std::move(s), seed, lo, hi), true);
}

// Weighted sum with fixed random weights so every output element matters.
ag::Var probe(const ag::Var& y, std::uint64_t seed = 99) {
  return ag::sum(ag::mul(y, ag::constant(random_tensor(y.shape(), seed))));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("elementwise ops match central differences") {
  auto a = leaf({2, 3}, 1), b = leaf({2, 3}, 2);
  auto pos = leaf({2, 3}, 3, 0.2, 2.0);
  CHECK(gradcheck([&] { return probe(ag::add(a, b)); }, {a, b}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::sub(a, b)); }, {a, b}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::mul(a, b)); }, {a, b}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::affine(a, 2.5, -0.3)); }, {a}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::square(a)); }, {a}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::sqrt(pos)); }, {pos}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::reciprocal(pos)); }, {pos}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::sigmoid(a)); }, {a}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::silu(a)); }, {a}) < kTol);
  CHECK(gradcheck([&] { return ag::mean(ag::square(a)); }, {a}) < kTol);
}

TEST_CASE("sqrt and reciprocal domains") {
  CHECK(ag::sqrt(ag::constant(Tensor({1}, 0.0))).item() == 0.0);
  CHECK_THROWS_AS(ag::sqrt(ag::constant(Tensor({1}, -1.0))), Error);
  CHECK_THROWS_AS(ag::reciprocal(ag::constant(Tensor({1}, 0.0))), Error);
}

TEST_CASE("clamp01 passes gradient only inside the interval") {
  Tensor t({3});
  t[0] = -0.5;
  t[1] = 0.5;
  t[2] = 1.5;
  ag::Var x(t, true);
  ag::backward(ag::sum(ag::clamp01(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("linear algebra ops") {
  auto a = leaf({3, 4}, 4), b = leaf({4, 2}, 5);
  CHECK(gradcheck([&] { return probe(ag::matmul(a, b)); }, {a, b}) < kTol);
  auto x = leaf({2, 4}, 6), w = leaf({3, 4}, 7), bias = leaf({3}, 8);
  CHECK(gradcheck([&] { return probe(ag::linear(x, w, bias)); }, {x, w, bias}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::linear(x, w, ag::Var())); }, {x, w}) < kTol);
}

TEST_CASE("matmul matches a hand product") {
  const auto a = ag::constant(Tensor({2, 2}, {1, 2, 3, 4}));
  const auto b = ag::constant(Tensor({2, 2}, {5, 6, 7, 8}));
  CHECK(ag::matmul(a, b).value().vec() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("conv2d gradient and a direct-loop oracle") {
  auto x = leaf({2, 3, 5, 4}, 9), w = leaf({4, 3 * 9}, 10), b = leaf({4}, 11);
  CHECK(gradcheck([&] { return probe(ag::conv2d(x, w, b, 3, 1, 1)); }, {x, w, b}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::conv2d(x, w, b, 3, 2, 1)); }, {x, w, b}) < kTol);

  const Tensor y = ag::conv2d(x, w, b, 3, 1, 1).value();
  double max_err = 0.0;
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) {
          double acc = b.value()[o];
          for (int c = 0; c < 3; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int yy = i + ky - 1, xx = j + kx - 1;
                if (yy < 0 || yy >= 5 || xx < 0 || xx >= 4) continue;
                acc += w.value()[static_cast<std::size_t>(o) * 27 + c * 9 + ky * 3 + kx] * x.value().at(n, c, yy, xx);
              }
          max_err = std::max(max_err, std::abs(acc - y.at(n, o, i, j)));
        }
  CHECK(max_err < 1e-12);
}

TEST_CASE("spatial ops") {
  auto x = leaf({2, 3, 4, 6}, 12);
  CHECK(gradcheck([&] { return probe(ag::avg_pool2(x)); }, {x}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::upsample_nearest2(x)); }, {x}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::global_avg_pool(x)); }, {x}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::bilinear_resize(x, 7, 3)); }, {x}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::normalize_channels(x, 1e-10)); }, {x}) < kTol);
  auto v = leaf({2, 3}, 13);
  CHECK(gradcheck([&] { return probe(ag::add_channel_bias(x, v)); }, {x, v}) < kTol);
  auto y = leaf({2, 2, 4, 6}, 14);
  CHECK(gradcheck([&] { return probe(ag::concat_channels(x, y)); }, {x, y}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::reshape(x, {6, 24})); }, {x}) < kTol);
  CHECK_THROWS_AS(ag::avg_pool2(ag::constant(Tensor({1, 1, 3, 4}))), Error);
}

TEST_CASE("bilinear resize to the same size is the identity") {
  const auto x = ag::constant(random_tensor({1, 3, 5, 7}, 15));
  CHECK(ag::bilinear_resize(x, 5, 7).value().vec() == x.value().vec());
}

TEST_CASE("normalize_channels gives unit norm across channels") {
  const auto x = ag::constant(random_tensor({1, 4, 3, 3}, 16));
  const Tensor y = ag::normalize_channels(x, 0.0).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double n = 0.0;
      for (int c = 0; c < 4; ++c) n += y.at(0, c, i, j) * y.at(0, c, i, j);
      CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("row ops") {
  auto x = leaf({3, 5}, 17), y = leaf({3, 5}, 18), s = leaf({3}, 19);
  CHECK(gradcheck([&] { return probe(ag::softmax_rows(x)); }, {x}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::cosine_rows(x, y)); }, {x, y}) < kTol);
  CHECK(gradcheck([&] { return probe(ag::scale_rows(x, s)); }, {x, s}) < kTol);
  const Tensor p = ag::softmax_rows(x).value();
  for (int r = 0; r < 3; ++r) {
    double total = 0.0;
    for (int c = 0; c < 5; ++c) total += p[static_cast<std::size_t>(r) * 5 + c];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
  CHECK_THROWS_AS(ag::cosine_rows(ag::constant(Tensor({1, 3}, 0.0)), ag::constant(Tensor({1, 3}, 1.0))), Error);
}

TEST_CASE("straight-through: hard forward, gradient to soft") {
  auto soft = leaf({1, 3}, 20);
  Tensor hard({1, 3}, {0.0, 1.0, 0.0});
  const ag::Var st = ag::straight_through(hard, soft);
  CHECK(st.value().vec() == hard.vec());
  const Tensor w = random_tensor({1, 3}, 21);
  ag::backward(ag::sum(ag::mul(st, ag::constant(w))));
  CHECK(soft.grad().vec() == w.vec());
}

TEST_CASE("constants never receive gradients and shared subgraphs accumulate") {
  auto a = leaf({2}, 22);
  const auto c = ag::constant(random_tensor({2}, 23));
  const auto y = ag::add(ag::mul(a, c), ag::mul(a, a));
  ag::backward(ag::sum(y));
  CHECK_FALSE(c.has_grad());
  for (int i = 0; i < 2; ++i) CHECK(a.grad()[i] == doctest::Approx(c.value()[i] + 2 * a.value()[i]));
}
