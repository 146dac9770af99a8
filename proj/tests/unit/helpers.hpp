#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "osdsr/autograd.hpp"
#include "osdsr/core.hpp"
#include "osdsr/random.hpp"

namespace testing {

inline osdsr::Tensor random_tensor(osdsr::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  osdsr::Rng rng(seed);
  osdsr::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline osdsr::ImageBatch random_image(int b, int h, int w, std::uint64_t seed) {
  return osdsr::ImageBatch(random_tensor({b, 3, h, w}, seed, 0.05, 0.95));
}

// ||analytic - numeric|| / max(||analytic||, ||numeric||, tiny) over every
// element of every leaf. `f` must rebuild the graph on each call.
inline double gradcheck(const std::function<osdsr::ag::Var()>& f, std::vector<osdsr::ag::Var> leaves,
                        double h = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  osdsr::ag::backward(f());
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (auto& l : leaves) {
    const osdsr::Tensor analytic = l.has_grad() ? l.grad() : osdsr::Tensor::zeros_like(l.value());
    for (std::size_t i = 0; i < l.value().numel(); ++i) {
      const double x0 = l.value()[i];
      l.mutable_value()[i] = x0 + h;
      const double fp = f().item();
      l.mutable_value()[i] = x0 - h;
      const double fm = f().item();
      l.mutable_value()[i] = x0;
      const double num = (fp - fm) / (2 * h);
      diff2 += (analytic[i] - num) * (analytic[i] - num);
      a2 += analytic[i] * analytic[i];
      n2 += num * num;
    }
    l.zero_grad();
  }
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-300});
}

}  // namespace testing
