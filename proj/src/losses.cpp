#include "osdsr/losses.hpp"

#include <cmath>
#include <cstdio>

#include "osdsr/error.hpp"
#include "osdsr/random.hpp"

namespace osdsr {

void LossWeights::validate() const {
  for (double w : {lambda1, lambda2, lambda3, lambda4}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::InvalidRange, "loss weights must be finite and >= 0");
  }
}

ToyFeatureExtractor::ToyFeatureExtractor(std::uint64_t seed, int width) {
  Rng rng(seed);
  conv1_ = nn::Conv2d(3, width, 3, 1, 1, rng);
  conv2_ = nn::Conv2d(width, 2 * width, 3, 1, 1, rng);
  for (auto p : parameters()) p.var.set_requires_grad(false);
}

std::vector<ag::Var> ToyFeatureExtractor::features(const ag::Var& image) const {
  ag::Var f1 = ag::silu(conv1_(ag::affine(image, 2.0, -1.0)));
  const Tensor& v = f1.value();
  if (v.dim(2) % 2 || v.dim(3) % 2) return {f1};
  ag::Var f2 = ag::silu(conv2_(ag::avg_pool2(f1)));
  return {f1, f2};
}

nn::ParameterList ToyFeatureExtractor::parameters() const {
  nn::ParameterList out;
  conv1_.collect("perceptual.conv1", out);
  conv2_.collect("perceptual.conv2", out);
  return out;
}

ag::Var mse_loss(const ag::Var& sr, const ag::Var& gt) {
  require_same_shape(sr.value(), gt.value(), "mse_loss");
  return ag::mean(ag::square(ag::sub(sr, gt)));
}

double mse_loss(const ImageBatch& sr, const ImageBatch& gt) {
  return mse_loss(ag::constant(sr.tensor()), ag::constant(gt.tensor())).item();
}

ag::Var perceptual_distance(const ag::Var& sr, const ag::Var& gt, const FeatureExtractor& extractor) {
  require_same_shape(sr.value(), gt.value(), "perceptual_distance");
  const auto fa = extractor.features(sr);
  const auto fb = extractor.features(gt);
  const auto w = extractor.layer_weights();
  ag::Var total;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const double weight = l < w.size() ? w[l] : 1.0;
    ag::Var d = ag::mean(ag::square(ag::sub(ag::normalize_channels(fa[l], kPerceptualEps),
                                            ag::normalize_channels(fb[l], kPerceptualEps))));
    d = ag::scale(d, weight);
    total = total.defined() ? ag::add(total, d) : d;
  }
  return total;
}

double perceptual_distance(const ImageBatch& sr, const ImageBatch& gt, const FeatureExtractor& extractor) {
  return perceptual_distance(ag::constant(sr.tensor()), ag::constant(gt.tensor()), extractor).item();
}

LossReport total_loss(const LossTerms& t, const LossWeights& w) {
  for (double v : {t.mse, t.perceptual, t.td_pal, t.id_sal}) {
    if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, "non-finite loss term");
  }
  w.validate();
  LossReport r{t.mse, t.perceptual, t.td_pal, t.id_sal, 0.0};
  r.total = w.lambda1 * t.mse + w.lambda2 * t.perceptual + w.lambda3 * t.td_pal + w.lambda4 * t.id_sal;
  return r;
}

std::string loss_csv_header() { return "step,mse,perceptual,td_pal,id_sal,total"; }

std::string format_loss_row(long step, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%ld,%.12g,%.12g,%.12g,%.12g,%.12g", step, r.mse, r.perceptual, r.td_pal, r.id_sal,
                r.total);
  return buf;
}

}  // namespace osdsr
