#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "osdsr/autograd.hpp"
#include "osdsr/core.hpp"
#include "osdsr/nn.hpp"

namespace osdsr {

struct LossWeights {
  double lambda1 = 2.0;  // MSE
  double lambda2 = 5.0;  // perceptual distance
  double lambda3 = 1.0;  // TD-PAL
  double lambda4 = 0.5;  // ID-SAL
  void validate() const;
};

struct LossTerms {
  double mse = 0.0;
  double perceptual = 0.0;
  double td_pal = 0.0;
  double id_sal = 0.0;
};

struct LossReport {
  double mse = 0.0;
  double perceptual = 0.0;
  double td_pal = 0.0;
  double id_sal = 0.0;
  double total = 0.0;
};

// Fixed multi-layer feature map used by the perceptual distance. Parameters
// are never trained.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  // Takes images in [0,1].
  virtual std::vector<ag::Var> features(const ag::Var& image) const = 0;
  virtual std::vector<double> layer_weights() const = 0;
  virtual nn::ParameterList parameters() const { return {}; }
};

// Two seeded conv stages (full and half resolution), equal layer weights.
class ToyFeatureExtractor final : public FeatureExtractor {
 public:
  explicit ToyFeatureExtractor(std::uint64_t seed, int width = 8);
  std::vector<ag::Var> features(const ag::Var& image) const override;
  std::vector<double> layer_weights() const override { return {1.0, 1.0}; }
  nn::ParameterList parameters() const override;

 private:
  nn::Conv2d conv1_, conv2_;
};

// Single layer returning the pixels themselves.
class IdentityFeatureExtractor final : public FeatureExtractor {
 public:
  std::vector<ag::Var> features(const ag::Var& image) const override { return {image}; }
  std::vector<double> layer_weights() const override { return {1.0}; }
};

constexpr double kPerceptualEps = 1e-10;

ag::Var mse_loss(const ag::Var& sr, const ag::Var& gt);
double mse_loss(const ImageBatch& sr, const ImageBatch& gt);

// sum_l w_l * mean((n(f_l(sr)) - n(f_l(gt)))^2), n = unit norm across channels.
ag::Var perceptual_distance(const ag::Var& sr, const ag::Var& gt, const FeatureExtractor& extractor);
double perceptual_distance(const ImageBatch& sr, const ImageBatch& gt, const FeatureExtractor& extractor);

// Throws Numeric for a non-finite term.
LossReport total_loss(const LossTerms& terms, const LossWeights& weights);

std::string loss_csv_header();
std::string format_loss_row(long step, const LossReport& report);

}  // namespace osdsr
