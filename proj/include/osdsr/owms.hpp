#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "osdsr/autograd.hpp"
#include "osdsr/core.hpp"
#include "osdsr/nn.hpp"

namespace osdsr {

struct PerceptualAttribute {
  std::string name;
  std::string positive_prompt;
  std::string negative_prompt;
};

// Ordered, name-unique list of attribute prompt pairs.
class AttributeRegistry {
 public:
  // Throws Config on an empty list, duplicate names, or empty/identical prompts.
  explicit AttributeRegistry(std::vector<PerceptualAttribute> attributes);
  // Quality, Sharpness, Edge Clarity, Resolution, Noise, Clarity.
  static AttributeRegistry defaults();

  const std::vector<PerceptualAttribute>& attributes() const noexcept { return attributes_; }
  int size() const noexcept { return static_cast<int>(attributes_.size()); }
  bool contains(const std::string& name) const;
  // Copy without the named attributes; unknown names are an error.
  AttributeRegistry without(const std::vector<std::string>& names) const;

 private:
  std::vector<PerceptualAttribute> attributes_;
};

// Joint image/text embedding space. Parameters are frozen; implementations must
// be safe to call concurrently.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dim() const = 0;
  virtual int input_resolution() const = 0;
  // Channel normalisation applied after resizing; must be differentiable.
  virtual ag::Var normalize(const ag::Var& image) const = 0;
  // (B, 3, R, R) normalised input -> (B, d).
  virtual ag::Var embed_image(const ag::Var& preprocessed) const = 0;
  virtual std::vector<double> embed_text(const std::string& prompt) const = 0;
  virtual nn::ParameterList parameters() const = 0;
};

// Seeded conv image tower and hash-seeded Gaussian text vectors.
// Normalisation maps [0,1] to [-1,1].
class ToyEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit ToyEmbeddingProvider(std::uint64_t seed, int dim = 32, int input_resolution = 32, int width = 16);

  int dim() const override { return dim_; }
  int input_resolution() const override { return resolution_; }
  ag::Var normalize(const ag::Var& image) const override;
  ag::Var embed_image(const ag::Var& preprocessed) const override;
  std::vector<double> embed_text(const std::string& prompt) const override;
  nn::ParameterList parameters() const override;

 private:
  std::uint64_t seed_;
  int dim_, resolution_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear proj_;
};

// Write-once cache of prompt embeddings.
class TextEmbeddingCache {
 public:
  const std::vector<double>& get(const EmbeddingProvider& provider, const std::string& prompt);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::vector<double>> entries_;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);
// e^p / (e^p + e^n), evaluated as the logistic of (p - n).
double pair_normalize(double s_pos, double s_neg);

// Bilinear resize to the provider resolution, then provider normalisation.
ag::Var preprocess_for_provider(const ag::Var& image, const EmbeddingProvider& provider);
ImageBatch resize_for_provider(const ImageBatch& image, const EmbeddingProvider& provider);

ag::Var embed_images(const ag::Var& image, const EmbeddingProvider& provider);

// 1 - mean_i sigmoid(cos(e, t_i^p) - cos(e, t_i^n)), averaged over the batch.
// `image_embedding` is (B, d). A null cache embeds prompts on every call.
ag::Var td_pal_from_embedding(const ag::Var& image_embedding, const AttributeRegistry& registry,
                              const EmbeddingProvider& provider, TextEmbeddingCache* cache = nullptr);
// 1 - cos(e_SR, e_GT), averaged over the batch.
ag::Var id_sal_from_embeddings(const ag::Var& sr_embedding, const ag::Var& gt_embedding);

ag::Var td_pal_loss(const ag::Var& image, const AttributeRegistry& registry, const EmbeddingProvider& provider,
                    TextEmbeddingCache* cache = nullptr);
ag::Var id_sal_loss(const ag::Var& sr, const ag::Var& gt, const EmbeddingProvider& provider);

double td_pal_loss(const ImageBatch& image, const AttributeRegistry& registry, const EmbeddingProvider& provider,
                   TextEmbeddingCache* cache = nullptr);
double id_sal_loss(const ImageBatch& sr, const ImageBatch& gt, const EmbeddingProvider& provider);

}  // namespace osdsr
