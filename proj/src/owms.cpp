#include "osdsr/owms.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "osdsr/error.hpp"
#include "osdsr/random.hpp"

namespace osdsr {

AttributeRegistry::AttributeRegistry(std::vector<PerceptualAttribute> attributes) : attributes_(std::move(attributes)) {
  if (attributes_.empty()) throw Error(ErrorKind::Config, "attribute registry is empty");
  std::set<std::string> names;
  for (const auto& a : attributes_) {
    if (a.name.empty()) throw Error(ErrorKind::Config, "attribute with empty name");
    if (!names.insert(a.name).second) throw Error(ErrorKind::Config, "duplicate attribute '" + a.name + "'");
    if (a.positive_prompt.empty() || a.negative_prompt.empty()) {
      throw Error(ErrorKind::Config, "attribute '" + a.name + "' has an empty prompt");
    }
    if (a.positive_prompt == a.negative_prompt) {
      throw Error(ErrorKind::Config, "attribute '" + a.name + "' has identical prompts");
    }
  }
}

AttributeRegistry AttributeRegistry::defaults() {
  return AttributeRegistry({
      {"Quality", "Good image", "Bad image"},
      {"Sharpness", "Sharp image", "Blurry image"},
      {"Edge Clarity", "Sharp edges", "Blurry edges"},
      {"Resolution", "High resolution image", "Low resolution image"},
      {"Noise", "Noise-free image", "Noisy image"},
      {"Clarity", "Distinct image", "Vague image"},
  });
}

bool AttributeRegistry::contains(const std::string& name) const {
  for (const auto& a : attributes_) {
    if (a.name == name) return true;
  }
  return false;
}

AttributeRegistry AttributeRegistry::without(const std::vector<std::string>& names) const {
  for (const auto& n : names) {
    if (!contains(n)) throw Error(ErrorKind::Config, "unknown attribute '" + n + "'");
  }
  std::vector<PerceptualAttribute> kept;
  for (const auto& a : attributes_) {
    if (std::find(names.begin(), names.end(), a.name) == names.end()) kept.push_back(a);
  }
  return AttributeRegistry(std::move(kept));
}

// ---------------------------------------------------------------- toy provider

ToyEmbeddingProvider::ToyEmbeddingProvider(std::uint64_t seed, int dim, int input_resolution, int width)
    : seed_(seed), dim_(dim), resolution_(input_resolution) {
  if (dim < 1 || input_resolution < 2 || input_resolution % 2) {
    throw Error(ErrorKind::InvalidRange, "toy provider needs dim >= 1 and an even resolution");
  }
  Rng rng(seed);
  conv1_ = nn::Conv2d(3, width, 3, 1, 1, rng);
  conv2_ = nn::Conv2d(width, 2 * width, 3, 1, 1, rng);
  proj_ = nn::Linear(2 * width, dim, rng);
  for (auto p : parameters()) p.var.set_requires_grad(false);
}

ag::Var ToyEmbeddingProvider::normalize(const ag::Var& image) const { return ag::affine(image, 2.0, -1.0); }

ag::Var ToyEmbeddingProvider::embed_image(const ag::Var& x) const {
  ag::Var h = ag::silu(conv1_(x));
  h = ag::silu(conv2_(ag::avg_pool2(h)));
  return proj_(ag::global_avg_pool(h));
}

std::vector<double> ToyEmbeddingProvider::embed_text(const std::string& prompt) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : prompt) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  Rng rng(h ^ seed_);
  std::vector<double> e(static_cast<std::size_t>(dim_));
  for (double& v : e) v = rng.normal();
  return e;
}

nn::ParameterList ToyEmbeddingProvider::parameters() const {
  nn::ParameterList out;
  conv1_.collect("provider.conv1", out);
  conv2_.collect("provider.conv2", out);
  proj_.collect("provider.proj", out);
  return out;
}

const std::vector<double>& TextEmbeddingCache::get(const EmbeddingProvider& provider, const std::string& prompt) {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(prompt);
  if (it == entries_.end()) it = entries_.emplace(prompt, provider.embed_text(prompt)).first;
  return it->second;
}

std::size_t TextEmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

// ----------------------------------------------------------------------- math

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "cosine similarity of unequal lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw Error(ErrorKind::Numeric, "non-finite vector entry");
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw Error(ErrorKind::ZeroNorm, "cosine similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double pair_normalize(double s_pos, double s_neg) { return 1.0 / (1.0 + std::exp(-(s_pos - s_neg))); }

ag::Var preprocess_for_provider(const ag::Var& image, const EmbeddingProvider& provider) {
  const int r = provider.input_resolution();
  ag::Var x = image;
  if (image.value().dim(2) != r || image.value().dim(3) != r) x = ag::bilinear_resize(image, r, r);
  return provider.normalize(x);
}

ImageBatch resize_for_provider(const ImageBatch& image, const EmbeddingProvider& provider) {
  const int r = provider.input_resolution();
  return ImageBatch::clamped(ag::bilinear_resize(ag::constant(image.tensor()), r, r).value());
}

ag::Var embed_images(const ag::Var& image, const EmbeddingProvider& provider) {
  ag::Var e = provider.embed_image(preprocess_for_provider(image, provider));
  if (e.value().rank() != 2 || e.value().dim(1) != provider.dim()) {
    throw Error(ErrorKind::ShapeMismatch, "provider returned " + shape_str(e.shape()));
  }
  return e;
}

ag::Var td_pal_from_embedding(const ag::Var& image_embedding, const AttributeRegistry& registry,
                              const EmbeddingProvider& provider, TextEmbeddingCache* cache) {
  const int B = image_embedding.value().dim(0);
  const int d = image_embedding.value().dim(1);
  auto text = [&](const std::string& prompt) {
    std::vector<double> e = cache ? cache->get(provider, prompt) : provider.embed_text(prompt);
    if (static_cast<int>(e.size()) != d) throw Error(ErrorKind::ShapeMismatch, "text/image embedding dims differ");
    Tensor rows({B, d});
    for (int b = 0; b < B; ++b) std::copy(e.begin(), e.end(), rows.ptr() + static_cast<std::size_t>(b) * d);
    return ag::constant(std::move(rows));
  };
  ag::Var total;
  for (const auto& attr : registry.attributes()) {
    ag::Var s_pos = ag::cosine_rows(image_embedding, text(attr.positive_prompt));
    ag::Var s_neg = ag::cosine_rows(image_embedding, text(attr.negative_prompt));
    ag::Var s_hat = ag::sigmoid(ag::sub(s_pos, s_neg));
    total = total.defined() ? ag::add(total, s_hat) : s_hat;
  }
  // 1 - (1/n) sum_i s_hat_i, then mean over the batch.
  return ag::affine(ag::mean(total), -1.0 / registry.size(), 1.0);
}

ag::Var id_sal_from_embeddings(const ag::Var& sr_embedding, const ag::Var& gt_embedding) {
  return ag::affine(ag::mean(ag::cosine_rows(sr_embedding, gt_embedding)), -1.0, 1.0);
}

ag::Var td_pal_loss(const ag::Var& image, const AttributeRegistry& registry, const EmbeddingProvider& provider,
                    TextEmbeddingCache* cache) {
  return td_pal_from_embedding(embed_images(image, provider), registry, provider, cache);
}

ag::Var id_sal_loss(const ag::Var& sr, const ag::Var& gt, const EmbeddingProvider& provider) {
  require_same_shape(sr.value(), gt.value(), "id_sal_loss");
  return id_sal_from_embeddings(embed_images(sr, provider), embed_images(gt, provider));
}

double td_pal_loss(const ImageBatch& image, const AttributeRegistry& registry, const EmbeddingProvider& provider,
                   TextEmbeddingCache* cache) {
  return td_pal_loss(ag::constant(image.tensor()), registry, provider, cache).item();
}

double id_sal_loss(const ImageBatch& sr, const ImageBatch& gt, const EmbeddingProvider& provider) {
  return id_sal_loss(ag::constant(sr.tensor()), ag::constant(gt.tensor()), provider).item();
}

}  // namespace osdsr
