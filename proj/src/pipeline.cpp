#include "osdsr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "osdsr/archive.hpp"
#include "osdsr/error.hpp"

namespace osdsr {

std::vector<double> timestep_embedding(int t, int dim) {
  if (dim < 2 || dim % 2) throw Error(ErrorKind::InvalidRange, "time embedding dim must be even and >= 2");
  const int half = dim / 2;
  std::vector<double> emb(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    emb[static_cast<std::size_t>(i)] = std::sin(t * freq);
    emb[static_cast<std::size_t>(i + half)] = std::cos(t * freq);
  }
  return emb;
}

TimeCondition make_time_condition(const DiffusionSchedule& schedule, const CandidateSet& candidates,
                                  const BatchSelection& selection, int embedding_dim) {
  const int N = candidates.size();
  const int B = static_cast<int>(selection.items.size());
  Tensor table({N, embedding_dim});
  Tensor alphas({N, 1});
  for (int i = 0; i < N; ++i) {
    const auto e = timestep_embedding(candidates[i], embedding_dim);
    std::copy(e.begin(), e.end(), table.ptr() + static_cast<std::size_t>(i) * embedding_dim);
    alphas[static_cast<std::size_t>(i)] = alpha_bar_at(schedule, candidates[i]);
  }
  // One-hot rows pick the hard candidate's values exactly; backward flows into
  // the soft probabilities as a convex combination over candidates.
  ag::Var hard = selection.hard_straight_through();
  TimeCondition cond;
  for (const auto& s : selection.items) cond.t_hard.push_back(s.t_star);
  cond.embedding = ag::matmul(hard, ag::constant(std::move(table)));
  cond.alpha_bar = ag::reshape(ag::matmul(hard, ag::constant(std::move(alphas))), {B});
  return cond;
}

// ------------------------------------------------------------------ backbones

namespace {

int pool_stages(int factor) {
  int stages = 0;
  while ((1 << stages) < factor) ++stages;
  if ((1 << stages) != factor) throw Error(ErrorKind::InvalidRange, "latent factor must be a power of two");
  return stages;
}

class ToyEncoder final : public EncoderModel {
 public:
  ToyEncoder(int factor, int latent_channels, int width, Rng& rng) {
    const int stages = pool_stages(factor);
    int ch = 3;
    for (int s = 0; s <= stages; ++s) {
      const int out = width << std::min(s, 1);
      convs_.emplace_back(ch, out, 3, 1, 1, rng);
      ch = out;
    }
    out_ = nn::Conv2d(ch, latent_channels, 3, 1, 1, rng);
  }

  ag::Var forward(const ag::Var& image) const override {
    ag::Var h = ag::affine(image, 2.0, -1.0);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      if (i > 0) h = ag::avg_pool2(h);
      h = ag::silu(convs_[i](h));
    }
    return out_(h);
  }

  std::unique_ptr<EncoderModel> clone() const override {
    auto c = std::make_unique<ToyEncoder>(*this);
    for (auto& conv : c->convs_) conv = conv.clone();
    c->out_ = out_.clone();
    return c;
  }

  void collect(const std::string& prefix, nn::ParameterList& out) const override {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
    out_.collect(prefix + ".conv_out", out);
  }

  void attach_adapters(int rank, double scaling, Rng& rng) override {
    for (auto& conv : convs_) conv.map().attach_adapter(rank, scaling, rng);
    out_.map().attach_adapter(rank, scaling, rng);
  }

 private:
  std::vector<nn::Conv2d> convs_;
  nn::Conv2d out_;
};

class ToyDecoder final : public DecoderModel {
 public:
  ToyDecoder(int factor, int latent_channels, int width, Rng& rng) {
    const int stages = pool_stages(factor);
    int ch = latent_channels;
    for (int s = stages; s >= 0; --s) {
      const int out = width << std::min(s, 1);
      convs_.emplace_back(ch, out, 3, 1, 1, rng);
      ch = out;
    }
    out_ = nn::Conv2d(ch, 3, 3, 1, 1, rng, 0.5);
  }

  ag::Var forward(const ag::Var& latent) const override {
    ag::Var h = latent;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      if (i > 0) h = ag::upsample_nearest2(h);
      h = ag::silu(convs_[i](h));
    }
    return ag::affine(out_(h), 0.5, 0.5);
  }

  std::unique_ptr<DecoderModel> clone() const override {
    auto c = std::make_unique<ToyDecoder>(*this);
    for (auto& conv : c->convs_) conv = conv.clone();
    c->out_ = out_.clone();
    return c;
  }

  void collect(const std::string& prefix, nn::ParameterList& out) const override {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
    out_.collect(prefix + ".conv_out", out);
  }

 private:
  std::vector<nn::Conv2d> convs_;
  nn::Conv2d out_;
};

class ToyUNet final : public DenoiserModel {
 public:
  ToyUNet(int latent_channels, int width, int temb_dim, bool identity_prior, Rng& rng)
      : temb_dim_(temb_dim), identity_prior_(identity_prior) {
    time1_ = nn::Linear(temb_dim, 2 * width, rng);
    time2_ = nn::Linear(2 * width, width, rng);
    conv_in_ = nn::Conv2d(latent_channels, width, 3, 1, 1, rng);
    down_ = nn::Conv2d(width, 2 * width, 3, 1, 1, rng);
    mid_ = nn::Conv2d(2 * width, 2 * width, 3, 1, 1, rng, 0.5);
    up_ = nn::Conv2d(3 * width, width, 3, 1, 1, rng);
    out_ = nn::Conv2d(width, latent_channels, 3, 1, 1, rng, 0.0);
  }
  ToyUNet(const ToyUNet& o)
      : DenoiserModel(),
        temb_dim_(o.temb_dim_),
        identity_prior_(o.identity_prior_),
        time1_(o.time1_.clone()),
        time2_(o.time2_.clone()),
        conv_in_(o.conv_in_.clone()),
        down_(o.down_.clone()),
        mid_(o.mid_.clone()),
        up_(o.up_.clone()),
        out_(o.out_.clone()) {}

  int time_embedding_dim() const override { return temb_dim_; }

  std::unique_ptr<DenoiserModel> clone() const override { return std::make_unique<ToyUNet>(*this); }

  void collect(const std::string& prefix, nn::ParameterList& out) const override {
    time1_.collect(prefix + ".time1", out);
    time2_.collect(prefix + ".time2", out);
    conv_in_.collect(prefix + ".conv_in", out);
    down_.collect(prefix + ".down", out);
    mid_.collect(prefix + ".mid", out);
    up_.collect(prefix + ".up", out);
    out_.collect(prefix + ".conv_out", out);
  }

  void attach_adapters(int rank, double scaling, Rng& rng) override {
    for (nn::DenseMap* m : {&time1_.map(), &time2_.map(), &conv_in_.map(), &down_.map(), &mid_.map(), &up_.map(),
                            &out_.map()}) {
      m->attach_adapter(rank, scaling, rng);
    }
  }

 protected:
  ag::Var forward(const ag::Var& z, const TimeCondition& cond) const override {
    const Tensor& zv = z.value();
    if (zv.dim(2) % 2 || zv.dim(3) % 2) {
      throw Error(ErrorKind::Divisibility, "toy U-Net needs even latent dims, got " + shape_str(zv.shape()));
    }
    ag::Var temb = time2_(ag::silu(time1_(cond.embedding)));
    ag::Var h = ag::silu(ag::add_channel_bias(conv_in_(z), temb));
    ag::Var d = ag::silu(down_(ag::avg_pool2(h)));
    d = ag::add(d, ag::silu(mid_(d)));
    ag::Var u = ag::silu(up_(ag::concat_channels(ag::upsample_nearest2(d), h)));
    ag::Var eps = out_(u);
    if (identity_prior_) {
      // (1 - sqrt(a)) / sqrt(1 - a)
      ag::Var c = ag::mul(ag::affine(ag::sqrt(cond.alpha_bar), -1.0, 1.0),
                          ag::reciprocal(ag::sqrt(ag::affine(cond.alpha_bar, -1.0, 1.0))));
      eps = ag::add(eps, ag::scale_rows(z, c));
    }
    return eps;
  }

 private:
  int temb_dim_;
  bool identity_prior_;
  nn::Linear time1_, time2_;
  nn::Conv2d conv_in_, down_, mid_, up_, out_;
};

class IdentityMapEncoder final : public EncoderModel {
 public:
  explicit IdentityMapEncoder(Rng& rng) : map_(3, 3, 1, 1, 0, rng, 0.0) {
    for (int i = 0; i < 3; ++i) map_.map().weight().mutable_value()[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  }
  ag::Var forward(const ag::Var& image) const override { return map_(image); }
  std::unique_ptr<EncoderModel> clone() const override {
    auto c = std::make_unique<IdentityMapEncoder>(*this);
    c->map_ = map_.clone();
    return c;
  }
  void collect(const std::string& prefix, nn::ParameterList& out) const override { map_.collect(prefix + ".map", out); }
  void attach_adapters(int rank, double scaling, Rng& rng) override { map_.map().attach_adapter(rank, scaling, rng); }

 private:
  nn::Conv2d map_;
};

class IdentityMapDecoder final : public DecoderModel {
 public:
  explicit IdentityMapDecoder(Rng& rng) : map_(3, 3, 1, 1, 0, rng, 0.0) {
    for (int i = 0; i < 3; ++i) map_.map().weight().mutable_value()[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  }
  ag::Var forward(const ag::Var& latent) const override { return map_(latent); }
  std::unique_ptr<DecoderModel> clone() const override {
    auto c = std::make_unique<IdentityMapDecoder>(*this);
    c->map_ = map_.clone();
    return c;
  }
  void collect(const std::string& prefix, nn::ParameterList& out) const override { map_.collect(prefix + ".map", out); }

 private:
  nn::Conv2d map_;
};

void freeze(const nn::ParameterList& params) {
  for (auto p : params) p.var.set_requires_grad(false);
}

}  // namespace

BackboneBundle::BackboneBundle(std::unique_ptr<EncoderModel> encoder, std::unique_ptr<DenoiserModel> unet,
                               std::unique_ptr<DecoderModel> decoder, int latent_factor, int latent_channels)
    : encoder_(std::move(encoder)),
      unet_(std::move(unet)),
      decoder_(std::move(decoder)),
      latent_factor_(latent_factor),
      latent_channels_(latent_channels) {
  if (!encoder_ || !unet_ || !decoder_) throw Error(ErrorKind::InvalidRange, "backbone components must be set");
  if (latent_factor_ < 1 || latent_channels_ < 1) throw Error(ErrorKind::InvalidRange, "bad latent geometry");
}

BackboneBundle::BackboneBundle(const BackboneBundle& o)
    : encoder_(o.encoder_->clone()),
      unet_(o.unet_->clone()),
      decoder_(o.decoder_->clone()),
      latent_factor_(o.latent_factor_),
      latent_channels_(o.latent_channels_) {}

BackboneBundle& BackboneBundle::operator=(const BackboneBundle& o) {
  if (this != &o) *this = BackboneBundle(o);
  return *this;
}

nn::ParameterList BackboneBundle::parameters() const {
  nn::ParameterList out;
  encoder_->collect("encoder", out);
  unet_->collect("unet", out);
  decoder_->collect("decoder", out);
  return out;
}

nn::ParameterList BackboneBundle::encoder_parameters() const {
  nn::ParameterList out;
  encoder_->collect("encoder", out);
  return out;
}

nn::ParameterList BackboneBundle::unet_parameters() const {
  nn::ParameterList out;
  unet_->collect("unet", out);
  return out;
}

nn::ParameterList BackboneBundle::decoder_parameters() const {
  nn::ParameterList out;
  decoder_->collect("decoder", out);
  return out;
}

BackboneBundle make_toy_backbone(std::uint64_t seed, const ToyBackboneOptions& o) {
  Rng rng(seed);
  auto enc = std::make_unique<ToyEncoder>(o.latent_factor, o.latent_channels, o.encoder_width, rng);
  auto unet = std::make_unique<ToyUNet>(o.latent_channels, o.unet_width, o.time_embedding_dim, o.identity_prior, rng);
  auto dec = std::make_unique<ToyDecoder>(o.latent_factor, o.latent_channels, o.encoder_width, rng);
  BackboneBundle b(std::move(enc), std::move(unet), std::move(dec), o.latent_factor, o.latent_channels);
  freeze(b.parameters());
  return b;
}

BackboneBundle make_identity_backbone(bool unet_identity_prior, int time_embedding_dim) {
  Rng rng(0);
  auto enc = std::make_unique<IdentityMapEncoder>(rng);
  auto unet = std::make_unique<ToyUNet>(3, 8, time_embedding_dim, unet_identity_prior, rng);
  auto dec = std::make_unique<IdentityMapDecoder>(rng);
  BackboneBundle b(std::move(enc), std::move(unet), std::move(dec), 1, 3);
  freeze(b.parameters());
  return b;
}

// ------------------------------------------------------------------- adapters

const char* to_string(AdapterTarget t) {
  switch (t) {
    case AdapterTarget::Encoder: return "encoder";
    case AdapterTarget::Unet: return "unet";
    case AdapterTarget::Decoder: return "decoder";
  }
  return "?";
}

AdapterTarget parse_adapter_target(const std::string& s) {
  if (s == "encoder") return AdapterTarget::Encoder;
  if (s == "unet") return AdapterTarget::Unet;
  if (s == "decoder") return AdapterTarget::Decoder;
  throw Error(ErrorKind::Config, "unknown adapter target '" + s + "'");
}

BackboneBundle apply_adapters(const BackboneBundle& bundle, const std::vector<AdapterSpec>& specs,
                              std::uint64_t seed) {
  for (const auto& s : specs) {
    if (s.target == AdapterTarget::Decoder) {
      throw Error(ErrorKind::Config, "the decoder is frozen and cannot carry adapters");
    }
    if (s.rank < 1) throw Error(ErrorKind::InvalidRange, "adapter rank must be >= 1");
  }
  BackboneBundle out(bundle);
  freeze(out.parameters());
  Rng rng(seed);
  for (const auto& s : specs) {
    if (s.target == AdapterTarget::Encoder) out.encoder().attach_adapters(s.rank, s.scaling, rng);
    if (s.target == AdapterTarget::Unet) out.unet().attach_adapters(s.rank, s.scaling, rng);
  }
  return out;
}

std::vector<AdapterSpec> default_adapter_specs(int rank, double scaling) {
  return {{rank, AdapterTarget::Encoder, scaling}, {rank, AdapterTarget::Unet, scaling}};
}

// ------------------------------------------------------------------ SR pieces

namespace {

double keys_cubic(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct CubicTaps {
  int idx[4];
  double w[4];
};

std::vector<CubicTaps> cubic_taps(int in, int out) {
  std::vector<CubicTaps> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) * ratio - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double f = src - base;
    auto& t = taps[static_cast<std::size_t>(o)];
    for (int k = 0; k < 4; ++k) {
      t.idx[k] = std::clamp(base - 1 + k, 0, in - 1);
      t.w[k] = keys_cubic(f - (k - 1));
    }
  }
  return taps;
}

}  // namespace

ImageBatch pre_upsample(const ImageBatch& lr, int scale_factor) {
  if (scale_factor < 1) throw Error(ErrorKind::InvalidRange, "scale factor must be >= 1");
  if (scale_factor == 1) return lr;
  const Tensor& x = lr.tensor();
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H * scale_factor, Wo = W * scale_factor;
  const auto ty = cubic_taps(H, Ho);
  const auto tx = cubic_taps(W, Wo);
  Tensor rows({B, C, H, Wo});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < Wo; ++j) {
          const auto& t = tx[static_cast<std::size_t>(j)];
          double v = 0.0;
          for (int k = 0; k < 4; ++k) v += t.w[k] * x.at(b, c, i, t.idx[k]);
          rows.at(b, c, i, j) = v;
        }
  Tensor y({B, C, Ho, Wo});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < Ho; ++i) {
        const auto& t = ty[static_cast<std::size_t>(i)];
        for (int j = 0; j < Wo; ++j) {
          double v = 0.0;
          for (int k = 0; k < 4; ++k) v += t.w[k] * rows.at(b, c, t.idx[k], j);
          y.at(b, c, i, j) = v;
        }
      }
  return ImageBatch::clamped(std::move(y));
}

ag::Var encode(const BackboneBundle& bundle, const ag::Var& image) {
  const Tensor& x = image.value();
  const int f = bundle.latent_factor();
  if (x.rank() != 4 || x.dim(2) % f || x.dim(3) % f) {
    throw Error(ErrorKind::Divisibility,
                "image " + shape_str(x.shape()) + " not divisible by latent factor " + std::to_string(f));
  }
  ag::Var z = bundle.encoder().forward(image);
  const Shape expect{x.dim(0), bundle.latent_channels(), x.dim(2) / f, x.dim(3) / f};
  if (z.shape() != expect) {
    throw Error(ErrorKind::ShapeMismatch, "encoder produced " + shape_str(z.shape()) + ", expected " + shape_str(expect));
  }
  return z;
}

LatentBatch encode(const BackboneBundle& bundle, const ImageBatch& image) {
  return LatentBatch(encode(bundle, ag::constant(image.tensor())).value());
}

ag::Var denoise_one_step(const BackboneBundle& bundle, const ag::Var& z, const TimeCondition& cond) {
  for (double a : cond.alpha_bar.value().data()) {
    if (!(a > 0.0)) throw Error(ErrorKind::Numeric, "alpha_bar must be > 0");
  }
  ag::Var eps = bundle.unet().predict_noise(z, cond);
  ag::Var noise_coef = ag::sqrt(ag::affine(cond.alpha_bar, -1.0, 1.0));
  ag::Var inv_signal = ag::reciprocal(ag::sqrt(cond.alpha_bar));
  return ag::scale_rows(ag::sub(z, ag::scale_rows(eps, noise_coef)), inv_signal);
}

LatentBatch denoise_one_step(const BackboneBundle& bundle, const DiffusionSchedule& schedule,
                             const CandidateSet& candidates, const LatentBatch& z,
                             const std::vector<GumbelSelection>& selection) {
  if (static_cast<int>(selection.size()) != z.batch()) {
    throw Error(ErrorKind::ShapeMismatch, "one selection per latent sample required");
  }
  BatchSelection sel;
  sel.items = selection;
  Tensor soft({z.batch(), candidates.size()});
  for (std::size_t b = 0; b < selection.size(); ++b) {
    if (!candidates.contains(selection[b].t_star)) {
      throw Error(ErrorKind::InvalidRange, "t* " + std::to_string(selection[b].t_star) + " not a candidate");
    }
    alpha_bar_at(schedule, selection[b].t_star);
    sel.items[b].hard_index = candidates.index_of(selection[b].t_star);
    soft[b * static_cast<std::size_t>(candidates.size()) + static_cast<std::size_t>(sel.items[b].hard_index)] = 1.0;
  }
  sel.soft = ag::constant(std::move(soft));
  const auto cond = make_time_condition(schedule, candidates, sel, bundle.unet().time_embedding_dim());
  return LatentBatch(denoise_one_step(bundle, ag::constant(z.tensor()), cond).value());
}

Tensor recover_clean_latent(const Tensor& z, const Tensor& eps_hat, double alpha_bar) {
  require_same_shape(z, eps_hat, "recover_clean_latent");
  if (!(alpha_bar > 0.0) || alpha_bar > 1.0) throw Error(ErrorKind::Numeric, "alpha_bar must lie in (0, 1]");
  const double noise = std::sqrt(1.0 - alpha_bar);
  const double signal = std::sqrt(alpha_bar);
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) out[i] = (z[i] - noise * eps_hat[i]) / signal;
  return out;
}

ag::Var decode(const BackboneBundle& bundle, const ag::Var& latent) {
  const Tensor& z = latent.value();
  if (z.rank() != 4 || z.dim(1) != bundle.latent_channels()) {
    throw Error(ErrorKind::ShapeMismatch, "latent " + shape_str(z.shape()) + " does not match backbone with " +
                                              std::to_string(bundle.latent_channels()) + " channels");
  }
  ag::Var img = bundle.decoder().forward(latent);
  const int f = bundle.latent_factor();
  const Shape expect{z.dim(0), 3, z.dim(2) * f, z.dim(3) * f};
  if (img.shape() != expect) {
    throw Error(ErrorKind::ShapeMismatch, "decoder produced " + shape_str(img.shape()) + ", expected " + shape_str(expect));
  }
  if (!img.value().all_finite()) throw Error(ErrorKind::Numeric, "decoder produced non-finite values");
  return ag::clamp01(img);
}

ImageBatch decode(const BackboneBundle& bundle, const LatentBatch& latent) {
  return ImageBatch(decode(bundle, ag::constant(latent.tensor())).value());
}

SRForward forward_super_resolve(const BackboneBundle& bundle, const DiffusionSchedule& schedule,
                                const TimestepSelector& selector, const ImageBatch& lr, int scale_factor, Mode mode,
                                Rng* rng, std::optional<int> fixed_t, std::optional<double> temperature) {
  const ImageBatch up = pre_upsample(lr, scale_factor);
  SRForward out;
  if (fixed_t) {
    out.selection = fixed_selection(selector.candidates(), *fixed_t, lr.batch());
  } else {
    out.selection = select_timestep(ag::constant(lr.tensor()), selector, mode, rng, temperature);
  }
  const auto cond = make_time_condition(schedule, selector.candidates(), out.selection,
                                        bundle.unet().time_embedding_dim());
  out.z_lr = encode(bundle, ag::constant(up.tensor()));
  out.z_sr = denoise_one_step(bundle, out.z_lr, cond);
  out.image = decode(bundle, out.z_sr);
  return out;
}

SRResult super_resolve(const BackboneBundle& bundle, const DiffusionSchedule& schedule,
                       const TimestepSelector& selector, const ImageBatch& lr, int scale_factor, Mode mode, Rng* rng,
                       std::optional<int> fixed_t, bool keep_latents) {
  SRForward fwd = forward_super_resolve(bundle, schedule, selector, lr, scale_factor, mode, rng, fixed_t);
  SRResult r{ImageBatch(fwd.image.value()), {}, std::nullopt, std::nullopt};
  for (const auto& s : fwd.selection.items) r.t_star.push_back(s.t_star);
  if (keep_latents) {
    r.z_lr = LatentBatch(fwd.z_lr.value());
    r.z_sr = LatentBatch(fwd.z_sr.value());
  }
  return r;
}

// ---------------------------------------------------------------- checkpoints

std::string describe_schedule(const DiffusionSchedule& s) {
  std::ostringstream os;
  os.precision(17);
  os << "linear T=" << s.steps << " beta_start=" << s.beta_start << " beta_end=" << s.beta_end;
  return os.str();
}

DiffusionSchedule parse_schedule(const std::string& descriptor) {
  std::istringstream is(descriptor);
  std::string kind, t, b0, b1;
  is >> kind >> t >> b0 >> b1;
  auto value = [&](const std::string& tok, const std::string& key) {
    if (tok.rfind(key + "=", 0) != 0) throw Error(ErrorKind::Decode, "bad schedule descriptor: " + descriptor);
    return tok.substr(key.size() + 1);
  };
  if (kind != "linear") throw Error(ErrorKind::Decode, "unsupported schedule kind '" + kind + "'");
  return make_schedule(std::stoi(value(t, "T")), std::stod(value(b0, "beta_start")), std::stod(value(b1, "beta_end")));
}

nn::ParameterList adapter_parameters(const BackboneBundle& bundle) {
  nn::ParameterList out;
  for (const auto& p : bundle.parameters()) {
    if (p.name.ends_with(".lora_down") || p.name.ends_with(".lora_up")) out.push_back(p);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& dir, const BackboneBundle& bundle, const TimestepSelector& selector,
                     const std::string& config_snapshot, const DiffusionSchedule& schedule) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  ArchiveEntries entries;
  for (const auto& p : adapter_parameters(bundle)) entries.emplace_back("adapter/" + p.name, p.var.value());
  for (const auto& p : selector.parameters()) entries.emplace_back(p.name, p.var.value());
  save_archive(dir / "params.bin", entries);
  {
    std::ofstream os(dir / "config.ini", std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::Io, "cannot write " + (dir / "config.ini").string());
    os << config_snapshot;
  }
  std::ofstream os(dir / "schedule.txt", std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + (dir / "schedule.txt").string());
  os << describe_schedule(schedule) << '\n';
}

void load_checkpoint_parameters(const std::filesystem::path& dir, const BackboneBundle& bundle,
                                const TimestepSelector& selector) {
  const ArchiveEntries entries = load_archive(dir / "params.bin");
  nn::ParameterList targets;
  for (const auto& p : adapter_parameters(bundle)) targets.push_back({"adapter/" + p.name, p.var});
  for (const auto& p : selector.parameters()) targets.push_back(p);
  for (auto& target : targets) {
    const Tensor* stored = find_entry(entries, target.name);
    if (!stored) throw Error(ErrorKind::Missing, "checkpoint lacks '" + target.name + "'");
    if (stored->shape() != target.var.shape()) {
      throw Error(ErrorKind::ShapeMismatch, "checkpoint entry '" + target.name + "' has shape " +
                                                shape_str(stored->shape()) + ", model has " + shape_str(target.var.shape()));
    }
    target.var.mutable_value() = *stored;
  }
  if (entries.size() != targets.size()) {
    throw Error(ErrorKind::Decode, "checkpoint holds entries the model does not recognise");
  }
}

}  // namespace osdsr
