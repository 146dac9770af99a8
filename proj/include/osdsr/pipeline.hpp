#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "osdsr/autograd.hpp"
#include "osdsr/core.hpp"
#include "osdsr/dtsm.hpp"
#include "osdsr/nn.hpp"

namespace osdsr {

// Conditioning handed to the denoiser. In training the embedding and alpha_bar
// carry the hard candidate's values forward and route gradients to the soft
// selection probabilities.
struct TimeCondition {
  std::vector<int> t_hard;
  ag::Var embedding;  // (B, D)
  ag::Var alpha_bar;  // (B)
};

// Sinusoidal embedding of a diffusion time-step; half sines, half cosines.
std::vector<double> timestep_embedding(int t, int dim);

TimeCondition make_time_condition(const DiffusionSchedule& schedule, const CandidateSet& candidates,
                                  const BatchSelection& selection, int embedding_dim);

// ---------------------------------------------------------------- backbone seam
//
// Pretrained backbones plug in by implementing these three interfaces. Images
// cross the seam in [0,1]; an implementation that works in [-1,1] shifts
// internally.

class EncoderModel {
 public:
  virtual ~EncoderModel() = default;
  virtual ag::Var forward(const ag::Var& image) const = 0;
  virtual std::unique_ptr<EncoderModel> clone() const = 0;
  virtual void collect(const std::string& prefix, nn::ParameterList& out) const = 0;
  virtual void attach_adapters(int rank, double scaling, Rng& rng) = 0;
};

class DenoiserModel {
 public:
  virtual ~DenoiserModel() = default;

  // Noise prediction eps_hat = U(z, t). Every call counts as one evaluation.
  ag::Var predict_noise(const ag::Var& latent, const TimeCondition& cond) const {
    evaluations_.fetch_add(1, std::memory_order_relaxed);
    return forward(latent, cond);
  }
  std::size_t evaluations() const { return evaluations_.load(std::memory_order_relaxed); }
  void reset_evaluations() const { evaluations_.store(0, std::memory_order_relaxed); }

  virtual int time_embedding_dim() const = 0;
  virtual std::unique_ptr<DenoiserModel> clone() const = 0;
  virtual void collect(const std::string& prefix, nn::ParameterList& out) const = 0;
  virtual void attach_adapters(int rank, double scaling, Rng& rng) = 0;

 protected:
  virtual ag::Var forward(const ag::Var& latent, const TimeCondition& cond) const = 0;

 private:
  mutable std::atomic<std::size_t> evaluations_{0};
};

class DecoderModel {
 public:
  virtual ~DecoderModel() = default;
  // Unclamped image-space output; decode() clamps to [0,1].
  virtual ag::Var forward(const ag::Var& latent) const = 0;
  virtual std::unique_ptr<DecoderModel> clone() const = 0;
  virtual void collect(const std::string& prefix, nn::ParameterList& out) const = 0;
};

class BackboneBundle {
 public:
  BackboneBundle(std::unique_ptr<EncoderModel> encoder, std::unique_ptr<DenoiserModel> unet,
                 std::unique_ptr<DecoderModel> decoder, int latent_factor, int latent_channels);
  BackboneBundle(const BackboneBundle& other);
  BackboneBundle& operator=(const BackboneBundle& other);
  BackboneBundle(BackboneBundle&&) noexcept = default;
  BackboneBundle& operator=(BackboneBundle&&) noexcept = default;

  const EncoderModel& encoder() const { return *encoder_; }
  const DenoiserModel& unet() const { return *unet_; }
  const DecoderModel& decoder() const { return *decoder_; }
  EncoderModel& encoder() { return *encoder_; }
  DenoiserModel& unet() { return *unet_; }

  int latent_factor() const noexcept { return latent_factor_; }
  int latent_channels() const noexcept { return latent_channels_; }

  nn::ParameterList parameters() const;  // prefixed encoder./unet./decoder.
  nn::ParameterList encoder_parameters() const;
  nn::ParameterList unet_parameters() const;
  nn::ParameterList decoder_parameters() const;

 private:
  std::unique_ptr<EncoderModel> encoder_;
  std::unique_ptr<DenoiserModel> unet_;
  std::unique_ptr<DecoderModel> decoder_;
  int latent_factor_ = 1;
  int latent_channels_ = 3;
};

struct ToyBackboneOptions {
  int latent_factor = 4;   // power of two
  int latent_channels = 4;
  int encoder_width = 16;
  int unet_width = 32;
  int time_embedding_dim = 32;
  // When set, the denoiser starts as the exact identity denoiser
  // eps_hat = z (1 - sqrt(a)) / sqrt(1 - a), so z_SR == z_LR before training.
  // When unset its output layer is zero, i.e. eps_hat == 0.
  bool identity_prior = true;
};

// Small seeded conv encoder/decoder and a two-level U-Net; all parameters frozen.
BackboneBundle make_toy_backbone(std::uint64_t seed, const ToyBackboneOptions& options = {});
// f = 1, identity 1x1 encoder/decoder. `unet_identity_prior` as in ToyBackboneOptions.
BackboneBundle make_identity_backbone(bool unet_identity_prior = false, int time_embedding_dim = 32);

// ------------------------------------------------------------------ adapters

enum class AdapterTarget { Encoder, Unet, Decoder };

struct AdapterSpec {
  int rank = 16;
  AdapterTarget target = AdapterTarget::Unet;
  double scaling = 1.0;
};

const char* to_string(AdapterTarget t);
AdapterTarget parse_adapter_target(const std::string& s);

// Copy of `bundle` with a zero-initialised low-rank adapter on every conv and
// linear map of each targeted component. Base weights stay frozen.
BackboneBundle apply_adapters(const BackboneBundle& bundle, const std::vector<AdapterSpec>& specs,
                              std::uint64_t seed);
std::vector<AdapterSpec> default_adapter_specs(int rank = 16, double scaling = 1.0);

// --------------------------------------------------------------- SR pipeline

// Bicubic (Keys, a = -0.5) resize by an integer factor, clamped to [0,1].
ImageBatch pre_upsample(const ImageBatch& lr, int scale_factor);

ag::Var encode(const BackboneBundle& bundle, const ag::Var& image);
LatentBatch encode(const BackboneBundle& bundle, const ImageBatch& image);

// z_SR = (z - sqrt(1 - a) eps_hat) / sqrt(a), with a = alpha_bar at t*.
ag::Var denoise_one_step(const BackboneBundle& bundle, const ag::Var& z, const TimeCondition& cond);
LatentBatch denoise_one_step(const BackboneBundle& bundle, const DiffusionSchedule& schedule,
                             const CandidateSet& candidates, const LatentBatch& z,
                             const std::vector<GumbelSelection>& selection);
// Scalar form of the same relation; throws Numeric when alpha_bar <= 0.
Tensor recover_clean_latent(const Tensor& z, const Tensor& eps_hat, double alpha_bar);

ag::Var decode(const BackboneBundle& bundle, const ag::Var& latent);
ImageBatch decode(const BackboneBundle& bundle, const LatentBatch& latent);

struct SRResult {
  ImageBatch image;
  std::vector<int> t_star;
  std::optional<LatentBatch> z_lr;
  std::optional<LatentBatch> z_sr;
};

struct SRForward {
  ag::Var image;  // clamped to [0,1]
  BatchSelection selection;
  ag::Var z_lr;
  ag::Var z_sr;
};

// Pre-upsample, select t*, encode, one denoising step, decode. The selector
// sees the original LR input. `fixed_t` bypasses the selector.
SRForward forward_super_resolve(const BackboneBundle& bundle, const DiffusionSchedule& schedule,
                                const TimestepSelector& selector, const ImageBatch& lr, int scale_factor, Mode mode,
                                Rng* rng, std::optional<int> fixed_t = std::nullopt,
                                std::optional<double> temperature = std::nullopt);
SRResult super_resolve(const BackboneBundle& bundle, const DiffusionSchedule& schedule,
                       const TimestepSelector& selector, const ImageBatch& lr, int scale_factor, Mode mode,
                       Rng* rng = nullptr, std::optional<int> fixed_t = std::nullopt, bool keep_latents = false);

// --------------------------------------------------------------- checkpoints
//
// Directory layout:
//   params.bin    archive of adapter factors ("adapter/<name>") and selector
//                 parameters ("selector/<name>")
//   config.ini    run configuration snapshot
//   schedule.txt  "linear T=<T> beta_start=<b0> beta_end=<b1>"

std::string describe_schedule(const DiffusionSchedule& schedule);
DiffusionSchedule parse_schedule(const std::string& descriptor);

nn::ParameterList adapter_parameters(const BackboneBundle& bundle);
void save_checkpoint(const std::filesystem::path& dir, const BackboneBundle& bundle, const TimestepSelector& selector,
                     const std::string& config_snapshot, const DiffusionSchedule& schedule);
// Overwrites the named adapter and selector values in place; every stored key
// must exist with a matching shape.
void load_checkpoint_parameters(const std::filesystem::path& dir, const BackboneBundle& bundle,
                                const TimestepSelector& selector);

}  // namespace osdsr
