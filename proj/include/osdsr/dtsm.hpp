#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "osdsr/autograd.hpp"
#include "osdsr/core.hpp"
#include "osdsr/nn.hpp"
#include "osdsr/random.hpp"

namespace osdsr {

// Strictly increasing diffusion time-steps in [0, 999] the selector chooses from.
class CandidateSet {
 public:
  // Throws InvalidRange when empty, unsorted, duplicated or outside [0, 999].
  explicit CandidateSet(std::vector<int> steps);
  static CandidateSet uniform_default() { return CandidateSet({199, 399, 599, 799, 999}); }

  const std::vector<int>& steps() const noexcept { return steps_; }
  int size() const noexcept { return static_cast<int>(steps_.size()); }
  int operator[](int i) const { return steps_.at(static_cast<std::size_t>(i)); }
  int max() const { return steps_.back(); }
  bool contains(int t) const;
  int index_of(int t) const;  // -1 when absent

 private:
  std::vector<int> steps_;
};

struct SelectorConfig {
  int conv_channels = 32;
  int n_resblocks = 4;
  int mlp_hidden = 128;
  double temperature = 1.0;
  bool noise_enabled = true;
  // tau_k = max(temperature_min, temperature * exp(-anneal_rate * k)); off by default.
  double anneal_rate = 0.0;
  double temperature_min = 0.1;

  void validate() const;
  double temperature_at(long step) const;
};

struct GumbelSelection {
  std::vector<double> soft_probs;
  int hard_index = 0;
  int t_star = 0;
};

enum class Mode { Train, Infer };

// Selection for a whole batch. `soft` is the differentiable (B, |S|) matrix of
// relaxed probabilities; `items` holds the per-sample hard decisions.
struct BatchSelection {
  std::vector<GumbelSelection> items;
  ag::Var soft;
  // (B, |S|) one-hot of the hard decisions, routed straight-through to `soft`.
  ag::Var hard_straight_through() const;
};

// Conv -> ResBlocks -> global average pool -> MLP, yielding |S| logits per image.
class TimestepSelector {
 public:
  static constexpr int kMinInputSize = 3;

  TimestepSelector(CandidateSet candidates, SelectorConfig config, std::uint64_t seed);

  const CandidateSet& candidates() const noexcept { return candidates_; }
  const SelectorConfig& config() const noexcept { return config_; }

  // Differentiable logits for an image Var in [0,1] of shape (B, 3, H, W).
  ag::Var logits(const ag::Var& image) const;
  void collect(const std::string& prefix, nn::ParameterList& out) const;
  nn::ParameterList parameters() const;
  void set_trainable(bool on);

 private:
  CandidateSet candidates_;
  SelectorConfig config_;
  nn::Conv2d head_;
  std::vector<nn::ResBlock> blocks_;
  nn::Linear fc1_, fc2_;
};

// (B, |S|) logits, one row per image. Deterministic given parameters and input.
Tensor extract_features(const ImageBatch& image, const TimestepSelector& selector);

// softmax((logits + g) / tau), g_i = -log(-log u_i) when noise is enabled.
GumbelSelection gumbel_softmax_select(std::span<const double> logits, double temperature, bool noise_enabled,
                                      Rng& rng, const CandidateSet* candidates = nullptr);
BatchSelection gumbel_softmax_select(const ag::Var& logits, const CandidateSet& candidates, double temperature,
                                     bool noise_enabled, Rng* rng);

// Train mode samples with the configured noise; infer mode is the noiseless argmax.
BatchSelection select_timestep(const ag::Var& image, const TimestepSelector& selector, Mode mode, Rng* rng,
                               std::optional<double> temperature = std::nullopt);
std::vector<GumbelSelection> select_timestep(const ImageBatch& image, const TimestepSelector& selector, Mode mode,
                                             Rng* rng);

// Selection pinned to one candidate for every sample (DTSM disabled).
BatchSelection fixed_selection(const CandidateSet& candidates, int t_star, int batch);

}  // namespace osdsr
