#include "osdsr/dtsm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "osdsr/error.hpp"

namespace osdsr {

CandidateSet::CandidateSet(std::vector<int> steps) : steps_(std::move(steps)) {
  if (steps_.empty()) throw Error(ErrorKind::InvalidRange, "candidate set is empty");
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    if (steps_[i] < 0 || steps_[i] > 999) {
      throw Error(ErrorKind::InvalidRange, "candidate time-step " + std::to_string(steps_[i]) + " outside [0, 999]");
    }
    if (i > 0 && steps_[i] <= steps_[i - 1]) {
      throw Error(ErrorKind::InvalidRange, "candidate time-steps must be strictly increasing");
    }
  }
}

bool CandidateSet::contains(int t) const { return index_of(t) >= 0; }

int CandidateSet::index_of(int t) const {
  auto it = std::lower_bound(steps_.begin(), steps_.end(), t);
  if (it == steps_.end() || *it != t) return -1;
  return static_cast<int>(it - steps_.begin());
}

void SelectorConfig::validate() const {
  if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidRange, "selector temperature must be > 0");
  if (!(temperature_min > 0.0)) throw Error(ErrorKind::InvalidRange, "selector temperature_min must be > 0");
  if (anneal_rate < 0.0) throw Error(ErrorKind::InvalidRange, "selector anneal_rate must be >= 0");
  if (n_resblocks < 1) throw Error(ErrorKind::InvalidRange, "selector needs at least one residual block");
  if (conv_channels < 1 || mlp_hidden < 1) throw Error(ErrorKind::InvalidRange, "selector widths must be >= 1");
}

double SelectorConfig::temperature_at(long step) const {
  if (anneal_rate == 0.0) return temperature;
  return std::max(temperature_min, temperature * std::exp(-anneal_rate * static_cast<double>(step)));
}

ag::Var BatchSelection::hard_straight_through() const {
  const Tensor& s = soft.value();
  Tensor hard(s.shape());
  for (std::size_t b = 0; b < items.size(); ++b) {
    hard[b * static_cast<std::size_t>(s.dim(1)) + static_cast<std::size_t>(items[b].hard_index)] = 1.0;
  }
  return ag::straight_through(std::move(hard), soft);
}

TimestepSelector::TimestepSelector(CandidateSet candidates, SelectorConfig config, std::uint64_t seed)
    : candidates_(std::move(candidates)), config_(config) {
  config_.validate();
  Rng rng(seed);
  head_ = nn::Conv2d(3, config_.conv_channels, 3, 1, 1, rng);
  for (int i = 0; i < config_.n_resblocks; ++i) blocks_.emplace_back(config_.conv_channels, rng);
  fc1_ = nn::Linear(config_.conv_channels, config_.mlp_hidden, rng);
  fc2_ = nn::Linear(config_.mlp_hidden, candidates_.size(), rng);
}

ag::Var TimestepSelector::logits(const ag::Var& image) const {
  const Tensor& x = image.value();
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw Error(ErrorKind::ShapeMismatch, "selector expects (B, 3, H, W), got " + shape_str(x.shape()));
  }
  if (x.dim(2) < kMinInputSize || x.dim(3) < kMinInputSize) {
    throw Error(ErrorKind::ShapeMismatch, "selector input " + shape_str(x.shape()) + " below minimum " +
                                              std::to_string(kMinInputSize) + "x" + std::to_string(kMinInputSize));
  }
  ag::Var h = head_(ag::affine(image, 2.0, -1.0));
  for (const auto& block : blocks_) h = block(h);
  h = ag::global_avg_pool(ag::silu(h));
  return fc2_(ag::silu(fc1_(h)));
}

void TimestepSelector::collect(const std::string& prefix, nn::ParameterList& out) const {
  head_.collect(prefix + ".head", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  fc1_.collect(prefix + ".fc1", out);
  fc2_.collect(prefix + ".fc2", out);
}

nn::ParameterList TimestepSelector::parameters() const {
  nn::ParameterList out;
  collect("selector", out);
  return out;
}

void TimestepSelector::set_trainable(bool on) {
  head_.map().set_trainable(on);
  for (auto& b : blocks_) b.set_trainable(on);
  fc1_.map().set_trainable(on);
  fc2_.map().set_trainable(on);
}

Tensor extract_features(const ImageBatch& image, const TimestepSelector& selector) {
  return selector.logits(ag::constant(image.tensor())).value();
}

BatchSelection gumbel_softmax_select(const ag::Var& logits, const CandidateSet& candidates, double temperature,
                                     bool noise_enabled, Rng* rng) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(1) != candidates.size()) {
    throw Error(ErrorKind::ShapeMismatch, "logits " + shape_str(lv.shape()) + " for " +
                                              std::to_string(candidates.size()) + " candidates");
  }
  if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidRange, "Gumbel-Softmax temperature must be > 0");
  if (!lv.all_finite()) throw Error(ErrorKind::Numeric, "non-finite logit");
  if (noise_enabled && rng == nullptr) throw Error(ErrorKind::InvalidRange, "noise enabled without an rng");

  Tensor noise(lv.shape());
  if (noise_enabled) {
    for (double& g : noise.data()) g = -std::log(-std::log(rng->uniform_open()));
  }
  ag::Var soft = ag::softmax_rows(ag::scale(ag::add(logits, ag::constant(std::move(noise))), 1.0 / temperature));

  const int B = lv.dim(0), N = lv.dim(1);
  BatchSelection out;
  out.soft = soft;
  out.items.resize(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    auto& sel = out.items[static_cast<std::size_t>(b)];
    const double* row = soft.value().ptr() + static_cast<std::size_t>(b) * N;
    sel.soft_probs.assign(row, row + N);
    sel.hard_index = static_cast<int>(std::max_element(row, row + N) - row);
    sel.t_star = candidates[sel.hard_index];
  }
  return out;
}

GumbelSelection gumbel_softmax_select(std::span<const double> logits, double temperature, bool noise_enabled,
                                      Rng& rng, const CandidateSet* candidates) {
  const int n = static_cast<int>(logits.size());
  if (n == 0) throw Error(ErrorKind::ShapeMismatch, "empty logit vector");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  const CandidateSet positional(candidates ? candidates->steps() : idx);
  if (positional.size() != n) throw Error(ErrorKind::ShapeMismatch, "logit count differs from candidate count");
  Tensor row({1, n}, std::vector<double>(logits.begin(), logits.end()));
  auto sel = gumbel_softmax_select(ag::constant(std::move(row)), positional, temperature, noise_enabled, &rng);
  return sel.items.front();
}

BatchSelection select_timestep(const ag::Var& image, const TimestepSelector& selector, Mode mode, Rng* rng,
                               std::optional<double> temperature) {
  const double tau = temperature.value_or(selector.config().temperature);
  const bool noise = mode == Mode::Train && selector.config().noise_enabled;
  return gumbel_softmax_select(selector.logits(image), selector.candidates(), tau, noise, rng);
}

std::vector<GumbelSelection> select_timestep(const ImageBatch& image, const TimestepSelector& selector, Mode mode,
                                             Rng* rng) {
  return select_timestep(ag::constant(image.tensor()), selector, mode, rng).items;
}

BatchSelection fixed_selection(const CandidateSet& candidates, int t_star, int batch) {
  const int k = candidates.index_of(t_star);
  if (k < 0) throw Error(ErrorKind::InvalidRange, "fixed time-step " + std::to_string(t_star) + " not a candidate");
  const int N = candidates.size();
  Tensor onehot({batch, N});
  BatchSelection out;
  for (int b = 0; b < batch; ++b) {
    onehot[static_cast<std::size_t>(b) * N + k] = 1.0;
    GumbelSelection sel;
    sel.soft_probs.assign(static_cast<std::size_t>(N), 0.0);
    sel.soft_probs[static_cast<std::size_t>(k)] = 1.0;
    sel.hard_index = k;
    sel.t_star = t_star;
    out.items.push_back(std::move(sel));
  }
  out.soft = ag::constant(std::move(onehot));
  return out;
}

}  // namespace osdsr
