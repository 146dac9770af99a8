#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "osdsr/autograd.hpp"
#include "osdsr/random.hpp"

namespace osdsr::nn {

struct NamedParameter {
  std::string name;
  ag::Var var;  // shares storage with the owning layer
};
using ParameterList = std::vector<NamedParameter>;

// Additive low-rank correction: W_eff = W + scaling * up * down.
// `up` starts at zero so a freshly attached adapter leaves W_eff == W.
struct LowRankAdapter {
  ag::Var down;  // (rank, in)
  ag::Var up;    // (out, rank)
  double scaling = 1.0;
  int rank() const { return down.value().dim(0); }
};

// Dense layer on a (out, in) weight, shared by Conv2d (in = C*k*k) and Linear.
class DenseMap {
 public:
  DenseMap() = default;
  DenseMap(int out, int in, double init_std, bool with_bias, Rng& rng);

  int out_features() const { return weight_.value().dim(0); }
  int in_features() const { return weight_.value().dim(1); }

  ag::Var effective_weight() const;
  const ag::Var& weight() const { return weight_; }
  const ag::Var& bias() const { return bias_; }
  ag::Var& weight() { return weight_; }
  ag::Var& bias() { return bias_; }
  bool has_adapter() const { return adapter_.has_value(); }
  const std::optional<LowRankAdapter>& adapter() const { return adapter_; }

  // Freezes the base weight/bias and attaches a trainable adapter.
  void attach_adapter(int rank, double scaling, Rng& rng);
  void set_trainable(bool on);
  void collect(const std::string& prefix, ParameterList& out) const;
  DenseMap clone() const;

 private:
  ag::Var weight_;
  ag::Var bias_;
  std::optional<LowRankAdapter> adapter_;
};

class Conv2d {
 public:
  Conv2d() = default;
  // init_gain scales the fan-in normal init; 0 gives an all-zero weight.
  Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng, double init_gain = 1.0, bool with_bias = true);

  ag::Var operator()(const ag::Var& x) const;

  int in_channels() const { return in_; }
  int out_channels() const { return map_.out_features(); }
  int kernel() const { return kernel_; }
  DenseMap& map() { return map_; }
  const DenseMap& map() const { return map_; }
  void collect(const std::string& prefix, ParameterList& out) const { map_.collect(prefix, out); }
  Conv2d clone() const;

 private:
  DenseMap map_;
  int in_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, double init_gain = 1.0, bool with_bias = true);

  ag::Var operator()(const ag::Var& x) const;

  DenseMap& map() { return map_; }
  const DenseMap& map() const { return map_; }
  void collect(const std::string& prefix, ParameterList& out) const { map_.collect(prefix, out); }
  Linear clone() const;

 private:
  DenseMap map_;
};

// conv -> SiLU -> conv, plus identity skip.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int channels, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
  void set_trainable(bool on);
  ResBlock clone() const;

 private:
  Conv2d conv1_, conv2_;
};

ParameterList trainable_only(const ParameterList& params);
std::size_t count_elements(const ParameterList& params);

// FNV-1a over the raw bytes of every parameter value, in list order.
std::uint64_t checksum(const ParameterList& params);

}  // namespace osdsr::nn
