#include "osdsr/nn.hpp"

#include <cmath>
#include <cstring>

#include "osdsr/error.hpp"

namespace osdsr::nn {

namespace {

Tensor normal_tensor(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  if (std == 0.0) return t;
  for (double& v : t.data()) v = std * rng.normal();
  return t;
}

ag::Var clone_var(const ag::Var& v) {
  if (!v.defined()) return {};
  return ag::Var(v.value(), v.requires_grad());
}

}  // namespace

DenseMap::DenseMap(int out, int in, double init_std, bool with_bias, Rng& rng)
    : weight_(normal_tensor({out, in}, init_std, rng), true) {
  if (with_bias) bias_ = ag::Var(Tensor({out}), true);
}

ag::Var DenseMap::effective_weight() const {
  if (!adapter_) return weight_;
  return ag::add(weight_, ag::scale(ag::matmul(adapter_->up, adapter_->down), adapter_->scaling));
}

void DenseMap::attach_adapter(int rank, double scaling, Rng& rng) {
  if (rank < 1) throw Error(ErrorKind::InvalidRange, "adapter rank must be >= 1");
  if (adapter_) throw Error(ErrorKind::Config, "adapter already attached");
  const int in = in_features();
  const int out = out_features();
  LowRankAdapter a;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Tensor down({rank, in});
  for (double& v : down.data()) v = rng.uniform(-bound, bound);
  a.down = ag::Var(std::move(down), true);
  a.up = ag::Var(Tensor({out, rank}), true);
  a.scaling = scaling;
  adapter_ = std::move(a);
  weight_.set_requires_grad(false);
  if (bias_.defined()) bias_.set_requires_grad(false);
}

void DenseMap::set_trainable(bool on) {
  weight_.set_requires_grad(on);
  if (bias_.defined()) bias_.set_requires_grad(on);
  if (adapter_) {
    adapter_->down.set_requires_grad(on);
    adapter_->up.set_requires_grad(on);
  }
}

void DenseMap::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight_});
  if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
  if (adapter_) {
    out.push_back({prefix + ".lora_down", adapter_->down});
    out.push_back({prefix + ".lora_up", adapter_->up});
  }
}

DenseMap DenseMap::clone() const {
  DenseMap m;
  m.weight_ = clone_var(weight_);
  m.bias_ = clone_var(bias_);
  if (adapter_) {
    m.adapter_ = LowRankAdapter{clone_var(adapter_->down), clone_var(adapter_->up), adapter_->scaling};
  }
  return m;
}

Conv2d::Conv2d(int in, int out, int kernel, int stride, int pad, Rng& rng, double init_gain, bool with_bias)
    : map_(out, in * kernel * kernel, init_gain / std::sqrt(static_cast<double>(in * kernel * kernel)), with_bias, rng),
      in_(in),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {}

ag::Var Conv2d::operator()(const ag::Var& x) const {
  if (x.value().rank() != 4 || x.value().dim(1) != in_) {
    throw Error(ErrorKind::ShapeMismatch,
                "conv expects " + std::to_string(in_) + " input channels, got " + shape_str(x.shape()));
  }
  return ag::conv2d(x, map_.effective_weight(), map_.bias(), kernel_, stride_, pad_);
}

Conv2d Conv2d::clone() const {
  Conv2d c = *this;
  c.map_ = map_.clone();
  return c;
}

Linear::Linear(int in, int out, Rng& rng, double init_gain, bool with_bias)
    : map_(out, in, init_gain / std::sqrt(static_cast<double>(in)), with_bias, rng) {}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, map_.effective_weight(), map_.bias()); }

Linear Linear::clone() const {
  Linear l;
  l.map_ = map_.clone();
  return l;
}

ResBlock::ResBlock(int channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, 1, rng, 1.0), conv2_(channels, channels, 3, 1, 1, rng, 0.5) {}

ag::Var ResBlock::operator()(const ag::Var& x) const { return ag::add(x, conv2_(ag::silu(conv1_(x)))); }

void ResBlock::collect(const std::string& prefix, ParameterList& out) const {
  conv1_.collect(prefix + ".conv1", out);
  conv2_.collect(prefix + ".conv2", out);
}

void ResBlock::set_trainable(bool on) {
  conv1_.map().set_trainable(on);
  conv2_.map().set_trainable(on);
}

ResBlock ResBlock::clone() const {
  ResBlock r;
  r.conv1_ = conv1_.clone();
  r.conv2_ = conv2_.clone();
  return r;
}

ParameterList trainable_only(const ParameterList& params) {
  ParameterList out;
  for (const auto& p : params) {
    if (p.var.requires_grad()) out.push_back(p);
  }
  return out;
}

std::size_t count_elements(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.value().numel();
  return n;
}

std::uint64_t checksum(const ParameterList& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    const Tensor& t = p.var.value();
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.ptr());
    for (std::size_t i = 0; i < t.numel() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace osdsr::nn
