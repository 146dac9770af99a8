#include "osdsr/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

#include "osdsr/error.hpp"

namespace osdsr {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidRange: return "invalid range";
    case ErrorKind::OutOfRange: return "out of range";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::ShapeMismatch: return "shape mismatch";
    case ErrorKind::Divisibility: return "divisibility";
    case ErrorKind::ZeroNorm: return "zero norm";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Decode: return "decode error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Missing: return "missing";
  }
  return "error";
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(ErrorKind::ShapeMismatch, "negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw Error(ErrorKind::ShapeMismatch, "data size " + std::to_string(data_.size()) +
                                              " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const noexcept {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace osdsr
