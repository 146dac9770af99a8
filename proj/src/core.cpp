#include "osdsr/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "osdsr/error.hpp"

namespace osdsr {

namespace {

void check_image_shape(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) < 1 || t.dim(1) != 3 || t.dim(2) < 1 || t.dim(3) < 1) {
    throw Error(ErrorKind::ShapeMismatch, "image batch must be (B>=1, 3, H>=1, W>=1), got " + shape_str(t.shape()));
  }
}

}  // namespace

ImageBatch::ImageBatch(Tensor data) : data_(std::move(data)) {
  check_image_shape(data_);
  for (double v : data_.data()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw Error(ErrorKind::InvalidRange, "pixel value " + std::to_string(v) + " outside [0,1]");
    }
  }
}

ImageBatch ImageBatch::clamped(Tensor data) {
  for (double& v : data.data()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, "non-finite pixel value");
    v = std::clamp(v, 0.0, 1.0);
  }
  return ImageBatch(std::move(data));
}

ImageBatch ImageBatch::filled(int batch, int height, int width, double value) {
  return ImageBatch(Tensor({batch, 3, height, width}, value));
}

ImageBatch ImageBatch::item(int b) const {
  if (b < 0 || b >= batch()) throw Error(ErrorKind::OutOfRange, "batch index " + std::to_string(b));
  const std::size_t n = data_.numel() / static_cast<std::size_t>(batch());
  std::vector<double> v(data_.ptr() + b * n, data_.ptr() + (b + 1) * n);
  return ImageBatch(Tensor({1, 3, height(), width()}, std::move(v)));
}

ImageBatch ImageBatch::stack(const std::vector<ImageBatch>& items) {
  if (items.empty()) throw Error(ErrorKind::ShapeMismatch, "cannot stack an empty list");
  const int h = items[0].height(), w = items[0].width();
  std::vector<double> v;
  int total = 0;
  for (const auto& it : items) {
    if (it.height() != h || it.width() != w) {
      throw Error(ErrorKind::ShapeMismatch, "stack: mixed spatial sizes");
    }
    v.insert(v.end(), it.tensor().data().begin(), it.tensor().data().end());
    total += it.batch();
  }
  return ImageBatch(Tensor({total, 3, h, w}, std::move(v)));
}

LatentBatch::LatentBatch(Tensor data) : data_(std::move(data)) {
  if (data_.rank() != 4) throw Error(ErrorKind::ShapeMismatch, "latent batch must be rank 4, got " + shape_str(data_.shape()));
}

DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1 || !(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw Error(ErrorKind::InvalidRange, "schedule needs T >= 1 and 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.steps = steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(static_cast<std::size_t>(steps));
  s.alpha_bars.resize(static_cast<std::size_t>(steps));
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    s.betas[static_cast<std::size_t>(t)] = beta;
    prod *= 1.0 - beta;
    s.alpha_bars[static_cast<std::size_t>(t)] = prod;
  }
  return s;
}

double alpha_bar_at(const DiffusionSchedule& schedule, int t) {
  if (t < 0 || t >= schedule.steps) {
    throw Error(ErrorKind::OutOfRange,
                "time-step " + std::to_string(t) + " outside [0, " + std::to_string(schedule.steps) + ")");
  }
  return schedule.alpha_bars[static_cast<std::size_t>(t)];
}

std::uint64_t derive_sample_seed(std::uint64_t global_seed, std::uint64_t sample_index) {
  std::uint64_t z = global_seed ^ (sample_index * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace osdsr
