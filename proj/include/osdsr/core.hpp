#pragma once

#include <cstdint>
#include <vector>

#include "osdsr/tensor.hpp"

namespace osdsr {

// (B, 3, H, W) RGB intensities in [0,1]. Construction validates the range, so
// every ImageBatch in circulation satisfies it.
class ImageBatch {
 public:
  ImageBatch() = default;
  // Throws InvalidRange for non-finite or out-of-[0,1] values, ShapeMismatch
  // for anything that is not (B>=1, 3, H>=1, W>=1).
  explicit ImageBatch(Tensor data);
  static ImageBatch clamped(Tensor data);
  static ImageBatch filled(int batch, int height, int width, double value);

  const Tensor& tensor() const noexcept { return data_; }
  int batch() const { return data_.dim(0); }
  int height() const { return data_.dim(2); }
  int width() const { return data_.dim(3); }
  // Single-item view of sample b.
  ImageBatch item(int b) const;
  static ImageBatch stack(const std::vector<ImageBatch>& items);

 private:
  Tensor data_;
};

// (B, C_lat, H/f, W/f) backbone latents, unbounded.
class LatentBatch {
 public:
  LatentBatch() = default;
  explicit LatentBatch(Tensor data);
  const Tensor& tensor() const noexcept { return data_; }
  int batch() const { return data_.dim(0); }
  int channels() const { return data_.dim(1); }
  int height() const { return data_.dim(2); }
  int width() const { return data_.dim(3); }

 private:
  Tensor data_;
};

struct DiffusionSchedule {
  int steps = 0;                   // T
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;       // length T
  std::vector<double> alpha_bars;  // cumulative products of (1 - beta)
};

constexpr int kDefaultTrainSteps = 1000;
constexpr double kDefaultBetaStart = 1e-4;
constexpr double kDefaultBetaEnd = 0.02;

// Linear betas from beta_start to beta_end over T steps.
DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end);
inline DiffusionSchedule default_schedule() {
  return make_schedule(kDefaultTrainSteps, kDefaultBetaStart, kDefaultBetaEnd);
}
double alpha_bar_at(const DiffusionSchedule& schedule, int t);

// fmix64(global_seed ^ (sample_index * 0x9E3779B97F4A7C15 + 0xD1B54A32D192ED03)),
// where fmix64 is the SplitMix64 finaliser. For a fixed global seed the map is a
// bijection on sample indices.
std::uint64_t derive_sample_seed(std::uint64_t global_seed, std::uint64_t sample_index);

}  // namespace osdsr
