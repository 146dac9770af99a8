#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "osdsr/core.hpp"

namespace osdsr {

// Stages run in a fixed order: blur -> box downscale -> Gaussian noise -> JPEG.
// noise_sigma is in [0,1] intensity units.
struct DegradationConfig {
  double blur_sigma = 1.0;
  int downscale = 4;
  double noise_sigma = 0.02;
  std::optional<int> jpeg_quality = 75;

  void validate() const;
  // Canonical one-line description, also the input of the config hash.
  std::string describe() const;
};

// True when the compression stage uses a real JPEG codec. Otherwise a
// quantisation surrogate stands in and manifests record it.
bool jpeg_codec_available();

// Separable Gaussian blur, radius ceil(3 sigma), half-sample symmetric borders.
Tensor gaussian_blur(const Tensor& image, double sigma);
// Mean over non-overlapping factor x factor blocks.
Tensor box_downscale(const Tensor& image, int factor);
// 8-bit quantise, encode at `quality`, decode.
Tensor jpeg_roundtrip(const Tensor& image, int quality);

ImageBatch degrade(const ImageBatch& gt, const DegradationConfig& config, std::uint64_t seed);

// ------------------------------------------------------------------ image I/O
//
// PNG (any bit depth / colour type, converted to 8-bit RGB) and binary PPM (P6).
// Values map to [0,1] by /255; saving rounds to the nearest byte.

ImageBatch load_image(const std::filesystem::path& path);
void save_image(const ImageBatch& image, const std::filesystem::path& path);
// Sorted regular files with a .png or .ppm extension.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Smooth gradients, rectangles, discs and a sinusoidal texture; deterministic in seed.
ImageBatch synthesize_gt(int height, int width, std::uint64_t seed);
// Writes gt_0000.png ... into `dir` (created if needed).
std::vector<std::filesystem::path> write_synthetic_dataset(const std::filesystem::path& dir, int count, int size,
                                                           std::uint64_t seed);

// ------------------------------------------------------------------ manifest

struct ManifestEntry {
  std::string gt_path;
  int offset_y = 0;
  int offset_x = 0;
  std::uint64_t sample_seed = 0;
};

struct DatasetManifest {
  std::string config_hash;  // 16 hex digits
  int crop_size = 0;
  bool surrogate_jpeg = false;
  std::vector<ManifestEntry> entries;
};

struct PairSample {
  ImageBatch lr;
  ImageBatch gt;
  std::uint64_t seed_used = 0;
};

std::string degradation_config_hash(const DegradationConfig& config, int crop_size);

// Offsets drawn from Rng(derive_sample_seed(sample_seed, 0)); the sample seed of
// file i is derive_sample_seed(global_seed, i).
DatasetManifest build_manifest(const std::filesystem::path& gt_dir, int crop_size, const DegradationConfig& config,
                               std::uint64_t global_seed);

// Header "# config_hash=<hex> crop_size=<n> surrogate_jpeg=<0|1>", then
// gt_path<TAB>offset_y<TAB>offset_x<TAB>sample_seed per line.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Crop, then degrade with the entry's sample seed. Throws Config when the
// manifest was built for a different configuration.
PairSample make_pair(const DatasetManifest& manifest, std::size_t index, const DegradationConfig& config);
std::vector<PairSample> make_pairs(const DatasetManifest& manifest, const DegradationConfig& config);

// In-memory pairs from synthesize_gt; GT i uses derive_sample_seed(seed, i) and
// is degraded with that same seed.
std::vector<PairSample> make_synthetic_pairs(int count, int size, const DegradationConfig& config,
                                             std::uint64_t seed);

// Stacks samples into one batch.
PairSample stack_pairs(const std::vector<PairSample>& samples);

ImageBatch crop(const ImageBatch& image, int offset_y, int offset_x, int height, int width);

}  // namespace osdsr
