#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "osdsr/core.hpp"
#include "osdsr/losses.hpp"

namespace osdsr {

// Full-range BT.601 luma on [0,1] values, no 16-235 offset.
constexpr double kLumaR = 0.299;
constexpr double kLumaG = 0.587;
constexpr double kLumaB = 0.114;

// PSNR reported for identical inputs.
constexpr double kPsnrCap = 100.0;

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

// (B, 3, H, W) -> (B, 1, H, W).
Tensor rgb_to_y(const ImageBatch& image);
Tensor rgb_to_y(const Tensor& image);

// 10 log10(1 / mse(Y_a, Y_b)), capped at kPsnrCap.
double psnr_y(const ImageBatch& a, const ImageBatch& b);
// Mean SSIM over every window position fully inside the image (Gaussian 11x11,
// sigma 1.5, peak 1). Throws InvalidRange for images smaller than the window.
double ssim_y(const ImageBatch& a, const ImageBatch& b);

struct MetricRow {
  std::string image_id;
  double psnr_y = 0.0;
  double ssim_y = 0.0;
  double perceptual = 0.0;
  // Scores merged from external no-reference evaluators, aligned with
  // EvalSummary::extra_columns.
  std::vector<std::optional<double>> extra;
};

struct EvalSummary {
  std::vector<MetricRow> rows;  // sorted by image_id
  MetricRow mean;               // image_id "MEAN"
  std::vector<std::string> extra_columns;
};

MetricRow evaluate_pair(const std::string& image_id, const ImageBatch& sr, const ImageBatch& gt,
                        const FeatureExtractor& extractor);
// Pairs files by name. Throws Missing listing every file without a counterpart,
// or when the directories share no images.
EvalSummary evaluate_pairs(const std::filesystem::path& sr_dir, const std::filesystem::path& gt_dir,
                           const FeatureExtractor& extractor);
EvalSummary summarize(std::vector<MetricRow> rows);

// Adds the columns of `image_id,<name>,...` CSV files to the summary; ids
// absent from a file leave an empty cell. Means cover present values only.
void merge_external_scores(EvalSummary& summary, const std::filesystem::path& csv_path);

// Header `image_id,psnr_y,ssim_y,perceptual[,extra...]`, one row per image, then MEAN.
std::string format_metrics_csv(const EvalSummary& summary);
void write_metrics_csv(const EvalSummary& summary, const std::filesystem::path& path);

}  // namespace osdsr
