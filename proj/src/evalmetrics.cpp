#include "osdsr/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "osdsr/data.hpp"
#include "osdsr/error.hpp"

namespace fs = std::filesystem;

namespace osdsr {

Tensor rgb_to_y(const Tensor& image) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw Error(ErrorKind::ShapeMismatch, "rgb_to_y needs (B, 3, H, W), got " + shape_str(image.shape()));
  }
  const int B = image.dim(0), H = image.dim(2), W = image.dim(3);
  Tensor y({B, 1, H, W});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        y.at(b, 0, i, j) = kLumaR * image.at(b, 0, i, j) + kLumaG * image.at(b, 1, i, j) + kLumaB * image.at(b, 2, i, j);
  return y;
}

Tensor rgb_to_y(const ImageBatch& image) { return rgb_to_y(image.tensor()); }

double psnr_y(const ImageBatch& a, const ImageBatch& b) {
  require_same_shape(a.tensor(), b.tensor(), "psnr_y");
  const Tensor ya = rgb_to_y(a), yb = rgb_to_y(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < ya.numel(); ++i) {
    const double d = ya[i] - yb[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(ya.numel());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

namespace {

std::vector<double> ssim_kernel() {
  std::vector<double> k(kSsimWindow);
  const int r = kSsimWindow / 2;
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) total += k[i] = std::exp(-0.5 * (i - r) * (i - r) / (kSsimSigma * kSsimSigma));
  for (double& v : k) v /= total;
  return k;
}

// Separable "valid" Gaussian filtering of one H x W plane.
std::vector<double> filter_valid(const double* src, int H, int W, const std::vector<double>& k) {
  const int n = kSsimWindow, Ho = H - n + 1, Wo = W - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(H) * Wo), out(static_cast<std::size_t>(Ho) * Wo);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * src[static_cast<std::size_t>(y) * W + x + i];
      rows[static_cast<std::size_t>(y) * Wo + x] = acc;
    }
  for (int y = 0; y < Ho; ++y)
    for (int x = 0; x < Wo; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * rows[static_cast<std::size_t>(y + i) * Wo + x];
      out[static_cast<std::size_t>(y) * Wo + x] = acc;
    }
  return out;
}

}  // namespace

double ssim_y(const ImageBatch& a, const ImageBatch& b) {
  require_same_shape(a.tensor(), b.tensor(), "ssim_y");
  const int B = a.batch(), H = a.height(), W = a.width();
  if (H < kSsimWindow || W < kSsimWindow) {
    throw Error(ErrorKind::InvalidRange, "ssim_y needs images of at least 11x11, got " + std::to_string(H) + "x" +
                                             std::to_string(W));
  }
  const Tensor ya = rgb_to_y(a), yb = rgb_to_y(b);
  const auto k = ssim_kernel();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  double total = 0.0;
  std::size_t count = 0;
  for (int bi = 0; bi < B; ++bi) {
    const double* pa = ya.ptr() + bi * plane;
    const double* pb = yb.ptr() + bi * plane;
    std::vector<double> aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, H, W, k), mu_b = filter_valid(pb, H, W, k);
    const auto e_aa = filter_valid(aa.data(), H, W, k), e_bb = filter_valid(bb.data(), H, W, k);
    const auto e_ab = filter_valid(ab.data(), H, W, k);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
      const double num = (2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2);
      const double den = (ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2);
      total += num / den;
      ++count;
    }
  }
  return std::min(1.0, total / static_cast<double>(count));
}

MetricRow evaluate_pair(const std::string& image_id, const ImageBatch& sr, const ImageBatch& gt,
                        const FeatureExtractor& extractor) {
  MetricRow r;
  r.image_id = image_id;
  r.psnr_y = psnr_y(sr, gt);
  r.ssim_y = ssim_y(sr, gt);
  r.perceptual = perceptual_distance(sr, gt, extractor);
  return r;
}

EvalSummary summarize(std::vector<MetricRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) { return a.image_id < b.image_id; });
  EvalSummary s;
  s.rows = std::move(rows);
  s.mean.image_id = "MEAN";
  if (s.rows.empty()) return s;
  for (const auto& r : s.rows) {
    s.mean.psnr_y += r.psnr_y;
    s.mean.ssim_y += r.ssim_y;
    s.mean.perceptual += r.perceptual;
  }
  const double n = static_cast<double>(s.rows.size());
  s.mean.psnr_y /= n;
  s.mean.ssim_y /= n;
  s.mean.perceptual /= n;
  return s;
}

EvalSummary evaluate_pairs(const fs::path& sr_dir, const fs::path& gt_dir, const FeatureExtractor& extractor) {
  const auto sr_files = list_images(sr_dir), gt_files = list_images(gt_dir);
  std::map<std::string, fs::path> sr_by_name, gt_by_name;
  for (const auto& p : sr_files) sr_by_name[p.filename().string()] = p;
  for (const auto& p : gt_files) gt_by_name[p.filename().string()] = p;
  std::vector<std::string> missing;
  for (const auto& [name, p] : sr_by_name)
    if (!gt_by_name.count(name)) missing.push_back(name + " (no GT)");
  for (const auto& [name, p] : gt_by_name)
    if (!sr_by_name.count(name)) missing.push_back(name + " (no SR)");
  if (!missing.empty() || sr_by_name.empty()) {
    std::string msg = sr_by_name.empty() || gt_by_name.empty() ? "no matched image pairs" : "unmatched images:";
    for (const auto& m : missing) msg += " " + m;
    throw Error(ErrorKind::Missing, msg);
  }
  std::vector<MetricRow> rows;
  for (const auto& [name, sr_path] : sr_by_name) {
    const ImageBatch sr = load_image(sr_path), gt = load_image(gt_by_name.at(name));
    if (!sr.tensor().same_shape(gt.tensor())) {
      throw Error(ErrorKind::ShapeMismatch, "size mismatch for " + name);
    }
    rows.push_back(evaluate_pair(fs::path(name).stem().string(), sr, gt, extractor));
  }
  return summarize(std::move(rows));
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void merge_external_scores(EvalSummary& summary, const fs::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw Error(ErrorKind::Io, "cannot open score file " + csv_path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Decode, "empty score file " + csv_path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  if (header.size() < 2 || header[0] != "image_id") {
    throw Error(ErrorKind::Decode, "score file " + csv_path.string() + " must start with image_id,<metric>...");
  }
  const std::size_t first = summary.extra_columns.size();
  for (std::size_t c = 1; c < header.size(); ++c) summary.extra_columns.push_back(header[c]);
  const std::size_t width = summary.extra_columns.size();

  std::map<std::string, std::vector<std::string>> cells;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto row = split_csv(line);
    if (row.size() != header.size()) throw Error(ErrorKind::Decode, "ragged row in " + csv_path.string());
    cells[row[0]] = std::move(row);
  }
  for (auto& r : summary.rows) {
    r.extra.resize(width);
    auto it = cells.find(r.image_id);
    if (it == cells.end()) continue;
    for (std::size_t c = 1; c < header.size(); ++c) {
      const std::string& s = it->second[c];
      if (s.empty()) continue;
      try {
        r.extra[first + c - 1] = std::stod(s);
      } catch (const std::exception&) {
        throw Error(ErrorKind::Decode, "non-numeric score '" + s + "' in " + csv_path.string());
      }
    }
  }
  summary.mean.extra.assign(width, std::nullopt);
  for (std::size_t c = 0; c < width; ++c) {
    double acc = 0.0;
    int n = 0;
    for (const auto& r : summary.rows)
      if (c < r.extra.size() && r.extra[c]) {
        acc += *r.extra[c];
        ++n;
      }
    if (n) summary.mean.extra[c] = acc / n;
  }
}

std::string format_metrics_csv(const EvalSummary& s) {
  std::string out = "image_id,psnr_y,ssim_y,perceptual";
  for (const auto& c : s.extra_columns) out += "," + c;
  out += "\n";
  auto emit = [&](const MetricRow& r) {
    out += r.image_id + "," + fmt(r.psnr_y) + "," + fmt(r.ssim_y) + "," + fmt(r.perceptual);
    for (std::size_t c = 0; c < s.extra_columns.size(); ++c) {
      out += ",";
      if (c < r.extra.size() && r.extra[c]) out += fmt(*r.extra[c]);
    }
    out += "\n";
  };
  for (const auto& r : s.rows) emit(r);
  emit(s.mean);
  return out;
}

void write_metrics_csv(const EvalSummary& s, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << format_metrics_csv(s);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

}  // namespace osdsr
