#include "osdsr/data.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <png.h>
#ifdef OSDSR_HAVE_JPEG
#include <jpeglib.h>
#endif

#include "osdsr/error.hpp"
#include "osdsr/random.hpp"

namespace fs = std::filesystem;

namespace osdsr {

void DegradationConfig::validate() const {
  if (!(blur_sigma >= 0.0) || !std::isfinite(blur_sigma)) throw Error(ErrorKind::InvalidRange, "blur_sigma must be >= 0");
  if (downscale < 1) throw Error(ErrorKind::InvalidRange, "downscale must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw Error(ErrorKind::InvalidRange, "noise_sigma must be >= 0");
  }
  if (jpeg_quality && (*jpeg_quality < 1 || *jpeg_quality > 100)) {
    throw Error(ErrorKind::InvalidRange, "jpeg_quality must be in [1,100]");
  }
}

std::string DegradationConfig::describe() const {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "blur_sigma=%.17g downscale=%d noise_sigma=%.17g jpeg_quality=%d", blur_sigma,
                downscale, noise_sigma, jpeg_quality.value_or(0));
  return buf;
}

bool jpeg_codec_available() {
#ifdef OSDSR_HAVE_JPEG
  return true;
#else
  return false;
#endif
}

namespace {

int reflect(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

void require_image_tensor(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": expected a rank-4 image");
}

}  // namespace

Tensor gaussian_blur(const Tensor& image, double sigma) {
  require_image_tensor(image, "gaussian_blur");
  if (sigma <= 0.0) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;

  const int B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  Tensor tmp(image.shape()), out(image.shape());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * image.at(b, c, y, reflect(x + i, W));
          tmp.at(b, c, y, x) = acc;
        }
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.at(b, c, reflect(y + i, H), x);
          out.at(b, c, y, x) = acc;
        }
    }
  return out;
}

Tensor box_downscale(const Tensor& image, int factor) {
  require_image_tensor(image, "box_downscale");
  if (factor < 1) throw Error(ErrorKind::InvalidRange, "downscale factor must be >= 1");
  if (factor == 1) return image;
  const int B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
  if (H % factor || W % factor) {
    throw Error(ErrorKind::Divisibility,
                "image " + shape_str(image.shape()) + " not divisible by downscale " + std::to_string(factor));
  }
  Tensor out({B, C, H / factor, W / factor});
  const double inv = 1.0 / (factor * factor);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H / factor; ++y)
        for (int x = 0; x < W / factor; ++x) {
          double acc = 0.0;
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx) acc += image.at(b, c, y * factor + dy, x * factor + dx);
          out.at(b, c, y, x) = acc * inv;
        }
  return out;
}

#ifdef OSDSR_HAVE_JPEG
namespace {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

std::vector<std::uint8_t> jpeg_encode(const std::vector<std::uint8_t>& rgb, int H, int W, int quality) {
  jpeg_compress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw Error(ErrorKind::Io, std::string("jpeg encode: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(W);
  cinfo.image_height = static_cast<JDIMENSION>(H);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(rgb.data() + static_cast<std::size_t>(cinfo.next_scanline) * W * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

std::vector<std::uint8_t> jpeg_decode(const std::vector<std::uint8_t>& bytes, int H, int W) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorKind::Decode, std::string("jpeg decode: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  if (static_cast<int>(cinfo.output_width) != W || static_cast<int>(cinfo.output_height) != H ||
      cinfo.output_components != 3) {
    jpeg_destroy_decompress(&cinfo);
    throw Error(ErrorKind::Decode, "jpeg decode: unexpected geometry");
  }
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * W * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return rgb;
}

}  // namespace
#endif

Tensor jpeg_roundtrip(const Tensor& image, int quality) {
  require_image_tensor(image, "jpeg_roundtrip");
  if (image.dim(1) != 3) throw Error(ErrorKind::ShapeMismatch, "jpeg_roundtrip needs 3 channels");
  if (quality < 1 || quality > 100) throw Error(ErrorKind::InvalidRange, "jpeg quality must be in [1,100]");
  const int B = image.dim(0), H = image.dim(2), W = image.dim(3);
  Tensor out(image.shape());
  for (int b = 0; b < B; ++b) {
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] = to_byte(image.at(b, c, y, x));
#ifdef OSDSR_HAVE_JPEG
    rgb = jpeg_decode(jpeg_encode(rgb, H, W, quality), H, W);
#else
    // Surrogate: uniform requantisation with a step that grows as quality drops.
    const int step = 1 + (100 - quality) / 8;
    for (auto& v : rgb) v = static_cast<std::uint8_t>(std::min(255, (v + step / 2) / step * step));
#endif
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c) out.at(b, c, y, x) = rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0;
  }
  return out;
}

ImageBatch degrade(const ImageBatch& gt, const DegradationConfig& config, std::uint64_t seed) {
  config.validate();
  if (gt.height() % config.downscale || gt.width() % config.downscale) {
    throw Error(ErrorKind::Divisibility, "image " + std::to_string(gt.height()) + "x" + std::to_string(gt.width()) +
                                             " not divisible by downscale " + std::to_string(config.downscale));
  }
  Tensor x = gaussian_blur(gt.tensor(), config.blur_sigma);
  x = box_downscale(x, config.downscale);
  if (config.noise_sigma > 0.0) {
    Rng rng(seed);
    for (double& v : x.data()) v = std::clamp(v + config.noise_sigma * rng.normal(), 0.0, 1.0);
  }
  if (config.jpeg_quality) x = jpeg_roundtrip(x, *config.jpeg_quality);
  return ImageBatch::clamped(std::move(x));
}

// ------------------------------------------------------------------ image I/O

namespace {

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

ImageBatch from_rgb8(const std::vector<std::uint8_t>& rgb, int H, int W) {
  Tensor t({1, 3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0;
  return ImageBatch(std::move(t));
}

std::vector<std::uint8_t> to_rgb8(const ImageBatch& image) {
  const int H = image.height(), W = image.width();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) rgb[(static_cast<std::size_t>(y) * W + x) * 3 + c] = to_byte(image.tensor().at(0, c, y, x));
  return rgb;
}

ImageBatch load_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw Error(ErrorKind::Decode, "cannot decode PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw Error(ErrorKind::Decode, "cannot decode PNG " + path.string() + ": " + img.message);
  }
  return from_rgb8(rgb, static_cast<int>(img.height), static_cast<int>(img.width));
}

void save_png(const ImageBatch& image, const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width());
  img.height = static_cast<png_uint_32>(image.height());
  img.format = PNG_FORMAT_RGB;
  const auto rgb = to_rgb8(image);
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw Error(ErrorKind::Io, "cannot write PNG " + path.string() + ": " + img.message);
  }
}

int read_ppm_int(std::istream& in, const fs::path& path) {
  int c = in.peek();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = 0;
  if (!(in >> v)) throw Error(ErrorKind::Decode, "malformed PPM header in " + path.string());
  return v;
}

ImageBatch load_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw Error(ErrorKind::Decode, "not a binary PPM: " + path.string());
  const int W = read_ppm_int(in, path), H = read_ppm_int(in, path), maxval = read_ppm_int(in, path);
  if (W < 1 || H < 1 || maxval != 255) throw Error(ErrorKind::Decode, "unsupported PPM geometry in " + path.string());
  in.get();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H) * W * 3);
  in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!in) throw Error(ErrorKind::Decode, "truncated PPM " + path.string());
  return from_rgb8(rgb, H, W);
}

void save_ppm(const ImageBatch& image, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  const auto rgb = to_rgb8(image);
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
}

}  // namespace

ImageBatch load_image(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorKind::Io, "no such image file: " + path.string());
  const std::string ext = lower_ext(path);
  if (ext == ".png") return load_png(path);
  if (ext == ".ppm") return load_ppm(path);
  throw Error(ErrorKind::Decode, "unsupported image format: " + path.string());
}

void save_image(const ImageBatch& image, const fs::path& path) {
  if (image.batch() != 1) throw Error(ErrorKind::ShapeMismatch, "save_image expects a single image");
  const std::string ext = lower_ext(path);
  if (ext == ".png") return save_png(image, path);
  if (ext == ".ppm") return save_ppm(image, path);
  throw Error(ErrorKind::Io, "unsupported image format: " + path.string());
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = lower_ext(e.path());
    if (ext == ".png" || ext == ".ppm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

ImageBatch synthesize_gt(int height, int width, std::uint64_t seed) {
  if (height < 1 || width < 1) throw Error(ErrorKind::InvalidRange, "synthetic image needs positive size");
  Rng rng(seed);
  Tensor t({1, 3, height, width});
  double base[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.2, 0.8);
    gx[c] = rng.uniform(-0.3, 0.3);
    gy[c] = rng.uniform(-0.3, 0.3);
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        t.at(0, c, y, x) = base[c] + gx[c] * (x / double(width) - 0.5) + gy[c] * (y / double(height) - 0.5);

  const int rects = 3 + static_cast<int>(rng.below(4));
  for (int r = 0; r < rects; ++r) {
    const int y0 = static_cast<int>(rng.below(height)), x0 = static_cast<int>(rng.below(width));
    const int h = 1 + static_cast<int>(rng.below(std::max(1, height / 2)));
    const int w = 1 + static_cast<int>(rng.below(std::max(1, width / 2)));
    double col[3];
    for (double& v : col) v = rng.uniform();
    for (int y = y0; y < std::min(height, y0 + h); ++y)
      for (int x = x0; x < std::min(width, x0 + w); ++x)
        for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = col[c];
  }
  const int discs = 2 + static_cast<int>(rng.below(3));
  for (int d = 0; d < discs; ++d) {
    const double cy = rng.uniform(0, height), cx = rng.uniform(0, width);
    const double rad = rng.uniform(2.0, std::max(3.0, std::min(height, width) / 4.0));
    double col[3];
    for (double& v : col) v = rng.uniform();
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= rad * rad)
          for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = col[c];
  }
  const double fy = rng.uniform(0.2, 1.2), fx = rng.uniform(0.2, 1.2), amp = rng.uniform(0.03, 0.1);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) t.at(0, c, y, x) += amp * std::sin(fy * y + fx * x + c);
  return ImageBatch::clamped(std::move(t));
}

std::vector<fs::path> write_synthetic_dataset(const fs::path& dir, int count, int size, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorKind::InvalidRange, "synthetic dataset needs count >= 1");
  fs::create_directories(dir);
  std::vector<fs::path> out;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "gt_%04d.png", i);
    out.push_back(dir / name);
    save_image(synthesize_gt(size, size, derive_sample_seed(seed, static_cast<std::uint64_t>(i))), out.back());
  }
  return out;
}

// ------------------------------------------------------------------ manifest

std::string degradation_config_hash(const DegradationConfig& config, int crop_size) {
  const std::string text = config.describe() + " crop_size=" + std::to_string(crop_size);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ImageBatch crop(const ImageBatch& image, int oy, int ox, int h, int w) {
  if (oy < 0 || ox < 0 || h < 1 || w < 1 || oy + h > image.height() || ox + w > image.width()) {
    throw Error(ErrorKind::OutOfRange, "crop window outside the image");
  }
  Tensor t({image.batch(), 3, h, w});
  for (int b = 0; b < image.batch(); ++b)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t.at(b, c, y, x) = image.tensor().at(b, c, oy + y, ox + x);
  return ImageBatch(std::move(t));
}

DatasetManifest build_manifest(const fs::path& gt_dir, int crop_size, const DegradationConfig& config,
                               std::uint64_t global_seed) {
  config.validate();
  if (crop_size < 1) throw Error(ErrorKind::InvalidRange, "crop_size must be >= 1");
  if (crop_size % config.downscale) {
    throw Error(ErrorKind::Divisibility, "crop_size " + std::to_string(crop_size) + " not divisible by downscale " +
                                             std::to_string(config.downscale));
  }
  const auto files = list_images(gt_dir);
  if (files.empty()) throw Error(ErrorKind::Missing, "no .png/.ppm images in " + gt_dir.string());

  DatasetManifest m;
  m.config_hash = degradation_config_hash(config, crop_size);
  m.crop_size = crop_size;
  m.surrogate_jpeg = config.jpeg_quality.has_value() && !jpeg_codec_available();
  for (std::size_t i = 0; i < files.size(); ++i) {
    const ImageBatch img = load_image(files[i]);
    if (crop_size > img.height() || crop_size > img.width()) {
      throw Error(ErrorKind::InvalidRange, "crop_size " + std::to_string(crop_size) + " exceeds " + files[i].string());
    }
    ManifestEntry e;
    e.gt_path = files[i].string();
    e.sample_seed = derive_sample_seed(global_seed, i);
    Rng rng(derive_sample_seed(e.sample_seed, 0));
    e.offset_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height() - crop_size + 1)));
    e.offset_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width() - crop_size + 1)));
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write manifest " + path.string());
  out << "# config_hash=" << m.config_hash << " crop_size=" << m.crop_size
      << " surrogate_jpeg=" << (m.surrogate_jpeg ? 1 : 0) << '\n';
  for (const auto& e : m.entries) {
    out << e.gt_path << '\t' << e.offset_y << '\t' << e.offset_x << '\t' << e.sample_seed << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "cannot write manifest " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open manifest " + path.string());
  DatasetManifest m;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw Error(ErrorKind::Decode, "manifest " + path.string() + " lacks a header line");
  }
  std::istringstream header(line.substr(2));
  std::string field;
  bool have_hash = false, have_crop = false;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Decode, "bad manifest header field '" + field + "'");
    const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
    if (key == "config_hash") {
      m.config_hash = val;
      have_hash = true;
    } else if (key == "crop_size") {
      m.crop_size = std::stoi(val);
      have_crop = true;
    } else if (key == "surrogate_jpeg") {
      m.surrogate_jpeg = val == "1";
    } else {
      throw Error(ErrorKind::Decode, "unknown manifest header field '" + key + "'");
    }
  }
  if (!have_hash || !have_crop) throw Error(ErrorKind::Decode, "manifest header needs config_hash and crop_size");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    ManifestEntry e;
    std::string oy, ox, seed;
    if (!std::getline(row, e.gt_path, '\t') || !std::getline(row, oy, '\t') || !std::getline(row, ox, '\t') ||
        !std::getline(row, seed)) {
      throw Error(ErrorKind::Decode, "malformed manifest line " + std::to_string(lineno));
    }
    try {
      e.offset_y = std::stoi(oy);
      e.offset_x = std::stoi(ox);
      e.sample_seed = std::stoull(seed);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Decode, "malformed manifest line " + std::to_string(lineno));
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

PairSample make_pair(const DatasetManifest& m, std::size_t index, const DegradationConfig& config) {
  if (index >= m.entries.size()) throw Error(ErrorKind::OutOfRange, "manifest index out of range");
  if (degradation_config_hash(config, m.crop_size) != m.config_hash) {
    throw Error(ErrorKind::Config, "manifest config_hash " + m.config_hash + " does not match [degrade] settings");
  }
  const auto& e = m.entries[index];
  ImageBatch gt = crop(load_image(e.gt_path), e.offset_y, e.offset_x, m.crop_size, m.crop_size);
  ImageBatch lr = degrade(gt, config, e.sample_seed);
  return {std::move(lr), std::move(gt), e.sample_seed};
}

std::vector<PairSample> make_pairs(const DatasetManifest& m, const DegradationConfig& config) {
  std::vector<PairSample> out;
  out.reserve(m.entries.size());
  for (std::size_t i = 0; i < m.entries.size(); ++i) out.push_back(make_pair(m, i, config));
  return out;
}

std::vector<PairSample> make_synthetic_pairs(int count, int size, const DegradationConfig& config,
                                             std::uint64_t seed) {
  if (count < 1) throw Error(ErrorKind::InvalidRange, "synthetic pairs need count >= 1");
  std::vector<PairSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = derive_sample_seed(seed, static_cast<std::uint64_t>(i));
    ImageBatch gt = synthesize_gt(size, size, s);
    ImageBatch lr = degrade(gt, config, s);
    out.push_back({std::move(lr), std::move(gt), s});
  }
  return out;
}

PairSample stack_pairs(const std::vector<PairSample>& samples) {
  if (samples.empty()) throw Error(ErrorKind::InvalidRange, "cannot stack an empty list of pairs");
  std::vector<ImageBatch> lr, gt;
  for (const auto& s : samples) {
    lr.push_back(s.lr);
    gt.push_back(s.gt);
  }
  return {ImageBatch::stack(lr), ImageBatch::stack(gt), samples.front().seed_used};
}

}  // namespace osdsr
