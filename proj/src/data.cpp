#include "pdm/data.hpp"

#include <png.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "pdm/error.hpp"
#include "pdm/rng.hpp"

namespace pdm {

namespace fs = std::filesystem;

namespace {

struct FilterTap {
  std::int64_t first;
  std::vector<double> weights;
};

// One triangle filter per output sample, widened by the downscale factor.
std::vector<FilterTap> triangle_taps(std::int64_t in, std::int64_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double support = std::max(scale, 1.0);
  std::vector<FilterTap> taps(static_cast<std::size_t>(out));
  for (std::int64_t o = 0; o < out; ++o) {
    const double center = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(center - support)));
    const auto hi = std::min<std::int64_t>(in - 1, static_cast<std::int64_t>(std::ceil(center + support)));
    auto& tap = taps[static_cast<std::size_t>(o)];
    tap.first = lo;
    double total = 0.0;
    for (std::int64_t i = lo; i <= hi; ++i) {
      const double w = std::max(0.0, 1.0 - std::abs(static_cast<double>(i) - center) / support);
      tap.weights.push_back(w);
      total += w;
    }
    if (total <= 0.0) {
      // center fell between samples outside the filter: nearest sample
      tap.first = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::lround(center)), 0, in - 1);
      tap.weights.assign(1, 1.0);
      total = 1.0;
    }
    for (auto& w : tap.weights) w /= total;
  }
  return taps;
}

// Separable resize of `planes` planes of size h x w stored plane-major.
std::vector<double> resize_planes(const std::vector<double>& src, std::int64_t planes, std::int64_t h, std::int64_t w,
                                  std::int64_t th, std::int64_t tw) {
  const auto tx = triangle_taps(w, tw);
  const auto ty = triangle_taps(h, th);
  std::vector<double> tmp(static_cast<std::size_t>(planes * h * tw));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < tw; ++x) {
        const auto& tap = tx[static_cast<std::size_t>(x)];
        double acc = 0.0;
        for (std::size_t k = 0; k < tap.weights.size(); ++k)
          acc += tap.weights[k] * src[static_cast<std::size_t>((p * h + y) * w + tap.first + static_cast<std::int64_t>(k))];
        tmp[static_cast<std::size_t>((p * h + y) * tw + x)] = acc;
      }
  std::vector<double> out(static_cast<std::size_t>(planes * th * tw));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t y = 0; y < th; ++y) {
      const auto& tap = ty[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < tw; ++x) {
        double acc = 0.0;
        for (std::size_t k = 0; k < tap.weights.size(); ++k)
          acc += tap.weights[k] * tmp[static_cast<std::size_t>((p * h + tap.first + static_cast<std::int64_t>(k)) * tw + x)];
        out[static_cast<std::size_t>((p * th + y) * tw + x)] = acc;
      }
    }
  return out;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void write_bytes_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace

Image8 Image8::filled(std::int64_t h, std::int64_t w, std::int64_t c, std::uint8_t value) {
  if (h < 1 || w < 1 || c < 1) throw InvalidArgument("image dimensions must be positive");
  Image8 im;
  im.height = h;
  im.width = w;
  im.channels = c;
  im.pixels.assign(static_cast<std::size_t>(h * w * c), value);
  return im;
}

Image8 read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  Image8 out;
  out.height = img.height;
  out.width = img.width;
  out.channels = 3;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

std::pair<std::int64_t, std::int64_t> png_dimensions(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  const std::pair<std::int64_t, std::int64_t> dims{img.width, img.height};
  png_image_free(&img);
  return dims;
}

std::vector<std::uint8_t> encode_png(const Image8& image) {
  if (image.channels != 3 && image.channels != 1) throw InvalidArgument("encode_png: 1 or 3 channels supported");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(img, size, 0, image.pixels.data(), 0, nullptr))
    throw IoError(std::string("PNG encoding failed: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, image.pixels.data(), 0, nullptr))
    throw IoError(std::string("PNG encoding failed: ") + img.message);
  out.resize(size);
  return out;
}

void write_png(const fs::path& path, const Image8& image) { write_bytes_atomic(path, encode_png(image)); }

CropBox center_crop_box(std::int64_t height, std::int64_t width) {
  if (height < 1 || width < 1) throw InvalidArgument("center_crop: image dimensions must be positive");
  const std::int64_t side = std::min(height, width);
  return {(height - side) / 2, (width - side) / 2, side, side};
}

Image8 center_crop_min_side(const Image8& image) {
  const CropBox b = center_crop_box(image.height, image.width);
  Image8 out = Image8::filled(b.height, b.width, image.channels, 0);
  for (std::int64_t y = 0; y < b.height; ++y)
    std::copy_n(image.pixels.begin() + ((b.top + y) * image.width + b.left) * image.channels, b.width * image.channels,
                out.pixels.begin() + y * b.width * image.channels);
  return out;
}

Image8 resize_bilinear(const Image8& image, std::int64_t height, std::int64_t width) {
  if (height < 1 || width < 1) throw InvalidArgument("resize: target dimensions must be positive");
  if (height == image.height && width == image.width) return image;
  const auto c = image.channels;
  std::vector<double> planes(static_cast<std::size_t>(c * image.height * image.width));
  for (std::int64_t y = 0; y < image.height; ++y)
    for (std::int64_t x = 0; x < image.width; ++x)
      for (std::int64_t k = 0; k < c; ++k)
        planes[static_cast<std::size_t>((k * image.height + y) * image.width + x)] = image.at(y, x, k);
  const auto r = resize_planes(planes, c, image.height, image.width, height, width);
  Image8 out = Image8::filled(height, width, c, 0);
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x)
      for (std::int64_t k = 0; k < c; ++k) out.at(y, x, k) = to_u8(r[static_cast<std::size_t>((k * height + y) * width + x)]);
  return out;
}

Tensor image_to_tensor(const Image8& image) {
  Tensor t({1, image.channels, image.height, image.width});
  for (std::int64_t k = 0; k < image.channels; ++k)
    for (std::int64_t y = 0; y < image.height; ++y)
      for (std::int64_t x = 0; x < image.width; ++x) t.at(0, k, y, x) = image.at(y, x, k) / 127.5 - 1.0;
  return t;
}

Image8 tensor_to_image(const Tensor& images, std::int64_t n) {
  const auto fs_ = FeatureShape::of(images);
  if (n < 0 || n >= fs_.batch) throw InvalidArgument("tensor_to_image: batch index out of range");
  Image8 out = Image8::filled(fs_.height, fs_.width, fs_.channels, 0);
  for (std::int64_t k = 0; k < fs_.channels; ++k)
    for (std::int64_t y = 0; y < fs_.height; ++y)
      for (std::int64_t x = 0; x < fs_.width; ++x) {
        const double v = images.at(n, k, y, x);
        if (!std::isfinite(v)) throw DataError("tensor_to_image: non-finite pixel");
        out.at(y, x, k) = to_u8((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
      }
  return out;
}

void DatasetManifest::save(const fs::path& path) const {
  std::ostringstream s;
  s << "# root=" << root.string() << "\n# split_seed=" << split_seed << "\n# normalization=" << normalization << "\n";
  for (const auto& e : entries) s << e.file_id << ' ' << e.width << ' ' << e.height << '\n';
  const std::string text = s.str();
  write_bytes_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = line.substr(2, eq - 2);
      const auto val = line.substr(eq + 1);
      if (key == "root") m.root = val;
      else if (key == "split_seed") m.split_seed = std::stoull(val);
      else if (key == "normalization") m.normalization = val;
      continue;
    }
    std::istringstream ls(line);
    ManifestEntry e;
    if (!(ls >> e.file_id >> e.width >> e.height) || e.width < 1 || e.height < 1)
      throw DataError("manifest " + path.string() + " line " + std::to_string(lineno) + " is malformed");
    m.entries.push_back(e);
  }
  return m;
}

DatasetManifest DatasetManifest::scan(const fs::path& root, std::uint64_t split_seed) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  DatasetManifest m;
  m.root = root;
  m.split_seed = split_seed;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  for (const auto& n : names) {
    const auto [w, h] = png_dimensions(root / n);
    m.entries.push_back({n, w, h});
  }
  return m;
}

std::vector<ManifestEntry> filter_landscape_rule(const std::vector<ManifestEntry>& entries, const LandscapeRule& rule) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.width > rule.min_width && e.height > rule.min_height && e.width > e.height) out.push_back(e);
  return out;
}

Tensor load_batch(const DatasetManifest& manifest, const std::vector<std::int64_t>& indices, const LoadOptions& opt) {
  if (indices.empty()) throw InvalidArgument("load_batch: no indices");
  Tensor out({static_cast<std::int64_t>(indices.size()), 3, opt.height, opt.width});
  const std::int64_t per = 3 * opt.height * opt.width;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto idx = indices[i];
    if (idx < 0 || idx >= manifest.size())
      throw InvalidArgument("load_batch: index " + std::to_string(idx) + " out of range");
    Image8 im = read_png(manifest.root / manifest.entries[static_cast<std::size_t>(idx)].file_id);
    if (opt.center_crop) im = center_crop_min_side(im);
    im = resize_bilinear(im, opt.height, opt.width);
    const Tensor t = image_to_tensor(im);
    std::copy_n(t.data(), per, out.data() + static_cast<std::int64_t>(i) * per);
  }
  return out;
}

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "gaussians") return SynthKind::gaussians;
  if (name == "gradients") return SynthKind::gradients;
  if (name == "checkers") return SynthKind::checkers;
  throw InvalidArgument("unknown synthetic kind '" + name + "' (expected gaussians, gradients or checkers)");
}

std::string synth_kind_name(SynthKind k) {
  switch (k) {
    case SynthKind::gradients:
      return "gradients";
    case SynthKind::checkers:
      return "checkers";
    case SynthKind::gaussians:
    default:
      return "gaussians";
  }
}

Image8 synth_image(SynthKind kind, std::int64_t size, std::uint64_t seed, std::int64_t index) {
  if (size < 1) throw InvalidArgument("synth_image: size must be positive");
  Rng rng(derive_key(seed, static_cast<std::uint64_t>(index), static_cast<std::uint64_t>(kind)));
  const double s = static_cast<double>(size);
  std::vector<double> rgb(static_cast<std::size_t>(3 * size * size));
  auto px = [&](std::int64_t c, std::int64_t y, std::int64_t x) -> double& {
    return rgb[static_cast<std::size_t>((c * size + y) * size + x)];
  };
  auto color = [&] { return std::array<double, 3>{rng.uniform(), rng.uniform(), rng.uniform()}; };

  if (kind == SynthKind::gaussians) {
    const auto bg = color();
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) px(c, y, x) = 0.3 * bg[static_cast<std::size_t>(c)];
    const int blobs = 2 + static_cast<int>(rng.uniform(0.0, 3.0));
    for (int b = 0; b < blobs; ++b) {
      const double cy = rng.uniform(0.15, 0.85) * s, cx = rng.uniform(0.15, 0.85) * s;
      const double sigma = rng.uniform(0.1, 0.25) * s;
      const auto col = color();
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
          const double d2 = ((y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx)) / (2 * sigma * sigma);
          const double a = std::exp(-d2);
          for (std::int64_t c = 0; c < 3; ++c) px(c, y, x) += a * col[static_cast<std::size_t>(c)];
        }
    }
  } else if (kind == SynthKind::gradients) {
    const auto c0 = color(), c1 = color();
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dx = std::cos(angle), dy = std::sin(angle);
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        const double u = 0.5 + ((x + 0.5) / s - 0.5) * dx + ((y + 0.5) / s - 0.5) * dy;
        const double a = std::clamp(u, 0.0, 1.0);
        for (std::int64_t c = 0; c < 3; ++c)
          px(c, y, x) = (1 - a) * c0[static_cast<std::size_t>(c)] + a * c1[static_cast<std::size_t>(c)];
      }
  } else {
    const auto c0 = color(), c1 = color();
    const std::int64_t period = std::max<std::int64_t>(2, size / (4 + static_cast<std::int64_t>(rng.uniform(0.0, 5.0))));
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        const bool on = ((y / period) + (x / period)) % 2 == 0;
        for (std::int64_t c = 0; c < 3; ++c) px(c, y, x) = (on ? c0 : c1)[static_cast<std::size_t>(c)];
      }
  }
  Image8 im = Image8::filled(size, size, 3, 0);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) im.at(y, x, c) = to_u8(std::clamp(px(c, y, x), 0.0, 1.0) * 255.0);
  return im;
}

DatasetManifest synth_toy_dataset(SynthKind kind, std::int64_t n, std::int64_t size, std::uint64_t seed,
                                  const fs::path& dir) {
  if (n < 1) throw InvalidArgument("synth_toy_dataset: n must be >= 1");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.root = dir;
  m.split_seed = seed;
  for (std::int64_t i = 0; i < n; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04lld.png", synth_kind_name(kind).c_str(), static_cast<long long>(i));
    write_png(dir / name, synth_image(kind, size, seed, i));
    m.entries.push_back({name, size, size});
  }
  return m;
}

Tensor pixel_features(const Tensor& images) {
  const auto s = FeatureShape::of(images);
  constexpr std::int64_t kSide = 8;
  Tensor out({s.batch, kSide * kSide});
  const std::int64_t hw = s.height * s.width;
  for (std::int64_t n = 0; n < s.batch; ++n) {
    std::vector<double> gray(static_cast<std::size_t>(hw), 0.0);
    for (std::int64_t i = 0; i < hw; ++i) {
      if (s.channels == 3) {
        const double* p = images.data() + n * 3 * hw + i;
        gray[static_cast<std::size_t>(i)] = 0.299 * p[0] + 0.587 * p[hw] + 0.114 * p[2 * hw];
      } else {
        for (std::int64_t c = 0; c < s.channels; ++c) gray[static_cast<std::size_t>(i)] += images.data()[(n * s.channels + c) * hw + i];
        gray[static_cast<std::size_t>(i)] /= static_cast<double>(s.channels);
      }
    }
    const auto small = resize_planes(gray, 1, s.height, s.width, kSide, kSide);
    std::copy(small.begin(), small.end(), out.data() + n * kSide * kSide);
  }
  return out;
}

std::pair<std::vector<double>, std::vector<double>> gaussian_fit(const Tensor& features) {
  if (features.shape().size() != 2) throw InvalidArgument("gaussian_fit: expected (N, D) features");
  const std::int64_t n = features.dim(0), d = features.dim(1);
  if (n < 2) throw InvalidArgument("gaussian_fit: need at least 2 samples");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(features.data(), n, d);
  const Eigen::VectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  std::vector<double> m(mu.data(), mu.data() + d);
  std::vector<double> c(static_cast<std::size_t>(d * d));
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t j = 0; j < d; ++j) c[static_cast<std::size_t>(i * d + j)] = cov(i, j);
  return {m, c};
}

double frechet_distance(const std::vector<double>& mu_a, const std::vector<double>& cov_a,
                        const std::vector<double>& mu_b, const std::vector<double>& cov_b, std::int64_t dim) {
  const auto d = static_cast<std::size_t>(dim);
  if (mu_a.size() != d || mu_b.size() != d || cov_a.size() != d * d || cov_b.size() != d * d)
    throw InvalidArgument("frechet_distance: dimension mismatch");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Eigen::VectorXd> ma(mu_a.data(), dim), mb(mu_b.data(), dim);
  Mat a = Eigen::Map<const Mat>(cov_a.data(), dim, dim);
  Mat b = Eigen::Map<const Mat>(cov_b.data(), dim, dim);
  a = 0.5 * (a + a.transpose()).eval();
  b = 0.5 * (b + b.transpose()).eval();
  a.diagonal().array() += 1e-6;
  b.diagonal().array() += 1e-6;
  Eigen::SelfAdjointEigenSolver<Mat> ea(a);
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Mat m = sqrt_a * b * sqrt_a;
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Mat> em(m, Eigen::EigenvaluesOnly);
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double dist = (ma - mb).squaredNorm() + a.trace() + b.trace() - 2.0 * tr_sqrt;
  return std::max(dist, 0.0);
}

double pixel_frechet_distance(const Tensor& set_a, const Tensor& set_b) {
  if (set_a.dim(0) < 2 || set_b.dim(0) < 2) throw InvalidArgument("pixel_frechet_distance: each set needs >= 2 images");
  const auto [ma, ca] = gaussian_fit(pixel_features(set_a));
  const auto [mb, cb] = gaussian_fit(pixel_features(set_b));
  return frechet_distance(ma, ca, mb, cb, static_cast<std::int64_t>(ma.size()));
}

}  // namespace pdm
