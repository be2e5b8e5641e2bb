#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pdm/tensor.hpp"

namespace pdm {

/// 8-bit interleaved (row-major, HWC) image.
struct Image8 {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 3;
  std::vector<std::uint8_t> pixels;

  static Image8 filled(std::int64_t h, std::int64_t w, std::int64_t c, std::uint8_t value);
  std::uint8_t& at(std::int64_t y, std::int64_t x, std::int64_t c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  bool operator==(const Image8&) const = default;
};

/// Decodes any 8/16-bit PNG to 8-bit RGB. Throws DataError naming the file.
Image8 read_png(const std::filesystem::path& path);
/// Reads only the header; returns {width, height}.
std::pair<std::int64_t, std::int64_t> png_dimensions(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);
std::vector<std::uint8_t> encode_png(const Image8& image);

struct CropBox {
  std::int64_t top, left, height, width;
};

/// Square crop of side min(h, w); the leading edge loses floor(diff / 2).
CropBox center_crop_box(std::int64_t height, std::int64_t width);
Image8 center_crop_min_side(const Image8& image);

/// Antialiased bilinear (triangle filter widened by the downscale factor).
Image8 resize_bilinear(const Image8& image, std::int64_t height, std::int64_t width);

/// (1, C, H, W) in [-1, 1]: v / 127.5 - 1.
Tensor image_to_tensor(const Image8& image);
/// Batch element n of a (N, C, H, W) tensor in [-1, 1] back to 8 bit (rounded, clamped).
Image8 tensor_to_image(const Tensor& images, std::int64_t n);

struct ManifestEntry {
  std::string file_id;
  std::int64_t width;
  std::int64_t height;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::uint64_t split_seed = 0;
  std::string normalization = "[-1,1]";

  std::int64_t size() const { return static_cast<std::int64_t>(entries.size()); }
  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
  /// Scans `root` for *.png files (sorted by name) and records their sizes.
  static DatasetManifest scan(const std::filesystem::path& root, std::uint64_t split_seed = 0);
};

struct LandscapeRule {
  std::int64_t min_width = 2048;   // strict: width > min_width
  std::int64_t min_height = 1024;  // strict: height > min_height
};

/// Keeps entries with width > min_width, height > min_height and width > height.
std::vector<ManifestEntry> filter_landscape_rule(const std::vector<ManifestEntry>& entries,
                                                 const LandscapeRule& rule = {});

struct LoadOptions {
  std::int64_t height = 64;
  std::int64_t width = 64;
  bool center_crop = true;
};

/// decode -> optional center crop -> resize -> [-1, 1]; (indices.size(), 3, H, W).
Tensor load_batch(const DatasetManifest& manifest, const std::vector<std::int64_t>& indices,
                  const LoadOptions& options = {});

enum class SynthKind { gaussians, gradients, checkers };
SynthKind parse_synth_kind(const std::string& name);
std::string synth_kind_name(SynthKind k);

Image8 synth_image(SynthKind kind, std::int64_t size, std::uint64_t seed, std::int64_t index);
/// Writes n images `<kind>_NNNN.png` into dir and returns their manifest.
DatasetManifest synth_toy_dataset(SynthKind kind, std::int64_t n, std::int64_t size, std::uint64_t seed,
                                  const std::filesystem::path& dir);

/// 8x8 grayscale area-downsampled features, (N, 64) row-major.
Tensor pixel_features(const Tensor& images);
/// |mu_a - mu_b|^2 + Tr(A + B - 2 (A^1/2 B A^1/2)^1/2) with 1e-6 I jitter.
double frechet_distance(const std::vector<double>& mu_a, const std::vector<double>& cov_a,
                        const std::vector<double>& mu_b, const std::vector<double>& cov_b, std::int64_t dim);
double pixel_frechet_distance(const Tensor& set_a, const Tensor& set_b);
/// Mean and (unbiased) covariance of the rows of an (N, D) tensor.
std::pair<std::vector<double>, std::vector<double>> gaussian_fit(const Tensor& features);

}  // namespace pdm
