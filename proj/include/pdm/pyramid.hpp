#pragma once

#include <string>
#include <vector>

#include "pdm/tensor.hpp"

namespace pdm {

struct PyramidLevel {
  std::int64_t resolution;  // latent height
  std::int64_t channels;
  bool operator==(const PyramidLevel&) const = default;
};

/// Ordered multi-resolution latent layout. Levels run from lowest to highest
/// resolution; a level's width follows the image aspect ratio.
struct PyramidSpec {
  std::vector<PyramidLevel> levels;
  std::int64_t image_height = 64;
  std::int64_t image_width = 64;
  std::int64_t image_channels = 3;

  void validate() const;
  std::int64_t num_levels() const { return static_cast<std::int64_t>(levels.size()); }
  std::int64_t level_height(std::int64_t i) const;
  std::int64_t level_width(std::int64_t i) const;
  Shape level_shape(std::int64_t i, std::int64_t batch) const;
  Shape image_shape(std::int64_t batch) const { return {batch, image_channels, image_height, image_width}; }
  /// Index of the level with the given height, or -1.
  std::int64_t level_at_resolution(std::int64_t height) const;

  /// "4:32,8:16,16:8" style level list.
  std::string levels_string() const;
  static std::vector<PyramidLevel> parse_levels(const std::string& text);

  bool operator==(const PyramidSpec&) const = default;
};

/// 64x64x3 images with latents 4x4x32 + 8x8x16 + 16x16x8.
PyramidSpec default_pyramid_spec();

/// Image elements divided by total latent elements.
double compression_rate(const PyramidSpec& spec);

/// One tensor per pyramid level, all sharing a batch size.
struct PyramidLatent {
  std::vector<Tensor> levels;

  static PyramidLatent zeros(const PyramidSpec& spec, std::int64_t batch);
  static PyramidLatent zeros_like(const PyramidLatent& other);

  std::int64_t num_levels() const { return static_cast<std::int64_t>(levels.size()); }
  std::int64_t batch() const;
  std::int64_t numel() const;
  bool all_finite() const;
  /// Throws InvalidArgument unless every level has the shape the PyramidSpec prescribes.
  void check_matches(const PyramidSpec& spec) const;
  void check_compatible(const PyramidLatent& other) const;

  PyramidLatent& operator+=(const PyramidLatent& o);
  PyramidLatent& operator-=(const PyramidLatent& o);
  PyramidLatent& operator*=(double s);
  void axpy(double a, const PyramidLatent& x);

  PyramidLatent batch_slice(std::int64_t begin, std::int64_t end) const;
};

PyramidLatent operator+(PyramidLatent a, const PyramidLatent& b);
PyramidLatent operator-(PyramidLatent a, const PyramidLatent& b);
PyramidLatent operator*(double s, PyramidLatent a);
double max_abs_diff(const PyramidLatent& a, const PyramidLatent& b);
bool bit_equal(const PyramidLatent& a, const PyramidLatent& b);
double squared_norm(const PyramidLatent& a);

enum class AblationMode { include_only, exclude_only };

/// include_only keeps `level` and zeroes the rest; exclude_only zeroes `level`.
PyramidLatent ablate_latents(const PyramidLatent& latent, AblationMode mode, std::int64_t level);

}  // namespace pdm
