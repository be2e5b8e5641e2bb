#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace pdm {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Rank is arbitrary but the network code
/// works with 4-D (batch, channels, height, width) feature maps and 3-D
/// (batch, rows, cols) matrices.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(const Shape& shape) { return Tensor(shape, 0.0); }
  static Tensor full(const Shape& shape, double v) { return Tensor(shape, v); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i < 0 ? rank() + i : i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  /// Same data, new shape; numel must match.
  Tensor reshaped(Shape shape) const;
  void fill(double v);

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(double s);
  void axpy(double a, const Tensor& x);  // this += a * x

  double sum() const;
  double squared_norm() const;
  bool all_finite() const;

  /// Slice along the leading axis: rows [begin, end).
  Tensor batch_slice(std::int64_t begin, std::int64_t end) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(double s, Tensor a);

double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

/// Concatenate along the leading axis.
Tensor concat_batch(std::span<const Tensor> parts);

/// (batch, channels, height, width) view of an activation tensor.
struct FeatureShape {
  std::int64_t batch = 1;
  std::int64_t channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;

  static FeatureShape of(const Tensor& t);
  Shape dims() const { return {batch, channels, height, width}; }
  std::int64_t pixels() const { return height * width; }
  bool operator==(const FeatureShape&) const = default;
};

}  // namespace pdm
