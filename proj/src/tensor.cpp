#include "pdm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "pdm/error.hpp"
#include "pdm/rng.hpp"

namespace pdm {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw InvalidArgument("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
    throw InvalidArgument("tensor data size does not match shape " + shape_string(shape_));
}

double& Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
  return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw InvalidArgument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
  if (o.shape_ != shape_) throw InvalidArgument("shape mismatch in +=: " + shape_string(shape_) + " vs " + shape_string(o.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  if (o.shape_ != shape_) throw InvalidArgument("shape mismatch in -=: " + shape_string(shape_) + " vs " + shape_string(o.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (auto& v : data_) v *= s;
  return *this;
}

void Tensor::axpy(double a, const Tensor& x) {
  if (x.shape_ != shape_) throw InvalidArgument("shape mismatch in axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::batch_slice(std::int64_t begin, std::int64_t end) const {
  if (rank() == 0 || begin < 0 || end > shape_[0] || begin > end)
    throw InvalidArgument("batch slice out of range");
  const std::int64_t stride = shape_[0] ? numel() / shape_[0] : 0;
  Shape s = shape_;
  s[0] = end - begin;
  std::vector<double> d(data_.begin() + begin * stride, data_.begin() + end * stride);
  return Tensor(std::move(s), std::move(d));
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(double s, Tensor a) { return a *= s; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw InvalidArgument("shape mismatch in max_abs_diff");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.numel()) * sizeof(double)) == 0;
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw InvalidArgument("concat of zero tensors");
  Shape s = parts[0].shape();
  std::vector<double> d;
  s[0] = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    ps[0] = 0;
    if (ps != Shape(s.begin(), s.end())) throw InvalidArgument("concat shape mismatch");
    d.insert(d.end(), p.values().begin(), p.values().end());
  }
  for (const auto& p : parts) s[0] += p.dim(0);
  return Tensor(std::move(s), std::move(d));
}

FeatureShape FeatureShape::of(const Tensor& t) {
  if (t.rank() != 4) throw InvalidArgument("expected a 4-D feature map, got " + shape_string(t.shape()));
  FeatureShape f{t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
  if (f.batch < 1 || f.channels < 1 || f.height < 1 || f.width < 1)
    throw InvalidArgument("feature map dimensions must be positive: " + shape_string(t.shape()));
  return f;
}

Tensor Rng::normal_tensor(const Shape& shape, double stddev) {
  Tensor t(shape);
  for (auto& v : t.values()) v = normal(0.0, stddev);
  return t;
}

Tensor Rng::uniform_tensor(const Shape& shape, double lo, double hi) {
  Tensor t(shape);
  for (auto& v : t.values()) v = uniform(lo, hi);
  return t;
}

}  // namespace pdm
