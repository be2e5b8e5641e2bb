#pragma once

// helpers shared by the unit tests and the acceptance binary

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "pdm/autograd.hpp"
#include "pdm/layers.hpp"
#include "pdm/pyramid.hpp"
#include "pdm/rng.hpp"
#include "pdm/sampler.hpp"

namespace pdm::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::int64_t coordinates = 0;
};

// Central differences on up to `per_tensor` random coordinates of each
// tensor. Error per tensor is |g_analytic - g_numeric| / max(|g_a|, |g_n|)
// over the sampled coordinates. A tensor whose gradient vanishes identically
// (both norms under zero_tol) counts as exact when the difference does too.
inline GradCheck gradcheck(const std::function<Var()>& loss, const std::vector<std::pair<std::string, Var*>>& wrt,
                           std::int64_t per_tensor = 24, std::uint64_t seed = 1, double h = 1e-5,
                           double zero_tol = 1e-7) {
  for (auto& [name, v] : wrt) v->zero_grad();
  backward(loss());
  Rng rng(seed);
  GradCheck out;
  for (auto& [name, v] : wrt) {
    const Tensor analytic = v->grad();
    Tensor& w = v->mutable_value();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(w.numel()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    if (static_cast<std::int64_t>(idx.size()) > per_tensor) idx.resize(static_cast<std::size_t>(per_tensor));
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (auto i : idx) {
      NoGradGuard guard;
      const double orig = w[i];
      w[i] = orig + h;
      const double fp = loss().value()[0];
      w[i] = orig - h;
      const double fm = loss().value()[0];
      w[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      ++out.coordinates;
    }
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    double rel = std::sqrt(diff2) / std::max(denom, 1e-300);
    if (denom < zero_tol && std::sqrt(diff2) < zero_tol) rel = 0.0;
    if (out.worst.empty() || rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = name;
    }
  }
  return out;
}

inline std::vector<std::pair<std::string, Var*>> all_params(ParamList& p) { return p.params; }

// largest singular value of a weight viewed as dim0 x rest, full SVD
inline double sigma_max(const Tensor& weight) {
  const std::int64_t rows = weight.dim(0);
  const std::int64_t cols = weight.numel() / rows;
  Eigen::MatrixXd m(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) m(i, j) = weight[i * cols + j];
  return Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues()(0);
}

inline Tensor normalized_weight(const SpectralEntry& e) {
  NoGradGuard guard;
  return ag::spectral_divide(*e.weight, e.state->u, e.state->v, e.state->eps_division_guard).value();
}

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double stddev = 1.0) {
  Rng rng(seed);
  return rng.normal_tensor(shape, stddev);
}

inline double rel_diff(const Tensor& a, const Tensor& b) {
  return std::sqrt((a - b).squared_norm()) / std::max(std::sqrt(b.squared_norm()), 1e-300);
}

// exact velocity of the straight coupling z1 = mu + A z0 (A symmetric positive definite)
struct GaussianFlow {
  Eigen::Vector2d mu{2.0, -1.0};
  Eigen::Matrix2d sigma;
  Eigen::Matrix2d a;

  GaussianFlow() {
    sigma << 2.0, 0.6, 0.6, 1.0;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(sigma);
    a = es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  }

  VelocityField field() const {
    return [this](const PyramidLatent& z, double t) {
      const Eigen::Matrix2d m = (1.0 - t) * Eigen::Matrix2d::Identity() + t * a;
      const Eigen::Matrix2d minv = m.inverse();
      PyramidLatent v = PyramidLatent::zeros_like(z);
      const auto& x = z.levels[0];
      for (std::int64_t n = 0; n < x.dim(0); ++n) {
        const Eigen::Vector2d p(x[2 * n], x[2 * n + 1]);
        const Eigen::Vector2d z0 = minv * (p - t * mu);
        const Eigen::Vector2d vel = mu + (a - Eigen::Matrix2d::Identity()) * z0;
        v.levels[0][2 * n] = vel(0);
        v.levels[0][2 * n + 1] = vel(1);
      }
      return v;
    };
  }
};

inline void moments(const Tensor& x, Eigen::Vector2d& mean, Eigen::Matrix2d& cov) {
  const std::int64_t n = x.dim(0);
  mean.setZero();
  for (std::int64_t i = 0; i < n; ++i) mean += Eigen::Vector2d(x[2 * i], x[2 * i + 1]);
  mean /= static_cast<double>(n);
  cov.setZero();
  for (std::int64_t i = 0; i < n; ++i) {
    const Eigen::Vector2d d = Eigen::Vector2d(x[2 * i], x[2 * i + 1]) - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(n - 1);
}

}  // namespace pdm::testing
