#pragma once

#include <functional>
#include <string>

#include "pdm/autoencoder.hpp"
#include "pdm/rectflow.hpp"
#include "pdm/unet.hpp"

namespace pdm {

enum class SolverMethod { euler, rk45 };

SolverMethod parse_solver(const std::string& name);
std::string solver_name(SolverMethod m);

struct SamplerConfig {
  SolverMethod method = SolverMethod::euler;
  std::int64_t steps = 200;
  double rtol = 1e-5;
  double atol = 1e-5;
  double eps = 1e-3;
  std::uint64_t seed = 0;
  std::int64_t max_steps = 100000;  // RK45 accepted+rejected step budget

  void validate() const;
};

using VelocityField = std::function<PyramidLatent(const PyramidLatent& z, double t)>;

struct SampleResult {
  PyramidLatent z;
  std::int64_t n_evals = 0;
};

/// Left-endpoint Euler on `steps` uniform subintervals of [eps, 1].
PyramidLatent euler_sample(const VelocityField& v, const PyramidLatent& z_init, const SamplerConfig& cfg);
/// Dormand-Prince 5(4) with FSAL and a PI step-size controller over [eps, 1].
SampleResult rk45_sample(const VelocityField& v, const PyramidLatent& z_init, const SamplerConfig& cfg);
SampleResult integrate(const VelocityField& v, const PyramidLatent& z_init, const SamplerConfig& cfg);

struct GeneratedImages {
  Tensor images;  // (n, C, H, W) in [-1, 1]
  std::int64_t n_evals = 0;
};

/// z_init ~ N(0, I) per level, integrate the U-Net field, unscale, decode.
GeneratedImages generate(const PyramidUNet& unet, const PyramidAutoencoder& ae, const LatentScaler& scaler,
                         const SamplerConfig& cfg, std::int64_t n_images);

}  // namespace pdm
