#include "pdm/sampler.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "pdm/error.hpp"

namespace pdm {

namespace {

void check_state(const PyramidLatent& z, double t) {
  if (!z.all_finite())
    throw IntegrationError("non-finite state at t = " + std::to_string(t), t);
}

PyramidLatent eval_field(const VelocityField& v, const PyramidLatent& z, double t) {
  PyramidLatent out = v(z, t);
  z.check_compatible(out);
  if (!out.all_finite()) throw IntegrationError("non-finite velocity at t = " + std::to_string(t), t);
  return out;
}

// Dormand-Prince tableau
constexpr std::array<double, 7> kC = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr std::array<double, 7> kB5 = {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0.0};
constexpr std::array<double, 7> kB4 = {5179.0 / 57600, 0.0,           7571.0 / 16695, 393.0 / 640,
                                       -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};

constexpr double kSafety = 0.9;
constexpr double kBeta = 0.04;
constexpr double kAlpha = 0.2 - 0.75 * kBeta;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;

}  // namespace

SolverMethod parse_solver(const std::string& name) {
  if (name == "euler") return SolverMethod::euler;
  if (name == "rk45") return SolverMethod::rk45;
  throw InvalidArgument("unknown solver '" + name + "' (expected euler or rk45)");
}

std::string solver_name(SolverMethod m) { return m == SolverMethod::rk45 ? "rk45" : "euler"; }

void SamplerConfig::validate() const {
  if (steps < 1) throw InvalidArgument("sampler steps must be >= 1");
  validate_eps(eps);
  if (!(rtol > 0.0) || !(atol > 0.0)) throw InvalidArgument("sampler tolerances must be positive");
  if (max_steps < 1) throw InvalidArgument("sampler max_steps must be >= 1");
}

PyramidLatent euler_sample(const VelocityField& v, const PyramidLatent& z_init, const SamplerConfig& cfg) {
  cfg.validate();
  check_state(z_init, cfg.eps);
  const double h = (1.0 - cfg.eps) / static_cast<double>(cfg.steps);
  PyramidLatent z = z_init;
  for (std::int64_t k = 0; k < cfg.steps; ++k) {
    const double t = cfg.eps + static_cast<double>(k) * h;
    z.axpy(h, eval_field(v, z, t));
    check_state(z, t + h);
  }
  return z;
}

SampleResult rk45_sample(const VelocityField& v, const PyramidLatent& z_init, const SamplerConfig& cfg) {
  cfg.validate();
  check_state(z_init, cfg.eps);
  SampleResult res;
  PyramidLatent z = z_init;
  double t = cfg.eps;
  double h = (1.0 - cfg.eps) / 100.0;
  double err_prev = 1e-4;
  const double h_min = 1e-12;

  std::array<PyramidLatent, 7> k;
  k[0] = eval_field(v, z, t);
  ++res.n_evals;
  std::int64_t attempts = 0;
  while (t < 1.0) {
    if (++attempts > cfg.max_steps) throw IntegrationError("rk45: step budget exhausted", t);
    const bool last = t + h >= 1.0;
    if (last) h = 1.0 - t;
    for (int s = 1; s < 7; ++s) {
      PyramidLatent zs = z;
      for (int j = 0; j < s; ++j)
        if (kA[s][j] != 0.0) zs.axpy(h * kA[s][j], k[static_cast<std::size_t>(j)]);
      const double ts = last && kC[static_cast<std::size_t>(s)] == 1.0 ? 1.0 : std::min(1.0, t + kC[static_cast<std::size_t>(s)] * h);
      if (s == 6) {
        k[6] = eval_field(v, zs, ts);
        ++res.n_evals;
        // stage 6 is the 5th-order solution itself
        double sq = 0.0;
        std::int64_t count = 0;
        for (std::size_t l = 0; l < z.levels.size(); ++l) {
          const auto& y0 = z.levels[l];
          const auto& y1 = zs.levels[l];
          for (std::int64_t e = 0; e < y0.numel(); ++e) {
            double d = 0.0;
            for (std::size_t j = 0; j < 7; ++j) d += (kB5[j] - kB4[j]) * k[j].levels[l][e];
            d *= h;
            const double sc = cfg.atol + cfg.rtol * std::max(std::abs(y0[e]), std::abs(y1[e]));
            sq += (d / sc) * (d / sc);
            ++count;
          }
        }
        const double err = std::sqrt(sq / static_cast<double>(std::max<std::int64_t>(count, 1)));
        if (!std::isfinite(err)) throw IntegrationError("rk45: non-finite error estimate", t);
        if (err <= 1.0) {
          t = last ? 1.0 : t + h;
          z = std::move(zs);
          check_state(z, t);
          k[0] = k[6];
          const double factor = err == 0.0 ? kMaxFactor
                                           : std::clamp(kSafety * std::pow(err, -kAlpha) * std::pow(err_prev, kBeta),
                                                        kMinFactor, kMaxFactor);
          err_prev = std::max(err, 1e-4);
          h *= factor;
        } else {
          h *= std::max(kMinFactor, kSafety * std::pow(err, -kAlpha));
        }
        if (t < 1.0 && h < h_min) throw IntegrationError("rk45: step size underflow", t);
        break;
      }
      k[static_cast<std::size_t>(s)] = eval_field(v, zs, ts);
      ++res.n_evals;
    }
  }
  res.z = std::move(z);
  return res;
}

SampleResult integrate(const VelocityField& v, const PyramidLatent& z_init, const SamplerConfig& cfg) {
  if (cfg.method == SolverMethod::rk45) return rk45_sample(v, z_init, cfg);
  SampleResult r;
  r.z = euler_sample(v, z_init, cfg);
  r.n_evals = cfg.steps;
  return r;
}

GeneratedImages generate(const PyramidUNet& unet, const PyramidAutoencoder& ae, const LatentScaler& scaler,
                         const SamplerConfig& cfg, std::int64_t n_images) {
  cfg.validate();
  if (n_images < 1) throw InvalidArgument("generate: n_images must be >= 1");
  if (!scaler.frozen()) throw StateError("scaler not calibrated");
  const auto& spec = unet.spec();
  PyramidLatent z = PyramidLatent::zeros(spec, n_images);
  Rng rng(derive_key(cfg.seed, 0x9e2));
  for (auto& l : z.levels)
    for (auto& x : l.values()) x = rng.normal();
  VelocityField field = [&](const PyramidLatent& zz, double t) {
    return unet.forward(zz, std::vector<double>(static_cast<std::size_t>(n_images), t));
  };
  SampleResult r = integrate(field, z, cfg);
  GeneratedImages out;
  out.images = ae.decode(scaler.unapply(r.z));
  out.n_evals = r.n_evals;
  return out;
}

}  // namespace pdm
