#include "pdm/layers.hpp"

#include <cmath>

#include "pdm/error.hpp"

namespace pdm {

namespace {

constexpr int kWarmupIterations = 20;

double normalize_in_place(Tensor& t, double eps) {
  const double n = std::sqrt(t.squared_norm());
  if (n > eps) t *= 1.0 / n;
  return n;
}

}  // namespace

SpectralNormState make_spectral_state(std::int64_t rows, std::int64_t cols, Rng& rng) {
  if (rows < 1 || cols < 1) throw InvalidArgument("spectral norm needs a non-empty matrix");
  SpectralNormState s;
  s.u = rng.normal_tensor({rows});
  s.v = rng.normal_tensor({cols});
  normalize_in_place(s.u, 0.0);
  normalize_in_place(s.v, 0.0);
  return s;
}

double power_iterate(const Tensor& weight, SpectralNormState& state, int iterations) {
  const std::int64_t rows = state.u.numel();
  const std::int64_t cols = state.v.numel();
  if (rows * cols != weight.numel())
    throw InvalidArgument("spectral norm state " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " does not match weight " + shape_string(weight.shape()));
  const double* w = weight.data();
  Tensor wv({rows});
  for (int it = 0; it < iterations; ++it) {
    Tensor v({cols});
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < cols; ++j) v[j] += w[i * cols + j] * state.u[i];
    if (normalize_in_place(v, state.eps_division_guard) > state.eps_division_guard) state.v = std::move(v);
    Tensor u({rows});
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < cols; ++j) u[i] += w[i * cols + j] * state.v[j];
    if (normalize_in_place(u, state.eps_division_guard) > state.eps_division_guard) state.u = std::move(u);
  }
  double sigma = 0.0;
  for (std::int64_t i = 0; i < rows; ++i) {
    double r = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) r += w[i * cols + j] * state.v[j];
    sigma += state.u[i] * r;
  }
  return sigma;
}

SpectralNormResult spectral_normalize(const Tensor& weight, SpectralNormState& state) {
  if (weight.numel() == 0) throw InvalidArgument("spectral_normalize: empty weight");
  const double sigma = power_iterate(weight, state, state.power_iterations_per_step);
  SpectralNormResult r;
  r.sigma = sigma;
  r.degenerate = !(std::abs(sigma) > state.eps_division_guard);
  state.degenerate = r.degenerate;
  if (r.degenerate) ++state.warning_count;
  r.weight = weight;
  r.weight *= 1.0 / (r.degenerate ? state.eps_division_guard : sigma);
  if (r.degenerate) r.weight.fill(0.0);
  return r;
}

void ParamList::zero_grad() {
  for (auto& [name, v] : params) v->zero_grad();
}

std::int64_t ParamList::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, v] : params) n += v->value().numel();
  return n;
}

std::uint64_t ForwardContext::sample_key(std::int64_t n) const {
  if (n < static_cast<std::int64_t>(sample_keys.size())) return sample_keys[static_cast<std::size_t>(n)];
  return derive_key(0x5eed, static_cast<std::uint64_t>(n));
}

Var dropout(const Var& x, double rate, ForwardContext& ctx, std::int64_t level, const char* site) {
  if (rate < 0.0 || rate >= 1.0) throw InvalidArgument("dropout rate must lie in [0, 1)");
  const std::uint64_t op = ctx.next_op();
  if (!ctx.training) return x;
  if (ctx.dropout_probe) ctx.dropout_probe->push_back({site, x.value().rank() == 4 ? x.dim(2) : 0, level, rate});
  if (rate == 0.0) return x;
  const std::int64_t batch = x.dim(0);
  const std::int64_t per = x.value().numel() / batch;
  Tensor mask(x.shape());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::int64_t n = 0; n < batch; ++n) {
    Rng r(derive_key(ctx.sample_key(n), op, 0xd50f));
    for (std::int64_t i = 0; i < per; ++i) mask[n * per + i] = r.uniform() < rate ? 0.0 : keep_scale;
  }
  return ag::mul(x, Var::constant(std::move(mask)));
}

Var activate(const Var& x, Activation act) {
  switch (act) {
    case Activation::relu:
      return ag::relu(x);
    case Activation::silu:
    default:
      return ag::silu(x);
  }
}

Activation parse_activation(const std::string& name) {
  if (name == "silu") return Activation::silu;
  if (name == "relu") return Activation::relu;
  throw InvalidArgument("unknown activation '" + name + "' (expected silu or relu)");
}

std::string activation_name(Activation act) { return act == Activation::relu ? "relu" : "silu"; }

Conv2d::Conv2d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, Rng& rng, Init init,
               bool spectral, double gain) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || kernel % 2 == 0)
    throw InvalidArgument("Conv2d: invalid geometry");
  const Shape ws{out_channels, in_channels, kernel, kernel};
  const double std = gain / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  weight = Var::leaf(init == Init::zero ? Tensor(ws) : rng.normal_tensor(ws, std));
  bias = Var::leaf(Tensor({out_channels}));
  if (spectral) {
    sn = make_spectral_state(out_channels, in_channels * kernel * kernel, rng);
    pdm::power_iterate(weight.value(), *sn, kWarmupIterations);
  }
}

Var Conv2d::effective_weight() const {
  if (!sn) return weight;
  return ag::spectral_divide(weight, sn->u, sn->v, sn->eps_division_guard);
}

Var Conv2d::forward(const Var& x) const { return ag::conv2d(x, effective_weight(), bias); }

void Conv2d::power_iterate(int iterations) {
  if (sn) pdm::power_iterate(weight.value(), *sn, iterations);
}

void Conv2d::collect(ParamList& out, const std::string& prefix) {
  out.params.emplace_back(prefix + ".weight", &weight);
  out.params.emplace_back(prefix + ".bias", &bias);
  if (sn) {
    out.buffers.emplace_back(prefix + ".sn_u", &sn->u);
    out.buffers.emplace_back(prefix + ".sn_v", &sn->v);
    out.spectral.push_back({prefix + ".weight", &weight, &*sn});
  }
}

Linear::Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng, Init init, bool spectral) {
  const Shape ws{out_features, in_features};
  weight = Var::leaf(init == Init::zero ? Tensor(ws)
                                        : rng.normal_tensor(ws, 1.0 / std::sqrt(static_cast<double>(in_features))));
  bias = Var::leaf(Tensor({1, out_features}));
  if (spectral) {
    sn = make_spectral_state(out_features, in_features, rng);
    pdm::power_iterate(weight.value(), *sn, kWarmupIterations);
  }
}

Var Linear::forward(const Var& x) const {
  Var w = sn ? ag::spectral_divide(weight, sn->u, sn->v, sn->eps_division_guard) : weight;
  return ag::add_bcast(ag::matmul(x, w, false, true), bias);
}

void Linear::power_iterate(int iterations) {
  if (sn) pdm::power_iterate(weight.value(), *sn, iterations);
}

void Linear::collect(ParamList& out, const std::string& prefix) {
  out.params.emplace_back(prefix + ".weight", &weight);
  out.params.emplace_back(prefix + ".bias", &bias);
  if (sn) {
    out.buffers.emplace_back(prefix + ".sn_u", &sn->u);
    out.buffers.emplace_back(prefix + ".sn_v", &sn->v);
    out.spectral.push_back({prefix + ".weight", &weight, &*sn});
  }
}

std::int64_t default_groups(std::int64_t channels) {
  std::int64_t g = std::min<std::int64_t>(32, std::max<std::int64_t>(1, channels / 4));
  while (channels % g) --g;
  return g;
}

GroupNorm::GroupNorm(std::int64_t channels, double eps_) : groups(default_groups(channels)), eps(eps_) {
  gamma = Var::leaf(Tensor({1, channels, 1, 1}, 1.0));
  beta = Var::leaf(Tensor({1, channels, 1, 1}, 0.0));
}

Var GroupNorm::forward(const Var& x) const {
  return ag::add_bcast(ag::mul_bcast(ag::group_norm(x, groups, eps), gamma), beta);
}

Var GroupNorm::forward(const Var& x, const Var& scale, const Var& shift) const {
  Var y = forward(x);
  return ag::add_bcast(ag::add(y, ag::mul_bcast(y, scale)), shift);
}

void GroupNorm::collect(ParamList& out, const std::string& prefix) {
  out.params.emplace_back(prefix + ".gamma", &gamma);
  out.params.emplace_back(prefix + ".beta", &beta);
}

}  // namespace pdm
