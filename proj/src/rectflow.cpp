#include "pdm/rectflow.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "pdm/error.hpp"

namespace pdm {

namespace {

constexpr std::uint64_t kNoiseTag = 0x2e0;
constexpr std::uint64_t kTimeTag = 0x71e;
constexpr std::uint64_t kEncodeTag = 0xe2c;
constexpr std::uint64_t kDropoutTag = 0xd20;

std::vector<std::uint64_t> keys_with_tag(const std::vector<std::uint64_t>& keys, std::uint64_t tag) {
  std::vector<std::uint64_t> out;
  for (auto k : keys) out.push_back(derive_key(k, tag));
  return out;
}

Tensor images_slice(const Tensor& images, std::int64_t begin, std::int64_t end) {
  return images.batch_slice(begin, end);
}

void check_finite_loss(double loss, const std::vector<double>& per_level, std::int64_t step, const char* what) {
  if (std::isfinite(loss)) return;
  nlohmann::json d;
  d["stage"] = what;
  d["step"] = step;
  d["loss"] = std::isnan(loss) ? "nan" : "inf";
  d["per_level"] = nlohmann::json::array();
  for (double v : per_level) d["per_level"].push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("non-finite"));
  throw TrainingError(std::string(what) + ": non-finite loss at step " + std::to_string(step), d.dump());
}

}  // namespace

PyramidLatent interpolate(const PyramidLatent& z0, const PyramidLatent& z1, const std::vector<double>& t) {
  z0.check_compatible(z1);
  const std::int64_t batch = z0.batch();
  if (static_cast<std::int64_t>(t.size()) != batch)
    throw InvalidArgument("interpolate: need one time value per batch element");
  for (double ti : t)
    if (!(ti >= 0.0 && ti <= 1.0)) throw InvalidArgument("interpolate: time must lie in [0, 1]");
  PyramidLatent out = PyramidLatent::zeros_like(z0);
  for (std::size_t i = 0; i < z0.levels.size(); ++i) {
    const std::int64_t per = z0.levels[i].numel() / batch;
    for (std::int64_t n = 0; n < batch; ++n) {
      const double tn = t[static_cast<std::size_t>(n)];
      for (std::int64_t k = n * per; k < (n + 1) * per; ++k)
        out.levels[i][k] = tn * z1.levels[i][k] + (1.0 - tn) * z0.levels[i][k];
    }
  }
  return out;
}

FlowBatch make_flow_batch(PyramidLatent z0, PyramidLatent z1, std::vector<double> t) {
  FlowBatch b;
  b.zt = interpolate(z0, z1, t);
  b.z0 = std::move(z0);
  b.z1 = std::move(z1);
  b.t = std::move(t);
  return b;
}

PdmLoss pdm_loss(const PyramidLatent& velocity, const PyramidLatent& z0, const PyramidLatent& z1) {
  velocity.check_compatible(z0);
  z0.check_compatible(z1);
  PdmLoss out;
  for (std::size_t i = 0; i < z0.levels.size(); ++i) {
    double sq = 0.0;
    const auto& v = velocity.levels[i];
    for (std::int64_t k = 0; k < v.numel(); ++k) {
      const double d = z1.levels[i][k] - z0.levels[i][k] - v[k];
      sq += d * d;
    }
    out.per_level.push_back(sq / static_cast<double>(v.numel()));
    out.total += out.per_level.back();
  }
  return out;
}

Var pdm_loss(const std::vector<Var>& velocity, const PyramidLatent& z0, const PyramidLatent& z1,
             std::vector<double>* per_level) {
  z0.check_compatible(z1);
  if (velocity.size() != z0.levels.size()) throw InvalidArgument("pdm_loss: level count mismatch");
  Var total;
  if (per_level) per_level->clear();
  for (std::size_t i = 0; i < velocity.size(); ++i) {
    if (velocity[i].shape() != z0.levels[i].shape()) throw InvalidArgument("pdm_loss: level shape mismatch");
    Var target = Var::constant(z1.levels[i] - z0.levels[i]);
    Var l = ag::mean(ag::square(ag::sub(target, velocity[i])));
    if (per_level) per_level->push_back(l.value()[0]);
    total = total.defined() ? ag::add(total, l) : l;
  }
  return total;
}

void validate_eps(double eps) {
  if (!(eps > 0.0 && eps < 0.1)) throw InvalidArgument("eps must lie in (0, 0.1), got " + std::to_string(eps));
}

double clamp_training_time(double raw) { return std::min(raw, 1.0); }

std::vector<double> sample_training_time(std::int64_t batch, double eps, Rng& rng) {
  validate_eps(eps);
  if (batch < 0) throw InvalidArgument("sample_training_time: negative batch");
  std::vector<double> t(static_cast<std::size_t>(batch));
  for (auto& x : t) x = clamp_training_time(rng.uniform(eps, 1.0 + eps));
  return t;
}

double tensor_std(const Tensor& t) {
  if (t.numel() == 0) throw InvalidArgument("tensor_std: empty tensor");
  const double n = static_cast<double>(t.numel());
  const double mean = t.sum() / n;
  double sq = 0.0;
  for (double v : t.values()) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / n);
}

LatentScaler::LatentScaler(std::int64_t num_levels, double ema_decay, std::int64_t calibration_iters)
    : per_level_std_(static_cast<std::size_t>(num_levels), 0.0),
      per_level_scale_(static_cast<std::size_t>(num_levels), 1.0),
      ema_decay_(ema_decay),
      calibration_iters_(calibration_iters) {
  if (num_levels < 1) throw InvalidArgument("LatentScaler: need at least one level");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw InvalidArgument("LatentScaler: ema_decay must lie in (0, 1)");
  if (calibration_iters < 1) throw InvalidArgument("LatentScaler: calibration_iters must be >= 1");
}

void LatentScaler::calibrate(const PyramidLatent& batch) {
  if (frozen_) throw StateError("scaler is frozen; calibration already completed");
  if (batch.num_levels() != num_levels())
    throw InvalidArgument("LatentScaler: expected " + std::to_string(num_levels()) + " levels");
  for (std::size_t i = 0; i < per_level_std_.size(); ++i) {
    const double s = tensor_std(batch.levels[i]);
    per_level_std_[i] = iterations_ == 0 ? s : ema_decay_ * per_level_std_[i] + (1.0 - ema_decay_) * s;
  }
  if (++iterations_ >= calibration_iters_) freeze();
}

void LatentScaler::freeze() {
  if (iterations_ == 0) throw StateError("scaler cannot freeze before any calibration batch");
  for (std::size_t i = 0; i < per_level_std_.size(); ++i)
    per_level_scale_[i] = per_level_std_[i] >= 1.0 ? 1.0 / per_level_std_[i] : 1.0;
  frozen_ = true;
}

PyramidLatent LatentScaler::apply(const PyramidLatent& latent) const {
  if (!frozen_) throw StateError("scaler not calibrated");
  if (latent.num_levels() != num_levels()) throw InvalidArgument("LatentScaler: level count mismatch");
  PyramidLatent out = latent;
  for (std::size_t i = 0; i < out.levels.size(); ++i)
    if (per_level_scale_[i] != 1.0) out.levels[i] *= per_level_scale_[i];
  return out;
}

PyramidLatent LatentScaler::unapply(const PyramidLatent& latent) const {
  if (!frozen_) throw StateError("scaler not calibrated");
  if (latent.num_levels() != num_levels()) throw InvalidArgument("LatentScaler: level count mismatch");
  PyramidLatent out = latent;
  for (std::size_t i = 0; i < out.levels.size(); ++i)
    if (per_level_scale_[i] != 1.0)
      for (auto& v : out.levels[i].values()) v /= per_level_scale_[i];
  return out;
}

LatentScaler LatentScaler::restore(std::vector<double> stds, std::vector<double> scales, double ema_decay,
                                   std::int64_t calibration_iters, std::int64_t iterations, bool frozen) {
  LatentScaler s(static_cast<std::int64_t>(stds.size()), ema_decay, calibration_iters);
  if (scales.size() != stds.size()) throw InvalidArgument("LatentScaler: inconsistent serialized state");
  s.per_level_std_ = std::move(stds);
  s.per_level_scale_ = std::move(scales);
  s.iterations_ = iterations;
  s.frozen_ = frozen;
  return s;
}

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (grad_accum < 1) throw InvalidArgument("grad_accum must be >= 1");
  if (batch_size % grad_accum) throw InvalidArgument("batch_size must be divisible by grad_accum");
  validate_eps(eps);
}

std::uint64_t sample_key(std::uint64_t seed, std::int64_t step, std::int64_t index) {
  return derive_key(seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(index));
}

AutoencoderTrainer::AutoencoderTrainer(PyramidAutoencoder& model, TrainConfig config)
    : model_(model), config_(std::move(config)), adam_(config_.adam) {
  config_.validate();
}

StepResult AutoencoderTrainer::train_step(const Tensor& images) {
  const std::int64_t batch = images.dim(0);
  if (batch % config_.grad_accum)
    throw InvalidArgument("batch of " + std::to_string(batch) + " is not divisible by grad_accum");
  const std::int64_t micro = batch / config_.grad_accum;
  ParamList params = model_.parameters();
  params.zero_grad();
  StepResult r;
  r.step = step_;
  const double weight = 1.0 / static_cast<double>(config_.grad_accum);
  for (std::int64_t j = 0; j < config_.grad_accum; ++j) {
    ForwardContext ctx;
    ctx.training = true;
    for (std::int64_t n = j * micro; n < (j + 1) * micro; ++n)
      ctx.sample_keys.push_back(sample_key(config_.seed, step_, n));
    Var x = Var::constant(images_slice(images, j * micro, (j + 1) * micro));
    auto enc = model_.encode(x, ctx, config_.stochastic_encode ? EncodeMode::sample : EncodeMode::deterministic);
    Var xh = model_.decode(enc.latents, ctx);
    Var loss = reconstruction_loss(x, xh, enc.means, enc.logvars, model_.config().kl_weight);
    r.loss += weight * loss.value()[0];
    check_finite_loss(loss.value()[0], {}, step_, "train-ae");
    backward(ag::scale(loss, weight));
  }
  r.grad_norm = adam_.step(params);
  r.lr = config_.adam.lr;
  model_.power_iterate(1);
  ++step_;
  return r;
}

DiffusionTrainer::DiffusionTrainer(const PyramidAutoencoder& autoencoder, PyramidUNet& unet,
                                   const LatentScaler& scaler, TrainConfig config)
    : ae_(autoencoder), unet_(unet), scaler_(scaler), config_(std::move(config)), adam_(config_.adam) {
  config_.validate();
  if (!scaler_.frozen()) throw StateError("scaler not calibrated");
  if (!(ae_.spec() == unet_.spec())) throw InvalidArgument("autoencoder and U-Net pyramid specs differ");
}

FlowBatch DiffusionTrainer::prepare(const Tensor& images, const std::vector<std::uint64_t>& keys) const {
  const std::int64_t batch = images.dim(0);
  if (static_cast<std::int64_t>(keys.size()) != batch) throw InvalidArgument("prepare: one key per image required");
  PyramidLatent z1;
  {
    NoGradGuard guard;
    ForwardContext ctx;
    ctx.sample_keys = keys_with_tag(keys, kEncodeTag);
    auto enc = ae_.encode(Var::constant(images), ctx,
                          config_.stochastic_encode ? EncodeMode::sample : EncodeMode::deterministic);
    for (const auto& l : enc.latents) z1.levels.push_back(l.value());
  }
  z1 = scaler_.apply(z1);
  PyramidLatent z0 = PyramidLatent::zeros_like(z1);
  std::vector<double> t(static_cast<std::size_t>(batch));
  for (std::int64_t n = 0; n < batch; ++n) {
    const auto key = keys[static_cast<std::size_t>(n)];
    for (std::size_t i = 0; i < z0.levels.size(); ++i) {
      Rng r(derive_key(key, kNoiseTag, i));
      const std::int64_t per = z0.levels[i].numel() / batch;
      for (std::int64_t k = n * per; k < (n + 1) * per; ++k) z0.levels[i][k] = r.normal();
    }
    Rng rt(derive_key(key, kTimeTag));
    t[static_cast<std::size_t>(n)] = sample_training_time(1, config_.eps, rt)[0];
  }
  return make_flow_batch(std::move(z0), std::move(z1), std::move(t));
}

StepResult DiffusionTrainer::train_step(const Tensor& images) {
  if (!scaler_.frozen()) throw StateError("scaler not calibrated");
  const std::int64_t batch = images.dim(0);
  if (batch % config_.grad_accum)
    throw InvalidArgument("batch of " + std::to_string(batch) + " is not divisible by grad_accum");
  const std::int64_t micro = batch / config_.grad_accum;
  ParamList params = unet_.parameters();
  params.zero_grad();
  StepResult r;
  r.step = step_;
  r.per_level.assign(static_cast<std::size_t>(unet_.spec().num_levels()), 0.0);
  const double weight = 1.0 / static_cast<double>(config_.grad_accum);
  for (std::int64_t j = 0; j < config_.grad_accum; ++j) {
    std::vector<std::uint64_t> keys;
    for (std::int64_t n = j * micro; n < (j + 1) * micro; ++n) keys.push_back(sample_key(config_.seed, step_, n));
    FlowBatch fb = prepare(images_slice(images, j * micro, (j + 1) * micro), keys);
    ForwardContext ctx;
    ctx.training = true;
    ctx.sample_keys = keys_with_tag(keys, kDropoutTag);
    std::vector<Var> zt;
    for (const auto& l : fb.zt.levels) zt.push_back(Var::constant(l));
    std::vector<double> per_level;
    Var loss = pdm_loss(unet_.forward(zt, fb.t, ctx), fb.z0, fb.z1, &per_level);
    check_finite_loss(loss.value()[0], per_level, step_, "train-dm");
    r.loss += weight * loss.value()[0];
    for (std::size_t i = 0; i < per_level.size(); ++i) r.per_level[i] += weight * per_level[i];
    backward(ag::scale(loss, weight));
  }
  r.grad_norm = adam_.step(params);
  r.lr = config_.adam.lr;
  unet_.power_iterate(1);
  ++step_;
  return r;
}

PdmLoss DiffusionTrainer::evaluate(const Tensor& images, std::uint64_t eval_seed) const {
  std::vector<std::uint64_t> keys;
  for (std::int64_t n = 0; n < images.dim(0); ++n) keys.push_back(sample_key(eval_seed, -1, n));
  FlowBatch fb = prepare(images, keys);
  return pdm_loss(unet_.forward(fb.zt, fb.t), fb.z0, fb.z1);
}

std::string metrics_record(const StepResult& r, double wall_time) {
  nlohmann::json j;
  j["step"] = r.step;
  j["loss"] = r.loss;
  j["per_level_loss"] = r.per_level;
  j["lr"] = r.lr;
  j["grad_norm"] = r.grad_norm;
  j["wall_time"] = wall_time;
  return j.dump();
}

}  // namespace pdm
