#pragma once

// Rectified-flow training: straight-line interpolants between noise and
// data latents, the per-level velocity loss, boundary-extended time
// sampling, latent rescaling and the two training loops.

#include <functional>
#include <string>
#include <vector>

#include "pdm/autoencoder.hpp"
#include "pdm/optim.hpp"
#include "pdm/unet.hpp"

namespace pdm {

struct FlowBatch {
  PyramidLatent z0;
  PyramidLatent z1;
  std::vector<double> t;
  PyramidLatent zt;
};

/// Per level and batch element: t * z1 + (1 - t) * z0.
PyramidLatent interpolate(const PyramidLatent& z0, const PyramidLatent& z1, const std::vector<double>& t);
FlowBatch make_flow_batch(PyramidLatent z0, PyramidLatent z1, std::vector<double> t);

struct PdmLoss {
  double total = 0.0;
  std::vector<double> per_level;
};

/// sum_i mean((z1_i - z0_i - v_i)^2).
PdmLoss pdm_loss(const PyramidLatent& velocity, const PyramidLatent& z0, const PyramidLatent& z1);
/// Graph form; per-level terms are returned through `per_level` if given.
Var pdm_loss(const std::vector<Var>& velocity, const PyramidLatent& z0, const PyramidLatent& z1,
             std::vector<double>* per_level = nullptr);

/// Uniform on [eps, 1 + eps], clamped to at most 1.
std::vector<double> sample_training_time(std::int64_t batch, double eps, Rng& rng);
double clamp_training_time(double raw);
void validate_eps(double eps);

class LatentScaler {
 public:
  LatentScaler() = default;
  LatentScaler(std::int64_t num_levels, double ema_decay = 0.99, std::int64_t calibration_iters = 100);

  /// One EMA update from a batch; the first call initializes the EMA. Freezes
  /// after calibration_iters calls.
  void calibrate(const PyramidLatent& batch);
  void freeze();

  PyramidLatent apply(const PyramidLatent& latent) const;
  PyramidLatent unapply(const PyramidLatent& latent) const;

  bool frozen() const { return frozen_; }
  std::int64_t num_levels() const { return static_cast<std::int64_t>(per_level_std_.size()); }
  std::int64_t iterations() const { return iterations_; }
  std::int64_t calibration_iters() const { return calibration_iters_; }
  double ema_decay() const { return ema_decay_; }
  const std::vector<double>& per_level_std() const { return per_level_std_; }
  const std::vector<double>& per_level_scale() const { return per_level_scale_; }

  /// Restores a serialized state verbatim.
  static LatentScaler restore(std::vector<double> stds, std::vector<double> scales, double ema_decay,
                              std::int64_t calibration_iters, std::int64_t iterations, bool frozen);

 private:
  std::vector<double> per_level_std_;
  std::vector<double> per_level_scale_;
  double ema_decay_ = 0.99;
  std::int64_t calibration_iters_ = 100;
  std::int64_t iterations_ = 0;
  bool frozen_ = false;
};

/// Population standard deviation over every element of a tensor.
double tensor_std(const Tensor& t);

struct TrainConfig {
  AdamConfig adam;
  std::int64_t batch_size = 16;
  std::int64_t grad_accum = 1;  // micro-batches per optimizer step
  double eps = 1e-3;
  bool stochastic_encode = true;
  std::uint64_t seed = 0;

  void validate() const;
};

struct StepResult {
  std::int64_t step = 0;
  double loss = 0.0;
  std::vector<double> per_level;
  double lr = 0.0;
  double grad_norm = 0.0;
};

/// Per-sample key for step `step` and global batch position `index`. Every
/// random draw a sample sees derives from it, so splitting a batch into
/// micro-batches does not change the randomness.
std::uint64_t sample_key(std::uint64_t seed, std::int64_t step, std::int64_t index);

class AutoencoderTrainer {
 public:
  AutoencoderTrainer(PyramidAutoencoder& model, TrainConfig config);

  /// One optimizer step on `images` (batch must be divisible by grad_accum).
  StepResult train_step(const Tensor& images);
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }
  Adam& optimizer() { return adam_; }

 private:
  PyramidAutoencoder& model_;
  TrainConfig config_;
  Adam adam_;
  std::int64_t step_ = 0;
};

class DiffusionTrainer {
 public:
  DiffusionTrainer(const PyramidAutoencoder& autoencoder, PyramidUNet& unet, const LatentScaler& scaler,
                   TrainConfig config);

  StepResult train_step(const Tensor& images);
  /// Loss on a fixed draw of noise and times (no update, dropout off).
  PdmLoss evaluate(const Tensor& images, std::uint64_t eval_seed) const;

  /// Encodes and scales `images`, then builds the flow batch for `keys`.
  FlowBatch prepare(const Tensor& images, const std::vector<std::uint64_t>& keys) const;

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }
  Adam& optimizer() { return adam_; }

 private:
  const PyramidAutoencoder& ae_;
  PyramidUNet& unet_;
  const LatentScaler& scaler_;
  TrainConfig config_;
  Adam adam_;
  std::int64_t step_ = 0;
};

/// One JSONL metrics record.
std::string metrics_record(const StepResult& r, double wall_time);

}  // namespace pdm
