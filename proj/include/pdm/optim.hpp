#pragma once

#include <map>
#include <string>

#include "pdm/layers.hpp"

namespace pdm {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping

  void validate() const;
};

/// Adam with global gradient-norm clipping. Moments are keyed by parameter
/// name so the state survives a checkpoint round trip.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) { config_.validate(); }

  /// Applies one update from the accumulated gradients; returns the
  /// pre-clipping global gradient norm. Gradients are left untouched.
  double step(ParamList& params);

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }

  /// Moment tensors as named entries ("<param>.m", "<param>.v").
  std::vector<std::pair<std::string, Tensor*>> state_tensors();
  void set_steps(std::int64_t s) { steps_ = s; }
  /// Creates zero moments for every parameter (so state_tensors() is complete).
  void init_state(const ParamList& params);

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

double global_grad_norm(const ParamList& params);

}  // namespace pdm
