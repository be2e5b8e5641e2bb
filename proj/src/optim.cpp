#include "pdm/optim.hpp"

#include <cmath>

#include "pdm/error.hpp"

namespace pdm {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw InvalidArgument("Adam eps must be positive");
}

double global_grad_norm(const ParamList& params) {
  double sq = 0.0;
  for (const auto& [name, p] : params.params) sq += p->grad().squared_norm();
  return std::sqrt(sq);
}

void Adam::init_state(const ParamList& params) {
  for (const auto& [name, p] : params.params) {
    if (!m_.count(name)) m_.emplace(name, Tensor(p->shape()));
    if (!v_.count(name)) v_.emplace(name, Tensor(p->shape()));
  }
}

double Adam::step(ParamList& params) {
  init_state(params);
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw InvalidArgument("Adam: non-finite gradient norm");
  const double clip = config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
  ++steps_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (auto& [name, p] : params.params) {
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    const Tensor& g = p->grad();
    Tensor& w = p->mutable_value();
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i] * clip;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      w[i] -= config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
    }
  }
  return norm;
}

std::vector<std::pair<std::string, Tensor*>> Adam::state_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : m_) out.emplace_back(name + ".m", &t);
  for (auto& [name, t] : v_) out.emplace_back(name + ".v", &t);
  return out;
}

}  // namespace pdm
