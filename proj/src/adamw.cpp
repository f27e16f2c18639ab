#include "fedunlearn/adamw.hpp"

#include <cmath>

#include "fedunlearn/errors.hpp"

namespace fedunlearn {

void AdamWConfig::validate() const {
  if (!std::isfinite(lr) || lr < 0.0) throw ArgumentError("adamw: lr must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ArgumentError("adamw: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ArgumentError("adamw: beta2 must be in [0, 1)");
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ArgumentError("adamw: eps must be positive");
  if (!std::isfinite(weight_decay) || weight_decay < 0.0) {
    throw ArgumentError("adamw: weight_decay must be finite and >= 0");
  }
}

AdamWState AdamWState::init(std::size_t d, const AdamWConfig& cfg) {
  cfg.validate();
  AdamWState s;
  s.first_moment = ParamVector::zeros(d);
  s.second_moment = ParamVector::zeros(d);
  s.lr = cfg.lr;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.eps = cfg.eps;
  s.weight_decay = cfg.weight_decay;
  return s;
}

AdamWStep adamw_step(const AdamWState& state, const ParamVector& theta, const ParamVector& grad) {
  const std::size_t d = theta.size();
  if (grad.size() != d || state.first_moment.size() != d || state.second_moment.size() != d) {
    throw DimensionError("adamw_step: theta, grad and moments must share one length");
  }
  if (!std::isfinite(state.lr) || state.lr < 0.0) throw ArgumentError("adamw_step: invalid lr");
  for (double g : grad.values()) {
    if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient");
  }

  const std::uint64_t t = state.step_count + 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bias2_sqrt = std::sqrt(1.0 - std::pow(b2, static_cast<double>(t)));
  const double step = state.lr / bias1;
  const double decay = 1.0 - state.lr * state.weight_decay;

  std::vector<double> m(state.first_moment.raw());
  std::vector<double> v(state.second_moment.raw());
  std::vector<double> out(theta.raw());
  for (std::size_t i = 0; i < d; ++i) {
    const double g = grad[i];
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    if (state.weight_decay != 0.0) out[i] *= decay;
    const double denom = std::sqrt(v[i]) / bias2_sqrt + state.eps;
    out[i] -= step * m[i] / denom;
  }

  AdamWStep result{ParamVector(std::move(out)), state};
  result.state.first_moment = ParamVector(std::move(m));
  result.state.second_moment = ParamVector(std::move(v));
  result.state.step_count = t;
  return result;
}

}  // namespace fedunlearn
