#pragma once

#include <cstddef>
#include <cstdint>

#include "fedunlearn/param_space.hpp"

namespace fedunlearn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

struct AdamWState {
  ParamVector first_moment;
  ParamVector second_moment;
  std::uint64_t step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  static AdamWState init(std::size_t d, const AdamWConfig& cfg);
};

struct AdamWStep {
  ParamVector theta;
  AdamWState state;
};

/// One AdamW update with decoupled weight decay and bias correction:
///   theta <- theta * (1 - lr * wd)
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// A zero learning rate leaves theta and the moments' effect unchanged.
AdamWStep adamw_step(const AdamWState& state, const ParamVector& theta, const ParamVector& grad);

}  // namespace fedunlearn
