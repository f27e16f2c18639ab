#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedunlearn/matrix.hpp"
#include "fedunlearn/param_space.hpp"

namespace fedunlearn {

enum class Activation { relu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Dense backbone followed by a single-layer classification head.
///
/// With no hidden layers and a trainable head the model is an affine map,
/// which is the configuration used for linearization exactness checks.
struct ModelSpec {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t num_classes = 10;
  Activation activation = Activation::tanh;
  bool head_frozen = true;

  std::size_t feature_dim() const noexcept;
  void validate() const;
};

ParamLayout param_layout(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

struct FrozenHead {
  Matrix weights;  // num_classes x feature_dim
  std::vector<double> bias;
};

struct Batch {
  Matrix inputs;  // n x input_dim
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Per-sample Jacobian of the logits, laid out [sample][class][param].
struct Jacobian {
  std::size_t samples = 0;
  std::size_t classes = 0;
  std::size_t params = 0;
  std::vector<double> data;

  double operator()(std::size_t s, std::size_t c, std::size_t i) const {
    return data[(s * classes + c) * params + i];
  }
};

Matrix forward(const ModelSpec& spec, const FrozenHead& head, const ParamVector& theta,
               const Batch& batch);
Matrix forward(const ModelSpec& spec, const FrozenHead& head, const ParamVector& theta,
               const Matrix& inputs);

/// Mean softmax cross-entropy and its gradient over the trainable parameters.
LossGrad loss_and_grad(const ModelSpec& spec, const FrozenHead& head, const ParamVector& theta,
                       const Batch& batch);

Jacobian jacobian_at(const ModelSpec& spec, const FrozenHead& head, const ParamVector& theta_0,
                     const Batch& batch);

/// First-order Taylor expansion around theta_0:
/// f(x; theta_0) + J(x; theta_0) * tau. The Jacobian-vector product is
/// evaluated in forward mode, so J is never materialized.
Matrix linearized_forward(const ModelSpec& spec, const FrozenHead& head,
                          const ParamVector& theta_0, const ParamVector& tau,
                          const Matrix& inputs);
Matrix linearized_forward(const ModelSpec& spec, const FrozenHead& head,
                          const ParamVector& theta_0, const TaskVector& tau, const Batch& batch);

/// Cross-entropy of the linearized logits; the gradient is taken with respect
/// to tau only (J^T dL/dlogits, with theta_0 and J held fixed).
LossGrad linearized_loss_and_grad(const ModelSpec& spec, const FrozenHead& head,
                                  const ParamVector& theta_0, const ParamVector& tau,
                                  const Batch& batch);
LossGrad linearized_loss_and_grad(const ModelSpec& spec, const FrozenHead& head,
                                  const ParamVector& theta_0, const TaskVector& tau,
                                  const Batch& batch);

double cross_entropy(const Matrix& logits, const std::vector<int>& labels);

// Xavier-uniform weights for tanh, He-uniform for relu; zero biases.
ParamVector init_parameters(const ModelSpec& spec, std::uint64_t seed);

/// Penultimate-layer features (the head's input) for every row of `inputs`.
Matrix features(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs);

/// Nearest-centroid head: row c is the mean feature of class c and the bias
/// is -|c|^2 / 2, so argmax logits picks the closest centroid.
FrozenHead centroid_head(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs,
                         const std::vector<int>& labels);

/// Writes `head` into the head block of theta (trainable-head specs only).
ParamVector embed_head(const ModelSpec& spec, const ParamVector& theta, const FrozenHead& head);

}  // namespace fedunlearn
