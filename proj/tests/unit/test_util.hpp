#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "fedunlearn/data.hpp"
#include "fedunlearn/model.hpp"
#include "fedunlearn/param_space.hpp"

namespace fedunlearn::fixtures {

inline ParamVector random_vector(std::size_t d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(d);
  for (auto& x : v) x = n(eng);
  return ParamVector(std::move(v));
}

inline Batch random_batch(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(spec.num_classes) - 1);
  Batch b;
  b.inputs = Matrix(n, spec.input_dim);
  for (auto& x : b.inputs.data) x = g(eng);
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(lab(eng));
  return b;
}

inline FrozenHead random_head(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> g(0.0, 0.5);
  FrozenHead h;
  h.weights = Matrix(spec.num_classes, spec.feature_dim());
  for (auto& x : h.weights.data) x = g(eng);
  h.bias.resize(spec.num_classes);
  for (auto& x : h.bias) x = g(eng);
  return h;
}

// No hidden layers and a trainable head: logits are affine in the parameters.
inline ModelSpec linear_spec(std::size_t in = 6, std::size_t classes = 4) {
  ModelSpec s;
  s.input_dim = in;
  s.hidden_dims = {};
  s.num_classes = classes;
  s.head_frozen = false;
  return s;
}

inline ModelSpec small_spec(Activation a = Activation::tanh) {
  ModelSpec s;
  s.input_dim = 5;
  s.hidden_dims = {7, 6};
  s.num_classes = 4;
  s.activation = a;
  return s;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_abs_diff(const ParamVector& a, const ParamVector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace fedunlearn::fixtures
