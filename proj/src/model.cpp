#include "fedunlearn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/rng.hpp"

namespace fedunlearn {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ArgumentError("unknown activation '" + s + "'");
}

std::size_t ModelSpec::feature_dim() const noexcept {
  return hidden_dims.empty() ? input_dim : hidden_dims.back();
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ArgumentError("model: input_dim must be positive");
  if (num_classes == 0) throw ArgumentError("model: num_classes must be positive");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ArgumentError("model: hidden layer widths must be positive");
  }
  if (hidden_dims.empty() && head_frozen) {
    throw ArgumentError("model: no hidden layers and a frozen head leaves nothing to train");
  }
}

ParamLayout param_layout(const ModelSpec& spec) {
  spec.validate();
  ParamLayout layout;
  std::size_t offset = 0;
  std::size_t in = spec.input_dim;
  for (std::size_t l = 0; l < spec.hidden_dims.size(); ++l) {
    const std::size_t out = spec.hidden_dims[l];
    layout.blocks.push_back({"layer" + std::to_string(l) + ".weight", offset, out, in});
    offset += out * in;
    layout.blocks.push_back({"layer" + std::to_string(l) + ".bias", offset, out, 1});
    offset += out;
    in = out;
  }
  if (!spec.head_frozen) {
    layout.blocks.push_back({"head.weight", offset, spec.num_classes, in});
    offset += spec.num_classes * in;
    layout.blocks.push_back({"head.bias", offset, spec.num_classes, 1});
  }
  return layout;
}

std::size_t parameter_count(const ModelSpec& spec) { return param_layout(spec).total_size(); }

namespace {

struct Dense {
  const double* w = nullptr;  // out x in, row-major
  const double* b = nullptr;
  std::size_t in = 0;
  std::size_t out = 0;
};

// Raw pointers into either theta or a direction vector with the same layout.
struct NetView {
  std::vector<Dense> hidden;
  Dense head;
};

struct Offsets {
  std::vector<std::size_t> w;
  std::vector<std::size_t> b;
  std::size_t head_w = 0;
  std::size_t head_b = 0;
};

class Net {
 public:
  Net(const ModelSpec& spec, const FrozenHead& head) : spec_(spec), head_(head) {
    spec.validate();
    std::size_t offset = 0;
    std::size_t in = spec.input_dim;
    for (std::size_t out : spec.hidden_dims) {
      off_.w.push_back(offset);
      offset += out * in;
      off_.b.push_back(offset);
      offset += out;
      in = out;
    }
    if (!spec.head_frozen) {
      off_.head_w = offset;
      offset += spec.num_classes * in;
      off_.head_b = offset;
      offset += spec.num_classes;
    } else {
      if (head.weights.rows != spec.num_classes || head.weights.cols != spec.feature_dim() ||
          head.bias.size() != spec.num_classes) {
        throw DimensionError("model: frozen head shape does not match the model spec");
      }
    }
    d_ = offset;
  }

  std::size_t d() const noexcept { return d_; }
  const ModelSpec& spec() const noexcept { return spec_; }
  bool head_trainable() const noexcept { return !spec_.head_frozen; }

  void check_theta(const ParamVector& theta, const char* what) const {
    if (theta.size() != d_) {
      throw DimensionError(std::string(what) + ": parameter vector has length " +
                           std::to_string(theta.size()) + ", model expects " + std::to_string(d_));
    }
  }

  void check_inputs(const Matrix& inputs, const char* what) const {
    if (inputs.cols != spec_.input_dim) {
      throw DimensionError(std::string(what) + ": inputs have " + std::to_string(inputs.cols) +
                           " columns, model expects " + std::to_string(spec_.input_dim));
    }
    if (inputs.rows == 0) throw DegenerateInputError(std::string(what) + ": empty batch");
    if (inputs.data.size() != inputs.rows * inputs.cols) {
      throw DimensionError(std::string(what) + ": malformed input matrix");
    }
  }

  void check_batch(const Batch& batch, const char* what) const {
    check_inputs(batch.inputs, what);
    if (batch.labels.size() != batch.inputs.rows) {
      throw DimensionError(std::string(what) + ": label count does not match input rows");
    }
    for (int y : batch.labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= spec_.num_classes) {
        throw ArgumentError(std::string(what) + ": label out of range");
      }
    }
  }

  NetView view(const double* p, bool with_head) const {
    NetView v;
    std::size_t in = spec_.input_dim;
    for (std::size_t l = 0; l < spec_.hidden_dims.size(); ++l) {
      const std::size_t out = spec_.hidden_dims[l];
      v.hidden.push_back({p + off_.w[l], p + off_.b[l], in, out});
      in = out;
    }
    if (with_head && head_trainable()) {
      v.head = {p + off_.head_w, p + off_.head_b, in, spec_.num_classes};
    } else if (with_head) {
      v.head = {head_.weights.data.data(), head_.bias.data(), in, spec_.num_classes};
    }
    return v;
  }

  struct Cache {
    std::vector<std::vector<double>> z;  // pre-activations per hidden layer
    std::vector<std::vector<double>> a;  // a[0] is the input
    std::vector<double> logits;
  };

  void forward_sample(const NetView& v, std::span<const double> x, Cache& c) const {
    const std::size_t L = v.hidden.size();
    c.z.resize(L);
    c.a.resize(L + 1);
    c.a[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < L; ++l) {
      const Dense& layer = v.hidden[l];
      auto& z = c.z[l];
      auto& a = c.a[l + 1];
      z.assign(layer.out, 0.0);
      a.assign(layer.out, 0.0);
      const auto& prev = c.a[l];
      for (std::size_t o = 0; o < layer.out; ++o) {
        double acc = layer.b[o];
        const double* w = layer.w + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * prev[i];
        z[o] = acc;
        a[o] = activate(acc);
      }
    }
    affine(v.head, c.a[L], c.logits);
  }

  // Accumulates J^T g for one sample into grad (length d).
  void backward_sample(const NetView& v, const Cache& c, std::span<const double> g,
                       std::span<double> grad) const {
    const std::size_t L = v.hidden.size();
    const auto& feat = c.a[L];
    if (head_trainable()) {
      for (std::size_t k = 0; k < v.head.out; ++k) {
        double* gw = grad.data() + off_.head_w + k * v.head.in;
        for (std::size_t i = 0; i < v.head.in; ++i) gw[i] += g[k] * feat[i];
        grad[off_.head_b + k] += g[k];
      }
    }
    std::vector<double> da(v.head.in, 0.0);
    for (std::size_t k = 0; k < v.head.out; ++k) {
      const double* w = v.head.w + k * v.head.in;
      for (std::size_t i = 0; i < v.head.in; ++i) da[i] += w[i] * g[k];
    }
    std::vector<double> dz;
    for (std::size_t l = L; l-- > 0;) {
      const Dense& layer = v.hidden[l];
      dz.assign(layer.out, 0.0);
      for (std::size_t o = 0; o < layer.out; ++o) dz[o] = da[o] * derivative(c.z[l][o], c.a[l + 1][o]);
      const auto& prev = c.a[l];
      for (std::size_t o = 0; o < layer.out; ++o) {
        double* gw = grad.data() + off_.w[l] + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) gw[i] += dz[o] * prev[i];
        grad[off_.b[l] + o] += dz[o];
      }
      if (l == 0) break;
      da.assign(layer.in, 0.0);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double* w = layer.w + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) da[i] += w[i] * dz[o];
      }
    }
  }

  // Forward-mode directional derivative of the logits along `dir`.
  void jvp_sample(const NetView& at, const NetView& dir, const Cache& c,
                  std::vector<double>& dlogits) const {
    const std::size_t L = at.hidden.size();
    std::vector<double> da(spec_.input_dim, 0.0);
    std::vector<double> next;
    for (std::size_t l = 0; l < L; ++l) {
      const Dense& layer = at.hidden[l];
      const Dense& dl = dir.hidden[l];
      next.assign(layer.out, 0.0);
      const auto& prev = c.a[l];
      for (std::size_t o = 0; o < layer.out; ++o) {
        double acc = dl.b[o];
        const double* dw = dl.w + o * layer.in;
        const double* w = layer.w + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) acc += dw[i] * prev[i];
        for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * da[i];
        next[o] = acc * derivative(c.z[l][o], c.a[l + 1][o]);
      }
      da.swap(next);
    }
    dlogits.assign(at.head.out, 0.0);
    for (std::size_t k = 0; k < at.head.out; ++k) {
      double acc = 0.0;
      const double* w = at.head.w + k * at.head.in;
      for (std::size_t i = 0; i < at.head.in; ++i) acc += w[i] * da[i];
      if (head_trainable()) {
        const double* dw = dir.head.w + k * at.head.in;
        const auto& feat = c.a[L];
        for (std::size_t i = 0; i < at.head.in; ++i) acc += dw[i] * feat[i];
        acc += dir.head.b[k];
      }
      dlogits[k] = acc;
    }
  }

 private:
  double activate(double z) const {
    return spec_.activation == Activation::relu ? (z > 0.0 ? z : 0.0) : std::tanh(z);
  }
  double derivative(double z, double a) const {
    return spec_.activation == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0 - a * a;
  }
  static void affine(const Dense& layer, const std::vector<double>& x, std::vector<double>& out) {
    out.assign(layer.out, 0.0);
    for (std::size_t k = 0; k < layer.out; ++k) {
      double acc = layer.b[k];
      const double* w = layer.w + k * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) acc += w[i] * x[i];
      out[k] = acc;
    }
  }

  const ModelSpec& spec_;
  const FrozenHead& head_;
  Offsets off_;
  std::size_t d_ = 0;
};

// Mean cross-entropy; writes dL/dlogits (already divided by n) into g.
double softmax_xent(const Matrix& logits, const std::vector<int>& labels, Matrix* g) {
  const std::size_t n = logits.rows;
  const std::size_t C = logits.cols;
  const double inv_n = 1.0 / static_cast<double>(n);
  if (g) *g = Matrix(n, C);
  double total = 0.0;
  std::vector<double> p(C);
  for (std::size_t s = 0; s < n; ++s) {
    const auto row = logits.row(s);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t k = 0; k < C; ++k) {
      p[k] = std::exp(row[k] - m);
      z += p[k];
    }
    const int y = labels[s];
    total += (m + std::log(z)) - row[y];
    if (g) {
      for (std::size_t k = 0; k < C; ++k) {
        (*g)(s, k) = (p[k] / z - (static_cast<int>(k) == y ? 1.0 : 0.0)) * inv_n;
      }
    }
  }
  return total * inv_n;
}

ParamVector finite_grad(std::vector<double> grad, const char* what) {
  for (double v : grad) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite gradient");
  }
  return ParamVector(std::move(grad));
}

}  // namespace

Matrix forward(const ModelSpec& spec, const FrozenHead& head, const ParamVector& theta,
               const Matrix& inputs) {
  Net net(spec, head);
  net.check_theta(theta, "forward");
  net.check_inputs(inputs, "forward");
  const NetView v = net.view(theta.raw().data(), true);
  Matrix out(inputs.rows, spec.num_classes);
  Net::Cache cache;
  for (std::size_t s = 0; s < inputs.rows; ++s) {
    net.forward_sample(v, inputs.row(s), cache);
    std::copy(cache.logits.begin(), cache.logits.end(), out.row(s).begin());
  }
  return out;
}

Matrix forward(const ModelSpec& spec, const FrozenHead& head, const ParamVector& theta,
               const Batch& batch) {
  Net net(spec, head);
  net.check_batch(batch, "forward");
  return forward(spec, head, theta, batch.inputs);
}

double cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  if (logits.rows != labels.size()) throw DimensionError("cross_entropy: label count mismatch");
  return softmax_xent(logits, labels, nullptr);
}

LossGrad loss_and_grad(const ModelSpec& spec, const FrozenHead& head, const ParamVector& theta,
                       const Batch& batch) {
  Net net(spec, head);
  net.check_theta(theta, "loss_and_grad");
  net.check_batch(batch, "loss_and_grad");
  const NetView v = net.view(theta.raw().data(), true);
  const std::size_t n = batch.size();
  std::vector<Net::Cache> caches(n);
  Matrix logits(n, spec.num_classes);
  for (std::size_t s = 0; s < n; ++s) {
    net.forward_sample(v, batch.inputs.row(s), caches[s]);
    std::copy(caches[s].logits.begin(), caches[s].logits.end(), logits.row(s).begin());
  }
  Matrix g;
  const double loss = softmax_xent(logits, batch.labels, &g);
  std::vector<double> grad(net.d(), 0.0);
  for (std::size_t s = 0; s < n; ++s) net.backward_sample(v, caches[s], g.row(s), grad);
  return {loss, finite_grad(std::move(grad), "loss_and_grad")};
}

Jacobian jacobian_at(const ModelSpec& spec, const FrozenHead& head, const ParamVector& theta_0,
                     const Batch& batch) {
  Net net(spec, head);
  net.check_theta(theta_0, "jacobian_at");
  net.check_batch(batch, "jacobian_at");
  const NetView v = net.view(theta_0.raw().data(), true);
  Jacobian J;
  J.samples = batch.size();
  J.classes = spec.num_classes;
  J.params = net.d();
  J.data.assign(J.samples * J.classes * J.params, 0.0);
  Net::Cache cache;
  std::vector<double> onehot(spec.num_classes, 0.0);
  for (std::size_t s = 0; s < J.samples; ++s) {
    net.forward_sample(v, batch.inputs.row(s), cache);
    for (std::size_t c = 0; c < J.classes; ++c) {
      std::fill(onehot.begin(), onehot.end(), 0.0);
      onehot[c] = 1.0;
      std::span<double> row(J.data.data() + (s * J.classes + c) * J.params, J.params);
      net.backward_sample(v, cache, onehot, row);
    }
  }
  return J;
}

Matrix linearized_forward(const ModelSpec& spec, const FrozenHead& head,
                          const ParamVector& theta_0, const ParamVector& tau,
                          const Matrix& inputs) {
  Net net(spec, head);
  net.check_theta(theta_0, "linearized_forward");
  net.check_theta(tau, "linearized_forward");
  net.check_inputs(inputs, "linearized_forward");
  const NetView at = net.view(theta_0.raw().data(), true);
  const NetView dir = net.view(tau.raw().data(), net.head_trainable());
  Matrix out(inputs.rows, spec.num_classes);
  Net::Cache cache;
  std::vector<double> dlogits;
  for (std::size_t s = 0; s < inputs.rows; ++s) {
    net.forward_sample(at, inputs.row(s), cache);
    net.jvp_sample(at, dir, cache, dlogits);
    auto row = out.row(s);
    for (std::size_t k = 0; k < spec.num_classes; ++k) row[k] = cache.logits[k] + dlogits[k];
  }
  return out;
}

Matrix linearized_forward(const ModelSpec& spec, const FrozenHead& head,
                          const ParamVector& theta_0, const TaskVector& tau, const Batch& batch) {
  Net net(spec, head);
  net.check_batch(batch, "linearized_forward");
  return linearized_forward(spec, head, theta_0, tau.delta, batch.inputs);
}

LossGrad linearized_loss_and_grad(const ModelSpec& spec, const FrozenHead& head,
                                  const ParamVector& theta_0, const ParamVector& tau,
                                  const Batch& batch) {
  Net net(spec, head);
  net.check_theta(theta_0, "linearized_loss_and_grad");
  net.check_theta(tau, "linearized_loss_and_grad");
  net.check_batch(batch, "linearized_loss_and_grad");
  const NetView at = net.view(theta_0.raw().data(), true);
  const NetView dir = net.view(tau.raw().data(), net.head_trainable());
  const std::size_t n = batch.size();
  std::vector<Net::Cache> caches(n);
  Matrix logits(n, spec.num_classes);
  std::vector<double> dlogits;
  for (std::size_t s = 0; s < n; ++s) {
    net.forward_sample(at, batch.inputs.row(s), caches[s]);
    net.jvp_sample(at, dir, caches[s], dlogits);
    auto row = logits.row(s);
    for (std::size_t k = 0; k < spec.num_classes; ++k) row[k] = caches[s].logits[k] + dlogits[k];
  }
  Matrix g;
  const double loss = softmax_xent(logits, batch.labels, &g);
  std::vector<double> grad(net.d(), 0.0);
  for (std::size_t s = 0; s < n; ++s) net.backward_sample(at, caches[s], g.row(s), grad);
  return {loss, finite_grad(std::move(grad), "linearized_loss_and_grad")};
}

LossGrad linearized_loss_and_grad(const ModelSpec& spec, const FrozenHead& head,
                                  const ParamVector& theta_0, const TaskVector& tau,
                                  const Batch& batch) {
  return linearized_loss_and_grad(spec, head, theta_0, tau.delta, batch);
}

ParamVector init_parameters(const ModelSpec& spec, std::uint64_t seed) {
  const ParamLayout layout = param_layout(spec);
  std::vector<double> theta(layout.total_size(), 0.0);
  Engine eng(derive_seed(seed, {0x1417}));
  for (const auto& b : layout.blocks) {
    if (b.cols == 1) continue;  // biases start at zero
    const double fan_in = static_cast<double>(b.cols);
    const double fan_out = static_cast<double>(b.rows);
    const double limit = spec.activation == Activation::relu ? std::sqrt(6.0 / fan_in)
                                                             : std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < b.size(); ++i) {
      theta[b.offset + i] = (2.0 * uniform01(eng) - 1.0) * limit;
    }
  }
  return ParamVector(std::move(theta));
}

Matrix features(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs) {
  // Only the backbone is evaluated; a placeholder head keeps Net's shape checks satisfied.
  FrozenHead placeholder;
  placeholder.weights = Matrix(spec.num_classes, spec.feature_dim());
  placeholder.bias.assign(spec.num_classes, 0.0);
  Net net(spec, placeholder);
  net.check_theta(theta, "features");
  net.check_inputs(inputs, "features");
  const NetView v = net.view(theta.raw().data(), true);
  Matrix out(inputs.rows, spec.feature_dim());
  Net::Cache cache;
  for (std::size_t s = 0; s < inputs.rows; ++s) {
    net.forward_sample(v, inputs.row(s), cache);
    const auto& f = cache.a.back();
    std::copy(f.begin(), f.end(), out.row(s).begin());
  }
  return out;
}

FrozenHead centroid_head(const ModelSpec& spec, const ParamVector& theta, const Matrix& inputs,
                         const std::vector<int>& labels) {
  if (labels.size() != inputs.rows) throw DimensionError("centroid_head: label count mismatch");
  const Matrix feats = features(spec, theta, inputs);
  const std::size_t C = spec.num_classes;
  const std::size_t F = spec.feature_dim();
  FrozenHead head;
  head.weights = Matrix(C, F);
  head.bias.assign(C, 0.0);
  std::vector<std::size_t> counts(C, 0);
  for (std::size_t s = 0; s < feats.rows; ++s) {
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= C) throw ArgumentError("centroid_head: label out of range");
    ++counts[y];
    for (std::size_t j = 0; j < F; ++j) head.weights(y, j) += feats(s, j);
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (counts[c] == 0) throw DegenerateInputError("centroid_head: class " + std::to_string(c) + " has no samples");
    double sq = 0.0;
    for (std::size_t j = 0; j < F; ++j) {
      head.weights(c, j) /= static_cast<double>(counts[c]);
      sq += head.weights(c, j) * head.weights(c, j);
    }
    head.bias[c] = -0.5 * sq;
  }
  return head;
}

ParamVector embed_head(const ModelSpec& spec, const ParamVector& theta, const FrozenHead& head) {
  if (spec.head_frozen) throw ArgumentError("embed_head: spec has a frozen head");
  const ParamLayout layout = param_layout(spec);
  if (theta.size() != layout.total_size()) throw DimensionError("embed_head: parameter length mismatch");
  const ParamBlock& w = layout.block("head.weight");
  const ParamBlock& b = layout.block("head.bias");
  if (head.weights.rows != w.rows || head.weights.cols != w.cols || head.bias.size() != b.rows) {
    throw DimensionError("embed_head: head shape mismatch");
  }
  std::vector<double> out = theta.raw();
  std::copy(head.weights.data.begin(), head.weights.data.end(), out.begin() + static_cast<std::ptrdiff_t>(w.offset));
  std::copy(head.bias.begin(), head.bias.end(), out.begin() + static_cast<std::ptrdiff_t>(b.offset));
  return ParamVector(std::move(out));
}

}  // namespace fedunlearn
