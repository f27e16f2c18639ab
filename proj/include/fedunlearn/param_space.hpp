#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedunlearn {

enum class Regime { standard, ntk_linearized };

std::string to_string(Regime r);
Regime regime_from_string(const std::string& s);

/// Flat real-valued vector in model parameter space.
///
/// Entries are finite on construction and the length never changes. Every
/// operation producing a ParamVector returns a new value.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::vector<double> values);

  static ParamVector zeros(std::size_t d);

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }

  const std::vector<double>& raw() const noexcept { return values_; }

  double norm() const;
  double dot(const ParamVector& other) const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

ParamVector add(const ParamVector& a, const ParamVector& b);
ParamVector subtract(const ParamVector& a, const ParamVector& b);
ParamVector scale(const ParamVector& a, double s);

/// Contiguous range of the flat vector owned by one tensor of the model.
struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 1;

  std::size_t size() const noexcept { return rows * cols; }
};

struct ParamLayout {
  std::vector<ParamBlock> blocks;

  std::size_t total_size() const noexcept;
  const ParamBlock& block(const std::string& name) const;
};

using ClientId = int;

/// Delta between fine-tuned and base parameters, tagged with provenance.
///
/// `residual` holds the exact rounding error of the subtraction when the
/// vector was produced by task_vector(), so that adding it back with unit
/// weight recovers the fine-tuned parameters bit for bit. It is empty when
/// the delta is exact or was produced by training.
struct TaskVector {
  ParamVector delta;
  std::optional<ClientId> owner;  // nullopt means the global model
  Regime regime = Regime::standard;
  bool standalone = false;
  std::vector<double> residual;

  std::size_t size() const noexcept { return delta.size(); }
};

TaskVector make_task_vector(ParamVector delta, std::optional<ClientId> owner = std::nullopt,
                            Regime regime = Regime::standard, bool standalone = false);

TaskVector task_vector(const ParamVector& theta_t, const ParamVector& theta_0);

struct WeightedTask {
  double lambda;
  std::reference_wrapper<const TaskVector> tau;
};

/// theta_0 + sum_i lambda_i * tau_i, accumulated per coordinate in declared
/// term order. Products and sums are carried with their exact rounding errors
/// and rounded once at the end, so the result is deterministic and (for
/// non-pathological inputs) correctly rounded.
ParamVector combine(const ParamVector& theta_0, std::span<const WeightedTask> terms);
ParamVector combine(const ParamVector& theta_0, std::initializer_list<WeightedTask> terms);

struct CompensatedSum {
  ParamVector value;
  std::vector<double> residual;  // empty when the rounding was exact
};

/// combine() that also keeps what the final rounding dropped, so a chain of
/// updates stays exact: feed the previous residual back in as base_residual
/// (empty or length d).
CompensatedSum combine_compensated(const ParamVector& theta_0, std::span<const double> base_residual,
                                   std::span<const WeightedTask> terms);

double cosine_interference(const TaskVector& a, const TaskVector& b);

// Binary format: little-endian u64 length, then little-endian IEEE-754 f64 values.
void write_param_vector(std::ostream& out, const ParamVector& v);
ParamVector read_param_vector(std::istream& in);
void save_param_vector(const std::string& path, const ParamVector& v);
ParamVector load_param_vector(const std::string& path);

}  // namespace fedunlearn
