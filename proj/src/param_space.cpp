#include "fedunlearn/param_space.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include "fedunlearn/errors.hpp"

namespace fedunlearn {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
  }
}

// Knuth's error-free transformation: a + b == s + err exactly.
inline void two_sum(double a, double b, double& s, double& err) {
  s = a + b;
  const double bb = s - a;
  err = (a - (s - bb)) + (b - bb);
}

}  // namespace

std::string to_string(Regime r) {
  return r == Regime::standard ? "standard" : "ntk_linearized";
}

Regime regime_from_string(const std::string& s) {
  if (s == "standard") return Regime::standard;
  if (s == "ntk_linearized" || s == "ntk") return Regime::ntk_linearized;
  throw ArgumentError("unknown regime '" + s + "'");
}

ParamVector::ParamVector(std::vector<double> values) : values_(std::move(values)) {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw NumericError("non-finite parameter at index " + std::to_string(i));
    }
  }
}

ParamVector ParamVector::zeros(std::size_t d) { return ParamVector(std::vector<double>(d, 0.0)); }

double ParamVector::dot(const ParamVector& other) const {
  require_same_size(size(), other.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) acc += values_[i] * other.values_[i];
  return acc;
}

double ParamVector::norm() const { return std::sqrt(dot(*this)); }

ParamVector add(const ParamVector& a, const ParamVector& b) {
  require_same_size(a.size(), b.size(), "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return ParamVector(std::move(out));
}

ParamVector subtract(const ParamVector& a, const ParamVector& b) {
  require_same_size(a.size(), b.size(), "subtract");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return ParamVector(std::move(out));
}

ParamVector scale(const ParamVector& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return ParamVector(std::move(out));
}

std::size_t ParamLayout::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& b : blocks) n = std::max(n, b.offset + b.size());
  return n;
}

const ParamBlock& ParamLayout::block(const std::string& name) const {
  for (const auto& b : blocks) {
    if (b.name == name) return b;
  }
  throw ArgumentError("no parameter block named '" + name + "'");
}

TaskVector make_task_vector(ParamVector delta, std::optional<ClientId> owner, Regime regime,
                            bool standalone) {
  TaskVector tv;
  tv.delta = std::move(delta);
  tv.owner = owner;
  tv.regime = regime;
  tv.standalone = standalone;
  return tv;
}

TaskVector task_vector(const ParamVector& theta_t, const ParamVector& theta_0) {
  require_same_size(theta_t.size(), theta_0.size(), "task_vector");
  const std::size_t d = theta_t.size();
  std::vector<double> delta(d);
  std::vector<double> residual(d);
  bool exact = true;
  for (std::size_t i = 0; i < d; ++i) {
    two_sum(theta_t[i], -theta_0[i], delta[i], residual[i]);
    if (residual[i] != 0.0) exact = false;
  }
  TaskVector tv = make_task_vector(ParamVector(std::move(delta)));
  if (!exact) tv.residual = std::move(residual);
  return tv;
}

CompensatedSum combine_compensated(const ParamVector& theta_0, std::span<const double> base_residual,
                                   std::span<const WeightedTask> terms) {
  const std::size_t d = theta_0.size();
  if (!base_residual.empty()) require_same_size(base_residual.size(), d, "combine");
  for (const auto& t : terms) {
    require_same_size(t.tau.get().size(), d, "combine");
    if (!std::isfinite(t.lambda)) throw ArgumentError("combine: non-finite coefficient");
  }
  std::vector<double> out(theta_0.raw());
  std::vector<double> comp(d, 0.0);
  bool any = false;
  for (std::size_t i = 0; i < base_residual.size(); ++i) {
    comp[i] = base_residual[i];
    any = any || comp[i] != 0.0;
  }
  for (const auto& t : terms) {
    if (t.lambda == 0.0) continue;
    any = true;
    const auto& delta = t.tau.get().delta.raw();
    const auto& residual = t.tau.get().residual;
    for (std::size_t i = 0; i < d; ++i) {
      const double p = t.lambda * delta[i];
      const double p_err = std::fma(t.lambda, delta[i], -p);
      double s = 0.0;
      double s_err = 0.0;
      two_sum(out[i], p, s, s_err);
      out[i] = s;
      comp[i] += s_err + p_err;
      if (!residual.empty()) comp[i] += t.lambda * residual[i];
    }
  }
  CompensatedSum result;
  bool exact = true;
  if (any) {
    for (std::size_t i = 0; i < d; ++i) {
      if (comp[i] == 0.0) continue;
      double s = 0.0;
      double e = 0.0;
      two_sum(out[i], comp[i], s, e);
      out[i] = s;
      comp[i] = e;
      exact = exact && e == 0.0;
    }
  }
  result.value = ParamVector(std::move(out));
  if (!exact) result.residual = std::move(comp);
  return result;
}

ParamVector combine(const ParamVector& theta_0, std::span<const WeightedTask> terms) {
  return combine_compensated(theta_0, {}, terms).value;
}

ParamVector combine(const ParamVector& theta_0, std::initializer_list<WeightedTask> terms) {
  return combine(theta_0, std::span<const WeightedTask>(terms.begin(), terms.size()));
}

double cosine_interference(const TaskVector& a, const TaskVector& b) {
  require_same_size(a.size(), b.size(), "cosine_interference");
  const double aa = a.delta.dot(a.delta);
  const double bb = b.delta.dot(b.delta);
  if (aa == 0.0 || bb == 0.0) {
    throw DegenerateInputError("cosine_interference: zero-norm task vector");
  }
  const double c = a.delta.dot(b.delta) / std::sqrt(aa * bb);
  return std::clamp(c, -1.0, 1.0);
}

namespace {

void put_u64_le(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
  out.write(buf, 8);
}

std::uint64_t get_u64_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (in.gcount() != 8) throw ParseError("param vector: truncated stream");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

}  // namespace

void write_param_vector(std::ostream& out, const ParamVector& v) {
  put_u64_le(out, v.size());
  for (double x : v.values()) put_u64_le(out, std::bit_cast<std::uint64_t>(x));
  if (!out) throw IoError("param vector: write failed");
}

ParamVector read_param_vector(std::istream& in) {
  const std::uint64_t n = get_u64_le(in);
  if (n > (std::uint64_t{1} << 40)) throw ParseError("param vector: implausible length");
  std::vector<double> values(n);
  for (auto& x : values) x = std::bit_cast<double>(get_u64_le(in));
  return ParamVector(std::move(values));
}

void save_param_vector(const std::string& path, const ParamVector& v) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_param_vector(out, v);
}

ParamVector load_param_vector(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  try {
    return read_param_vector(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace fedunlearn
