#include "fedunlearn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "fedunlearn/errors.hpp"
#include "fedunlearn/rng.hpp"

namespace fedunlearn {

std::string to_string(Split s) {
  switch (s) {
    case Split::pretrain: return "pretrain";
    case Split::train: return "train";
    case Split::test: return "test";
  }
  return "unknown";
}

void Dataset::validate() const {
  if (inputs.rows != labels.size()) throw DimensionError("dataset: label count does not match rows");
  if (inputs.data.size() != inputs.rows * inputs.cols) throw DimensionError("dataset: malformed inputs");
  if (num_classes == 0) throw ArgumentError("dataset: num_classes must be positive");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw ArgumentError("dataset: label out of range");
  }
  for (double x : inputs.data) {
    if (!std::isfinite(x)) throw NumericError("dataset: non-finite input");
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices, Split as) const {
  Dataset out;
  out.inputs = Matrix(indices.size(), inputs.cols);
  out.labels.reserve(indices.size());
  out.num_classes = num_classes;
  out.split = as;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t src = indices[r];
    if (src >= size()) throw ArgumentError("dataset: subset index out of range");
    const auto row = inputs.row(src);
    std::copy(row.begin(), row.end(), out.inputs.row(r).begin());
    out.labels.push_back(labels[src]);
  }
  return out;
}

Batch Dataset::batch(const std::vector<std::size_t>& indices) const {
  Dataset s = subset(indices, split);
  return Batch{std::move(s.inputs), std::move(s.labels)};
}

Batch Dataset::as_batch() const { return Batch{inputs, labels}; }

ClassStructure draw_class_structure(std::size_t num_classes, std::size_t input_dim,
                                    double class_separation, std::uint64_t seed) {
  if (num_classes == 0 || input_dim == 0) throw ArgumentError("synthetic: counts must be positive");
  if (!(class_separation > 0.0) || !std::isfinite(class_separation)) {
    throw ArgumentError("synthetic: class_separation must be positive");
  }
  Engine eng(derive_seed(seed, {0xc1a55}));
  std::normal_distribution<double> normal(0.0, 1.0);
  ClassStructure cs;
  cs.means = Matrix(num_classes, input_dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double sq = 0.0;
    auto row = cs.means.row(c);
    for (auto& v : row) {
      v = normal(eng);
      sq += v * v;
    }
    const double s = class_separation / std::sqrt(sq);
    for (auto& v : row) v *= s;
  }
  return cs;
}

Dataset sample_dataset(const ClassStructure& structure, std::size_t samples_per_class,
                       std::uint64_t seed, Split split) {
  if (samples_per_class == 0) throw ArgumentError("synthetic: samples_per_class must be positive");
  const std::size_t C = structure.num_classes();
  const std::size_t D = structure.input_dim();
  Engine eng(derive_seed(seed, {0x5a4e}));
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.inputs = Matrix(C * samples_per_class, D);
  ds.labels.reserve(C * samples_per_class);
  ds.num_classes = C;
  ds.split = split;
  std::size_t r = 0;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t s = 0; s < samples_per_class; ++s, ++r) {
      auto row = ds.inputs.row(r);
      for (std::size_t j = 0; j < D; ++j) row[j] = structure.means(c, j) + normal(eng);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

Dataset generate_synthetic(std::size_t num_classes, std::size_t input_dim,
                           std::size_t samples_per_class, double class_separation,
                           std::uint64_t seed, Split split) {
  const ClassStructure cs = draw_class_structure(num_classes, input_dim, class_separation, seed);
  return sample_dataset(cs, samples_per_class, seed, split);
}

Partition dirichlet_partition(const std::vector<int>& labels, std::size_t num_clients, double beta,
                              std::uint64_t seed, const std::optional<ExclusiveClasses>& exclusive) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ArgumentError("dirichlet_partition: beta must be > 0");
  if (num_clients == 0) throw ArgumentError("dirichlet_partition: need at least one client");
  if (labels.size() < num_clients) {
    throw DegenerateInputError("dirichlet_partition: fewer samples than clients");
  }
  if (exclusive && exclusive->client >= num_clients) {
    throw ArgumentError("dirichlet_partition: exclusive client out of range");
  }
  int max_label = -1;
  for (int y : labels) {
    if (y < 0) throw ArgumentError("dirichlet_partition: negative label");
    max_label = std::max(max_label, y);
  }
  const std::size_t C = static_cast<std::size_t>(max_label + 1);
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  auto is_exclusive = [&](int c) {
    return exclusive && std::find(exclusive->classes.begin(), exclusive->classes.end(), c) !=
                            exclusive->classes.end();
  };

  Partition part;
  part.beta = beta;
  part.seed = seed;
  part.client_indices.resize(num_clients);

  Engine eng(seed);
  std::vector<double> p(num_clients);
  for (std::size_t c = 0; c < C; ++c) {
    std::gamma_distribution<double> gamma(beta, 1.0);
    double total = 0.0;
    for (auto& v : p) {
      v = gamma(eng);
      total += v;
    }
    if (is_exclusive(static_cast<int>(c))) {
      std::fill(p.begin(), p.end(), 0.0);
      p[exclusive->client] = 1.0;
    } else if (total > 0.0) {
      for (auto& v : p) v /= total;
    } else {
      std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(num_clients));
    }
    std::vector<double> cum(num_clients);
    std::partial_sum(p.begin(), p.end(), cum.begin());
    for (std::size_t idx : by_class[c]) {
      const double u = uniform01(eng);
      std::size_t k = 0;
      while (k + 1 < num_clients && !(u < cum[k])) ++k;
      part.client_indices[k].push_back(idx);
    }
  }
  for (auto& list : part.client_indices) std::sort(list.begin(), list.end());

  // Repair: each empty client receives one sample from the largest client.
  for (std::size_t k = 0; k < num_clients; ++k) {
    if (!part.client_indices[k].empty()) continue;
    std::optional<std::size_t> donor;
    std::optional<std::size_t> donated_pos;
    for (std::size_t j = 0; j < num_clients; ++j) {
      const auto& list = part.client_indices[j];
      if (list.size() < 2) continue;
      if (donor && list.size() <= part.client_indices[*donor].size()) continue;
      for (std::size_t pos = list.size(); pos-- > 0;) {
        if (!is_exclusive(labels[list[pos]])) {
          donor = j;
          donated_pos = pos;
          break;
        }
      }
    }
    if (!donor) throw DegenerateInputError("dirichlet_partition: cannot repair empty client");
    auto& from = part.client_indices[*donor];
    const std::size_t idx = from[*donated_pos];
    from.erase(from.begin() + static_cast<std::ptrdiff_t>(*donated_pos));
    part.client_indices[k].push_back(idx);
  }
  return part;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<int>& labels, std::vector<std::size_t> indices, double test_fraction,
    std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ArgumentError("split: test_fraction must be in (0, 1)");
  }
  const std::size_t n = indices.size();
  if (n < 2) throw DegenerateInputError("split: need at least 2 samples, got " + std::to_string(n));
  std::sort(indices.begin(), indices.end());
  const std::size_t n_test =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction)),
                              1, n - 1);

  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t idx : indices) groups[labels.at(idx)].push_back(idx);

  // Largest-remainder allocation of the test quota across classes.
  struct Quota {
    int label;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [label, members] : groups) {
    const double exact = static_cast<double>(members.size()) * static_cast<double>(n_test) / static_cast<double>(n);
    const auto take = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({label, take, exact - static_cast<double>(take)});
    assigned += take;
  }
  std::vector<std::size_t> order(quotas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t i = 0; assigned < n_test; i = (i + 1) % order.size()) {
    auto& q = quotas[order[i]];
    if (q.take < groups[q.label].size()) {
      ++q.take;
      ++assigned;
    }
  }

  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  for (const auto& q : quotas) {
    auto members = groups[q.label];
    Engine eng(derive_seed(seed, {static_cast<std::uint64_t>(q.label)}));
    std::shuffle(members.begin(), members.end(), eng);
    test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(q.take));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(q.take), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

ClientSplit split_client(const Dataset& dataset, const Partition& partition, std::size_t client_id,
                         double test_fraction, std::uint64_t seed) {
  if (client_id >= partition.num_clients()) throw ArgumentError("split_client: unknown client");
  auto [train, test] = stratified_split(dataset.labels, partition.client_indices[client_id],
                                        test_fraction, derive_seed(seed, {client_id}));
  ClientSplit out;
  out.train = dataset.subset(train, Split::train);
  out.test = dataset.subset(test, Split::test);
  out.train_indices = std::move(train);
  out.test_indices = std::move(test);
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

Dataset load_csv(const std::string& path, Split split, std::optional<std::size_t> num_classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file (expected a header row)");
  const std::size_t columns = split_commas(line).size();
  if (columns < 2) throw ParseError(path + ": header needs at least one feature column and a label column");
  const std::size_t features = columns - 1;

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != columns) {
      throw ParseError(path + ": row " + std::to_string(row) + ": expected " + std::to_string(columns) +
                       " columns, found " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < features; ++c) {
      double v = 0.0;
      const auto f = fields[c];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw ParseError(path + ": row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                         ": not a finite number: '" + std::string(f) + "'");
      }
      values.push_back(v);
    }
    int y = 0;
    const auto f = fields[features];
    const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), y);
    if (ec != std::errc() || ptr != f.data() + f.size() || y < 0) {
      throw ParseError(path + ": row " + std::to_string(row) + ", column " + std::to_string(columns) +
                       ": label must be a non-negative integer: '" + std::string(f) + "'");
    }
    if (num_classes && static_cast<std::size_t>(y) >= *num_classes) {
      throw ParseError(path + ": row " + std::to_string(row) + ", column " + std::to_string(columns) +
                       ": label " + std::to_string(y) + " is outside [0, " + std::to_string(*num_classes) + ")");
    }
    labels.push_back(y);
  }
  if (labels.empty()) throw ParseError(path + ": no data rows");

  Dataset ds;
  ds.inputs.rows = labels.size();
  ds.inputs.cols = features;
  ds.inputs.data = std::move(values);
  ds.num_classes = num_classes.value_or(static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1));
  ds.labels = std::move(labels);
  ds.split = split;
  ds.validate();
  return ds;
}

std::vector<double> label_entropies(const std::vector<int>& labels, const Partition& partition,
                                    std::size_t num_classes) {
  std::vector<double> out;
  for (const auto& list : partition.client_indices) {
    std::vector<double> hist(num_classes, 0.0);
    for (std::size_t idx : list) hist.at(static_cast<std::size_t>(labels.at(idx))) += 1.0;
    double h = 0.0;
    const double n = static_cast<double>(list.size());
    for (double c : hist) {
      if (c > 0.0) h -= (c / n) * std::log(c / n);
    }
    out.push_back(h);
  }
  return out;
}

}  // namespace fedunlearn
