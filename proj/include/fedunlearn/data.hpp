#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedunlearn/matrix.hpp"
#include "fedunlearn/model.hpp"

namespace fedunlearn {

enum class Split { pretrain, train, test };

std::string to_string(Split s);

struct Dataset {
  Matrix inputs;  // N x input_dim
  std::vector<int> labels;
  std::size_t num_classes = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return inputs.cols; }

  void validate() const;
  Dataset subset(const std::vector<std::size_t>& indices, Split as) const;
  Batch batch(const std::vector<std::size_t>& indices) const;
  Batch as_batch() const;
};

/// Class means for the Gaussian-cluster generator: one per class, drawn
/// uniformly on the sphere of radius `class_separation`.
struct ClassStructure {
  Matrix means;  // num_classes x input_dim

  std::size_t num_classes() const noexcept { return means.rows; }
  std::size_t input_dim() const noexcept { return means.cols; }
};

ClassStructure draw_class_structure(std::size_t num_classes, std::size_t input_dim,
                                    double class_separation, std::uint64_t seed);

/// Samples `samples_per_class` unit-covariance points around each mean.
/// Rows are ordered by class.
Dataset sample_dataset(const ClassStructure& structure, std::size_t samples_per_class,
                       std::uint64_t seed, Split split);

Dataset generate_synthetic(std::size_t num_classes, std::size_t input_dim,
                           std::size_t samples_per_class, double class_separation,
                           std::uint64_t seed, Split split = Split::train);

struct Partition {
  std::vector<std::vector<std::size_t>> client_indices;
  double beta = 0.0;
  std::uint64_t seed = 0;

  std::size_t num_clients() const noexcept { return client_indices.size(); }
};

/// Classes whose samples all go to one client (the "exclusive-class" scenario).
struct ExclusiveClasses {
  std::size_t client = 0;
  std::vector<int> classes;
};

/// Label-skew partition: for each class a proportion vector is drawn from
/// Dirichlet(beta * 1_K) and every sample of the class is assigned to a
/// client by a categorical draw from it. Empty clients are then repaired by
/// moving one sample from the currently largest client.
Partition dirichlet_partition(const std::vector<int>& labels, std::size_t num_clients, double beta,
                              std::uint64_t seed,
                              const std::optional<ExclusiveClasses>& exclusive = std::nullopt);

struct ClientSplit {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_indices;  // indices into the source dataset
  std::vector<std::size_t> test_indices;
};

ClientSplit split_client(const Dataset& dataset, const Partition& partition, std::size_t client_id,
                         double test_fraction, std::uint64_t seed);

/// Stratified split of an index set; at least one element lands on each side.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_split(
    const std::vector<int>& labels, std::vector<std::size_t> indices, double test_fraction,
    std::uint64_t seed);

/// CSV with a header row, feature columns, and an integer label in the last column.
Dataset load_csv(const std::string& path, Split split, std::optional<std::size_t> num_classes = std::nullopt);

/// Shannon entropy (nats) of each client's label histogram.
std::vector<double> label_entropies(const std::vector<int>& labels, const Partition& partition,
                                    std::size_t num_classes);

}  // namespace fedunlearn
