#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsd/core/data.hpp"

namespace hsd::eval {

enum class DatasetKind { gaussian_mixture, two_moons };

DatasetKind parse_dataset_kind(const std::string& name);
std::string to_string(DatasetKind kind);

struct ToyDataset {
  DatasetKind kind = DatasetKind::gaussian_mixture;
  int num_components = 0;
  LabeledData data;
  std::vector<float> component_means;  // num_components x dim
  double component_std = 0.0;

  int dim() const { return data.dim; }
};

struct DatasetOptions {
  double radius = 3.0;  // gaussian_mixture: component means on a circle
  double std = 0.3;     // per-coordinate noise
};

/// Deterministic given seed. Point i belongs to component i mod num_components.
/// gaussian_mixture: means at radius * (cos, sin)(2 pi j / C).
/// two_moons: two interleaved half circles (C must be 2), centred at the origin.
ToyDataset gen_dataset(DatasetKind kind, int n, int num_components, std::uint64_t seed,
                       const DatasetOptions& options = {});

}  // namespace hsd::eval
