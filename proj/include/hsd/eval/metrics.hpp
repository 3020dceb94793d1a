#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace hsd::eval {

/// Exact 2-Wasserstein distance between two uniform empirical measures on the line.
double wasserstein2_1d(std::vector<double> a, std::vector<double> b);

/// Random unit directions (num x dim, row-major) drawn from normalized Gaussians.
std::vector<double> projection_directions(int dim, int num, std::uint64_t seed);

/// Mean over random unit directions of the 1-D W2 distance between projected sets.
/// Point sets are row-major with `dim` columns.
double sliced_wasserstein(std::span<const float> a, std::span<const float> b, int dim, int num_projections,
                          std::uint64_t seed);

/// Index of the nearest component mean (Euclidean); ties go to the lower index.
int nearest_component(std::span<const float> point, std::span<const float> means, int dim);

/// Fraction of index-paired samples assigned to the same component.
double mode_agreement(std::span<const float> a, std::span<const float> b, std::span<const float> means, int dim);

/// Fraction of samples whose nearest component equals the prompted label.
double condition_accuracy(std::span<const float> samples, std::span<const int> labels, std::span<const float> means,
                          int dim);

}  // namespace hsd::eval
