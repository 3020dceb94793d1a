#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace hsd {

// Row-major point set with one integer label (condition class) per point.
struct LabeledData {
  int dim = 0;
  std::vector<float> points;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const float> point(std::size_t i) const {
    return std::span<const float>(points).subspan(i * static_cast<std::size_t>(dim),
                                                  static_cast<std::size_t>(dim));
  }
  void validate() const {
    if (dim <= 0) throw std::invalid_argument("LabeledData: dim must be positive");
    if (points.size() != labels.size() * static_cast<std::size_t>(dim))
      throw std::invalid_argument("LabeledData: points/labels size mismatch");
  }
};

}  // namespace hsd
