#include "hsd/eval/dataset.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "hsd/core/rng.hpp"

namespace hsd::eval {

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "gaussian_mixture") return DatasetKind::gaussian_mixture;
  if (name == "two_moons") return DatasetKind::two_moons;
  throw std::invalid_argument("unknown dataset kind: " + name);
}

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::gaussian_mixture ? "gaussian_mixture" : "two_moons";
}

ToyDataset gen_dataset(DatasetKind kind, int n, int num_components, std::uint64_t seed,
                       const DatasetOptions& options) {
  if (num_components < 1) throw std::invalid_argument("gen_dataset: num_components must be positive");
  if (n < num_components) throw std::invalid_argument("gen_dataset: need n >= num_components");
  if (!(options.std >= 0.0)) throw std::invalid_argument("gen_dataset: std must be nonnegative");
  if (kind == DatasetKind::two_moons && num_components != 2)
    throw std::invalid_argument("gen_dataset: two_moons has exactly 2 components");

  ToyDataset ds;
  ds.kind = kind;
  ds.num_components = num_components;
  ds.component_std = options.std;
  ds.data.dim = 2;
  ds.data.points.reserve(static_cast<std::size_t>(n) * 2);
  ds.data.labels.reserve(static_cast<std::size_t>(n));
  Rng rng(mix_seed(seed, 5));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);

  if (kind == DatasetKind::gaussian_mixture) {
    for (int c = 0; c < num_components; ++c) {
      const double a = 2.0 * std::numbers::pi * c / num_components;
      ds.component_means.push_back(static_cast<float>(options.radius * std::cos(a)));
      ds.component_means.push_back(static_cast<float>(options.radius * std::sin(a)));
    }
    for (int i = 0; i < n; ++i) {
      const int c = i % num_components;
      for (int j = 0; j < 2; ++j)
        ds.data.points.push_back(static_cast<float>(ds.component_means[static_cast<std::size_t>(2 * c + j)] +
                                                    options.std * noise(rng)));
      ds.data.labels.push_back(c);
    }
  } else {
    // Scaled so the moons span roughly [-3, 3] like the mixture.
    constexpr double scale = 2.0;
    const double cx = 0.5, cy = 0.25;
    for (int i = 0; i < n; ++i) {
      const int c = i % 2;
      const double th = angle(rng);
      double x = c == 0 ? std::cos(th) : 1.0 - std::cos(th);
      double y = c == 0 ? std::sin(th) : 0.5 - std::sin(th);
      x = scale * (x - cx) + options.std * noise(rng);
      y = scale * (y - cy) + options.std * noise(rng);
      ds.data.points.push_back(static_cast<float>(x));
      ds.data.points.push_back(static_cast<float>(y));
      ds.data.labels.push_back(c);
    }
    // Analytic arc means: upper (0, 2/pi), lower (1, 0.5 - 2/pi), then the same affine map.
    const double m = 2.0 / std::numbers::pi;
    ds.component_means = {static_cast<float>(scale * (0.0 - cx)), static_cast<float>(scale * (m - cy)),
                          static_cast<float>(scale * (1.0 - cx)), static_cast<float>(scale * (0.5 - m - cy))};
  }
  return ds;
}

}  // namespace hsd::eval
