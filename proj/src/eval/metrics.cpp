#include "hsd/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "hsd/core/rng.hpp"

namespace hsd::eval {

double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein2_1d: empty point set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  // Integrate (Fa^-1(u) - Fb^-1(u))^2 over the merged quantile breakpoints.
  std::size_t i = 0, j = 0;
  double u = 0.0, acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    const double diff = a[i] - b[j];
    acc += (next - u) * diff * diff;
    u = next;
    if (next_a <= next) ++i;
    if (next_b <= next) ++j;
  }
  return std::sqrt(std::max(0.0, acc));
}

std::vector<double> projection_directions(int dim, int num, std::uint64_t seed) {
  if (dim < 1 || num < 1) throw std::invalid_argument("projection_directions: dim and num must be positive");
  Rng rng(mix_seed(seed, 31));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(dim) * num);
  for (int p = 0; p < num; ++p) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double v = normal(rng);
        out[static_cast<std::size_t>(p * dim + k)] = v;
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (int k = 0; k < dim; ++k) out[static_cast<std::size_t>(p * dim + k)] /= norm;
  }
  return out;
}

double sliced_wasserstein(std::span<const float> a, std::span<const float> b, int dim, int num_projections,
                          std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("sliced_wasserstein: dim must be positive");
  if (a.empty() || b.empty()) throw std::invalid_argument("sliced_wasserstein: empty point set");
  if (a.size() % static_cast<std::size_t>(dim) != 0 || b.size() % static_cast<std::size_t>(dim) != 0)
    throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
  const auto dirs = projection_directions(dim, num_projections, seed);
  const std::size_t na = a.size() / static_cast<std::size_t>(dim), nb = b.size() / static_cast<std::size_t>(dim);
  double total = 0.0;
  std::vector<double> pa(na), pb(nb);
  for (int p = 0; p < num_projections; ++p) {
    const double* u = dirs.data() + static_cast<std::size_t>(p * dim);
    for (std::size_t i = 0; i < na; ++i) {
      double s = 0.0;
      for (int k = 0; k < dim; ++k) s += u[k] * a[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)];
      pa[i] = s;
    }
    for (std::size_t i = 0; i < nb; ++i) {
      double s = 0.0;
      for (int k = 0; k < dim; ++k) s += u[k] * b[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)];
      pb[i] = s;
    }
    total += wasserstein2_1d(pa, pb);
  }
  return total / num_projections;
}

int nearest_component(std::span<const float> point, std::span<const float> means, int dim) {
  if (point.size() != static_cast<std::size_t>(dim) || means.empty() || means.size() % static_cast<std::size_t>(dim))
    throw std::invalid_argument("nearest_component: dimension mismatch");
  const int c = static_cast<int>(means.size() / static_cast<std::size_t>(dim));
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int j = 0; j < c; ++j) {
    double d2 = 0.0;
    for (int k = 0; k < dim; ++k) {
      const double diff = static_cast<double>(point[static_cast<std::size_t>(k)]) - means[static_cast<std::size_t>(j * dim + k)];
      d2 += diff * diff;
    }
    if (d2 < best_d) {
      best_d = d2;
      best = j;
    }
  }
  return best;
}

double mode_agreement(std::span<const float> a, std::span<const float> b, std::span<const float> means, int dim) {
  if (a.size() != b.size()) throw std::invalid_argument("mode_agreement: sample lists differ in length");
  if (a.empty() || a.size() % static_cast<std::size_t>(dim)) throw std::invalid_argument("mode_agreement: bad shape");
  const std::size_t n = a.size() / static_cast<std::size_t>(dim);
  std::size_t same = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto pa = a.subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
    const auto pb = b.subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
    if (nearest_component(pa, means, dim) == nearest_component(pb, means, dim)) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(n);
}

double condition_accuracy(std::span<const float> samples, std::span<const int> labels, std::span<const float> means,
                          int dim) {
  if (samples.size() != labels.size() * static_cast<std::size_t>(dim) || labels.empty())
    throw std::invalid_argument("condition_accuracy: shape mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto p = samples.subspan(i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
    if (nearest_component(p, means, dim) == labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace hsd::eval
