#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "hsd/core/rng.hpp"
#include "hsd/denoiser/architecture.hpp"
#include "hsd/denoiser/network.hpp"

namespace testutil {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(HSD_FIXTURE_DIR) / name;
}

// Small descriptor that still has every layer type.
inline hsd::denoiser::ArchitectureDescriptor tiny_descriptor(int train_steps = 50) {
  hsd::denoiser::ArchitectureDescriptor d;
  d.latent_dim = 2;
  d.num_tokens = 2;
  d.model_dim = 4;
  d.res_hidden = {6, 5};
  d.attention_position = 1;
  d.self_attention = {4, 2};
  d.cross_attention = {4, 2};
  d.num_condition_tokens = 2;
  d.num_classes = 3;
  d.time_embed_dim = 4;
  d.time_hidden = 5;
  d.train_steps = train_steps;
  return d;
}

// Mid-sized descriptor for sampling tests; runs fast but is not trivial.
inline hsd::denoiser::ArchitectureDescriptor small_descriptor(int train_steps = 100) {
  hsd::denoiser::ArchitectureDescriptor d;
  d.latent_dim = 2;
  d.num_tokens = 2;
  d.model_dim = 8;
  d.res_hidden = {12, 10, 8};
  d.attention_position = 1;
  d.self_attention = {8, 2};
  d.cross_attention = {8, 4};
  d.num_condition_tokens = 2;
  d.num_classes = 4;
  d.time_embed_dim = 8;
  d.time_hidden = 8;
  d.train_steps = train_steps;
  return d;
}

// Perturbs every parameter so LayerNorm gains and biases are not at their defaults.
template <class Scalar>
void jitter(hsd::denoiser::Network<Scalar>& net, std::uint64_t seed, double scale = 0.3) {
  hsd::Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& t : net.params())
    for (auto& v : t.data) v = static_cast<Scalar>(static_cast<double>(v) + n(rng));
}

inline std::vector<float> gaussian(std::uint64_t seed, std::size_t n, double scale = 1.0) {
  hsd::Rng rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  std::vector<float> out(n);
  for (auto& v : out) v = static_cast<float>(d(rng));
  return out;
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace testutil
