#pragma once

#include <string>
#include <vector>

#include "hsd/denoiser/architecture.hpp"

namespace hsd::eval {

struct FlopsEntry {
  std::string layer;
  double flops = 0.0;
};

// Counting convention (one forward pass, one sample):
//   linear map in -> out applied to r rows: r * (2 * in * out + out) with bias, r * 2 * in * out without;
//   attention core over S queries and L keys, h heads of width e: 2 * S * L * e * h for the
//   scores plus the same for the value mix.
// Normalization, activations, softmax and residual adds are not counted.
double linear_flops(int in, int out, bool bias, int rows = 1);
double attention_core_flops(int queries, int keys, int heads, int head_dim);

/// Per-layer breakdown in execution order.
std::vector<FlopsEntry> flops_breakdown(const denoiser::ArchitectureDescriptor& desc);

/// Sum of flops_breakdown.
double flops_count(const denoiser::ArchitectureDescriptor& desc);

/// Network evaluations per sampler step: 1 when guidance reduces to a single branch
/// (w == 0 or w == 1), otherwise 2.
int forwards_per_step(double guidance_scale);

}  // namespace hsd::eval
