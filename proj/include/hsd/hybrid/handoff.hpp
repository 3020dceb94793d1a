#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hsd/diffusion/sampler.hpp"

namespace hsd::hybrid {

enum class TensorPrecision : std::uint8_t { fp32 = 0, fp16 = 1 };

inline constexpr std::uint16_t kHandoffVersion = 1;

/// State shipped from the cloud to the edge at the split point.
///
/// Tensors are held in full precision in memory; `precision` only selects the
/// wire encoding. fp16 is lossy, fp32 round-trips bit-exactly.
struct HandoffPacket {
  std::uint16_t version = kHandoffVersion;
  TensorPrecision precision = TensorPrecision::fp16;
  diffusion::SamplerKind sampler = diffusion::SamplerKind::dpm2m;
  std::uint64_t rng_seed = 0;
  std::uint32_t step_position = 0;  // first position the edge runs
  std::uint32_t total_steps = 0;    // inference steps of the whole trajectory
  double guidance_scale = 7.0;
  double eta = 0.0;
  std::vector<int> remaining;  // timesteps still to run, descending; remaining[0] = current t
  std::uint32_t num_tokens = 0;
  std::uint32_t token_dim = 0;
  diffusion::SolverHistory history;  // 0 or 1 entries
  std::vector<float> latent;
  std::vector<float> tokens;  // num_tokens x token_dim

  int latent_dim() const { return static_cast<int>(latent.size()); }
  int current_t() const { return remaining.empty() ? 0 : remaining.front(); }

  /// Structural checks shared by encoder, decoder and the edge.
  void validate() const;

  std::vector<std::uint8_t> encode() const;
  static HandoffPacket decode(std::span<const std::uint8_t> bytes);

  /// Exact encode().size(), computed from the shapes.
  std::size_t encoded_size() const;

  bool operator==(const HandoffPacket&) const = default;
};

std::size_t element_bytes(TensorPrecision precision);

/// Bytes taken by the latent and condition tensors alone.
std::size_t tensor_payload_bytes(std::size_t latent_elems, std::size_t token_elems, TensorPrecision precision);

/// Fixed bytes of an encoded packet besides the tensors, for R remaining steps.
std::size_t handoff_overhead_bytes(std::size_t remaining_steps, bool has_history);

}  // namespace hsd::hybrid
