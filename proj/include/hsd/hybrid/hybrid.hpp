#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "hsd/denoiser/network.hpp"
#include "hsd/diffusion/codec.hpp"
#include "hsd/diffusion/sampler.hpp"
#include "hsd/hybrid/handoff.hpp"

namespace hsd::hybrid {

using denoiser::ModelRole;
using denoiser::Network;

/// Large model for the first `cloud_steps` inference positions, small model for the rest.
struct HybridPlan {
  const Network<float>* large = nullptr;
  const Network<float>* small = nullptr;
  diffusion::SamplerConfig sampler;
  int cloud_steps = 0;
  bool reset_history = false;  // drop solver history at the handoff (ablation)
  TensorPrecision precision = TensorPrecision::fp32;

  int total_steps() const { return sampler.num_inference_steps; }
  void validate(const diffusion::NoiseSchedule& schedule) const;
};

/// Large iff step_position < start_position + cloud_steps.
ModelRole select_model(int step_position, const HybridPlan& plan, int start_position = 0);

/// Class id resolved against the large model, or explicit tokens.
struct ConditionInput {
  int class_id = -1;
  std::vector<float> tokens;

  static ConditionInput from_class(int c) { return {c, {}}; }
  static ConditionInput from_tokens(std::vector<float> t) { return {-1, std::move(t)}; }
};

std::vector<float> resolve_condition(const Network<float>& model, const ConditionInput& cond);

struct TraceRecord {
  int position = 0;
  int t = 0;       // timestep the step starts from
  int t_next = 0;  // timestep it lands on
  ModelRole role = ModelRole::large;
  std::vector<float> latent;  // after the step

  bool operator==(const TraceRecord&) const = default;
};

void write_trace_jsonl(std::ostream& os, std::span<const TraceRecord> trace);

/// Everything the cloud side needs for phase one.
struct CloudRequest {
  std::uint64_t seed = 0;
  std::vector<float> cond_tokens;
  diffusion::SamplerConfig sampler;
  int cloud_steps = 0;
  bool reset_history = false;
  TensorPrecision precision = TensorPrecision::fp32;
  // Image-to-image entry: a clean latent noised to the start step given by strength.
  std::optional<std::vector<float>> init_latent;
  double strength = 1.0;
};

/// First inference position of an image-to-image run: N - round(strength * N).
int img2img_start_position(int num_inference_steps, double strength);

struct CloudPhaseResult {
  HandoffPacket packet;
  std::vector<TraceRecord> trace;
  int start_position = 0;
  int large_steps = 0;
};

/// Runs the large-model positions and packages the handoff state.
CloudPhaseResult cloud_phase(const Network<float>& large, const diffusion::NoiseSchedule& schedule,
                             const CloudRequest& request);

struct EdgePhaseResult {
  diffusion::LatentState state;   // final latent
  std::vector<float> sample;      // decoded
  std::vector<TraceRecord> trace;
  int small_steps = 0;
};

/// Finishes a trajectory from a packet with the small model and decodes it.
EdgePhaseResult edge_phase(const Network<float>& small, const diffusion::NoiseSchedule& schedule,
                           const HandoffPacket& packet, const diffusion::LatentCodec& codec);

/// Builds the packet at the split point. Throws std::logic_error when `position` is not the split.
HandoffPacket make_handoff(const diffusion::LatentState& state, int position, int split_position,
                           const std::vector<int>& timesteps, const CloudRequest& request,
                           const diffusion::SolverHistory& history, int num_tokens, int token_dim);

struct HybridResult {
  std::vector<float> sample;
  diffusion::LatentState final_state;
  std::vector<TraceRecord> trace;
  HandoffPacket packet;
};

/// In-process two-phase sampling. A null codec means identity.
HybridResult run_hybrid(const HybridPlan& plan, const diffusion::NoiseSchedule& schedule, std::uint64_t seed,
                        const ConditionInput& condition, const diffusion::LatentCodec* codec = nullptr);

/// Image-to-image: the data point is encoded with the codec and noised to the start step.
HybridResult run_hybrid_img2img(const HybridPlan& plan, const diffusion::NoiseSchedule& schedule,
                                std::uint64_t seed, const ConditionInput& condition,
                                std::span<const float> init_data, double strength,
                                const diffusion::LatentCodec* codec = nullptr);

CloudRequest make_cloud_request(const HybridPlan& plan, std::uint64_t seed, std::vector<float> cond_tokens);

}  // namespace hsd::hybrid
