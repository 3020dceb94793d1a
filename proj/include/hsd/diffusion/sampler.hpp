#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hsd/diffusion/schedule.hpp"

namespace hsd::diffusion {

enum class SamplerKind { ddpm, ddim, dpm2m };

SamplerKind parse_sampler_kind(const std::string& name);
std::string to_string(SamplerKind kind);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::dpm2m;
  int num_inference_steps = 25;
  double guidance_scale = 7.0;
  double eta = 0.0;  // ddim only

  void validate(int train_steps) const;
};

struct LatentState {
  std::vector<float> z;
  int t = 0;  // training-schedule step index, 0 = clean
  std::uint64_t rng_seed = 0;
};

/// Noise predictor for a fixed condition; guidance is folded in by the caller.
using EpsModel = std::function<std::vector<float>(std::span<const float> z, int t)>;

/// One prior noise prediction retained by the multistep solver.
struct HistoryEntry {
  int t = 0;
  std::vector<float> eps;

  bool operator==(const HistoryEntry&) const = default;
};
using SolverHistory = std::vector<HistoryEntry>;

/// Evenly spaced training steps, descending, first entry = T. Ties resolve to larger t.
std::vector<int> inference_timesteps(int train_steps, int num_inference_steps);

/// Step the trajectory lands on after position `pos` (0 after the last one).
int target_timestep(const std::vector<int>& timesteps, std::size_t pos);

/// (1 - w) * eps_uncond + w * eps_cond, exact at w = 0 and w = 1.
std::vector<float> cfg_combine(std::span<const float> eps_uncond, std::span<const float> eps_cond,
                               double w);

std::vector<float> predict_x0(std::span<const float> z, std::span<const float> eps, double alpha_bar_t);

double ddpm_posterior_variance(double alpha_bar_t, double alpha_bar_s);
double ddim_sigma(double alpha_bar_t, double alpha_bar_s, double eta);

// Closed-form updates from step t (alpha_bar_t) to an earlier step s (alpha_bar_s).
std::vector<float> ddpm_update(std::span<const float> z, std::span<const float> eps, double alpha_bar_t,
                               double alpha_bar_s, std::span<const float> noise);
std::vector<float> ddim_update(std::span<const float> z, std::span<const float> eps, double alpha_bar_t,
                               double alpha_bar_s, double eta, std::span<const float> noise);
std::vector<float> dpm2m_update(std::span<const float> z, std::span<const float> eps, int t, int s,
                                const SolverHistory& history, const NoiseSchedule& schedule);

// prev_t < 0 means t - 1.
LatentState ddpm_step(const EpsModel& model, const LatentState& state, const NoiseSchedule& schedule,
                      std::span<const float> noise, int prev_t = -1);
LatentState ddim_step(const EpsModel& model, const LatentState& state, const NoiseSchedule& schedule,
                      double eta = 0.0, std::span<const float> noise = {}, int prev_t = -1);

struct StepResult {
  LatentState state;
  SolverHistory history;
};

StepResult dpm2m_step(const EpsModel& model, const LatentState& state, const NoiseSchedule& schedule,
                      const SolverHistory& history, int prev_t = -1);

/// Dispatches one reverse step for any sampler kind. History is only kept by dpm2m.
StepResult advance(const SamplerConfig& config, const EpsModel& model, const LatentState& state,
                   const SolverHistory& history, const NoiseSchedule& schedule, int prev_t,
                   std::span<const float> noise);

/// Per-position ancestral noise, reproducible from (seed, position) alone.
std::vector<float> step_noise(std::uint64_t seed, int position, int dim);
/// z_T for a trajectory seed.
std::vector<float> initial_noise(std::uint64_t seed, int dim);

/// Whole trajectory with a single model, starting from initial_noise(seed).
LatentState sample(const EpsModel& model, const SamplerConfig& config, const NoiseSchedule& schedule,
                   std::uint64_t seed, int dim);

}  // namespace hsd::diffusion
