#include "hsd/hybrid/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "hsd/denoiser/guidance.hpp"

namespace hsd::hybrid {

using diffusion::LatentState;
using diffusion::NoiseSchedule;
using diffusion::SolverHistory;

namespace {

void check_model_schedule(const Network<float>& net, const NoiseSchedule& schedule, const char* who) {
  if (net.descriptor().train_steps != schedule.num_steps())
    throw std::invalid_argument(std::string(who) + ": model was built for " +
                                std::to_string(net.descriptor().train_steps) + " training steps, schedule has " +
                                std::to_string(schedule.num_steps()));
}

std::vector<float> null_tokens(const Network<float>& net) {
  if (!net.descriptor().has_attention()) return {};
  return net.condition_tokens(net.descriptor().null_class());
}

void check_tokens(const Network<float>& net, std::span<const float> tokens, const char* who) {
  const std::size_t want = net.descriptor().has_attention() ? static_cast<std::size_t>(net.descriptor().condition_width()) : 0;
  if (tokens.size() != want)
    throw std::invalid_argument(std::string(who) + ": condition has " + std::to_string(tokens.size()) +
                                " values, model expects " + std::to_string(want));
}

}  // namespace

void HybridPlan::validate(const NoiseSchedule& schedule) const {
  if (!large || !small) throw std::invalid_argument("hybrid plan: both models are required");
  if (large->descriptor().latent_dim != small->descriptor().latent_dim)
    throw std::invalid_argument("hybrid plan: models disagree on latent dimension");
  check_model_schedule(*large, schedule, "hybrid plan (large)");
  check_model_schedule(*small, schedule, "hybrid plan (small)");
  sampler.validate(schedule.num_steps());
  if (cloud_steps < 0 || cloud_steps > total_steps())
    throw std::invalid_argument("hybrid plan: cloud_steps must be in [0, " + std::to_string(total_steps()) + "]");
}

ModelRole select_model(int step_position, const HybridPlan& plan, int start_position) {
  if (step_position < start_position || step_position >= plan.total_steps())
    throw std::out_of_range("select_model: position " + std::to_string(step_position) + " outside [" +
                            std::to_string(start_position) + ", " + std::to_string(plan.total_steps()) + ")");
  return step_position < start_position + plan.cloud_steps ? ModelRole::large : ModelRole::small;
}

std::vector<float> resolve_condition(const Network<float>& model, const ConditionInput& cond) {
  if (!cond.tokens.empty()) {
    check_tokens(model, cond.tokens, "resolve_condition");
    return cond.tokens;
  }
  if (!model.descriptor().has_attention()) return {};
  if (cond.class_id < 0 || cond.class_id > model.descriptor().null_class())
    throw std::out_of_range("resolve_condition: class id " + std::to_string(cond.class_id) + " out of range");
  return model.condition_tokens(cond.class_id);
}

void write_trace_jsonl(std::ostream& os, std::span<const TraceRecord> trace) {
  for (const auto& r : trace) {
    nlohmann::json j{{"position", r.position},
                     {"t", r.t},
                     {"t_next", r.t_next},
                     {"role", denoiser::to_string(r.role)},
                     {"latent", r.latent}};
    os << j.dump() << '\n';
  }
}

int img2img_start_position(int n, double strength) {
  if (!(strength > 0.0 && strength <= 1.0)) throw std::invalid_argument("img2img strength must be in (0, 1]");
  const int steps = static_cast<int>(std::floor(strength * n + 0.5));
  if (steps < 1) throw std::invalid_argument("img2img strength too small for " + std::to_string(n) + " steps");
  return n - steps;
}

HandoffPacket make_handoff(const LatentState& state, int position, int split_position, const std::vector<int>& ts,
                           const CloudRequest& request, const SolverHistory& history, int num_tokens, int token_dim) {
  if (position != split_position)
    throw std::logic_error("make_handoff: called at position " + std::to_string(position) + ", split is at " +
                           std::to_string(split_position));
  const int n = static_cast<int>(ts.size());
  if (position < 0 || position > n) throw std::out_of_range("make_handoff: position outside the trajectory");
  const int expected_t = position < n ? ts[static_cast<std::size_t>(position)] : 0;
  if (state.t != expected_t) throw std::logic_error("make_handoff: latent is not at the split timestep");

  HandoffPacket p;
  p.precision = request.precision;
  p.sampler = request.sampler.kind;
  p.rng_seed = request.seed;
  p.step_position = static_cast<std::uint32_t>(position);
  p.total_steps = static_cast<std::uint32_t>(n);
  p.guidance_scale = request.sampler.guidance_scale;
  p.eta = request.sampler.eta;
  p.remaining.assign(ts.begin() + position, ts.end());
  p.num_tokens = static_cast<std::uint32_t>(num_tokens);
  p.token_dim = static_cast<std::uint32_t>(token_dim);
  if (!request.reset_history) p.history = history;
  p.latent = state.z;
  p.tokens = request.cond_tokens;
  p.validate();
  return p;
}

CloudRequest make_cloud_request(const HybridPlan& plan, std::uint64_t seed, std::vector<float> cond_tokens) {
  CloudRequest r;
  r.seed = seed;
  r.cond_tokens = std::move(cond_tokens);
  r.sampler = plan.sampler;
  r.cloud_steps = plan.cloud_steps;
  r.reset_history = plan.reset_history;
  r.precision = plan.precision;
  return r;
}

CloudPhaseResult cloud_phase(const Network<float>& large, const NoiseSchedule& schedule, const CloudRequest& req) {
  check_model_schedule(large, schedule, "cloud_phase");
  req.sampler.validate(schedule.num_steps());
  check_tokens(large, req.cond_tokens, "cloud_phase");
  const auto& desc = large.descriptor();
  const int d = desc.latent_dim;
  const int n = req.sampler.num_inference_steps;
  const auto ts = diffusion::inference_timesteps(schedule.num_steps(), n);

  CloudPhaseResult out;
  out.start_position = req.init_latent ? img2img_start_position(n, req.strength) : 0;
  const int start = out.start_position;
  if (req.cloud_steps < 0 || req.cloud_steps > n - start)
    throw std::invalid_argument("cloud_phase: cloud_steps must be in [0, " + std::to_string(n - start) + "]");

  LatentState state;
  state.rng_seed = req.seed;
  state.t = ts[static_cast<std::size_t>(start)];
  const auto noise0 = diffusion::initial_noise(req.seed, d);
  if (req.init_latent) {
    if (req.init_latent->size() != static_cast<std::size_t>(d))
      throw std::invalid_argument("cloud_phase: initial latent has the wrong dimension");
    state.z = diffusion::q_sample(*req.init_latent, state.t, noise0, schedule);
  } else {
    state.z = noise0;
  }

  const auto model = denoiser::make_eps_model(large, req.cond_tokens, null_tokens(large), req.sampler.guidance_scale);
  SolverHistory history;
  const int split = start + req.cloud_steps;
  for (int pos = start; pos < split; ++pos) {
    const auto noise = diffusion::step_noise(req.seed, pos, d);
    const int from = state.t;
    auto r = diffusion::advance(req.sampler, model, state, history, schedule,
                                diffusion::target_timestep(ts, static_cast<std::size_t>(pos)), noise);
    state = std::move(r.state);
    history = std::move(r.history);
    out.trace.push_back({pos, from, state.t, ModelRole::large, state.z});
  }
  out.large_steps = req.cloud_steps;
  const int m = desc.has_attention() ? desc.num_condition_tokens : 0;
  const int dim = desc.has_attention() ? desc.model_dim : 0;
  out.packet = make_handoff(state, split, split, ts, req, history, m, dim);
  return out;
}

EdgePhaseResult edge_phase(const Network<float>& small, const NoiseSchedule& schedule, const HandoffPacket& packet,
                           const diffusion::LatentCodec& codec) {
  packet.validate();
  check_model_schedule(small, schedule, "edge_phase");
  const auto& desc = small.descriptor();
  const int d = desc.latent_dim;
  if (packet.latent_dim() != d) throw std::invalid_argument("edge_phase: packet latent dimension mismatch");
  check_tokens(small, packet.tokens, "edge_phase");
  if (desc.has_attention() &&
      (static_cast<int>(packet.num_tokens) != desc.num_condition_tokens || static_cast<int>(packet.token_dim) != desc.model_dim))
    throw std::invalid_argument("edge_phase: packet token shape mismatch");

  diffusion::SamplerConfig cfg{packet.sampler, static_cast<int>(packet.total_steps), packet.guidance_scale, packet.eta};
  cfg.validate(schedule.num_steps());
  const auto ts = diffusion::inference_timesteps(schedule.num_steps(), cfg.num_inference_steps);
  if (!std::equal(packet.remaining.begin(), packet.remaining.end(), ts.begin() + packet.step_position))
    throw std::invalid_argument("edge_phase: remaining timesteps do not match the schedule");

  const auto model = denoiser::make_eps_model(small, packet.tokens, null_tokens(small), cfg.guidance_scale);
  EdgePhaseResult out;
  out.state = {packet.latent, packet.current_t(), packet.rng_seed};
  SolverHistory history = packet.history;
  const int start = static_cast<int>(packet.step_position);
  for (std::size_t i = 0; i < packet.remaining.size(); ++i) {
    const int pos = start + static_cast<int>(i);
    const auto noise = diffusion::step_noise(packet.rng_seed, pos, d);
    const int from = out.state.t;
    auto r = diffusion::advance(cfg, model, out.state, history, schedule,
                                diffusion::target_timestep(ts, static_cast<std::size_t>(pos)), noise);
    out.state = std::move(r.state);
    history = std::move(r.history);
    out.trace.push_back({pos, from, out.state.t, ModelRole::small, out.state.z});
  }
  out.small_steps = static_cast<int>(packet.remaining.size());
  if (codec.latent_dim() != d) throw std::invalid_argument("edge_phase: codec latent dimension mismatch");
  out.sample = codec.decode(out.state.z);
  return out;
}

namespace {

HybridResult finish(const HybridPlan& plan, const NoiseSchedule& schedule, CloudPhaseResult cloud,
                    const diffusion::LatentCodec* codec) {
  const auto identity = diffusion::LatentCodec::identity(plan.small->descriptor().latent_dim);
  auto edge = edge_phase(*plan.small, schedule, cloud.packet, codec ? *codec : identity);
  HybridResult out;
  out.sample = std::move(edge.sample);
  out.final_state = std::move(edge.state);
  out.trace = std::move(cloud.trace);
  out.trace.insert(out.trace.end(), edge.trace.begin(), edge.trace.end());
  out.packet = std::move(cloud.packet);
  return out;
}

}  // namespace

HybridResult run_hybrid(const HybridPlan& plan, const NoiseSchedule& schedule, std::uint64_t seed,
                        const ConditionInput& condition, const diffusion::LatentCodec* codec) {
  plan.validate(schedule);
  auto req = make_cloud_request(plan, seed, resolve_condition(*plan.large, condition));
  return finish(plan, schedule, cloud_phase(*plan.large, schedule, req), codec);
}

HybridResult run_hybrid_img2img(const HybridPlan& plan, const NoiseSchedule& schedule, std::uint64_t seed,
                                const ConditionInput& condition, std::span<const float> init_data, double strength,
                                const diffusion::LatentCodec* codec) {
  plan.validate(schedule);
  const auto identity = diffusion::LatentCodec::identity(plan.large->descriptor().latent_dim);
  const auto& c = codec ? *codec : identity;
  auto req = make_cloud_request(plan, seed, resolve_condition(*plan.large, condition));
  req.init_latent = c.encode(init_data);
  req.strength = strength;
  return finish(plan, schedule, cloud_phase(*plan.large, schedule, req), codec);
}

}  // namespace hsd::hybrid
