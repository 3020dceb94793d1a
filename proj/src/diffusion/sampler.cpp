#include "hsd/diffusion/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "hsd/core/rng.hpp"

namespace hsd::diffusion {

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "ddpm") return SamplerKind::ddpm;
  if (name == "ddim") return SamplerKind::ddim;
  if (name == "dpm2m") return SamplerKind::dpm2m;
  throw std::invalid_argument("unknown sampler kind: " + name);
}

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::ddpm: return "ddpm";
    case SamplerKind::ddim: return "ddim";
    case SamplerKind::dpm2m: return "dpm2m";
  }
  return "?";
}

void SamplerConfig::validate(int train_steps) const {
  if (num_inference_steps < 1 || num_inference_steps > train_steps)
    throw std::invalid_argument("num_inference_steps must be in [1, T]");
  if (!(guidance_scale >= 0.0)) throw std::invalid_argument("guidance_scale must be nonnegative");
  if (!(eta >= 0.0)) throw std::invalid_argument("eta must be nonnegative");
}

std::vector<int> inference_timesteps(int train_steps, int n) {
  if (n < 1 || n > train_steps) throw std::invalid_argument("inference_timesteps: need 1 <= n <= T");
  std::vector<int> ts(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    ts[static_cast<std::size_t>(i)] =
        train_steps - static_cast<int>((static_cast<long long>(i) * train_steps) / n);
  return ts;
}

int target_timestep(const std::vector<int>& ts, std::size_t pos) {
  if (pos >= ts.size()) throw std::out_of_range("target_timestep: position out of range");
  return pos + 1 < ts.size() ? ts[pos + 1] : 0;
}

std::vector<float> cfg_combine(std::span<const float> u, std::span<const float> c, double w) {
  if (u.size() != c.size()) throw std::invalid_argument("cfg_combine: dimension mismatch");
  std::vector<float> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    out[i] = static_cast<float>((1.0 - w) * u[i] + w * c[i]);
  return out;
}

std::vector<float> predict_x0(std::span<const float> z, std::span<const float> eps, double ab) {
  if (z.size() != eps.size()) throw std::invalid_argument("predict_x0: dimension mismatch");
  const double a = std::sqrt(ab);
  const double s = std::sqrt(1.0 - ab);
  std::vector<float> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<float>((z[i] - s * eps[i]) / a);
  return out;
}

double ddpm_posterior_variance(double ab_t, double ab_s) {
  const double beta = 1.0 - ab_t / ab_s;
  return beta * (1.0 - ab_s) / (1.0 - ab_t);
}

double ddim_sigma(double ab_t, double ab_s, double eta) {
  return eta * std::sqrt((1.0 - ab_s) / (1.0 - ab_t) * (1.0 - ab_t / ab_s));
}

namespace {

void check_dims(std::span<const float> z, std::span<const float> eps, std::span<const float> noise,
                bool noise_required) {
  if (z.size() != eps.size()) throw std::invalid_argument("sampler: eps dimension mismatch");
  if ((noise_required || !noise.empty()) && noise.size() != z.size())
    throw std::invalid_argument("sampler: noise dimension mismatch");
}

int resolve_prev(const LatentState& state, int prev_t) {
  if (state.t < 1) throw std::invalid_argument("sampler step needs t >= 1");
  const int s = prev_t < 0 ? state.t - 1 : prev_t;
  if (s >= state.t) throw std::invalid_argument("sampler step target must precede t");
  return s;
}

}  // namespace

std::vector<float> ddpm_update(std::span<const float> z, std::span<const float> eps, double ab_t,
                               double ab_s, std::span<const float> noise) {
  check_dims(z, eps, noise, false);
  const double alpha = ab_t / ab_s;
  const double beta = 1.0 - alpha;
  const double sa_t = std::sqrt(ab_t), so_t = std::sqrt(1.0 - ab_t);
  const double c_x0 = std::sqrt(ab_s) * beta / (1.0 - ab_t);
  const double c_xt = std::sqrt(alpha) * (1.0 - ab_s) / (1.0 - ab_t);
  const double sigma = std::sqrt(ddpm_posterior_variance(ab_t, ab_s));
  std::vector<float> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double x0 = (z[i] - so_t * eps[i]) / sa_t;
    double v = c_x0 * x0 + c_xt * z[i];
    if (!noise.empty()) v += sigma * noise[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

std::vector<float> ddim_update(std::span<const float> z, std::span<const float> eps, double ab_t,
                               double ab_s, double eta, std::span<const float> noise) {
  check_dims(z, eps, noise, false);
  const double sa_t = std::sqrt(ab_t), so_t = std::sqrt(1.0 - ab_t);
  const double sa_s = std::sqrt(ab_s);
  const double sigma = eta > 0.0 ? ddim_sigma(ab_t, ab_s, eta) : 0.0;
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_s - sigma * sigma));
  std::vector<float> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double x0 = (z[i] - so_t * eps[i]) / sa_t;
    double v = sa_s * x0 + dir * eps[i];
    if (sigma > 0.0 && !noise.empty()) v += sigma * noise[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

std::vector<float> dpm2m_update(std::span<const float> z, std::span<const float> eps, int t, int s,
                                const SolverHistory& history, const NoiseSchedule& schedule) {
  if (history.size() > 1) throw std::invalid_argument("dpm2m: history holds at most one entry");
  if (!history.empty()) {
    if (history[0].t <= t) throw std::invalid_argument("dpm2m: history timestep must exceed current t");
    if (history[0].eps.size() != z.size()) throw std::invalid_argument("dpm2m: history dimension mismatch");
  }
  const double ab_t = schedule.alpha_bar(t);
  const double ab_s = schedule.alpha_bar(s);
  auto out = ddim_update(z, eps, ab_t, ab_s, 0.0, {});
  // Lower-order final step: log-SNR is unbounded at s = 0.
  if (history.empty() || s == 0) return out;

  auto lambda = [](double ab) { return 0.5 * std::log(ab / (1.0 - ab)); };
  const double ab_p = schedule.alpha_bar(history[0].t);
  const double h = lambda(ab_s) - lambda(ab_t);
  const double h0 = lambda(ab_t) - lambda(ab_p);
  const double r0 = h0 / h;
  const double a_t = std::sqrt(ab_t), s_t = std::sqrt(1.0 - ab_t);
  const double a_s = std::sqrt(ab_s), s_s = std::sqrt(1.0 - ab_s);
  const double phi = a_s * s_t / a_t - s_s;  // sigma_s * (exp(h) - 1)
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d1 = (static_cast<double>(eps[i]) - history[0].eps[i]) / r0;
    out[i] = static_cast<float>(out[i] + (-0.5 * phi * d1));
  }
  return out;
}

LatentState ddpm_step(const EpsModel& model, const LatentState& state, const NoiseSchedule& schedule,
                      std::span<const float> noise, int prev_t) {
  const int s = resolve_prev(state, prev_t);
  const auto eps = model(state.z, state.t);
  return {ddpm_update(state.z, eps, schedule.alpha_bar(state.t), schedule.alpha_bar(s), noise), s,
          state.rng_seed};
}

LatentState ddim_step(const EpsModel& model, const LatentState& state, const NoiseSchedule& schedule,
                      double eta, std::span<const float> noise, int prev_t) {
  const int s = resolve_prev(state, prev_t);
  const auto eps = model(state.z, state.t);
  return {ddim_update(state.z, eps, schedule.alpha_bar(state.t), schedule.alpha_bar(s), eta, noise), s,
          state.rng_seed};
}

StepResult dpm2m_step(const EpsModel& model, const LatentState& state, const NoiseSchedule& schedule,
                      const SolverHistory& history, int prev_t) {
  const int s = resolve_prev(state, prev_t);
  auto eps = model(state.z, state.t);
  auto z = dpm2m_update(state.z, eps, state.t, s, history, schedule);
  return {{std::move(z), s, state.rng_seed}, {{state.t, std::move(eps)}}};
}

StepResult advance(const SamplerConfig& config, const EpsModel& model, const LatentState& state,
                   const SolverHistory& history, const NoiseSchedule& schedule, int prev_t,
                   std::span<const float> noise) {
  switch (config.kind) {
    case SamplerKind::ddpm:
      return {ddpm_step(model, state, schedule, noise, prev_t), {}};
    case SamplerKind::ddim:
      return {ddim_step(model, state, schedule, config.eta, config.eta > 0.0 ? noise : std::span<const float>{},
                        prev_t),
              {}};
    case SamplerKind::dpm2m:
      return dpm2m_step(model, state, schedule, history, prev_t);
  }
  throw std::logic_error("unreachable sampler kind");
}

std::vector<float> step_noise(std::uint64_t seed, int position, int dim) {
  Rng rng(mix_seed(seed, 1000 + static_cast<std::uint64_t>(position)));
  return normal_vector(rng, static_cast<std::size_t>(dim));
}

std::vector<float> initial_noise(std::uint64_t seed, int dim) {
  Rng rng(mix_seed(seed, 0));
  return normal_vector(rng, static_cast<std::size_t>(dim));
}

LatentState sample(const EpsModel& model, const SamplerConfig& config, const NoiseSchedule& schedule,
                   std::uint64_t seed, int dim) {
  config.validate(schedule.num_steps());
  const auto ts = inference_timesteps(schedule.num_steps(), config.num_inference_steps);
  LatentState state{initial_noise(seed, dim), ts.front(), seed};
  SolverHistory history;
  for (std::size_t pos = 0; pos < ts.size(); ++pos) {
    const auto noise = step_noise(seed, static_cast<int>(pos), dim);
    auto r = advance(config, model, state, history, schedule, target_timestep(ts, pos), noise);
    state = std::move(r.state);
    history = std::move(r.history);
  }
  return state;
}

}  // namespace hsd::diffusion
