#include "hsd/diffusion/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hsd::diffusion {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::linear;
  if (name == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule kind: " + name);
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::linear ? "linear" : "cosine";
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas, ScheduleKind kind, double beta_min,
                             double beta_max)
    : betas_(std::move(betas)), kind_(kind), beta_min_(beta_min), beta_max_(beta_max) {
  alpha_bars_.resize(betas_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    if (!(betas_[i] > 0.0 && betas_[i] < 1.0))
      throw std::invalid_argument("beta outside (0,1) at t=" + std::to_string(i + 1));
    prod *= 1.0 - betas_[i];
    alpha_bars_[i] = prod;
  }
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > num_steps()) throw std::out_of_range("beta: t out of range");
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > num_steps()) throw std::out_of_range("alpha_bar: t out of range");
  return alpha_bars_[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule build_schedule(int num_steps, double beta_min, double beta_max, ScheduleKind kind) {
  if (num_steps < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw std::invalid_argument("schedule needs 0 < beta_min <= beta_max < 1");

  std::vector<double> betas(static_cast<std::size_t>(num_steps));
  if (kind == ScheduleKind::linear) {
    for (int i = 0; i < num_steps; ++i) {
      const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
      betas[static_cast<std::size_t>(i)] = beta_min + frac * (beta_max - beta_min);
    }
  } else {
    // Cosine cumulative-signal curve, per-step betas clipped into [beta_min, beta_max].
    constexpr double s = 0.008;
    auto f = [&](int t) {
      const double x = (static_cast<double>(t) / num_steps + s) / (1.0 + s) * std::numbers::pi / 2;
      return std::cos(x) * std::cos(x);
    };
    for (int t = 1; t <= num_steps; ++t) {
      const double b = 1.0 - f(t) / f(t - 1);
      betas[static_cast<std::size_t>(t - 1)] = std::clamp(b, beta_min, beta_max);
    }
  }
  return NoiseSchedule(std::move(betas), kind, beta_min, beta_max);
}

std::vector<float> q_sample(std::span<const float> x0, int t, std::span<const float> eps,
                            const NoiseSchedule& schedule) {
  if (x0.size() != eps.size()) throw std::invalid_argument("q_sample: dimension mismatch");
  if (t < 1 || t > schedule.num_steps()) throw std::out_of_range("q_sample: t out of range");
  return q_sample(x0, schedule.alpha_bar(t), eps);
}

std::vector<float> q_sample(std::span<const float> x0, double ab, std::span<const float> eps) {
  if (x0.size() != eps.size()) throw std::invalid_argument("q_sample: dimension mismatch");
  if (!(ab >= 0.0 && ab <= 1.0)) throw std::invalid_argument("q_sample: alpha_bar outside [0,1]");
  const double a = std::sqrt(ab);
  const double s = std::sqrt(1.0 - ab);
  std::vector<float> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i)
    out[i] = static_cast<float>(a * x0[i] + s * eps[i]);
  return out;
}

}  // namespace hsd::diffusion
