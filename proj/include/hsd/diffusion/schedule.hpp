#pragma once

#include <span>
#include <string>
#include <vector>

namespace hsd::diffusion {

enum class ScheduleKind { linear, cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

/// Discrete variance schedule over training steps t = 1..T.
///
/// Coefficients are kept in double precision; alpha_bar(0) is defined as 1 so
/// that the final reverse step always targets the clean signal.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> betas, ScheduleKind kind, double beta_min, double beta_max);

  int num_steps() const { return static_cast<int>(betas_.size()); }
  ScheduleKind kind() const { return kind_; }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

  double beta(int t) const;       // t in [1, T]
  double alpha_bar(int t) const;  // t in [0, T]

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  ScheduleKind kind_ = ScheduleKind::linear;
  double beta_min_ = 0.0;
  double beta_max_ = 0.0;
};

NoiseSchedule build_schedule(int num_steps, double beta_min, double beta_max,
                             ScheduleKind kind = ScheduleKind::linear);

/// Closed-form forward process: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
std::vector<float> q_sample(std::span<const float> x0, int t, std::span<const float> eps,
                            const NoiseSchedule& schedule);

// Same map with the cumulative coefficient supplied directly; abar in [0, 1].
std::vector<float> q_sample(std::span<const float> x0, double alpha_bar, std::span<const float> eps);

}  // namespace hsd::diffusion
