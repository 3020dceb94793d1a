#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsd/core/data.hpp"
#include "hsd/core/rng.hpp"
#include "hsd/denoiser/network.hpp"
#include "hsd/diffusion/schedule.hpp"

namespace hsd::denoiser {

struct TrainConfig {
  double learning_rate = 1e-3;
  double final_lr_fraction = 1.0;  // cosine anneal to learning_rate * fraction; 1 keeps it constant
  int batch_size = 64;
  int steps = 2000;
  double cond_dropout = 0.1;
  std::uint64_t seed = 0;
  int log_every = 100;
  int validation_size = 256;
  std::vector<std::string> frozen;  // parameter names excluded from updates
};

struct DistillConfig {
  double lambda_outkd = 1.0;   // weight of block-output MSE
  double lambda_featkd = 1.0;  // weight of final-output MSE
  double learning_rate = 1e-3;
  double final_lr_fraction = 1.0;
  int batch_size = 64;
  int steps = 5000;
  double cond_dropout = 0.1;
  std::uint64_t seed = 0;
  int log_every = 100;
  int validation_size = 256;
  std::vector<std::string> frozen{"cond.embed"};

  void validate() const;
};

struct LossTerms {
  double task = 0.0;
  double out_kd = 0.0;   // block outputs, student vs teacher
  double feat_kd = 0.0;  // final eps, student vs teacher
  double total = 0.0;
};

struct LogEntry {
  int step = 0;
  LossTerms train;
  LossTerms validation;
};

struct TrainingLog {
  std::vector<LogEntry> entries;
  LossTerms initial_validation;
  LossTerms final_validation;
  int steps_run = 0;
};

/// Noised training examples: z_t = q_sample(x0, t, eps), classes with CFG dropout applied.
struct Batch {
  int size = 0;
  std::vector<float> z_t;
  std::vector<int> t;
  std::vector<float> eps;
  std::vector<int> classes;
};

Batch make_batch(const LabeledData& data, const diffusion::NoiseSchedule& schedule, Rng& rng, int batch_size,
                 double cond_dropout, int null_class);

/// Mean squared eps error; accumulates its gradient into `grads` when non-null.
template <class Scalar>
LossTerms task_loss(const Network<Scalar>& net, const Batch& batch, ParamStore<Scalar>* grads);

/// Task + lambda_outkd * block MSE + lambda_featkd * final-output MSE. Terms with a
/// zero weight are reported but contribute no gradient.
template <class Scalar>
LossTerms distill_loss(const Network<Scalar>& student, const Network<Scalar>& teacher, const Batch& batch,
                       double lambda_outkd, double lambda_featkd, ParamStore<Scalar>* grads);

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  Adam(const ParamStore<float>& params, double lr, const std::vector<std::string>& frozen);
  void step(ParamStore<float>& params, const ParamStore<float>& grads);
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  long long t_ = 0;
  std::vector<bool> frozen_;
  ParamStore<float> m_, v_;
};

/// Cosine anneal from base (step 1) to base * final_fraction (step total).
double annealed_lr(double base, double final_fraction, int step, int total);

TrainingLog train_task(Network<float>& net, const LabeledData& data, const diffusion::NoiseSchedule& schedule,
                       const TrainConfig& config);

TrainingLog distill(Network<float>& student, const Network<float>& teacher, const LabeledData& data,
                    const diffusion::NoiseSchedule& schedule, const DistillConfig& config);

}  // namespace hsd::denoiser
