#include "hsd/denoiser/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace hsd::denoiser {

void DistillConfig::validate() const {
  if (lambda_outkd < 0.0 || lambda_featkd < 0.0) throw std::invalid_argument("distill: lambdas must be nonnegative");
  if (batch_size < 1 || steps < 0) throw std::invalid_argument("distill: bad batch size or step count");
}

Batch make_batch(const LabeledData& data, const diffusion::NoiseSchedule& schedule, Rng& rng, int batch_size,
                 double cond_dropout, int null_class) {
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("make_batch: empty dataset");
  const int d = data.dim;
  Batch b;
  b.size = batch_size;
  b.z_t.resize(static_cast<std::size_t>(batch_size) * d);
  b.t.resize(static_cast<std::size_t>(batch_size));
  b.classes.resize(static_cast<std::size_t>(batch_size));
  b.eps = normal_vector(rng, static_cast<std::size_t>(batch_size) * d);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> step(1, schedule.num_steps());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (int i = 0; i < batch_size; ++i) {
    const auto idx = pick(rng);
    const int t = step(rng);
    const auto eps = std::span<const float>(b.eps).subspan(static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d));
    const auto zt = diffusion::q_sample(data.point(idx), t, eps, schedule);
    std::copy(zt.begin(), zt.end(), b.z_t.begin() + static_cast<std::ptrdiff_t>(i) * d);
    b.t[static_cast<std::size_t>(i)] = t;
    const bool drop = coin(rng) < cond_dropout;
    b.classes[static_cast<std::size_t>(i)] = drop ? null_class : data.labels[idx];
  }
  return b;
}

namespace {

template <class Scalar>
std::vector<Scalar> to_scalar(const std::vector<float>& v) {
  return {v.begin(), v.end()};
}

template <class Scalar>
void check_finite(const LossTerms& l, const char* what) {
  if (!std::isfinite(l.total)) {
    std::ostringstream os;
    os << what << ": non-finite loss (task=" << l.task << ", out_kd=" << l.out_kd << ", feat_kd=" << l.feat_kd << ")";
    throw std::runtime_error(os.str());
  }
}

}  // namespace

template <class Scalar>
LossTerms task_loss(const Network<Scalar>& net, const Batch& batch, ParamStore<Scalar>* grads) {
  const auto z = to_scalar<Scalar>(batch.z_t);
  auto fwd = net.forward(z, batch.t, Condition<Scalar>::from_classes(batch.classes), grads != nullptr);
  const double inv = 1.0 / static_cast<double>(fwd.eps.size());
  std::vector<Scalar> g(fwd.eps.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < fwd.eps.size(); ++i) {
    const double diff = static_cast<double>(fwd.eps[i]) - batch.eps[i];
    loss += diff * diff;
    g[i] = static_cast<Scalar>(2.0 * diff * inv);
  }
  LossTerms out;
  out.task = out.total = loss * inv;
  if (grads) net.backward(fwd, g, nullptr, *grads);
  return out;
}

template <class Scalar>
LossTerms distill_loss(const Network<Scalar>& student, const Network<Scalar>& teacher, const Batch& batch,
                       double lambda_outkd, double lambda_featkd, ParamStore<Scalar>* grads) {
  const auto& ds = student.descriptor();
  const auto& dt = teacher.descriptor();
  if (ds.blocks().size() != dt.blocks().size())
    throw std::invalid_argument("distill: student and teacher block counts differ");
  if (ds.latent_dim != dt.latent_dim || ds.num_tokens != dt.num_tokens || ds.model_dim != dt.model_dim)
    throw std::invalid_argument("distill: student and teacher block output shapes differ");

  const auto z = to_scalar<Scalar>(batch.z_t);
  const auto cond = Condition<Scalar>::from_classes(batch.classes);
  auto sf = student.forward(z, batch.t, cond, grads != nullptr);
  const auto tf = teacher.forward(z, batch.t, cond, false);

  const double inv_eps = 1.0 / static_cast<double>(sf.eps.size());
  std::vector<Scalar> g(sf.eps.size());
  double task = 0.0, feat = 0.0;
  for (std::size_t i = 0; i < sf.eps.size(); ++i) {
    const double diff = static_cast<double>(sf.eps[i]) - batch.eps[i];
    const double kd = static_cast<double>(sf.eps[i]) - tf.eps[i];
    task += diff * diff;
    feat += kd * kd;
    double gi = 2.0 * diff * inv_eps;
    if (lambda_featkd != 0.0) gi += lambda_featkd * 2.0 * kd * inv_eps;
    g[i] = static_cast<Scalar>(gi);
  }

  const std::size_t nblocks = sf.block_outputs.size();
  const double inv_blk = 1.0 / static_cast<double>(nblocks * sf.block_outputs.front().size());
  double out = 0.0;
  std::vector<std::vector<Scalar>> bg;
  if (lambda_outkd != 0.0) bg.resize(nblocks);
  for (std::size_t b = 0; b < nblocks; ++b) {
    const auto& s = sf.block_outputs[b];
    const auto& t = tf.block_outputs[b];
    if (lambda_outkd != 0.0) bg[b].resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double diff = static_cast<double>(s[i]) - t[i];
      out += diff * diff;
      if (lambda_outkd != 0.0) bg[b][i] = static_cast<Scalar>(lambda_outkd * 2.0 * diff * inv_blk);
    }
  }

  LossTerms l;
  l.task = task * inv_eps;
  l.feat_kd = feat * inv_eps;
  l.out_kd = out * inv_blk;
  l.total = l.task + lambda_outkd * l.out_kd + lambda_featkd * l.feat_kd;
  if (grads) student.backward(sf, g, lambda_outkd != 0.0 ? &bg : nullptr, *grads);
  return l;
}

template LossTerms task_loss<float>(const Network<float>&, const Batch&, ParamStore<float>*);
template LossTerms task_loss<double>(const Network<double>&, const Batch&, ParamStore<double>*);
template LossTerms distill_loss<float>(const Network<float>&, const Network<float>&, const Batch&, double, double,
                                       ParamStore<float>*);
template LossTerms distill_loss<double>(const Network<double>&, const Network<double>&, const Batch&, double, double,
                                        ParamStore<double>*);

Adam::Adam(const ParamStore<float>& params, double lr, const std::vector<std::string>& frozen)
    : lr_(lr), m_(params.zeros_like()), v_(params.zeros_like()) {
  frozen_.resize(params.size(), false);
  for (const auto& name : frozen)
    if (params.contains(name)) frozen_[params.index_of(name)] = true;
}

void Adam::step(ParamStore<float>& params, const ParamStore<float>& grads) {
  ++t_;
  if (lr_ == 0.0) return;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  const auto b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
  const auto step = static_cast<float>(lr_ / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (frozen_[i]) continue;
    auto& p = params.at(i).data;
    const auto& g = grads.at(i).data;
    auto& m = m_.at(i).data;
    auto& v = v_.at(i).data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      p[j] -= step * m[j] / (std::sqrt(v[j] * inv_c2) + eps);
    }
  }
}

namespace {

bool should_log(int step, int every, int total) { return every > 0 && (step % every == 0 || step == total); }

void check_lr(double lr, double fraction, const char* who) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument(std::string(who) + ": learning rate must be >= 0");
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument(std::string(who) + ": final_lr_fraction must lie in [0, 1]");
}

}  // namespace

double annealed_lr(double base, double final_fraction, int step, int total) {
  if (final_fraction == 1.0 || total <= 1) return base;
  const double progress = static_cast<double>(step - 1) / static_cast<double>(total - 1);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return base * (final_fraction + (1.0 - final_fraction) * cosine);
}

TrainingLog train_task(Network<float>& net, const LabeledData& data, const diffusion::NoiseSchedule& schedule,
                       const TrainConfig& config) {
  if (data.size() == 0) throw std::invalid_argument("train_task: empty dataset");
  if (data.dim != net.descriptor().latent_dim) throw std::invalid_argument("train_task: data dimension mismatch");
  if (schedule.num_steps() != net.descriptor().train_steps)
    throw std::invalid_argument("train_task: schedule length differs from descriptor train_steps");
  check_lr(config.learning_rate, config.final_lr_fraction, "train_task");
  const int null_class = net.descriptor().null_class();
  Rng val_rng(mix_seed(config.seed, 991));
  const auto val = make_batch(data, schedule, val_rng, config.validation_size, 0.0, null_class);
  Rng rng(mix_seed(config.seed, 1));
  Adam opt(net.params(), config.learning_rate, config.frozen);
  auto grads = net.params().zeros_like();

  TrainingLog log;
  log.initial_validation = task_loss<float>(net, val, nullptr);
  for (int step = 1; step <= config.steps; ++step) {
    const auto batch = make_batch(data, schedule, rng, config.batch_size, config.cond_dropout, null_class);
    grads.set_zero();
    const auto l = task_loss<float>(net, batch, &grads);
    check_finite<float>(l, ("train_task step " + std::to_string(step)).c_str());
    opt.set_learning_rate(annealed_lr(config.learning_rate, config.final_lr_fraction, step, config.steps));
    opt.step(net.params(), grads);
    if (should_log(step, config.log_every, config.steps))
      log.entries.push_back({step, l, task_loss<float>(net, val, nullptr)});
  }
  log.steps_run = config.steps;
  log.final_validation = task_loss<float>(net, val, nullptr);
  return log;
}

TrainingLog distill(Network<float>& student, const Network<float>& teacher, const LabeledData& data,
                    const diffusion::NoiseSchedule& schedule, const DistillConfig& config) {
  config.validate();
  check_lr(config.learning_rate, config.final_lr_fraction, "distill");
  if (data.size() == 0) throw std::invalid_argument("distill: empty dataset");
  if (student.descriptor().blocks().size() != teacher.descriptor().blocks().size())
    throw std::invalid_argument("distill: student and teacher block counts differ");
  const int null_class = student.descriptor().null_class();
  Rng val_rng(mix_seed(config.seed, 992));
  const auto val = make_batch(data, schedule, val_rng, config.validation_size, 0.0, null_class);
  Rng rng(mix_seed(config.seed, 2));
  Adam opt(student.params(), config.learning_rate, config.frozen);
  auto grads = student.params().zeros_like();

  auto validate = [&] {
    return distill_loss<float>(student, teacher, val, config.lambda_outkd, config.lambda_featkd, nullptr);
  };
  TrainingLog log;
  log.initial_validation = validate();
  for (int step = 1; step <= config.steps; ++step) {
    const auto batch = make_batch(data, schedule, rng, config.batch_size, config.cond_dropout, null_class);
    grads.set_zero();
    const auto l = distill_loss<float>(student, teacher, batch, config.lambda_outkd, config.lambda_featkd, &grads);
    check_finite<float>(l, ("distill step " + std::to_string(step)).c_str());
    opt.set_learning_rate(annealed_lr(config.learning_rate, config.final_lr_fraction, step, config.steps));
    opt.step(student.params(), grads);
    if (should_log(step, config.log_every, config.steps)) log.entries.push_back({step, l, validate()});
  }
  log.steps_run = config.steps;
  log.final_validation = validate();
  return log;
}

}  // namespace hsd::denoiser
