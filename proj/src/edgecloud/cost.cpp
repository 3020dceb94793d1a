#include "hsd/edgecloud/cost.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "hsd/core/rng.hpp"

namespace hsd::edgecloud {

void ChannelModel::validate() const {
  if (!(bandwidth_bps > 0.0)) throw std::invalid_argument("channel bandwidth must be positive");
  if (!(latency_s >= 0.0) || std::isinf(latency_s)) throw std::invalid_argument("channel latency must be finite and >= 0");
  if (!(jitter_s >= 0.0) || std::isinf(jitter_s)) throw std::invalid_argument("channel jitter must be finite and >= 0");
}

double transmission_time(std::size_t payload_bytes, const ChannelModel& channel) {
  channel.validate();
  double t = static_cast<double>(payload_bytes) * 8.0 / channel.bandwidth_bps + channel.latency_s;
  if (channel.jitter_seed && channel.jitter_s > 0.0) {
    Rng rng(mix_seed(*channel.jitter_seed, payload_bytes));
    t += std::uniform_real_distribution<double>(0.0, channel.jitter_s)(rng);
  }
  return t;
}

void CostModel::validate() const {
  if (!(f_large >= 0.0 && f_small >= 0.0 && f_codec >= 0.0)) throw std::invalid_argument("cost model FLOPs must be >= 0");
  if (steps < 0) throw std::invalid_argument("cost model steps must be >= 0");
  if (cloud_steps < 0 || cloud_steps > steps) throw std::invalid_argument("cost model cloud_steps must be in [0, steps]");
}

CostReport split_cost(const CostModel& m) {
  m.validate();
  CostReport r;
  r.cloud_flops = m.cloud_steps * m.f_large;
  r.edge_flops = (m.steps - m.cloud_steps) * m.f_small + m.f_codec;
  r.total_flops = r.cloud_flops + r.edge_flops;
  r.all_cloud_flops = m.steps * m.f_large + m.f_codec;
  r.cloud_reduction = r.all_cloud_flops > 0.0 ? 1.0 - r.cloud_flops / r.all_cloud_flops : 0.0;
  return r;
}

CostReport split_cost(const CostModel& m, std::size_t payload_bytes, const ChannelModel& channel) {
  auto r = split_cost(m);
  r.payload_bytes = payload_bytes;
  r.transmission_s = transmission_time(payload_bytes, channel);
  return r;
}

double hybrid_total_flops(double f_small_total, double f_large_total, int steps, int k) {
  if (steps < 1) throw std::invalid_argument("hybrid_total_flops: steps must be >= 1");
  if (k < 0 || k > steps) throw std::invalid_argument("hybrid_total_flops: k must be in [0, steps]");
  if (k == 0) return f_small_total;
  if (k == steps) return f_large_total;
  return f_small_total + k * (f_large_total - f_small_total) / steps;
}

nlohmann::json CostReport::to_json() const {
  return {{"cloud_flops", cloud_flops},
          {"edge_flops", edge_flops},
          {"total_flops", total_flops},
          {"payload_bytes", payload_bytes},
          {"transmission_s", transmission_s},
          {"all_cloud_flops", all_cloud_flops},
          {"cloud_reduction", cloud_reduction}};
}

}  // namespace hsd::edgecloud
