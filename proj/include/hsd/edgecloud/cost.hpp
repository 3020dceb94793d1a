#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include <json.hpp>

namespace hsd::edgecloud {

/// Link between cloud and edge. Bandwidth may be +infinity for an ideal link.
struct ChannelModel {
  double bandwidth_bps = 18.88e6;
  double latency_s = 0.0;
  std::optional<std::uint64_t> jitter_seed;  // adds U[0, jitter_s) per payload when set
  double jitter_s = 0.0;

  void validate() const;
};

/// payload_bytes * 8 / B + latency (+ seeded jitter).
double transmission_time(std::size_t payload_bytes, const ChannelModel& channel);

/// Per-step FLOPs of each model and the decoder, for one trajectory.
struct CostModel {
  double f_large = 0.0;
  double f_small = 0.0;
  double f_codec = 0.0;
  int steps = 0;
  int cloud_steps = 0;

  void validate() const;
};

struct CostReport {
  double cloud_flops = 0.0;
  double edge_flops = 0.0;
  double total_flops = 0.0;
  std::size_t payload_bytes = 0;
  double transmission_s = 0.0;
  double all_cloud_flops = 0.0;   // steps * f_large + f_codec
  double cloud_reduction = 0.0;   // 1 - cloud / all_cloud

  nlohmann::json to_json() const;
};

/// cloud = k * f_L, edge = (T - k) * f_S + f_codec.
CostReport split_cost(const CostModel& model);
CostReport split_cost(const CostModel& model, std::size_t payload_bytes, const ChannelModel& channel);

/// F_small + k * (F_large - F_small) / T.
double hybrid_total_flops(double f_small_total, double f_large_total, int steps, int k);

}  // namespace hsd::edgecloud
