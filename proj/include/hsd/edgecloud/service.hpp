#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "hsd/denoiser/network.hpp"
#include "hsd/diffusion/codec.hpp"
#include "hsd/edgecloud/cost.hpp"
#include "hsd/edgecloud/protocol.hpp"
#include "hsd/edgecloud/socket.hpp"
#include "hsd/hybrid/hybrid.hpp"

namespace hsd::edgecloud {

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 0;
  double io_timeout_s = 30.0;
  std::string log_path;  // JSON lines, optional
};

struct RequestLogEntry {
  std::uint64_t id = 0;
  std::string peer_type;  // request message type or "ERROR"
  bool ok = false;
  std::string error;
  std::uint64_t seed = 0;
  int cloud_steps = 0;
  int start_position = 0;
  double cloud_flops = 0.0;
  std::size_t payload_bytes = 0;
  std::vector<hybrid::TraceRecord> trace;

  nlohmann::json to_json() const;
};

/// Cloud side: answers HELLO, runs the large-model phase for one request per
/// connection and replies HANDOFF. Sessions run on their own threads over the
/// shared, read-only model.
class CloudServer {
 public:
  CloudServer(const denoiser::Network<float>& large, const diffusion::NoiseSchedule& schedule, ServerConfig config);
  ~CloudServer();
  CloudServer(const CloudServer&) = delete;
  CloudServer& operator=(const CloudServer&) = delete;

  /// Binds and starts accepting; returns the bound port.
  int start();
  int port() const { return port_; }
  /// Stops accepting, waits for sessions to finish.
  void stop();
  bool running() const { return running_; }

  std::vector<RequestLogEntry> log() const;
  double flops_per_forward() const { return flops_per_forward_; }

 private:
  void accept_loop();
  void session(Socket sock, std::uint64_t id);
  void record(RequestLogEntry entry);

  const denoiser::Network<float>& large_;
  const diffusion::NoiseSchedule& schedule_;
  ServerConfig config_;
  double flops_per_forward_ = 0.0;
  Socket listener_;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::atomic<std::uint64_t> next_id_{1};

  mutable std::mutex mu_;
  std::condition_variable idle_;
  int active_ = 0;
  std::vector<RequestLogEntry> log_;
};

/// Edge request: text-to-image, or image-to-image when init_data is set.
struct EdgeRequest {
  std::uint64_t seed = 0;
  hybrid::ConditionInput condition;
  diffusion::SamplerConfig sampler;
  int cloud_steps = 0;
  bool reset_history = false;
  hybrid::TensorPrecision precision = hybrid::TensorPrecision::fp16;
  std::optional<std::vector<float>> init_data;
  double strength = 0.5;
};

struct EdgeConfig {
  std::string host = "127.0.0.1";
  int port = 0;
  double timeout_s = 30.0;
  bool apply_delay = true;  // sleep for the modeled transmission time
};

struct EdgeResult {
  std::vector<float> sample;
  diffusion::LatentState final_state;
  std::vector<hybrid::TraceRecord> trace;  // edge steps only
  hybrid::HandoffPacket packet;
  CostReport cost;
  double wall_s = 0.0;
};

/// Raised when the server answers with an ERROR frame.
class RemoteError : public std::runtime_error {
 public:
  RemoteError(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

EdgeResult edge_run(const EdgeConfig& config, const EdgeRequest& request, const denoiser::Network<float>& small,
                    const diffusion::NoiseSchedule& schedule, const diffusion::LatentCodec& codec,
                    const ChannelModel& channel);

}  // namespace hsd::edgecloud
