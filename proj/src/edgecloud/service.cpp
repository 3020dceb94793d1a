#include "hsd/edgecloud/service.hpp"

#include <sys/socket.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "hsd/eval/flops.hpp"

namespace hsd::edgecloud {

namespace {

int clamp_int(std::uint32_t v) {
  return static_cast<int>(std::min<std::uint32_t>(v, static_cast<std::uint32_t>(std::numeric_limits<int>::max())));
}

void try_send_error(Socket& s, ErrorCode code, const std::string& msg) {
  try {
    write_frame(s, {MessageType::error, ErrorMessage{code, msg}.encode()});
  } catch (const std::exception&) {
    // peer already gone
  }
}

hybrid::CloudRequest to_cloud_request(const denoiser::Network<float>& large, const GenerateRequest& g) {
  hybrid::CloudRequest r;
  r.seed = g.seed;
  hybrid::ConditionInput cond;
  cond.class_id = g.class_id;
  cond.tokens = g.tokens;
  r.cond_tokens = hybrid::resolve_condition(large, cond);
  r.sampler = g.sampler_config();
  r.cloud_steps = clamp_int(g.cloud_steps);
  r.reset_history = g.reset_history;
  r.precision = g.precision;
  return r;
}

Frame expect(Socket& s, MessageType type) {
  auto f = read_frame(s);
  if (f.type == MessageType::error) {
    const auto e = ErrorMessage::decode(f.payload);
    throw RemoteError(e.code, "server error: " + e.message);
  }
  if (f.type != type) throw DecodeError("expected " + to_string(type) + ", got " + to_string(f.type));
  return f;
}

}  // namespace

nlohmann::json RequestLogEntry::to_json() const {
  nlohmann::json tr = nlohmann::json::array();
  for (const auto& r : trace)
    tr.push_back({{"position", r.position}, {"t", r.t}, {"t_next", r.t_next}, {"role", denoiser::to_string(r.role)},
                  {"latent", r.latent}});
  return {{"id", id},
          {"request", peer_type},
          {"ok", ok},
          {"error", error},
          {"seed", seed},
          {"cloud_steps", cloud_steps},
          {"start_position", start_position},
          {"cloud_flops", cloud_flops},
          {"payload_bytes", payload_bytes},
          {"trace", tr}};
}

CloudServer::CloudServer(const denoiser::Network<float>& large, const diffusion::NoiseSchedule& schedule,
                         ServerConfig config)
    : large_(large), schedule_(schedule), config_(std::move(config)) {
  if (large_.descriptor().train_steps != schedule_.num_steps())
    throw std::invalid_argument("CloudServer: model and schedule disagree on training steps");
  flops_per_forward_ = eval::flops_count(large_.descriptor());
}

CloudServer::~CloudServer() { stop(); }

int CloudServer::start() {
  if (running_) return port_;
  listener_ = listen_tcp(config_.host, config_.port);
  port_ = local_port(listener_);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
  return port_;
}

void CloudServer::stop() {
  if (!running_.exchange(false)) return;
  listener_.shutdown();
  if (acceptor_.joinable()) acceptor_.join();
  listener_.close();
  std::unique_lock lock(mu_);
  idle_.wait(lock, [this] { return active_ == 0; });
}

void CloudServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listener_.fd(), nullptr, nullptr);
    if (fd < 0) {
      if (!running_) break;
      continue;
    }
    Socket sock(fd);
    if (!running_) break;
    {
      std::lock_guard lock(mu_);
      ++active_;
    }
    const auto id = next_id_++;
    std::thread([this, s = std::move(sock), id]() mutable {
      session(std::move(s), id);
      std::lock_guard lock(mu_);
      if (--active_ == 0) idle_.notify_all();
    }).detach();
  }
}

std::vector<RequestLogEntry> CloudServer::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

void CloudServer::record(RequestLogEntry entry) {
  std::lock_guard lock(mu_);
  if (!config_.log_path.empty()) {
    std::ofstream out(config_.log_path, std::ios::app);
    out << entry.to_json().dump() << '\n';
  }
  log_.push_back(std::move(entry));
}

void CloudServer::session(Socket sock, std::uint64_t id) {
  RequestLogEntry entry;
  entry.id = id;
  entry.peer_type = "HELLO";
  bool recorded = false;
  try {
    sock.set_timeout(config_.io_timeout_s);
    const auto hello_frame = read_frame(sock);
    if (hello_frame.type != MessageType::hello) throw std::invalid_argument("expected HELLO first");
    const auto hello = Hello::decode(hello_frame.payload);
    if (hello.version != kProtocolVersion)
      throw VersionError("client speaks protocol version " + std::to_string(hello.version));
    write_frame(sock, {MessageType::hello, Hello{kProtocolVersion, PeerRole::cloud, flops_per_forward_, "hybridsd-cloud"}.encode()});

    const auto req_frame = read_frame(sock);
    entry.peer_type = to_string(req_frame.type);
    hybrid::CloudRequest req;
    if (req_frame.type == MessageType::generate_request) {
      req = to_cloud_request(large_, GenerateRequest::decode(req_frame.payload));
    } else if (req_frame.type == MessageType::img2img_request) {
      auto q = Img2ImgRequest::decode(req_frame.payload);
      req = to_cloud_request(large_, q.base);
      req.init_latent = std::move(q.latent);
      req.strength = q.strength;
    } else {
      throw std::invalid_argument("expected a generation request, got " + to_string(req_frame.type));
    }
    entry.seed = req.seed;
    entry.cloud_steps = req.cloud_steps;

    auto result = hybrid::cloud_phase(large_, schedule_, req);
    const auto payload = result.packet.encode();
    write_frame(sock, {MessageType::handoff, payload});
    entry.ok = true;
    entry.start_position = result.start_position;
    entry.payload_bytes = payload.size();
    entry.cloud_flops = result.large_steps * eval::forwards_per_step(req.sampler.guidance_scale) * flops_per_forward_;
    entry.trace = std::move(result.trace);
    record(std::move(entry));
    recorded = true;

    try {
      const auto done = read_frame(sock);
      if (done.type == MessageType::done) Done::decode(done.payload);
    } catch (const std::exception&) {
      // the acknowledgement is optional
    }
  } catch (const VersionError& e) {
    entry.error = e.what();
    try_send_error(sock, ErrorCode::version, e.what());
  } catch (const DecodeError& e) {
    entry.error = e.what();
    try_send_error(sock, ErrorCode::malformed, e.what());
  } catch (const TransportError& e) {
    entry.error = e.what();
  } catch (const std::invalid_argument& e) {
    entry.error = e.what();
    try_send_error(sock, ErrorCode::bad_request, e.what());
  } catch (const std::out_of_range& e) {
    entry.error = e.what();
    try_send_error(sock, ErrorCode::bad_request, e.what());
  } catch (const std::exception& e) {
    entry.error = e.what();
    try_send_error(sock, ErrorCode::internal, e.what());
  }
  if (recorded) return;
  if (!entry.ok && entry.peer_type == "HELLO") entry.peer_type = "ERROR";
  record(std::move(entry));
}

EdgeResult edge_run(const EdgeConfig& config, const EdgeRequest& request, const denoiser::Network<float>& small,
                    const diffusion::NoiseSchedule& schedule, const diffusion::LatentCodec& codec,
                    const ChannelModel& channel) {
  channel.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Socket sock = connect_tcp(config.host, config.port, config.timeout_s);

  write_frame(sock, {MessageType::hello, Hello{kProtocolVersion, PeerRole::edge, 0.0, "hybridsd-edge"}.encode()});
  const auto hello = Hello::decode(expect(sock, MessageType::hello).payload);
  if (hello.version != kProtocolVersion)
    throw VersionError("server speaks protocol version " + std::to_string(hello.version));

  GenerateRequest g;
  g.seed = request.seed;
  g.class_id = request.condition.class_id;
  g.tokens = request.condition.tokens;
  g.sampler = request.sampler.kind;
  g.num_inference_steps = static_cast<std::uint32_t>(request.sampler.num_inference_steps);
  g.guidance_scale = request.sampler.guidance_scale;
  g.eta = request.sampler.eta;
  g.cloud_steps = static_cast<std::uint32_t>(request.cloud_steps);
  g.reset_history = request.reset_history;
  g.precision = request.precision;
  if (request.init_data) {
    Img2ImgRequest q{g, codec.encode(*request.init_data), request.strength};
    write_frame(sock, {MessageType::img2img_request, q.encode()});
  } else {
    write_frame(sock, {MessageType::generate_request, g.encode()});
  }

  const auto handoff = expect(sock, MessageType::handoff);
  EdgeResult out;
  out.packet = hybrid::HandoffPacket::decode(handoff.payload);

  const double transmit = transmission_time(handoff.payload.size(), channel);
  if (config.apply_delay && transmit > 0.0 && std::isfinite(transmit))
    std::this_thread::sleep_for(std::chrono::duration<double>(transmit));

  auto edge = hybrid::edge_phase(small, schedule, out.packet, codec);
  try {
    write_frame(sock, {MessageType::done, Done{static_cast<std::uint32_t>(edge.small_steps)}.encode()});
  } catch (const TransportError&) {
    // the server may already have closed its side
  }

  const int fwd = eval::forwards_per_step(request.sampler.guidance_scale);
  CostModel cm;
  cm.f_large = hello.flops_per_forward * fwd;
  cm.f_small = eval::flops_count(small.descriptor()) * fwd;
  cm.f_codec = codec.decode_flops();
  cm.cloud_steps = request.cloud_steps;
  cm.steps = request.cloud_steps + edge.small_steps;
  out.cost = split_cost(cm, handoff.payload.size(), channel);
  out.sample = std::move(edge.sample);
  out.final_state = std::move(edge.state);
  out.trace = std::move(edge.trace);
  out.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace hsd::edgecloud
