#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsd/edgecloud/protocol.hpp"

namespace hsd::edgecloud {

/// Error on the transport itself (connect, timeout, peer closed).
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// End of stream before a read completed; `received` bytes of it had arrived.
class PeerClosedError : public TransportError {
 public:
  PeerClosedError(const std::string& msg, std::size_t received) : TransportError(msg), received_(received) {}
  std::size_t received() const { return received_; }

 private:
  std::size_t received_;
};

/// Owning TCP socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket();
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    const int f = fd_;
    fd_ = -1;
    return f;
  }
  void close();
  void shutdown();
  /// Half-close: the peer sees end of stream, replies can still be read.
  void shutdown_write();

  void set_timeout(double seconds);
  void send_all(std::span<const std::uint8_t> bytes);
  /// Reads exactly n bytes; throws PeerClosedError on EOF, TransportError on timeout.
  std::vector<std::uint8_t> recv_exact(std::size_t n);

 private:
  int fd_ = -1;
};

/// Listening socket bound to host:port (port 0 picks a free one).
Socket listen_tcp(const std::string& host, int port, int backlog = 64);
int local_port(const Socket& s);
Socket connect_tcp(const std::string& host, int port, double timeout_s);

void write_frame(Socket& s, const Frame& frame);
/// Throws DecodeError for malformed or truncated frames, TransportError for I/O problems
/// (including a clean close before the first header byte).
Frame read_frame(Socket& s);

}  // namespace hsd::edgecloud
