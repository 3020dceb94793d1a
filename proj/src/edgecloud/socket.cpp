#include "hsd/edgecloud/socket.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>

namespace hsd::edgecloud {

namespace {

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

struct AddrInfo {
  addrinfo* head = nullptr;
  ~AddrInfo() {
    if (head) freeaddrinfo(head);
  }
};

AddrInfo resolve(const std::string& host, int port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  AddrInfo out;
  const std::string service = std::to_string(port);
  const int rc = getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &out.head);
  if (rc != 0) throw TransportError("resolve " + host + ": " + gai_strerror(rc));
  return out;
}

}  // namespace

Socket::~Socket() { close(); }

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.release();
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::shutdown_write() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
}

void Socket::set_timeout(double seconds) {
  timeval tv{};
  if (seconds > 0.0) {
    tv.tv_sec = static_cast<time_t>(seconds);
    tv.tv_usec = static_cast<suseconds_t>((seconds - std::floor(seconds)) * 1e6);
  }
  if (setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv) != 0 ||
      setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv) != 0)
    throw TransportError(errno_text("setsockopt timeout"));
}

void Socket::send_all(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("send"));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::vector<std::uint8_t> Socket::recv_exact(std::size_t n) {
  std::vector<std::uint8_t> buf(n);
  std::size_t off = 0;
  while (off < n) {
    const auto got = ::recv(fd_, buf.data() + off, n - off, 0);
    if (got == 0) throw PeerClosedError("connection closed by peer", off);
    if (got < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw TransportError("receive timed out");
      throw TransportError(errno_text("recv"));
    }
    off += static_cast<std::size_t>(got);
  }
  return buf;
}

Socket listen_tcp(const std::string& host, int port, int backlog) {
  const auto ai = resolve(host, port, true);
  std::string last = "no addresses";
  for (auto* p = ai.head; p; p = p->ai_next) {
    Socket s(::socket(p->ai_family, p->ai_socktype, p->ai_protocol));
    if (!s.valid()) {
      last = errno_text("socket");
      continue;
    }
    const int one = 1;
    setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), p->ai_addr, p->ai_addrlen) != 0) {
      last = errno_text("bind");
      continue;
    }
    if (::listen(s.fd(), backlog) != 0) {
      last = errno_text("listen");
      continue;
    }
    return s;
  }
  throw TransportError("listen on " + host + ":" + std::to_string(port) + " failed: " + last);
}

int local_port(const Socket& s) {
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  if (getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw TransportError(errno_text("getsockname"));
  if (addr.ss_family == AF_INET) return ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  return ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
}

Socket connect_tcp(const std::string& host, int port, double timeout_s) {
  const auto ai = resolve(host, port, false);
  std::string last = "no addresses";
  for (auto* p = ai.head; p; p = p->ai_next) {
    Socket s(::socket(p->ai_family, p->ai_socktype, p->ai_protocol));
    if (!s.valid()) {
      last = errno_text("socket");
      continue;
    }
    s.set_timeout(timeout_s);
    if (::connect(s.fd(), p->ai_addr, p->ai_addrlen) != 0) {
      last = errno_text("connect");
      continue;
    }
    const int one = 1;
    setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
  }
  throw TransportError("connect to " + host + ":" + std::to_string(port) + " failed: " + last);
}

void write_frame(Socket& s, const Frame& frame) { s.send_all(encode_frame(frame)); }

Frame read_frame(Socket& s) {
  std::vector<std::uint8_t> header;
  try {
    header = s.recv_exact(kHeaderBytes);
  } catch (const PeerClosedError& e) {
    if (e.received() == 0) throw;
    throw DecodeError("truncated frame header");
  }
  const auto h = parse_header(header);
  try {
    return {h.type, s.recv_exact(h.length)};
  } catch (const PeerClosedError&) {
    throw DecodeError("truncated frame payload");
  }
}

}  // namespace hsd::edgecloud
