#include "bellsim/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <thread>

namespace bellsim::net {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw std::runtime_error(what + ": " + std::strerror(errno));
}

sockaddr_in make_addr(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1)
    throw std::invalid_argument("not an IPv4 address: " + ep.host);
  return addr;
}

}  // namespace

Endpoint parse_endpoint(std::string_view text) {
  const std::size_t colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 ||
      colon + 1 == text.size())
    throw std::invalid_argument("endpoint must be host:port, got '" +
                                std::string(text) + "'");
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  const std::string port_text(text.substr(colon + 1));
  try {
    std::size_t pos = 0;
    const unsigned long v = std::stoul(port_text, &pos);
    if (pos != port_text.size() || v > 65535) throw std::invalid_argument("");
    ep.port = static_cast<std::uint16_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in endpoint '" + std::string(text) +
                                "'");
  }
  return ep;
}

std::string to_string(const Endpoint& ep) {
  return ep.host + ":" + std::to_string(ep.port);
}

Connection::Connection(int fd) : fd_(fd) {}

Connection::Connection(Connection&& other) noexcept
    : fd_(other.fd_), buffer_(std::move(other.buffer_)) {
  other.fd_ = -1;
}

Connection& Connection::operator=(Connection&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    buffer_ = std::move(other.buffer_);
    other.fd_ = -1;
  }
  return *this;
}

Connection::~Connection() { close(); }

Connection Connection::dial(const Endpoint& ep, int attempts,
                            std::chrono::milliseconds delay) {
  const sockaddr_in addr = make_addr(ep);
  for (int k = 0; k < attempts; ++k) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw_errno("socket");
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr),
                  sizeof(addr)) == 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return Connection(fd);
    }
    ::close(fd);
    if (k + 1 < attempts) std::this_thread::sleep_for(delay);
  }
  throw std::runtime_error("connect to " + to_string(ep) + " failed after " +
                           std::to_string(attempts) + " attempts");
}

void Connection::send_line(std::string_view line) {
  std::string framed(line);
  framed.push_back('\n');
  std::size_t off = 0;
  while (off < framed.size()) {
    // MSG_NOSIGNAL: a vanished peer should surface as EPIPE, not SIGPIPE.
    const ssize_t w = ::send(fd_, framed.data() + off, framed.size() - off,
                             MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    off += static_cast<std::size_t>(w);
  }
}

std::optional<std::string> Connection::recv_line() {
  for (;;) {
    const std::size_t nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    char chunk[4096];
    const ssize_t r = ::read(fd_, chunk, sizeof(chunk));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw_errno("read");
    }
    if (r == 0) {
      if (!buffer_.empty())
        throw std::runtime_error("peer closed mid-line");
      return std::nullopt;
    }
    buffer_.append(chunk, static_cast<std::size_t>(r));
  }
}

bool Connection::drain_lines(std::vector<std::string>& out) {
  char chunk[65536];
  ssize_t r;
  do {
    r = ::read(fd_, chunk, sizeof(chunk));
  } while (r < 0 && errno == EINTR);
  if (r < 0) throw_errno("read");
  if (r > 0) buffer_.append(chunk, static_cast<std::size_t>(r));
  for (;;) {
    const std::size_t nl = buffer_.find('\n');
    if (nl == std::string::npos) break;
    out.push_back(buffer_.substr(0, nl));
    buffer_.erase(0, nl + 1);
  }
  if (r == 0 && !buffer_.empty())
    throw std::runtime_error("peer closed mid-line");
  return r != 0;
}

void Connection::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Listener::Listener(Listener&& other) noexcept
    : fd_(other.fd_), port_(other.port_) {
  other.fd_ = -1;
}

Listener& Listener::operator=(Listener&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.fd_;
    port_ = other.port_;
    other.fd_ = -1;
  }
  return *this;
}

Listener::~Listener() { close(); }

Listener Listener::bind(const Endpoint& ep) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw_errno("socket");
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = make_addr(ep);
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
    const int saved = errno;
    ::close(fd);
    errno = saved;
    throw_errno("bind " + to_string(ep));
  }
  if (::listen(fd, 16) != 0) {
    const int saved = errno;
    ::close(fd);
    errno = saved;
    throw_errno("listen");
  }
  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len) != 0) {
    const int saved = errno;
    ::close(fd);
    errno = saved;
    throw_errno("getsockname");
  }
  Listener l;
  l.fd_ = fd;
  l.port_ = ntohs(bound.sin_port);
  return l;
}

Connection Listener::accept() {
  for (;;) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return Connection(fd);
    }
    if (errno != EINTR) throw_errno("accept");
  }
}

void Listener::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

}  // namespace bellsim::net
