#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bellsim::net {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

// "host:port". Throws std::invalid_argument on anything else.
Endpoint parse_endpoint(std::string_view text);
std::string to_string(const Endpoint& ep);

// One newline-delimited TCP byte stream. Lines never contain the newline.
class Connection {
 public:
  Connection() = default;
  explicit Connection(int fd);
  Connection(Connection&& other) noexcept;
  Connection& operator=(Connection&& other) noexcept;
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  ~Connection();

  // Retries the TCP connect, sleeping delay between attempts, so processes
  // can be launched in any order. Throws std::runtime_error when the budget
  // is exhausted.
  static Connection dial(const Endpoint& ep, int attempts = 100,
                         std::chrono::milliseconds delay =
                             std::chrono::milliseconds(50));

  bool open() const { return fd_ >= 0; }
  int fd() const { return fd_; }

  void send_line(std::string_view line);

  // Blocks for the next full line; nullopt on clean EOF. Throws on errors and
  // on EOF in the middle of a line.
  std::optional<std::string> recv_line();

  // One read(2) worth of data: appends any completed lines to out. Returns
  // false when the peer closed. Meant to follow poll(2).
  bool drain_lines(std::vector<std::string>& out);

  void close();

 private:
  int fd_ = -1;
  std::string buffer_;
};

class Listener {
 public:
  Listener() = default;
  Listener(Listener&& other) noexcept;
  Listener& operator=(Listener&& other) noexcept;
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;
  ~Listener();

  // Port 0 binds an ephemeral port; port() reports the actual one.
  static Listener bind(const Endpoint& ep);

  bool open() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  std::uint16_t port() const { return port_; }

  Connection accept();

  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace bellsim::net
