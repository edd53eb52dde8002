#pragma once

// Minimal blocking client for the gateway, and the scripted session whose
// transcript is kept in tests/golden.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <atomic>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cansim/gateway.hpp"
#include "cansim/scenario.hpp"

namespace testing {

class LineClient {
 public:
  explicit LineClient(std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    timeval tv{5, 0};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      ::close(fd_);
      throw std::runtime_error("connect failed");
    }
  }
  ~LineClient() { ::close(fd_); }
  LineClient(const LineClient&) = delete;
  LineClient& operator=(const LineClient&) = delete;

  void send_raw(std::string_view data) {
    while (!data.empty()) {
      const auto n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
      if (n <= 0) throw std::runtime_error("send failed");
      data.remove_prefix(static_cast<std::size_t>(n));
    }
  }
  void send_line(const std::string& line) { send_raw(line + "\n"); }

  /// Raw bytes until `n` are buffered. Throws on timeout.
  std::string read_bytes(std::size_t n) {
    while (buf_.size() < n) fill();
    std::string out = buf_.substr(0, n);
    buf_.erase(0, n);
    return out;
  }

  std::string read_until(std::string_view delim) {
    std::size_t pos;
    while ((pos = buf_.find(delim)) == std::string::npos) fill();
    std::string out = buf_.substr(0, pos + delim.size());
    buf_.erase(0, pos + delim.size());
    return out;
  }

  std::string read_line() {
    std::string line = read_until("\n");
    line.pop_back();
    return line;
  }

 private:
  void fill() {
    char chunk[4096];
    const auto n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n <= 0) throw std::runtime_error("connection closed or timed out");
    buf_.append(chunk, static_cast<std::size_t>(n));
  }

  int fd_ = -1;
  std::string buf_;
};

/// A gateway serving on a free loopback port from a background thread.
class GatewayFixture {
 public:
  explicit GatewayFixture(const cansim::ScenarioConfig& cfg, bool paused = true)
      : gw_(cfg, [&] {
          cansim::GatewayOptions o;
          o.start_paused = paused;
          return o;
        }()) {
    thread_ = std::thread([this] { gw_.run(); });
  }
  ~GatewayFixture() {
    gw_.stop();
    thread_.join();
  }
  std::uint16_t port() const { return gw_.port(); }

 private:
  cansim::Gateway gw_;
  std::thread thread_;
};

inline bool is_reply(const std::string& line) {
  const auto type = nlohmann::json::parse(line).at("type").get<std::string>();
  return type == "ok" || type == "summary" || type == "error";
}

/// Sends `cmd` and collects every line up to and including its reply.
inline std::vector<std::string> exchange(LineClient& c, const std::string& cmd) {
  c.send_line(cmd);
  std::vector<std::string> got;
  do {
    got.push_back(c.read_line());
  } while (!is_reply(got.back()));
  return got;
}

/// What the transcript compares. Every time in the stepped session derives
/// from the simulated clock, so the only normalization is dropping the
/// trailing carriage return some editors add.
inline std::string normalize(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

/// The scripted session: a legitimate frame from the tool, a spoofed frame
/// from attacker1 that is killed until bus-off, a reset, and a summary.
/// Returns the transcript, with client lines prefixed "> " and server
/// lines "< ".
inline std::vector<std::string> scripted_session(std::uint16_t port) {
  const std::vector<std::string> script = {
      R"({"type":"send_frame","channel":"CAN1","id":"0x199","name":"msg1","dlc":1,"data":"0A"})",
      R"({"type":"control","action":"step","us":10000})",
      R"({"type":"send_frame","channel":"CAN1","id":"0x123","name":"spoof","dlc":1,"data":"FF","node":"attacker1"})",
      R"({"type":"control","action":"step","bits":1500})",
      R"({"type":"control","action":"reset_node","node":"attacker1"})",
      R"({"type":"get_summary"})",
  };
  LineClient c(port);
  std::vector<std::string> transcript{"< " + normalize(c.read_line())};
  for (const auto& cmd : script) {
    transcript.push_back("> " + cmd);
    for (auto& line : exchange(c, cmd)) transcript.push_back("< " + normalize(line));
  }
  return transcript;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(normalize(line));
  return lines;
}

inline const char* kGoldenTranscript = CANSIM_SOURCE_DIR "/tests/golden/gateway_session.txt";

}  // namespace testing
