#pragma once

// Socket front end for a live simulation. Clients speak newline-delimited
// JSON over TCP, or the same messages as WebSocket text frames when the
// connection opens with an HTTP upgrade request.
//
// Client → server: send_frame, register_id, unregister_id, control, get_summary.
// Server → client: hello, frame_event, node_state, metrics, ok, summary, error.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cansim/bus.hpp"
#include "cansim/metrics.hpp"
#include "cansim/scenario.hpp"

namespace cansim {

class BindError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "0x199" for standard ids, "0x1ABCDEF0" for extended ones.
std::string wire_id(const FrameId& id);

struct Outgoing {
  bool broadcast = true;  // false: only to the client that sent the command
  std::string line;       // one JSON object, no trailing newline
};

/// Simulated time between metrics messages.
constexpr std::int64_t kMetricsPeriodUs = 100'000;

/// The simulation behind the gateway. Not thread-safe; the server drives it
/// from a single thread. A second bus without the RbT runs in lock-step and
/// receives the same commands so get_summary can report the RbT's busload cost.
class GatewaySession {
 public:
  explicit GatewaySession(const ScenarioConfig& config, bool start_paused = true);

  std::string hello() const;
  /// Handles one command line. Events caused by it come first, then the reply.
  std::vector<Outgoing> handle(std::string_view line);
  std::vector<Outgoing> advance_bits(std::uint64_t bits);
  /// Steps until the simulation clock reaches `time_us`.
  std::vector<Outgoing> advance_to(std::int64_t time_us);

  bool paused() const { return paused_; }
  std::int64_t now_us() const { return bus_.now_us(); }
  std::int64_t bit_time_us() const { return bus_.bit_time_us(); }
  const Bus& bus() const { return bus_; }
  ScenarioSummary summary() const;

 private:
  using ojson = nlohmann::ordered_json;

  void publish(const Trace& records, std::vector<Outgoing>& out);
  void publish_states(std::vector<Outgoing>& out, std::int64_t time_us);
  static Outgoing reply(const ojson& msg);
  static Outgoing error(std::string_view code, std::string_view detail);

  std::vector<Outgoing> send_frame(const nlohmann::json& msg);
  std::vector<Outgoing> edit_registry(const nlohmann::json& msg, bool add);
  std::vector<Outgoing> control(const nlohmann::json& msg);

  ScenarioConfig config_;
  Bus bus_;
  Bus shadow_;
  bool paused_;
  SummaryBuilder summary_;
  SummaryBuilder shadow_summary_;
  std::map<std::string, NodeState> last_states_;
  std::int64_t delivered_time_ = -1;
  std::vector<std::string> delivered_sources_;
  std::int64_t window_bits_ = 0;
  std::int64_t window_busy_ = 0;
};

struct GatewayOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;  // 0: any free port
  double time_scale = 1.0;  // simulated ms per real ms while running
  bool start_paused = false;
};

/// The TCP server. The constructor binds and throws BindError; run() serves
/// until stop() is called or `external_stop` becomes true.
class Gateway {
 public:
  Gateway(const ScenarioConfig& config, GatewayOptions options);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  std::uint16_t port() const { return port_; }
  void run(const std::atomic<bool>* external_stop = nullptr);
  void stop();

 private:
  struct Client;
  struct Command {
    std::uint64_t client = 0;
    std::optional<std::string> line;  // empty: client just connected
  };

  void accept_loop();
  void read_loop(std::shared_ptr<Client> c);
  void write_loop(std::shared_ptr<Client> c);
  void deliver(std::uint64_t from, const std::vector<Outgoing>& msgs);
  void send_to(Client& c, const std::string& line);
  void drop(std::uint64_t id);
  bool stopping(const std::atomic<bool>* external_stop) const;

  GatewaySession session_;
  GatewayOptions options_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};

  std::mutex clients_mu_;
  std::map<std::uint64_t, std::shared_ptr<Client>> clients_;
  std::uint64_t next_client_ = 1;

  std::mutex cmd_mu_;
  std::condition_variable cmd_cv_;
  std::deque<Command> commands_;

  std::thread acceptor_;
};

}  // namespace cansim
