#include "cansim/gateway.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>

#include "cansim/rbt.hpp"

namespace cansim {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string wire_id(const FrameId& id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, id.is_extended() ? "0x%08X" : "0x%03X", id.value);
  return buf;
}

namespace {

ScenarioConfig live_config(ScenarioConfig c) {
  c.bus.max_time_us = 0;
  c.bus.record_bit_samples = true;
  return c;
}

// Wire ids: "0x199", "199" or a number; `extended` forces 29 bits.
FrameId wire_frame_id(const json& v, bool extended) {
  std::uint64_t n = 0;
  if (v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    n = v.get<std::uint64_t>();
  } else if (v.is_string()) {
    std::string s = v.get<std::string>();
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) s = s.substr(2);
    if (s.empty() || s.size() > 16 ||
        !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isxdigit(c); })) {
      throw InvalidFrame("id must be hex, e.g. \"0x123\"");
    }
    n = std::stoull(s, nullptr, 16);
  } else {
    throw InvalidFrame("id must be a hex string or a number");
  }
  if (n > kMaxExtendedId) throw InvalidFrame("id exceeds 29 bits");
  const auto value = static_cast<std::uint32_t>(n);
  return FrameId::make(value, extended || value > kMaxStandardId ? IdKind::extended : IdKind::standard);
}

std::string state_name(ErrorMode m) { return std::string(to_string(m)); }

ojson registry_json(const RuleSet& rules) {
  ojson ids = ojson::array();
  for (const auto& id : rules.registered_ids) ids.push_back(wire_id(id));
  return ids;
}

class BadCommand : public std::runtime_error {
 public:
  BadCommand(std::string code, const std::string& detail)
      : std::runtime_error(detail), code(std::move(code)) {}
  std::string code;
};

const json& field(const json& msg, const char* key) {
  if (!msg.contains(key)) throw BadCommand("InvalidCommand", std::string("missing field '") + key + "'");
  return msg.at(key);
}

}  // namespace

GatewaySession::GatewaySession(const ScenarioConfig& config, bool start_paused)
    : config_(live_config(config)),
      bus_(build_scenario_bus(config_, true)),
      shadow_(build_scenario_bus(config_, false)),
      paused_(start_paused) {
  for (const auto* p : bus_.participants()) {
    if (p->role() != NodeRole::rbt) last_states_[p->name()] = p->state();
  }
}

std::string GatewaySession::hello() const {
  ojson nodes = ojson::array();
  for (const auto* p : bus_.participants()) {
    const auto st = p->state();
    nodes.push_back({{"name", p->name()},
                     {"role", std::string(to_string(p->role()))},
                     {"state", state_name(st.mode)},
                     {"tec", st.tec},
                     {"rec", st.rec}});
  }
  ojson msg;
  msg["type"] = "hello";
  msg["bitrate"] = bus_.bitrate();
  msg["nodes"] = nodes;
  const auto* rbt = find_rbt(const_cast<Bus&>(bus_));
  msg["registered_ids"] = registry_json(rbt ? rbt->rules() : config_.rules);
  msg["channel"] = bus_.channel();
  msg["tx_node"] = config_.tx_node;
  msg["decision_point"] = std::string(to_string(config_.rules.decision_point));
  msg["time_us"] = bus_.now_us();
  msg["paused"] = paused_;
  return msg.dump();
}

Outgoing GatewaySession::reply(const ojson& msg) { return {false, msg.dump()}; }

Outgoing GatewaySession::error(std::string_view code, std::string_view detail) {
  ojson msg;
  msg["type"] = "error";
  msg["code"] = code;
  msg["detail"] = detail;
  return {false, msg.dump()};
}

void GatewaySession::publish(const Trace& records, std::vector<Outgoing>& out) {
  for (const auto& r : records) {
    summary_.add(r);
    if (r.kind == TraceKind::bit_sample) {
      ++window_bits_;
      if (r.busy) ++window_busy_;
      if ((r.time_us + bus_.bit_time_us()) % kMetricsPeriodUs == 0) {
        ojson msg;
        msg["type"] = "metrics";
        msg["time_us"] = r.time_us + bus_.bit_time_us();
        msg["busload_pct"] = to_fixed(Rational(window_busy_ * 100, window_bits_), 3);
        out.push_back({true, msg.dump()});
        window_bits_ = window_busy_ = 0;
      }
      continue;
    }
    std::string verdict;
    if (r.kind == TraceKind::frame_delivered) {
      // one event per frame, not per receiver
      if (r.time_us != delivered_time_) {
        delivered_time_ = r.time_us;
        delivered_sources_.clear();
      }
      if (std::find(delivered_sources_.begin(), delivered_sources_.end(), r.source) !=
          delivered_sources_.end()) {
        continue;
      }
      delivered_sources_.push_back(r.source);
      verdict = "delivered";
    } else if (r.kind == TraceKind::frame_killed) {
      verdict = "killed";
    } else {
      continue;
    }
    const std::string& source = r.kind == TraceKind::frame_killed ? r.node : r.source;
    ojson msg;
    msg["type"] = "frame_event";
    msg["time_us"] = r.time_us;
    msg["channel"] = r.channel;
    msg["id"] = wire_id(r.frame->id);
    msg["name"] = r.frame_name;
    msg["direction"] = source == config_.tx_node ? "TX" : "RX";
    msg["data"] = r.frame->rtr ? "R" + std::to_string(r.frame->dlc) : format_data(r.frame->data, " ");
    msg["verdict"] = verdict;
    msg["source"] = source;
    out.push_back({true, msg.dump()});
  }
  publish_states(out, records.empty() ? now_us() : records.back().time_us);
}

void GatewaySession::publish_states(std::vector<Outgoing>& out, std::int64_t time_us) {
  for (auto& [name, last] : last_states_) {
    const auto st = bus_.node_state(name);
    if (st == last) continue;
    last = st;
    ojson msg;
    msg["type"] = "node_state";
    msg["node"] = name;
    msg["state"] = state_name(st.mode);
    msg["tec"] = st.tec;
    msg["rec"] = st.rec;
    msg["time_us"] = time_us;
    out.push_back({true, msg.dump()});
  }
}

std::vector<Outgoing> GatewaySession::advance_bits(std::uint64_t bits) {
  std::vector<Outgoing> out;
  for (std::uint64_t i = 0; i < bits; ++i) {
    publish(bus_.step_bit(), out);
    shadow_summary_.add(shadow_.step_bit());
  }
  return out;
}

std::vector<Outgoing> GatewaySession::advance_to(std::int64_t time_us) {
  if (time_us <= now_us()) return {};
  const auto bt = bus_.bit_time_us();
  return advance_bits(static_cast<std::uint64_t>((time_us - now_us() + bt - 1) / bt));
}

ScenarioSummary GatewaySession::summary() const { return summary_.result(&shadow_summary_); }

std::vector<Outgoing> GatewaySession::handle(std::string_view line) {
  json msg;
  try {
    msg = json::parse(line);
  } catch (const json::parse_error& e) {
    return {error("ParseError", e.what())};
  }
  if (!msg.is_object() || !msg.contains("type") || !msg.at("type").is_string()) {
    return {error("ParseError", "expected an object with a string 'type'")};
  }
  const std::string type = msg.at("type").get<std::string>();
  try {
    if (type == "send_frame") return send_frame(msg);
    if (type == "register_id") return edit_registry(msg, true);
    if (type == "unregister_id") return edit_registry(msg, false);
    if (type == "control") return control(msg);
    if (type == "get_summary") {
      ojson s;
      s["type"] = "summary";
      s["time_us"] = now_us();
      const ojson body = summary_json(summary());
      for (auto& [k, v] : body.items()) s[k] = v;
      return {reply(s)};
    }
    return {error("UnknownType", "unknown message type '" + type + "'")};
  } catch (const BadCommand& e) {
    return {error(e.code, e.what())};
  } catch (const InvalidFrame& e) {
    return {error("InvalidFrame", e.what())};
  } catch (const UnknownNode& e) {
    return {error("UnknownNode", e.what())};
  } catch (const json::exception& e) {
    return {error("InvalidCommand", e.what())};
  }
}

std::vector<Outgoing> GatewaySession::send_frame(const json& msg) {
  if (msg.contains("channel") && msg.at("channel").get<std::string>() != bus_.channel()) {
    throw BadCommand("InvalidChannel", "this gateway serves channel " + bus_.channel());
  }
  const bool extended = msg.value("extended", false);
  const FrameId id = wire_frame_id(field(msg, "id"), extended);
  const bool rtr = msg.value("rtr", false);
  std::vector<std::uint8_t> data;
  if (msg.contains("data")) {
    try {
      data = parse_hex_data(msg.at("data").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw InvalidFrame(e.what());
    }
  }
  if (data.size() > 8) throw InvalidFrame("more than 8 data bytes");
  const int dlc = msg.value("dlc", static_cast<int>(data.size()));
  if (dlc < 0 || dlc > 8) throw InvalidFrame("dlc must be 0..8");
  if (rtr && !data.empty()) throw InvalidFrame("remote frames carry no data");
  if (!rtr && static_cast<std::size_t>(dlc) != data.size()) {
    throw InvalidFrame("dlc " + std::to_string(dlc) + " does not match " + std::to_string(data.size()) +
                       " data bytes");
  }
  const std::string node = msg.value("node", config_.tx_node);
  if (node.empty()) throw BadCommand("UnknownNode", "scenario has no tx node; name one with 'node'");
  ScheduledFrame f;
  f.time_us = now_us();
  f.frame = rtr ? Frame::remote_frame(id, static_cast<std::uint8_t>(dlc))
                : Frame::data_frame(id, std::move(data));
  f.name = msg.value("name", node);
  bus_.controller(node).enqueue(f);
  shadow_.controller(node).enqueue(f);

  ojson ok;
  ok["type"] = "ok";
  ok["command"] = "send_frame";
  ok["node"] = node;
  ok["id"] = wire_id(id);
  ok["time_us"] = now_us();
  return {reply(ok)};
}

std::vector<Outgoing> GatewaySession::edit_registry(const json& msg, bool add) {
  auto* rbt = find_rbt(bus_);
  if (!rbt) throw BadCommand("NoRbt", "no RbT is attached to this bus");
  const FrameId id = wire_frame_id(field(msg, "id"), msg.value("extended", false));
  const bool changed = add ? rbt->register_id(id) : rbt->unregister_id(id);
  ojson ok;
  ok["type"] = "ok";
  ok["command"] = add ? "register_id" : "unregister_id";
  ok["id"] = wire_id(id);
  ok["changed"] = changed;
  ok["registered_ids"] = registry_json(rbt->rules());
  return {reply(ok)};
}

std::vector<Outgoing> GatewaySession::control(const json& msg) {
  const auto action = field(msg, "action").get<std::string>();
  std::vector<Outgoing> out;
  ojson ok;
  ok["type"] = "ok";
  ok["command"] = "control";
  ok["action"] = action;
  if (action == "start") {
    paused_ = false;
  } else if (action == "pause") {
    paused_ = true;
  } else if (action == "step") {
    std::int64_t bits = 1;
    if (msg.contains("bits")) {
      bits = msg.at("bits").get<std::int64_t>();
    } else if (msg.contains("us")) {
      const auto us = msg.at("us").get<std::int64_t>();
      bits = (us + bit_time_us() - 1) / bit_time_us();
    }
    if (bits < 0) throw BadCommand("InvalidCommand", "step size must be nonnegative");
    out = advance_bits(static_cast<std::uint64_t>(bits));
  } else if (action == "reset_node") {
    const auto node = field(msg, "node").get<std::string>();
    const auto* p = bus_.find(node);
    if (!p || p->role() == NodeRole::rbt) throw UnknownNode(node);
    bus_.reset_node(node);
    shadow_.reset_node(node);
    ok["node"] = node;
    publish_states(out, now_us());
  } else {
    throw BadCommand("InvalidCommand", "action must be start, pause, step or reset_node");
  }
  ok["time_us"] = now_us();
  ok["paused"] = paused_;
  out.push_back(reply(ok));
  return out;
}

// --- server -----------------------------------------------------------------

namespace {

constexpr std::string_view kWebSocketGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

std::string websocket_accept(const std::string& key) {
  const std::string in = key + std::string(kWebSocketGuid);
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(in.data()), in.size(), digest);
  unsigned char b64[4 * ((SHA_DIGEST_LENGTH + 2) / 3) + 1];
  const int n = EVP_EncodeBlock(b64, digest, SHA_DIGEST_LENGTH);
  return std::string(reinterpret_cast<char*>(b64), static_cast<std::size_t>(n));
}

std::string header_value(const std::string& request, std::string_view name) {
  std::string lower = request;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::string key = "\r\n" + std::string(name) + ":";
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  const auto pos = lower.find(key);
  if (pos == std::string::npos) return {};
  auto start = pos + key.size();
  const auto end = request.find("\r\n", start);
  while (start < end && request[start] == ' ') ++start;
  auto stop = end;
  while (stop > start && request[stop - 1] == ' ') --stop;
  return request.substr(start, stop - start);
}

bool write_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

std::string websocket_frame(std::uint8_t opcode, std::string_view payload) {
  std::string f;
  f += static_cast<char>(0x80 | opcode);
  const auto n = payload.size();
  if (n < 126) {
    f += static_cast<char>(n);
  } else if (n <= 0xFFFF) {
    f += static_cast<char>(126);
    f += static_cast<char>(n >> 8);
    f += static_cast<char>(n & 0xFF);
  } else {
    f += static_cast<char>(127);
    for (int i = 7; i >= 0; --i) f += static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xFF);
  }
  f += payload;
  return f;
}

}  // namespace

struct Gateway::Client {
  std::uint64_t id = 0;
  int fd = -1;
  bool websocket = false;
  std::atomic<bool> closed{false};
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> outbox;  // already framed for the wire
  std::atomic<bool> ready{false};  // hello sent; broadcasts flow from here on
  std::thread reader;
  std::thread writer;
};

Gateway::Gateway(const ScenarioConfig& config, GatewayOptions options)
    : session_(config, options.start_paused), options_(std::move(options)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw BindError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(options_.port);
  if (::inet_pton(AF_INET, options_.host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw BindError("invalid host address '" + options_.host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 ||
      ::listen(listen_fd_, 16) < 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    throw BindError("cannot listen on " + options_.host + ":" + std::to_string(options_.port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Gateway::~Gateway() {
  stop();
  if (acceptor_.joinable()) acceptor_.join();
  std::map<std::uint64_t, std::shared_ptr<Client>> clients;
  {
    std::lock_guard lk(clients_mu_);
    clients.swap(clients_);
  }
  for (auto& [id, c] : clients) {
    c->closed = true;
    ::shutdown(c->fd, SHUT_RDWR);
    c->cv.notify_all();
    if (c->reader.joinable()) c->reader.join();
    if (c->writer.joinable()) c->writer.join();
    ::close(c->fd);
  }
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void Gateway::stop() {
  stop_ = true;
  cmd_cv_.notify_all();
}

bool Gateway::stopping(const std::atomic<bool>* external_stop) const {
  return stop_ || (external_stop && external_stop->load());
}

void Gateway::accept_loop() {
  while (!stop_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto c = std::make_shared<Client>();
    c->fd = fd;
    {
      std::lock_guard lk(clients_mu_);
      c->id = next_client_++;
      clients_[c->id] = c;
    }
    c->reader = std::thread([this, c] { read_loop(c); });
    c->writer = std::thread([this, c] { write_loop(c); });
  }
}

void Gateway::read_loop(std::shared_ptr<Client> c) {
  std::string buf;
  char chunk[4096];
  auto fill = [&]() {
    while (!c->closed) {
      pollfd p{c->fd, POLLIN, 0};
      const int r = ::poll(&p, 1, 50);
      if (r == 0) continue;
      if (r < 0 && errno == EINTR) continue;
      const auto n = r < 0 ? -1 : ::recv(c->fd, chunk, sizeof chunk, 0);
      if (n <= 0) return false;
      buf.append(chunk, static_cast<std::size_t>(n));
      return true;
    }
    return false;
  };
  auto submit = [&](std::optional<std::string> line) {
    {
      std::lock_guard lk(cmd_mu_);
      commands_.push_back({c->id, std::move(line)});
    }
    cmd_cv_.notify_all();
  };

  // Sniff for an HTTP upgrade. A client that stays silent is a plain one
  // waiting for its hello.
  {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(200);
    while (buf.size() < 4 && buf.find('\n') == std::string::npos && !c->closed &&
           std::chrono::steady_clock::now() < deadline) {
      pollfd p{c->fd, POLLIN, 0};
      if (::poll(&p, 1, 10) <= 0) continue;
      const auto n = ::recv(c->fd, chunk, sizeof chunk, 0);
      if (n <= 0) {
        c->closed = true;
        c->cv.notify_all();
        return;
      }
      buf.append(chunk, static_cast<std::size_t>(n));
    }
  }
  if (buf.rfind("GET ", 0) == 0) {
    while (buf.find("\r\n\r\n") == std::string::npos) {
      if (buf.size() > 16384 || !fill()) {
        c->closed = true;
        c->cv.notify_all();
        return;
      }
    }
    const auto head_end = buf.find("\r\n\r\n") + 4;
    const std::string request = buf.substr(0, head_end);
    buf.erase(0, head_end);
    const std::string key = header_value(request, "Sec-WebSocket-Key");
    if (key.empty()) {
      write_all(c->fd, "HTTP/1.1 426 Upgrade Required\r\nUpgrade: websocket\r\nContent-Length: 0\r\n\r\n");
      c->closed = true;
      c->cv.notify_all();
      return;
    }
    {
      std::lock_guard lk(c->mu);
      c->websocket = true;
      c->outbox.push_front("HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\n"
                           "Connection: Upgrade\r\nSec-WebSocket-Accept: " +
                           websocket_accept(key) + "\r\n\r\n");
    }
    c->cv.notify_all();
    submit(std::nullopt);

    std::string message;
    while (!c->closed) {
      // parse as many complete frames as the buffer holds
      for (;;) {
        if (buf.size() < 2) break;
        const auto b0 = static_cast<unsigned char>(buf[0]);
        const auto b1 = static_cast<unsigned char>(buf[1]);
        std::size_t pos = 2;
        std::uint64_t len = b1 & 0x7F;
        if (len == 126) {
          if (buf.size() < 4) break;
          len = (static_cast<unsigned char>(buf[2]) << 8) | static_cast<unsigned char>(buf[3]);
          pos = 4;
        } else if (len == 127) {
          if (buf.size() < 10) break;
          len = 0;
          for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<unsigned char>(buf[2 + i]);
          pos = 10;
        }
        const bool masked = b1 & 0x80;
        if (buf.size() < pos + (masked ? 4 : 0) + len) break;
        unsigned char mask[4] = {0, 0, 0, 0};
        if (masked) {
          std::memcpy(mask, buf.data() + pos, 4);
          pos += 4;
        }
        std::string payload = buf.substr(pos, len);
        for (std::size_t i = 0; i < payload.size(); ++i) payload[i] ^= static_cast<char>(mask[i % 4]);
        buf.erase(0, pos + len);
        const auto opcode = b0 & 0x0F;
        if (opcode == 0x8) {
          send_to(*c, websocket_frame(0x8, ""));
          c->closed = true;
          c->cv.notify_all();
          return;
        }
        if (opcode == 0x9) {
          send_to(*c, websocket_frame(0xA, payload));
          continue;
        }
        if (opcode == 0x1 || opcode == 0x0) {
          message += payload;
          if (b0 & 0x80) {
            submit(std::move(message));
            message.clear();
          }
        }
      }
      if (!fill()) break;
    }
  } else {
    submit(std::nullopt);
    while (!c->closed) {
      std::size_t nl;
      while ((nl = buf.find('\n')) != std::string::npos) {
        std::string line = buf.substr(0, nl);
        buf.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) submit(std::move(line));
      }
      if (!fill()) break;
    }
  }
  c->closed = true;
  c->cv.notify_all();
}

void Gateway::write_loop(std::shared_ptr<Client> c) {
  for (;;) {
    std::string next;
    {
      std::unique_lock lk(c->mu);
      c->cv.wait(lk, [&] { return !c->outbox.empty() || c->closed; });
      if (c->outbox.empty()) return;
      next = std::move(c->outbox.front());
      c->outbox.pop_front();
    }
    if (!write_all(c->fd, next)) {
      c->closed = true;
      return;
    }
  }
}

void Gateway::send_to(Client& c, const std::string& framed) {
  {
    std::lock_guard lk(c.mu);
    c.outbox.push_back(framed);
  }
  c.cv.notify_all();
}

void Gateway::deliver(std::uint64_t from, const std::vector<Outgoing>& msgs) {
  std::vector<std::shared_ptr<Client>> targets;
  {
    std::lock_guard lk(clients_mu_);
    for (auto& [id, c] : clients_) targets.push_back(c);
  }
  for (auto& c : targets) {
    if (c->closed || !c->ready) continue;
    for (const auto& m : msgs) {
      if (!m.broadcast && c->id != from) continue;
      send_to(*c, c->websocket ? websocket_frame(0x1, m.line) : m.line + "\n");
    }
  }
}

void Gateway::drop(std::uint64_t id) {
  std::shared_ptr<Client> c;
  {
    std::lock_guard lk(clients_mu_);
    auto it = clients_.find(id);
    if (it == clients_.end()) return;
    c = it->second;
    clients_.erase(it);
  }
  c->closed = true;
  ::shutdown(c->fd, SHUT_RDWR);
  c->cv.notify_all();
  if (c->reader.joinable()) c->reader.join();
  if (c->writer.joinable()) c->writer.join();
  ::close(c->fd);
}

void Gateway::run(const std::atomic<bool>* external_stop) {
  acceptor_ = std::thread([this] { accept_loop(); });
  using clock = std::chrono::steady_clock;
  auto anchor_real = clock::now();
  auto anchor_sim = session_.now_us();
  bool was_paused = true;

  while (!stopping(external_stop)) {
    std::deque<Command> batch;
    {
      std::unique_lock lk(cmd_mu_);
      cmd_cv_.wait_for(lk, std::chrono::milliseconds(session_.paused() ? 50 : 5),
                       [&] { return !commands_.empty() || stop_; });
      batch.swap(commands_);
    }
    for (auto& cmd : batch) {
      if (!cmd.line) {
        std::shared_ptr<Client> c;
        {
          std::lock_guard lk(clients_mu_);
          auto it = clients_.find(cmd.client);
          if (it != clients_.end()) c = it->second;
        }
        if (!c) continue;
        c->ready = true;
        deliver(cmd.client, {{false, session_.hello()}});
      } else {
        deliver(cmd.client, session_.handle(*cmd.line));
      }
    }

    if (!session_.paused()) {
      const auto now = clock::now();
      if (was_paused) {
        anchor_real = now;
        anchor_sim = session_.now_us();
      }
      const double real_us =
          std::chrono::duration<double, std::micro>(now - anchor_real).count() * options_.time_scale;
      deliver(0, session_.advance_to(anchor_sim + static_cast<std::int64_t>(real_us)));
    }
    was_paused = session_.paused();

    std::vector<std::uint64_t> gone;
    {
      std::lock_guard lk(clients_mu_);
      for (auto& [id, c] : clients_) {
        if (c->closed) gone.push_back(id);
      }
    }
    for (auto id : gone) drop(id);
  }
  stop_ = true;
  if (acceptor_.joinable()) acceptor_.join();
}

}  // namespace cansim
