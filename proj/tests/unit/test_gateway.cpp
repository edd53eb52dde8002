#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <fstream>

#include "gateway_client.hpp"

using namespace cansim;
using nlohmann::json;

namespace {

ScenarioConfig figure2() { return load_scenario(CANSIM_SOURCE_DIR "/scenarios/figure2.json"); }

json only_reply(GatewaySession& s, const std::string& line) {
  const auto out = s.handle(line);
  REQUIRE(out.size() == 1);
  CHECK_FALSE(out[0].broadcast);
  return json::parse(out[0].line);
}

std::vector<json> parse_all(const std::vector<Outgoing>& out) {
  std::vector<json> msgs;
  for (const auto& m : out) msgs.push_back(json::parse(m.line));
  return msgs;
}

std::string ws_payload(testing::LineClient& c) {
  const auto head = c.read_bytes(2);
  CHECK(static_cast<unsigned char>(head[0]) == 0x81);
  std::size_t len = static_cast<unsigned char>(head[1]) & 0x7F;
  if (len == 126) {
    const auto ext = c.read_bytes(2);
    len = (static_cast<unsigned char>(ext[0]) << 8) | static_cast<unsigned char>(ext[1]);
  }
  return c.read_bytes(len);
}

std::string ws_masked_text(const std::string& payload) {
  const unsigned char mask[4] = {0x12, 0x34, 0x56, 0x78};
  std::string f;
  f += static_cast<char>(0x81);
  f += static_cast<char>(0x80 | payload.size());
  for (auto m : mask) f += static_cast<char>(m);
  for (std::size_t i = 0; i < payload.size(); ++i) f += static_cast<char>(payload[i] ^ mask[i % 4]);
  return f;
}

}  // namespace

TEST_CASE("wire ids") {
  CHECK(wire_id(FrameId::standard(0x199)) == "0x199");
  CHECK(wire_id(FrameId::standard(0x7)) == "0x007");
  CHECK(wire_id(FrameId::extended(0x1ABCDEF0)) == "0x1ABCDEF0");
}

TEST_CASE("hello describes the desktop tool scenario") {
  GatewaySession s(figure2());
  const auto hello = json::parse(s.hello());
  CHECK(hello["type"] == "hello");
  CHECK(hello["bitrate"] == 10000);
  CHECK(hello["registered_ids"] == json::array({"0x199", "0x7FC"}));
  REQUIRE(hello["nodes"].size() == 5);
  CHECK(hello["nodes"][0]["name"] == "tool");
  CHECK(hello["nodes"][4]["role"] == "rbt");
  CHECK(hello["tx_node"] == "tool");
  CHECK(hello["paused"] == true);
}

TEST_CASE("malformed and unknown commands") {
  GatewaySession s(figure2());
  CHECK(only_reply(s, "{not json")["code"] == "ParseError");
  CHECK(only_reply(s, "[1,2]")["code"] == "ParseError");
  CHECK(only_reply(s, R"({"type":"launch"})")["code"] == "UnknownType");
  CHECK(only_reply(s, R"({"type":"send_frame","id":"0x999999999"})")["code"] == "InvalidFrame");
  CHECK(only_reply(s, R"({"type":"send_frame","id":"0x123","data":"00 11 22 33 44 55 66 77 88"})")["code"] ==
        "InvalidFrame");
  CHECK(only_reply(s, R"({"type":"send_frame","id":"0x123","dlc":2,"data":"00"})")["code"] == "InvalidFrame");
  CHECK(only_reply(s, R"({"type":"send_frame","id":"zz"})")["code"] == "InvalidFrame");
  CHECK(only_reply(s, R"({"type":"send_frame","channel":"CAN2","id":"0x123"})")["code"] == "InvalidChannel");
  CHECK(only_reply(s, R"({"type":"send_frame"})")["code"] == "InvalidCommand");
  CHECK(only_reply(s, R"({"type":"send_frame","id":"0x123","node":"ghost"})")["code"] == "UnknownNode");
  CHECK(only_reply(s, R"({"type":"control","action":"reset_node","node":"rbt"})")["code"] == "UnknownNode");
  CHECK(only_reply(s, R"({"type":"control","action":"dance"})")["code"] == "InvalidCommand");
  // nothing was enqueued by the rejected commands: the first frame is Test Node's at 100 ms
  for (const auto& m : parse_all(s.advance_bits(1100))) {
    if (m["type"] == "frame_event") CHECK(m["source"] == "Test Node");
  }
}

TEST_CASE("registry edits apply to the running RbT") {
  GatewaySession s(figure2());
  auto r = only_reply(s, R"({"type":"register_id","id":"0x123"})");
  CHECK(r["changed"] == true);
  CHECK(r["registered_ids"] == json::array({"0x123", "0x199", "0x7FC"}));
  CHECK(only_reply(s, R"({"type":"register_id","id":"0x123"})")["changed"] == false);
  only_reply(s, R"({"type":"send_frame","id":"0x123","dlc":1,"data":"FF","node":"attacker1"})");
  auto events = parse_all(s.advance_bits(100));
  REQUIRE(events.size() == 1);
  CHECK(events[0]["verdict"] == "delivered");
  CHECK(events[0]["direction"] == "RX");

  CHECK(only_reply(s, R"({"type":"unregister_id","id":"0x123"})")["changed"] == true);
  only_reply(s, R"({"type":"send_frame","id":"0x123","dlc":1,"data":"FF","node":"attacker1"})");
  events = parse_all(s.advance_bits(30));
  REQUIRE(events.size() >= 2);
  CHECK(events[0]["type"] == "frame_event");
  CHECK(events[0]["verdict"] == "killed");
  int attacker_states = 0;
  for (const auto& m : events) {
    if (m["type"] == "node_state" && m["node"] == "attacker1") {
      CHECK(m["tec"] == 8);
      ++attacker_states;
    } else if (m["type"] == "node_state") {
      CHECK(m["rec"] == 1);
    }
  }
  CHECK(attacker_states == 1);
}

TEST_CASE("send_frame labels the designated tx node as TX") {
  GatewaySession s(figure2());
  const auto ok = only_reply(s, R"({"type":"send_frame","channel":"CAN1","id":"0x199","name":"msg1","data":"0A"})");
  CHECK(ok["node"] == "tool");
  const auto events = parse_all(s.advance_to(10000));
  REQUIRE(events.size() == 1);
  CHECK(events[0] == json::parse(R"({"type":"frame_event","time_us":5300,"channel":"CAN1","id":"0x199",
      "name":"msg1","direction":"TX","data":"0A","verdict":"delivered","source":"tool"})"));
}

TEST_CASE("metrics arrive every 100 ms of simulated time") {
  GatewaySession s(figure2());
  std::vector<json> metrics;
  for (const auto& m : parse_all(s.advance_to(300000))) {
    if (m["type"] == "metrics") metrics.push_back(m);
  }
  REQUIRE(metrics.size() == 3);
  CHECK(metrics[0]["time_us"] == 100000);
  CHECK(metrics[0]["busload_pct"] == "0.000");
  CHECK(metrics[2]["time_us"] == 300000);
  CHECK(metrics[1]["busload_pct"] != "0.000");  // the 0x7FC frame at 100 ms
}

TEST_CASE("a port in use is a BindError") {
  Gateway first(figure2(), {});
  GatewayOptions opts;
  opts.port = first.port();
  CHECK_THROWS_AS(Gateway(figure2(), opts), BindError);
  opts.port = 0;
  opts.host = "not-an-address";
  CHECK_THROWS_AS(Gateway(figure2(), opts), BindError);
}

TEST_CASE("two clients see the same broadcast stream") {
  testing::GatewayFixture gw(figure2());
  testing::LineClient a(gw.port());
  testing::LineClient b(gw.port());
  const auto hello_a = a.read_line();
  CHECK(b.read_line() == hello_a);

  const auto from_a = testing::exchange(a, R"({"type":"send_frame","id":"0x123","data":"FF","node":"attacker1"})");
  REQUIRE(from_a.size() == 1);
  const auto stepped = testing::exchange(a, R"({"type":"control","action":"step","bits":400})");
  REQUIRE(stepped.size() > 3);
  // b sees the broadcasts but not a's replies
  for (std::size_t i = 0; i + 1 < stepped.size(); ++i) CHECK(b.read_line() == stepped[i]);
  const auto summary = testing::exchange(b, R"({"type":"get_summary"})");
  REQUIRE(summary.size() == 1);
  CHECK(json::parse(summary[0])["type"] == "summary");
}

TEST_CASE("WebSocket upgrade carries the same messages") {
  testing::GatewayFixture gw(figure2());
  testing::LineClient c(gw.port());
  c.send_raw(
      "GET /ws HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
      "Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\nSec-WebSocket-Version: 13\r\n\r\n");
  const auto head = c.read_until("\r\n\r\n");
  CHECK(head.rfind("HTTP/1.1 101 ", 0) == 0);
  CHECK(head.find("Sec-WebSocket-Accept: s3pPLMBiTxaQ9kYGzzhZRbK+xOo=\r\n") != std::string::npos);
  CHECK(json::parse(ws_payload(c))["type"] == "hello");
  c.send_raw(ws_masked_text(R"({"type":"get_summary"})"));
  const auto reply = json::parse(ws_payload(c));
  CHECK(reply["type"] == "summary");
  CHECK(reply["frames_offered"] == 0);
}

TEST_CASE("an HTTP request without a WebSocket key is refused") {
  testing::GatewayFixture gw(figure2());
  testing::LineClient c(gw.port());
  c.send_raw("GET / HTTP/1.1\r\nHost: localhost\r\n\r\n");
  CHECK(c.read_until("\r\n\r\n").rfind("HTTP/1.1 426 ", 0) == 0);
}

TEST_CASE("scripted session matches the recorded transcript") {
  testing::GatewayFixture gw(figure2());
  const auto got = testing::scripted_session(gw.port());
  if (std::getenv("CANSIM_RECORD_GOLDEN")) {
    std::ofstream out(testing::kGoldenTranscript);
    for (const auto& l : got) out << l << "\n";
  }
  const auto want = testing::read_lines(testing::kGoldenTranscript);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CAPTURE(i);
    CHECK(got[i] == want[i]);
  }
}

TEST_CASE("the recorded transcript shows kill, bus-off and reset") {
  const auto lines = testing::read_lines(testing::kGoldenTranscript);
  REQUIRE(!lines.empty());
  int kills = 0, spoof_delivered = 0, attacker_events_after_off = 0, msg1_tx = 0;
  std::int64_t last_kill = -1, bus_off_at = -1;
  bool reset_seen = false, summary_seen = false;
  for (const auto& l : lines) {
    REQUIRE(l.size() > 2);
    if (l.rfind("< ", 0) != 0) continue;
    const auto m = json::parse(l.substr(2));
    const auto type = m["type"].get<std::string>();
    if (type == "frame_event") {
      const bool spoof = m["id"] == "0x123";
      if (spoof && m["verdict"] == "killed") {
        ++kills;
        last_kill = m["time_us"];
      }
      if (spoof && m["verdict"] == "delivered") ++spoof_delivered;
      if (m["id"] == "0x199" && m["direction"] == "TX" && m["verdict"] == "delivered") ++msg1_tx;
      if (bus_off_at >= 0 && m["source"] == "attacker1") ++attacker_events_after_off;
    } else if (type == "node_state" && m["node"] == "attacker1") {
      if (m["state"] == "bus_off") {
        CHECK(m["tec"] == 256);
        bus_off_at = m["time_us"];
      }
      if (bus_off_at >= 0 && m["state"] == "error_active") {
        CHECK(m["tec"] == 0);
        CHECK(m["rec"] == 0);
        reset_seen = true;
      }
    } else if (type == "summary") {
      CHECK(m["frames_killed"] == 32);
      CHECK(m["bus_off_events"][0]["node"] == "attacker1");
      CHECK(m["bus_off_events"][0]["time_us"] == bus_off_at);
      summary_seen = true;
    }
  }
  CHECK(msg1_tx == 1);
  CHECK(kills == 32);
  CHECK(spoof_delivered == 0);
  CHECK(last_kill == bus_off_at);
  CHECK(attacker_events_after_off == 0);
  CHECK(reset_seen);
  CHECK(summary_seen);
}
