#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>

#include "cansim/scenario.hpp"
#include "support.hpp"

using namespace cansim;
using testing::of_kind;

namespace {

const std::filesystem::path kScenarios = std::filesystem::path(CANSIM_SOURCE_DIR) / "scenarios";
const char* const kBundled[] = {"baseline", "spoof_busoff", "fuzz", "replay", "figure2"};

ScenarioConfig bundled(const std::string& name) { return load_scenario((kScenarios / (name + ".json")).string()); }

std::string where_of(const std::string& text) {
  try {
    parse_scenario_text(text);
  } catch (const ScenarioError& e) {
    return e.where();
  }
  return "accepted";
}

const std::string kMinimalBus = R"("bus": {"bitrate": 10000, "nodes": [{"name": "a", "role": "sender"}, {"name": "b", "role": "receiver"}]})";

}  // namespace

TEST_CASE("bundled scenarios load") {
  for (const auto* name : kBundled) {
    CAPTURE(name);
    CHECK_NOTHROW(bundled(name));
  }
}

TEST_CASE("syntax errors are reported by line and column") {
  CHECK(where_of("{\n  \"bus\": {\"nodes\": [],}\n}") == "line 2, column 23");
  CHECK(where_of("") .rfind("line 1", 0) == 0);
  CHECK(where_of("[1, 2") .rfind("line 1", 0) == 0);
}

TEST_CASE("schema errors are reported by JSON pointer") {
  CHECK(where_of("{}") == "/bus");
  CHECK(where_of("[]") == "/");
  CHECK(where_of(R"({"bus": {"nodes": [{"name": "a", "role": "wizard"}]}})") == "/bus/nodes/0/role");
  CHECK(where_of(R"({"bus": {"nodes": [{"name": "a", "role": "receiver", "colour": 1}]}})") == "/bus/nodes/0/colour");
  CHECK(where_of(R"({"bus": {"bitrate": 3000, "nodes": []}})") == "/bus/bitrate");
  CHECK(where_of(R"({"bus": {"nodes": [{"name": "a", "role": "receiver"}, {"name": "a", "role": "sender"}]}})") ==
        "/bus/nodes/1/name");
  CHECK(where_of("{" + kMinimalBus + R"(, "rules": {"decision_point": "after_eof"}})") == "/rules/decision_point");
  CHECK(where_of("{" + kMinimalBus + R"(, "rules": {"processing_budget_us": "-1"}})") == "/rules/processing_budget_us");
  CHECK(where_of("{" + kMinimalBus + R"(, "attacks": [{"node": "a", "kind": "spoof", "id": "0x123"}]})") ==
        "/attacks/0/node");
  CHECK(where_of("{" + kMinimalBus + R"(, "attacks": [{"node": "zz", "kind": "spoof", "id": "0x123"}]})") ==
        "/attacks/0/node");
  CHECK(where_of(R"({"bus": {"nodes": [{"name": "a", "role": "sender", "tx": [{"id": "0x1", "dlc": 2, "data": "00"}]}]}})") ==
        "/bus/nodes/0/tx/0/dlc");
  CHECK(where_of(R"({"bus": {"nodes": [{"name": "a", "role": "sender", "tx": [{"id": "0xZZ"}]}]}})") ==
        "/bus/nodes/0/tx/0/id");
  CHECK(where_of(R"({"bus": {"nodes": [{"name": "m", "role": "attacker"}]}, "attacks": [{"node": "m", "kind": "fuzz", "frames_per_second": 7}]})") ==
        "/attacks/0/frames_per_second");
  CHECK(where_of(R"({"bus": {"nodes": [{"name": "m", "role": "attacker"}]}, "attacks": [{"node": "m", "kind": "replay"}]})") ==
        "/attacks/0");
  CHECK(where_of("{" + kMinimalBus + R"(, "gateway": {"tx_node": "ghost"}})") == "/gateway/tx_node");
  CHECK(where_of("{" + kMinimalBus + "}") == "accepted");
}

TEST_CASE("a missing file names the path") {
  try {
    load_scenario("/nonexistent/x.json");
    FAIL("loaded");
  } catch (const ScenarioError& e) {
    CHECK(e.where() == "/nonexistent/x.json");
  }
}

TEST_CASE("identifiers and rules") {
  const auto cfg = parse_scenario_text(R"({"bus": {"nodes": [
      {"name": "a", "role": "sender", "registered_ids": ["0x199", 2044, "0x800"]},
      {"name": "fw", "role": "rbt"}]},
      "rules": {"processing_budget_us": "8/5"}})");
  CHECK(cfg.rbt_enabled);
  CHECK(cfg.rbt_name == "fw");
  CHECK(cfg.rules.registered_ids ==
        std::set<FrameId>{FrameId::standard(0x199), FrameId::standard(0x7FC), FrameId::extended(0x800)});
  CHECK(cfg.rules.processing_budget_us == Rational(8, 5));
  CHECK(cfg.bus.nodes.size() == 1);  // the rbt is attached, not a controller
}

TEST_CASE("the spoof scenario ends with the attacker in bus-off") {
  const auto result = run_scenario(bundled("spoof_busoff"));
  CHECK(result.summary.frames_killed == 32);
  REQUIRE(result.summary.bus_off_events.size() == 1);
  CHECK(result.summary.bus_off_events[0].node == "attacker1");
  for (const auto* r : of_kind(result.trace, TraceKind::frame_delivered)) CHECK(r->frame->id.value != 0x123);
  // without the RbT the spoofed frames get through
  bool through = false;
  for (const auto* r : of_kind(result.trace_without_rbt, TraceKind::frame_delivered)) through |= r->frame->id.value == 0x123;
  CHECK(through);
}

TEST_CASE("the baseline scenario has nothing to kill") {
  const auto result = run_scenario(bundled("baseline"));
  CHECK(result.summary.frames_killed == 0);
  CHECK(result.summary.bus_off_events.empty());
  CHECK(result.summary.rbt_added_busload_pct == 0);
  CHECK(result.summary.frames_delivered == result.summary.frames_offered);
  CHECK(without_bit_samples(result.trace) == without_bit_samples(result.trace_without_rbt));
}

TEST_CASE("the fuzz scenario is confined and the replay scenario is not") {
  const auto fuzz = run_scenario(bundled("fuzz"));
  CHECK(fuzz.summary.frames_killed == 32);
  CHECK(fuzz.summary.bus_off_events.size() == 1);
  const auto replay = run_scenario(bundled("replay"));
  CHECK(replay.summary.frames_killed == 0);
  std::size_t replayed = 0;
  for (const auto* r : of_kind(replay.trace, TraceKind::frame_tx_start)) replayed += r->node == "replayer";
  CHECK(replayed == 5);
}

TEST_CASE("the figure scenario reproduces the frame table") {
  const auto cfg = bundled("figure2");
  Bus bus = build_scenario_bus(cfg, true);
  const auto rows = csv_rows(bus.run_until({cfg.duration_us, {}}), "tool");
  REQUIRE(rows.size() == 5);
  const char* dirs[] = {"RX", "TX", "RX", "TX", "RX"};
  const char* names[] = {"Test Node", "msg1", "Test Node", "msg1", "Test Node"};
  const std::uint32_t ids[] = {0x7FC, 0x199, 0x7FC, 0x199, 0x7FC};
  for (int i = 0; i < 5; ++i) {
    CHECK(rows[i].direction == dirs[i]);
    CHECK(rows[i].name == names[i]);
    CHECK(rows[i].id.value == ids[i]);
  }
  CHECK(rows[1].data == std::vector<std::uint8_t>{0x0A});
  CHECK(rows[3].data == std::vector<std::uint8_t>{0x82, 0x2F, 0x82, 0x07});
}

TEST_CASE("scenario runs are reproducible") {
  for (const auto* name : kBundled) {
    CAPTURE(name);
    const auto cfg = bundled(name);
    CHECK(export_csv(run_scenario(cfg).trace) == export_csv(run_scenario(cfg).trace));
  }
}

TEST_CASE("summary json layout") {
  ScenarioSummary s;
  s.frames_offered = 3;
  s.frames_delivered = 2;
  s.frames_killed = 1;
  s.bus_off_events = {{"attacker1", 130200}};
  s.busload_pct = Rational(1, 3);
  s.rbt_added_busload_pct = Rational(-4, 5);
  CHECK(summary_json(s).dump() ==
        R"({"frames_offered":3,"frames_delivered":2,"frames_killed":1,"bus_off_events":[{"node":"attacker1","time_us":130200}],"busload_pct":"0.333","rbt_added_busload_pct":"-0.800"})");
}
