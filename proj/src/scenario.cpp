#include "cansim/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace cansim {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ScenarioError(where.empty() ? "/" : where, what);
}

std::string join(const std::string& path, const std::string& key) { return path + "/" + key; }
std::string join(const std::string& path, std::size_t i) { return path + "/" + std::to_string(i); }

void allow_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  for (const auto& [k, v] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
      fail(join(path, k), "unknown field");
    }
  }
}

const json& require(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) fail(join(path, key), "required field missing");
  return obj.at(key);
}

void expect_object(const json& v, const std::string& path) {
  if (!v.is_object()) fail(path, "expected an object");
}

void expect_array(const json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected an array");
}

std::int64_t get_int(const json& v, const std::string& path, std::int64_t min = 0) {
  if (!v.is_number_integer()) fail(path, "expected an integer");
  const auto n = v.get<std::int64_t>();
  if (n < min) fail(path, "must be at least " + std::to_string(min));
  return n;
}

std::int64_t opt_int(const json& obj, const std::string& path, const char* key, std::int64_t dflt,
                     std::int64_t min = 0) {
  return obj.contains(key) ? get_int(obj.at(key), join(path, key), min) : dflt;
}

std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "expected a string");
  return v.get<std::string>();
}

bool opt_bool(const json& obj, const std::string& path, const char* key, bool dflt) {
  if (!obj.contains(key)) return dflt;
  if (!obj.at(key).is_boolean()) fail(join(path, key), "expected true or false");
  return obj.at(key).get<bool>();
}

std::uint32_t id_value(const json& v, const std::string& path) {
  std::uint64_t n = 0;
  if (v.is_number_unsigned() || v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) fail(path, "identifier must be nonnegative");
    n = v.get<std::uint64_t>();
  } else if (v.is_string()) {
    std::string s = v.get<std::string>();
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) s = s.substr(2);
    if (s.empty() || s.size() > 8 ||
        !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isxdigit(c); })) {
      fail(path, "expected a hex identifier such as \"0x199\"");
    }
    n = std::stoull(s, nullptr, 16);
  } else {
    fail(path, "expected an identifier");
  }
  if (n > kMaxExtendedId) fail(path, "identifier exceeds 29 bits");
  return static_cast<std::uint32_t>(n);
}

// Values above 0x7FF are extended; `extended: true` forces the 29-bit format.
FrameId parse_id(const json& v, const std::string& path, bool extended) {
  const auto n = id_value(v, path);
  return FrameId::make(n, extended || n > kMaxStandardId ? IdKind::extended : IdKind::standard);
}

std::vector<FrameId> parse_id_list(const json& v, const std::string& path) {
  expect_array(v, path);
  std::vector<FrameId> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(parse_id(v[i], join(path, i), false));
  return out;
}

// id, extended, rtr, dlc, data
Frame parse_frame(const json& obj, const std::string& path) {
  const FrameId id = parse_id(require(obj, path, "id"), join(path, "id"),
                              opt_bool(obj, path, "extended", false));
  const bool rtr = opt_bool(obj, path, "rtr", false);
  std::vector<std::uint8_t> data;
  if (obj.contains("data")) {
    if (rtr) fail(join(path, "data"), "remote frames carry no data");
    try {
      data = parse_hex_data(get_string(obj.at("data"), join(path, "data")));
    } catch (const std::invalid_argument& e) {
      fail(join(path, "data"), e.what());
    }
    if (data.size() > 8) fail(join(path, "data"), "more than 8 bytes");
  }
  const auto dlc = opt_int(obj, path, "dlc", static_cast<std::int64_t>(data.size()));
  if (dlc > 8) fail(join(path, "dlc"), "must be 0..8");
  if (rtr) return Frame::remote_frame(id, static_cast<std::uint8_t>(dlc));
  if (static_cast<std::size_t>(dlc) != data.size()) {
    fail(join(path, "dlc"), "dlc " + std::to_string(dlc) + " does not match " +
                                std::to_string(data.size()) + " data bytes");
  }
  return Frame::data_frame(id, std::move(data));
}

std::optional<std::uint64_t> opt_count(const json& obj, const std::string& path) {
  if (!obj.contains("count") || obj.at("count").is_null()) return std::nullopt;
  return static_cast<std::uint64_t>(get_int(obj.at("count"), join(path, "count"), 1));
}

PeriodicTx parse_tx(const json& obj, const std::string& path, const std::string& node) {
  expect_object(obj, path);
  allow_keys(obj, path, {"time_us", "id", "extended", "rtr", "dlc", "data", "name", "period_us", "count"});
  PeriodicTx tx;
  tx.first.time_us = opt_int(obj, path, "time_us", 0);
  tx.first.frame = parse_frame(obj, path);
  tx.first.name = obj.contains("name") ? get_string(obj.at("name"), join(path, "name")) : node;
  if (obj.contains("period_us")) {
    tx.period_us = get_int(obj.at("period_us"), join(path, "period_us"));
    tx.count = opt_count(obj, path);
  } else {
    if (obj.contains("count")) fail(join(path, "count"), "count needs period_us");
    tx.count = 1;
  }
  return tx;
}

NodeRole parse_node_role(const json& v, const std::string& path) {
  const auto role = parse_role(get_string(v, path));
  if (!role) fail(path, "role must be sender, receiver, attacker or rbt");
  return *role;
}

AttackEntry parse_attack(const json& obj, const std::string& path) {
  expect_object(obj, path);
  AttackEntry a;
  a.node = get_string(require(obj, path, "node"), join(path, "node"));
  a.start_time_us = opt_int(obj, path, "start_time_us", 0);
  const std::string kind = get_string(require(obj, path, "kind"), join(path, "kind"));
  if (kind == "spoof") {
    allow_keys(obj, path, {"node", "kind", "start_time_us", "id", "extended", "rtr", "dlc", "data",
                           "period_us", "count"});
    SpoofAttack s;
    s.frame = parse_frame(obj, path);
    s.period_us = opt_int(obj, path, "period_us", 0);
    s.count = opt_count(obj, path);
    a.spec = s;
  } else if (kind == "fuzz") {
    allow_keys(obj, path, {"node", "kind", "start_time_us", "seed", "frames_per_second", "id_range",
                           "id_set", "count"});
    FuzzAttack f;
    f.seed = static_cast<std::uint64_t>(opt_int(obj, path, "seed", 0));
    f.frames_per_second = static_cast<std::uint32_t>(opt_int(obj, path, "frames_per_second", 10, 1));
    if (1'000'000 % f.frames_per_second) {
      fail(join(path, "frames_per_second"), "must divide 1000000 so the period is whole microseconds");
    }
    if (obj.contains("id_range")) {
      const auto& r = obj.at("id_range");
      const auto rp = join(path, "id_range");
      expect_object(r, rp);
      allow_keys(r, rp, {"min", "max", "extended"});
      f.id_range.kind = opt_bool(r, rp, "extended", false) ? IdKind::extended : IdKind::standard;
      f.id_range.min = id_value(require(r, rp, "min"), join(rp, "min"));
      f.id_range.max = id_value(require(r, rp, "max"), join(rp, "max"));
      const auto limit = f.id_range.kind == IdKind::standard ? kMaxStandardId : kMaxExtendedId;
      if (f.id_range.max > limit) fail(join(rp, "max"), "outside identifier bounds");
      if (f.id_range.min > f.id_range.max) fail(join(rp, "min"), "min exceeds max");
    }
    if (obj.contains("id_set")) f.id_set = parse_id_list(obj.at("id_set"), join(path, "id_set"));
    f.count = opt_count(obj, path);
    a.spec = f;
  } else if (kind == "replay") {
    allow_keys(obj, path, {"node", "kind", "start_time_us", "slice", "record"});
    ReplayAttack r;
    if (obj.contains("slice")) {
      const auto& sl = obj.at("slice");
      const auto sp = join(path, "slice");
      expect_array(sl, sp);
      for (std::size_t i = 0; i < sl.size(); ++i) {
        const auto ep = join(sp, i);
        expect_object(sl[i], ep);
        allow_keys(sl[i], ep, {"time_us", "id", "extended", "rtr", "dlc", "data", "name"});
        TraceRecord rec;
        rec.kind = TraceKind::frame_tx_start;
        rec.time_us = opt_int(sl[i], ep, "time_us", 0);
        rec.frame = parse_frame(sl[i], ep);
        rec.frame_name = sl[i].contains("name") ? get_string(sl[i].at("name"), join(ep, "name")) : a.node;
        if (!r.slice.empty() && rec.time_us < r.slice.back().time_us) {
          fail(join(ep, "time_us"), "slice must be in time order");
        }
        r.slice.push_back(std::move(rec));
      }
      if (r.slice.empty()) fail(sp, "replay slice is empty");
    } else if (obj.contains("record")) {
      const auto& rc = obj.at("record");
      const auto rp = join(path, "record");
      expect_object(rc, rp);
      allow_keys(rc, rp, {"node", "from_us", "to_us"});
      ReplayRecording rec;
      rec.node = get_string(require(rc, rp, "node"), join(rp, "node"));
      rec.from_us = opt_int(rc, rp, "from_us", 0);
      rec.to_us = get_int(require(rc, rp, "to_us"), join(rp, "to_us"));
      if (rec.to_us <= rec.from_us) fail(join(rp, "to_us"), "must be after from_us");
      a.recording = rec;
    } else {
      fail(path, "replay needs a slice or a record section");
    }
    a.spec = r;
  } else {
    fail(join(path, "kind"), "kind must be spoof, fuzz or replay");
  }
  return a;
}

FrameSourceFactory periodic_factory(const PeriodicTx& tx) {
  return [tx]() -> std::unique_ptr<FrameSource> {
    return std::make_unique<PeriodicSource>(tx.first, tx.period_us, tx.count);
  };
}

Trace replay_slice(const ScenarioConfig& config, const ReplayRecording& rec, bool with_rbt) {
  ScenarioConfig pre = config;
  pre.attacks.erase(std::remove_if(pre.attacks.begin(), pre.attacks.end(),
                                   [](const AttackEntry& a) { return a.recording.has_value(); }),
                    pre.attacks.end());
  pre.bus.record_bit_samples = false;
  Bus bus = build_scenario_bus(pre, with_rbt);
  Trace slice;
  for (auto& r : bus.run_until({rec.to_us, {}})) {
    if (r.kind == TraceKind::frame_tx_start && r.node == rec.node && r.time_us >= rec.from_us) {
      slice.push_back(std::move(r));
    }
  }
  if (slice.empty()) {
    throw EmptySlice("no transmissions by '" + rec.node + "' in the recording window");
  }
  return slice;
}

}  // namespace

ScenarioConfig parse_scenario(const json& doc) {
  expect_object(doc, "");
  allow_keys(doc, "", {"$schema", "description", "seed", "duration_us", "channel", "bus", "rules",
                       "attacks", "gateway"});
  ScenarioConfig cfg;
  cfg.bus.seed = static_cast<std::uint64_t>(opt_int(doc, "", "seed", 0));
  cfg.duration_us = opt_int(doc, "", "duration_us", cfg.duration_us, 1);
  cfg.bus.max_time_us = cfg.duration_us;
  if (doc.contains("channel")) cfg.bus.channel = get_string(doc.at("channel"), "/channel");

  const auto& bus = require(doc, "", "bus");
  expect_object(bus, "/bus");
  allow_keys(bus, "/bus", {"bitrate", "nodes"});
  const auto bitrate = opt_int(bus, "/bus", "bitrate", 10000, 1);
  if (bitrate > 1'000'000 || 1'000'000 % bitrate) {
    fail("/bus/bitrate", "bit time must be a whole number of microseconds");
  }
  cfg.bus.bitrate = static_cast<std::uint32_t>(bitrate);

  const auto& nodes = require(bus, "/bus", "nodes");
  expect_array(nodes, "/bus/nodes");
  std::set<std::string> names;
  std::set<FrameId> all_registered;
  bool rbt_node = false;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto path = join("/bus/nodes", i);
    const auto& n = nodes[i];
    expect_object(n, path);
    allow_keys(n, path, {"name", "role", "registered_ids", "tx"});
    const auto name = get_string(require(n, path, "name"), join(path, "name"));
    if (name.empty()) fail(join(path, "name"), "must not be empty");
    if (!names.insert(name).second) fail(join(path, "name"), "duplicate node name '" + name + "'");
    const auto role = parse_node_role(require(n, path, "role"), join(path, "role"));
    if (role == NodeRole::rbt) {
      if (rbt_node) fail(join(path, "role"), "only one rbt node is allowed");
      if (n.contains("tx")) fail(join(path, "tx"), "the rbt node does not transmit frames");
      rbt_node = true;
      cfg.rbt_name = name;
      continue;
    }
    NodeSpec spec;
    spec.name = name;
    spec.role = role;
    if (n.contains("registered_ids")) {
      spec.registered_ids = parse_id_list(n.at("registered_ids"), join(path, "registered_ids"));
      all_registered.insert(spec.registered_ids.begin(), spec.registered_ids.end());
    }
    if (n.contains("tx")) {
      const auto& tx = n.at("tx");
      expect_array(tx, join(path, "tx"));
      for (std::size_t j = 0; j < tx.size(); ++j) {
        auto entry = parse_tx(tx[j], join(join(path, "tx"), j), name);
        if (entry.count == std::optional<std::uint64_t>{1}) {
          spec.tx_queue.push_back(entry.first);
        } else {
          cfg.periodic.emplace_back(name, entry);
        }
      }
      std::stable_sort(spec.tx_queue.begin(), spec.tx_queue.end(),
                       [](const ScheduledFrame& a, const ScheduledFrame& b) { return a.time_us < b.time_us; });
    }
    cfg.bus.nodes.push_back(std::move(spec));
  }

  cfg.rbt_enabled = rbt_node || doc.contains("rules");
  if (doc.contains("rules")) {
    const auto& r = doc.at("rules");
    expect_object(r, "/rules");
    allow_keys(r, "/rules", {"registered_ids", "decision_point", "processing_budget_us"});
    if (r.contains("registered_ids")) {
      for (const auto& id : parse_id_list(r.at("registered_ids"), "/rules/registered_ids")) {
        cfg.rules.registered_ids.insert(id);
      }
    }
    if (r.contains("decision_point")) {
      const auto p = parse_decision_point(get_string(r.at("decision_point"), "/rules/decision_point"));
      if (!p) fail("/rules/decision_point", "must be after_id, after_data or after_crc");
      cfg.rules.decision_point = *p;
    }
    if (r.contains("processing_budget_us")) {
      const auto& b = r.at("processing_budget_us");
      try {
        if (b.is_string()) {
          cfg.rules.processing_budget_us = parse_rational(b.get<std::string>());
        } else if (b.is_number_integer()) {
          cfg.rules.processing_budget_us = Rational(b.get<std::int64_t>());
        } else {
          throw std::invalid_argument("expected an integer or a decimal string such as \"1.6\"");
        }
      } catch (const std::invalid_argument& e) {
        fail("/rules/processing_budget_us", e.what());
      }
      if (cfg.rules.processing_budget_us < 0) fail("/rules/processing_budget_us", "must be nonnegative");
    }
  }
  if (cfg.rules.registered_ids.empty()) cfg.rules.registered_ids = all_registered;

  if (doc.contains("attacks")) {
    const auto& attacks = doc.at("attacks");
    expect_array(attacks, "/attacks");
    for (std::size_t i = 0; i < attacks.size(); ++i) {
      const auto path = join("/attacks", i);
      auto a = parse_attack(attacks[i], path);
      const auto it = std::find_if(cfg.bus.nodes.begin(), cfg.bus.nodes.end(),
                                   [&](const NodeSpec& n) { return n.name == a.node; });
      if (it == cfg.bus.nodes.end()) fail(join(path, "node"), "unknown node '" + a.node + "'");
      if (it->role != NodeRole::attacker) fail(join(path, "node"), "node '" + a.node + "' is not an attacker");
      if (a.recording && !names.count(a.recording->node)) {
        fail(join(join(path, "record"), "node"), "unknown node '" + a.recording->node + "'");
      }
      cfg.attacks.push_back(std::move(a));
    }
  }

  if (doc.contains("gateway")) {
    const auto& g = doc.at("gateway");
    expect_object(g, "/gateway");
    allow_keys(g, "/gateway", {"tx_node"});
    if (g.contains("tx_node")) {
      cfg.tx_node = get_string(g.at("tx_node"), "/gateway/tx_node");
      if (std::none_of(cfg.bus.nodes.begin(), cfg.bus.nodes.end(),
                       [&](const NodeSpec& n) { return n.name == cfg.tx_node; })) {
        fail("/gateway/tx_node", "unknown node '" + cfg.tx_node + "'");
      }
    }
  }
  if (cfg.tx_node.empty()) {
    const auto it = std::find_if(cfg.bus.nodes.begin(), cfg.bus.nodes.end(),
                                 [](const NodeSpec& n) { return n.role == NodeRole::sender; });
    if (it != cfg.bus.nodes.end()) cfg.tx_node = it->name;
  }
  return cfg;
}

ScenarioConfig parse_scenario_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset → line and column
    const auto upto = std::min<std::size_t>(e.byte ? e.byte - 1 : 0, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + upto, '\n');
    const auto nl = text.rfind('\n', upto ? upto - 1 : 0);
    const auto col = nl == std::string::npos || upto == 0 ? upto + 1 : upto - nl;
    throw ScenarioError("line " + std::to_string(line) + ", column " + std::to_string(col),
                        "invalid JSON");
  }
  return parse_scenario(doc);
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScenarioError(path, "cannot open scenario file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str());
}

Bus build_scenario_bus(const ScenarioConfig& config, bool with_rbt) {
  BusConfig bc = config.bus;
  for (auto& node : bc.nodes) {
    std::vector<FrameSourceFactory> sources;
    for (const auto& [name, tx] : config.periodic) {
      if (name == node.name) sources.push_back(periodic_factory(tx));
    }
    for (const auto& a : config.attacks) {
      if (a.node != node.name) continue;
      if (a.recording) {
        sources.push_back(replay_attacker({replay_slice(config, *a.recording, with_rbt)}, a.start_time_us));
      } else {
        sources.push_back(attack_source(a.spec, a.start_time_us));
      }
    }
    if (!sources.empty()) node.behavior = merge_sources(std::move(sources));
  }
  Bus bus(bc);
  if (with_rbt && config.rbt_enabled) rbt_attach(bus, config.rules, config.rbt_name);
  return bus;
}

ScenarioResult run_scenario(const ScenarioConfig& config) {
  ScenarioResult out;
  Bus bus = build_scenario_bus(config, true);
  out.trace = bus.run_until({config.duration_us, {}});
  if (config.rbt_enabled) {
    Bus bare = build_scenario_bus(config, false);
    out.trace_without_rbt = bare.run_until({config.duration_us, {}});
  } else {
    out.trace_without_rbt = out.trace;
  }
  out.summary = summarize(out.trace, &out.trace_without_rbt);
  return out;
}

nlohmann::ordered_json summary_json(const ScenarioSummary& s) {
  nlohmann::ordered_json j;
  j["frames_offered"] = s.frames_offered;
  j["frames_delivered"] = s.frames_delivered;
  j["frames_killed"] = s.frames_killed;
  j["bus_off_events"] = nlohmann::ordered_json::array();
  for (const auto& e : s.bus_off_events) {
    j["bus_off_events"].push_back({{"node", e.node}, {"time_us", e.time_us}});
  }
  j["busload_pct"] = to_fixed(s.busload_pct, 3);
  j["rbt_added_busload_pct"] = to_fixed(s.rbt_added_busload_pct, 3);
  return j;
}

}  // namespace cansim
