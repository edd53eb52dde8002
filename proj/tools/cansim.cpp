// cansim: run scenario files, export traces, serve the gateway, print RbT timing.
//
// Exit codes: 0 ok, 2 input error, 3 runtime or bind error.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "cansim/gateway.hpp"
#include "cansim/metrics.hpp"
#include "cansim/rbt.hpp"
#include "cansim/scenario.hpp"

namespace fs = std::filesystem;
using namespace cansim;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;
constexpr std::uint16_t kDefaultPort = 29536;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

bool write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  return static_cast<bool>(out);
}

std::optional<ScenarioConfig> load_or_report(const std::string& path) {
  try {
    return load_scenario(path);
  } catch (const ScenarioError& e) {
    std::cerr << "cansim: " << (e.where() == path ? "" : path + ": ") << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "cansim: " << path << ": " << e.what() << "\n";
  }
  return std::nullopt;
}

int cmd_run(const std::string& scenario, const std::string& out_dir) {
  auto cfg = load_or_report(scenario);
  if (!cfg) return kExitInput;
  ScenarioResult result;
  try {
    result = run_scenario(*cfg);
  } catch (const std::exception& e) {
    std::cerr << "cansim: simulation failed: " << e.what() << "\n";
    return kExitRuntime;
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const fs::path dir(out_dir);
  const auto summary = summary_json(result.summary).dump(2) + "\n";
  if (ec || !write_file(dir / "trace.csv", export_csv(result.trace)) ||
      !write_file(dir / "trace.log", export_log(result.trace)) ||
      !write_file(dir / "summary.json", summary)) {
    std::cerr << "cansim: cannot write to " << out_dir << "\n";
    return kExitRuntime;
  }
  std::cout << summary;
  return 0;
}

int cmd_export(const std::string& scenario, const std::string& csv_in, const std::string& format,
               const std::string& perspective, const std::string& out) {
  std::string text;
  if (!csv_in.empty()) {
    std::ifstream in(csv_in, std::ios::binary);
    if (!in) {
      std::cerr << "cansim: cannot open " << csv_in << "\n";
      return kExitInput;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    std::vector<CsvRow> rows;
    try {
      rows = parse_csv(ss.str());
    } catch (const CsvError& e) {
      std::cerr << "cansim: " << csv_in << ": " << e.what() << "\n";
      return kExitInput;
    }
    if (!perspective.empty()) {
      std::cerr << "cansim: --perspective needs --scenario; CSV rows do not name the reporting node\n";
      return kExitInput;
    }
    text = format == "log" ? export_log(rows) : export_csv(rows);
  } else {
    auto cfg = load_or_report(scenario);
    if (!cfg) return kExitInput;
    cfg->bus.record_bit_samples = false;
    Bus bus = build_scenario_bus(*cfg, true);
    const Trace trace = bus.run_until({cfg->duration_us, {}});
    text = format == "log" ? export_log(trace) : export_csv(trace, perspective);
  }
  if (out.empty() || out == "-") {
    std::cout << text;
  } else if (!write_file(out, text)) {
    std::cerr << "cansim: cannot write " << out << "\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_serve(const std::string& scenario, std::optional<int> port_flag, const std::string& host,
              double time_scale, bool paused) {
  auto cfg = load_or_report(scenario);
  if (!cfg) return kExitInput;

  int port = kDefaultPort;
  if (port_flag) {
    port = *port_flag;
  } else if (const char* env = std::getenv("CANSIM_PORT"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 0 || v > 65535) {
      std::cerr << "cansim: CANSIM_PORT must be a port number, got '" << env << "'\n";
      return kExitInput;
    }
    port = static_cast<int>(v);
  }
  if (port < 0 || port > 65535) {
    std::cerr << "cansim: port out of range\n";
    return kExitInput;
  }
  if (time_scale <= 0) {
    std::cerr << "cansim: --time-scale must be positive\n";
    return kExitInput;
  }

  GatewayOptions opts;
  opts.host = host;
  opts.port = static_cast<std::uint16_t>(port);
  opts.time_scale = time_scale;
  opts.start_paused = paused;
  try {
    Gateway gw(*cfg, opts);
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on " << host << ":" << gw.port() << std::endl;
    gw.run(&g_stop);
  } catch (const BindError& e) {
    std::cerr << "cansim: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "cansim: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

int cmd_slack(long long bitrate, long long cpu, long long cycles, long long sample_cycles,
              const std::string& point, bool as_json) {
  if (bitrate <= 0 || cpu <= 0 || cycles <= 0 || sample_cycles < 0) {
    std::cerr << "cansim: --bitrate, --cpu and --cycles must be positive\n";
    return kExitInput;
  }
  RuleSet rules;
  if (const auto p = parse_decision_point(point)) {
    rules.decision_point = *p;
  } else {
    std::cerr << "cansim: unknown decision point '" << point << "'\n";
    return kExitInput;
  }
  SlackReport r;
  try {
    r = slack_report(rules, static_cast<std::uint32_t>(bitrate), static_cast<std::uint64_t>(cpu),
                     static_cast<std::uint64_t>(cycles), static_cast<std::uint64_t>(sample_cycles));
  } catch (const std::invalid_argument& e) {
    std::cerr << "cansim: " << e.what() << "\n";
    return kExitInput;
  }

  if (as_json) {
    nlohmann::ordered_json j;
    j["bit_time_us"] = to_decimal(r.bit_time_us);
    j["compute_time_us"] = to_decimal(r.compute_time_us);
    j["sampling_overhead_pct"] = to_decimal(r.sampling_overhead_pct);
    j["configured"] = std::string(to_string(r.configured));
    j["points"] = nlohmann::ordered_json::array();
    for (const auto& p : r.points) {
      j["points"].push_back({{"decision_point", std::string(to_string(p.point))},
                             {"bits_before_ack", p.bits_before_ack},
                             {"slack_us", to_decimal(p.available_us)},
                             {"margin_us", to_decimal(p.margin_us)},
                             {"feasible", p.feasible}});
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  std::cout << "bit_time_us            " << to_decimal(r.bit_time_us) << "\n"
            << "compute_time_us        " << to_decimal(r.compute_time_us) << "\n"
            << "sampling_overhead_pct  " << to_decimal(r.sampling_overhead_pct) << "\n\n"
            << std::left << std::setw(12) << "decision" << std::setw(6) << "bits" << std::setw(12)
            << "slack_us" << std::setw(12) << "margin_us" << "feasible\n";
  for (const auto& p : r.points) {
    std::cout << std::setw(12) << to_string(p.point) << std::setw(6) << p.bits_before_ack << std::setw(12)
              << to_decimal(p.available_us) << std::setw(12) << to_decimal(p.margin_us)
              << (p.feasible ? "yes" : "no") << (p.point == r.configured ? "  *" : "") << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-time CAN bus simulator with a rule-based transceiver firewall"};
  app.require_subcommand(1);

  std::string scenario, out_dir = ".";
  auto* run = app.add_subcommand("run", "Run a scenario and write trace.csv, trace.log, summary.json");
  run->add_option("--scenario", scenario, "Scenario file")->required();
  run->add_option("--out", out_dir, "Output directory");

  std::string csv_in, format = "csv", perspective, export_out;
  auto* exp = app.add_subcommand("export", "Export a scenario's trace, or convert a CSV trace");
  auto* exp_scn = exp->add_option("--scenario", scenario, "Scenario file to run");
  auto* exp_csv = exp->add_option("--csv", csv_in, "Existing trace.csv to convert");
  exp_scn->excludes(exp_csv);
  exp->add_option("--format", format, "csv or log")->check(CLI::IsMember({"csv", "log"}));
  exp->add_option("--perspective", perspective, "Only rows reported by this node");
  exp->add_option("--out", export_out, "Output file (default stdout)");

  std::optional<int> port;
  std::string host = "127.0.0.1";
  double time_scale = 1.0;
  bool paused = false;
  auto* serve = app.add_subcommand("serve", "Serve a live simulation over TCP/WebSocket");
  serve->add_option("--scenario", scenario, "Scenario file")->required();
  serve->add_option("--port", port, "TCP port (default $CANSIM_PORT, then 29536)");
  serve->add_option("--host", host, "Address to bind");
  serve->add_option("--time-scale", time_scale, "Simulated ms per real ms");
  serve->add_flag("--paused", paused, "Start paused (stepped mode)");

  long long bitrate = 0, cpu = 0, cycles = 0, sample_cycles = 0;
  std::string point = "after_id";
  bool as_json = false;
  auto* slack = app.add_subcommand("slack", "Print the RbT timing budget");
  slack->add_option("--bitrate", bitrate, "Bus bitrate in bit/s")->required();
  slack->add_option("--cpu", cpu, "CPU frequency in Hz")->required();
  slack->add_option("--cycles", cycles, "CPU cycles per decision")->required();
  slack->add_option("--sample-cycles", sample_cycles, "CPU cycles per sampled bit (default --cycles)");
  slack->add_option("--decision-point", point, "Configured decision point, marked with *");
  slack->add_flag("--json", as_json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  if (*run) return cmd_run(scenario, out_dir);
  if (*exp) {
    if (scenario.empty() && csv_in.empty()) {
      std::cerr << "cansim: export needs --scenario or --csv\n";
      return kExitInput;
    }
    return cmd_export(scenario, csv_in, format, perspective, export_out);
  }
  if (*serve) return cmd_serve(scenario, port, host, time_scale, paused);
  if (*slack) return cmd_slack(bitrate, cpu, cycles, sample_cycles, point, as_json);
  return kExitInput;
}
