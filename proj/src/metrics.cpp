#include "cansim/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <sstream>
#include <utility>

namespace cansim {

namespace {

std::string_view direction_of(TraceKind k) {
  switch (k) {
    case TraceKind::frame_tx_start: return "TX";
    case TraceKind::frame_delivered: return "RX";
    case TraceKind::frame_killed: return "KILLED";
    default: return "";
  }
}

std::string data_cell(const CsvRow& row, std::string_view sep) {
  if (row.rtr) return row.dlc ? "R" + std::to_string(row.dlc) : "R";
  return format_data(row.data, sep);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line, std::size_t lineno) {
  std::vector<std::string> cells{""};
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  if (quoted) throw CsvError("line " + std::to_string(lineno) + ": unterminated quote");
  return cells;
}

std::int64_t parse_seconds(const std::string& s) {
  const Rational r = parse_rational(s) * 1'000'000;
  if (r.denominator() != 1) throw std::invalid_argument("time has sub-microsecond digits");
  return r.numerator();
}

FrameId parse_csv_id(const std::string& s) {
  if (s.empty() || s.size() > 8 ||
      !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isxdigit(c); })) {
    throw std::invalid_argument("bad id '" + s + "'");
  }
  const auto v = static_cast<std::uint32_t>(std::stoul(s, nullptr, 16));
  return FrameId::make(v, s.size() == 8 ? IdKind::extended : IdKind::standard);
}

}  // namespace

Rational busload(const Trace& trace, std::int64_t start_us, std::int64_t length_us,
                 std::int64_t bit_time_us) {
  if (bit_time_us <= 0) throw std::invalid_argument("bit time must be positive");
  const std::int64_t bits = length_us / bit_time_us;
  if (bits <= 0) throw EmptyWindow("busload window holds no bit time");

  std::optional<std::int64_t> first, last;
  std::int64_t busy = 0;
  const std::int64_t end = start_us + bits * bit_time_us;
  for (const auto& r : trace) {
    if (r.kind != TraceKind::bit_sample) continue;
    if (!first) first = r.time_us;
    last = r.time_us;
    if (r.time_us >= start_us && r.time_us < end && r.busy) ++busy;
  }
  if (!first || start_us < *first || end > *last + bit_time_us) {
    throw std::out_of_range("busload window extends past the sampled trace");
  }
  return Rational(busy * 100, bits);
}

Rational busload(const Trace& trace) {
  std::int64_t total = 0;
  std::int64_t busy = 0;
  for (const auto& r : trace) {
    if (r.kind != TraceKind::bit_sample) continue;
    ++total;
    if (r.busy) ++busy;
  }
  return total ? Rational(busy * 100, total) : Rational(0);
}

Rational payload_overhead_comparison(OverheadScheme scheme, unsigned mac_bytes,
                                     unsigned payload_bytes) {
  switch (scheme) {
    case OverheadScheme::rbt:
      return Rational(0);
    case OverheadScheme::mac_in_payload:
      if (payload_bytes == 0 || mac_bytes > payload_bytes) {
        throw std::invalid_argument("MAC must fit in the payload");
      }
      return Rational(static_cast<std::int64_t>(mac_bytes) * 100,
                      static_cast<std::int64_t>(payload_bytes));
    case OverheadScheme::mac_separate_frame:
      if (mac_bytes > 8) throw std::invalid_argument("MAC must fit in one frame");
      return Rational(100);  // one extra MAC frame per data frame
  }
  return Rational(0);
}

void SummaryBuilder::add(const TraceRecord& r) {
  switch (r.kind) {
    case TraceKind::frame_tx_start: ++s_.frames_offered; break;
    case TraceKind::frame_killed: ++s_.frames_killed; break;
    case TraceKind::frame_delivered:
      if (r.time_us != delivered_time_) {
        delivered_time_ = r.time_us;
        delivered_sources_.clear();
      }
      if (delivered_sources_.insert(r.source).second) ++s_.frames_delivered;
      break;
    case TraceKind::state_change:
      if (r.state && r.state->mode == ErrorMode::bus_off) s_.bus_off_events.push_back({r.node, r.time_us});
      break;
    case TraceKind::bit_sample:
      ++bits_;
      if (r.busy) ++busy_bits_;
      break;
    default: break;
  }
}

ScenarioSummary SummaryBuilder::result(const SummaryBuilder* without_rbt) const {
  ScenarioSummary s = s_;
  s.busload_pct = bits_ ? Rational(busy_bits_ * 100, bits_) : Rational(0);
  if (without_rbt) s.rbt_added_busload_pct = s.busload_pct - without_rbt->result().busload_pct;
  return s;
}

ScenarioSummary summarize(const Trace& trace, const Trace* without_rbt) {
  SummaryBuilder with;
  with.add(trace);
  if (!without_rbt) return with.result();
  SummaryBuilder bare;
  bare.add(*without_rbt);
  return with.result(&bare);
}

std::string format_seconds(std::int64_t time_us) {
  std::string s = to_fixed(Rational(time_us, 1'000'000), 6);
  const auto dot = s.find('.');
  while (s.size() > dot + 4 && s.back() == '0') s.pop_back();
  return s;
}

std::string format_hex_id(const FrameId& id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, id.is_extended() ? "%08x" : "%04x", id.value);
  return buf;
}

std::string format_data(const std::vector<std::uint8_t>& data, std::string_view sep) {
  std::string out;
  char buf[4];
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i) out += sep;
    std::snprintf(buf, sizeof buf, "%02X", data[i]);
    out += buf;
  }
  return out;
}

std::vector<std::uint8_t> parse_hex_data(std::string_view text) {
  std::string digits;
  for (char c : text) {
    if (c == ' ') continue;
    if (!std::isxdigit(static_cast<unsigned char>(c))) {
      throw std::invalid_argument("non-hex character in data");
    }
    digits += c;
  }
  if (digits.size() % 2) throw std::invalid_argument("odd number of hex digits in data");
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < digits.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoul(digits.substr(i, 2), nullptr, 16)));
  }
  return out;
}

std::vector<CsvRow> csv_rows(const Trace& trace, std::string_view perspective) {
  std::vector<CsvRow> rows;
  for (const auto& r : trace) {
    if (!is_frame_event(r) || !r.frame) continue;
    if (!perspective.empty() && r.node != perspective) continue;
    CsvRow row;
    row.index = rows.size() + 1;
    row.time_us = r.time_us;
    row.channel = r.channel;
    row.id = r.frame->id;
    row.name = r.frame_name;
    row.direction = std::string(direction_of(r.kind));
    row.rtr = r.frame->rtr;
    row.dlc = r.frame->dlc;
    row.data = r.frame->data;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string export_csv(const std::vector<CsvRow>& rows) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& row : rows) {
    out += std::to_string(row.index) + "," + format_seconds(row.time_us) + "," +
           csv_escape(row.channel) + "," + format_hex_id(row.id) + "," + csv_escape(row.name) +
           "," + row.direction + "," + data_cell(row, " ") + "\n";
  }
  return out;
}

std::string export_csv(const Trace& trace, std::string_view perspective) {
  return export_csv(csv_rows(trace, perspective));
}

std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kCsvHeader) throw CsvError("line 1: expected header '" + std::string(kCsvHeader) + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split_csv_line(line, lineno);
    if (cells.size() != 7) {
      throw CsvError("line " + std::to_string(lineno) + ": expected 7 columns, got " +
                     std::to_string(cells.size()));
    }
    try {
      CsvRow row;
      row.index = std::stoull(cells[0]);
      row.time_us = parse_seconds(cells[1]);
      row.channel = cells[2];
      row.id = parse_csv_id(cells[3]);
      row.name = cells[4];
      row.direction = cells[5];
      if (row.direction != "TX" && row.direction != "RX" && row.direction != "KILLED") {
        throw std::invalid_argument("direction must be TX, RX or KILLED");
      }
      const std::string& d = cells[6];
      if (!d.empty() && d[0] == 'R') {
        row.rtr = true;
        row.dlc = d.size() > 1 ? static_cast<std::uint8_t>(std::stoul(d.substr(1))) : 0;
        if (row.dlc > 8) throw std::invalid_argument("dlc must be 0..8");
      } else {
        row.data = parse_hex_data(d);
        if (row.data.size() > 8) throw std::invalid_argument("more than 8 data bytes");
        row.dlc = static_cast<std::uint8_t>(row.data.size());
      }
      rows.push_back(std::move(row));
    } catch (const CsvError&) {
      throw;
    } catch (const std::exception& e) {
      throw CsvError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::string export_log(const std::vector<CsvRow>& rows) {
  struct Line {
    const CsvRow* row;
    bool killed;
  };
  auto same_frame = [](const CsvRow& a, const CsvRow& b) {
    return a.id == b.id && a.rtr == b.rtr && a.dlc == b.dlc && a.data == b.data;
  };
  std::vector<Line> lines;
  std::vector<std::size_t> open;  // TX lines whose outcome has not been seen
  const CsvRow* last_rx = nullptr;
  for (const auto& row : rows) {
    auto match = std::find_if(open.rbegin(), open.rend(),
                              [&](std::size_t i) { return same_frame(*lines[i].row, row); });
    if (row.direction == "TX") {
      if (match != open.rend()) open.erase(std::next(match).base());  // a retry supersedes it
      open.push_back(lines.size());
      lines.push_back({&row, false});
    } else if (row.direction == "KILLED") {
      if (match != open.rend()) {
        lines[*match].killed = true;
        open.erase(std::next(match).base());
      } else {
        lines.push_back({&row, true});
      }
    } else {
      // every receiver reports the same frame; it is logged once, at its start when known
      if (match != open.rend()) {
        open.erase(std::next(match).base());
      } else if (!last_rx || last_rx->time_us != row.time_us || !same_frame(*last_rx, row)) {
        lines.push_back({&row, false});
      }
      last_rx = &row;
    }
  }
  std::string out;
  for (const auto& [row, killed] : lines) {
    char id[16];
    std::snprintf(id, sizeof id, row->id.is_extended() ? "%08X" : "%03X", row->id.value);
    out += "(" + to_fixed(Rational(row->time_us, 1'000'000), 6) + ") " + row->channel + " " + id +
           "#" + data_cell(*row, "") + (killed ? " KILLED" : "") + "\n";
  }
  return out;
}

std::string export_log(const Trace& trace) {
  // drop attempts that lost arbitration; the winner's frame is what the bus carried
  std::vector<std::size_t> drop;
  std::map<std::string, std::size_t> last_start;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& r = trace[i];
    if (r.kind == TraceKind::frame_tx_start) last_start[r.node] = i;
    if (r.kind == TraceKind::arbitration_loss && last_start.count(r.node)) drop.push_back(last_start[r.node]);
  }
  if (drop.empty()) return export_log(csv_rows(trace));
  std::sort(drop.begin(), drop.end());
  Trace kept;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (!std::binary_search(drop.begin(), drop.end(), i) && is_frame_event(trace[i])) kept.push_back(trace[i]);
  }
  return export_log(csv_rows(kept));
}

}  // namespace cansim
