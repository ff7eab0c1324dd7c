#pragma once

// Canonical event file reader/writer.
//
//   CSV:    session_id,timestamp_ns,kind,side,price_ticks,quantity  (header required)
//   NDJSON: {"session_id":0,"timestamp_ns":1,"kind":"L","side":"A","price_ticks":1001,"quantity":300}
//
// kind is one of L (limit insert), C (cancel), M (market order); side is A or B.
// Files ending in .gz are decompressed on the fly. Lines starting with '#'
// are comments.

#include <zlib.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "ratioflow/book.hpp"
#include "ratioflow/core.hpp"

namespace ratioflow {

inline constexpr std::string_view kEventCsvHeader = "session_id,timestamp_ns,kind,side,price_ticks,quantity";

enum class EventFormat { Csv, Ndjson };

namespace detail {

[[noreturn]] inline void parse_fail(std::size_t line_no, const std::string& msg) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + msg);
}

template <class Int>
inline Int parse_int(std::string_view field, std::size_t line_no, const char* name) {
  Int v{};
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) parse_fail(line_no, std::string("bad ") + name + " '" + std::string(field) + "'");
  return v;
}

inline EventKind parse_kind(std::string_view f, std::size_t line_no) {
  if (f.size() == 1) {
    switch (f[0]) {
      case 'L': return EventKind::LimitInsert;
      case 'C': return EventKind::Cancel;
      case 'M': return EventKind::MarketOrder;
      default: break;
    }
  }
  parse_fail(line_no, "bad kind '" + std::string(f) + "'");
}

inline Side parse_side(std::string_view f, std::size_t line_no) {
  if (f == "A") return Side::Ask;
  if (f == "B") return Side::Bid;
  parse_fail(line_no, "bad side '" + std::string(f) + "'");
}

inline std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace detail

constexpr char kind_code(EventKind k) noexcept {
  switch (k) {
    case EventKind::LimitInsert: return 'L';
    case EventKind::Cancel: return 'C';
    case EventKind::MarketOrder: return 'M';
  }
  return '?';
}
constexpr char side_code(Side s) noexcept { return s == Side::Ask ? 'A' : 'B'; }

inline OrderEvent parse_csv_line(std::string_view line, std::size_t line_no) {
  std::string_view fields[6];
  std::size_t n = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      if (n == 6) detail::parse_fail(line_no, "expected 6 fields");
      fields[n++] = line.substr(start, i - start);
      start = i + 1;
    }
  }
  if (n != 6) detail::parse_fail(line_no, "expected 6 fields, got " + std::to_string(n));
  OrderEvent ev;
  ev.session_id = detail::parse_int<SessionId>(fields[0], line_no, "session_id");
  ev.timestamp = detail::parse_int<Timestamp>(fields[1], line_no, "timestamp_ns");
  ev.kind = detail::parse_kind(fields[2], line_no);
  ev.side = detail::parse_side(fields[3], line_no);
  ev.price = detail::parse_int<Price>(fields[4], line_no, "price_ticks");
  ev.quantity = detail::parse_int<Quantity>(fields[5], line_no, "quantity");
  if (ev.quantity <= 0) detail::parse_fail(line_no, "quantity must be positive");
  if (ev.timestamp < 0) detail::parse_fail(line_no, "negative timestamp");
  return ev;
}

inline OrderEvent parse_ndjson_line(std::string_view line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
    OrderEvent ev;
    ev.session_id = j.at("session_id").get<SessionId>();
    ev.timestamp = j.at("timestamp_ns").get<Timestamp>();
    ev.kind = detail::parse_kind(j.at("kind").get<std::string>(), line_no);
    ev.side = detail::parse_side(j.at("side").get<std::string>(), line_no);
    ev.price = j.at("price_ticks").get<Price>();
    ev.quantity = j.at("quantity").get<Quantity>();
    if (ev.quantity <= 0) detail::parse_fail(line_no, "quantity must be positive");
    if (ev.timestamp < 0) detail::parse_fail(line_no, "negative timestamp");
    return ev;
  } catch (const nlohmann::json::exception& e) {
    detail::parse_fail(line_no, e.what());
  }
}

/// Incremental parser: feed raw bytes in arbitrary chunks, receive events.
class EventParser {
 public:
  explicit EventParser(EventFormat fmt) : fmt_(fmt) {}

  template <class OnEvent>
  void feed(std::string_view chunk, OnEvent&& on_event) {
    std::size_t pos = 0;
    if (!carry_.empty()) {
      const auto nl = chunk.find('\n');
      if (nl == std::string_view::npos) {
        carry_.append(chunk);
        return;
      }
      carry_.append(chunk.substr(0, nl));
      handle_line(carry_, on_event);
      carry_.clear();
      pos = nl + 1;
    }
    while (pos < chunk.size()) {
      const auto nl = chunk.find('\n', pos);
      if (nl == std::string_view::npos) {
        carry_.assign(chunk.substr(pos));
        return;
      }
      handle_line(chunk.substr(pos, nl - pos), on_event);
      pos = nl + 1;
    }
  }

  template <class OnEvent>
  void finish(OnEvent&& on_event) {
    if (!carry_.empty()) {
      std::string last = std::move(carry_);
      carry_.clear();
      handle_line(last, on_event);
    }
    if (fmt_ == EventFormat::Csv && !seen_header_) detail::parse_fail(line_no_, "missing CSV header");
  }

  std::size_t lines() const noexcept { return line_no_; }
  std::size_t events() const noexcept { return events_; }

 private:
  EventFormat fmt_;
  std::string carry_;
  std::size_t line_no_ = 0;
  std::size_t events_ = 0;
  bool seen_header_ = false;

  template <class OnEvent>
  void handle_line(std::string_view raw, OnEvent& on_event) {
    ++line_no_;
    const auto line = detail::trim_cr(raw);
    if (line.empty() || line.front() == '#') return;
    if (fmt_ == EventFormat::Csv) {
      if (!seen_header_) {
        if (line != kEventCsvHeader) detail::parse_fail(line_no_, "expected header '" + std::string(kEventCsvHeader) + "'");
        seen_header_ = true;
        return;
      }
      emit(on_event, parse_csv_line(line, line_no_));
    } else {
      emit(on_event, parse_ndjson_line(line, line_no_));
    }
    ++events_;
  }

  // Callbacks may also take the 1-based source line.
  template <class OnEvent>
  void emit(OnEvent& on_event, const OrderEvent& ev) {
    if constexpr (std::is_invocable_v<OnEvent&, const OrderEvent&, std::size_t>)
      on_event(ev, line_no_);
    else
      on_event(ev);
  }
};

inline EventFormat format_for_path(const std::filesystem::path& path) {
  auto p = path;
  if (p.extension() == ".gz") p = p.stem();
  const auto ext = p.extension().string();
  if (ext == ".ndjson" || ext == ".jsonl" || ext == ".json") return EventFormat::Ndjson;
  return EventFormat::Csv;
}

/// Streams every event in `path` through `on_event`. Returns the event count.
template <class OnEvent>
std::size_t for_each_event(const std::filesystem::path& path, OnEvent&& on_event) {
  EventParser parser(format_for_path(path));
  std::vector<char> buf(1 << 20);
  if (path.extension() == ".gz") {
    gzFile gz = gzopen(path.string().c_str(), "rb");
    if (!gz) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
    std::unique_ptr<gzFile_s, decltype(&gzclose)> guard(gz, &gzclose);
    for (;;) {
      const int n = gzread(gz, buf.data(), static_cast<unsigned>(buf.size()));
      if (n < 0) throw Error(ErrorCode::ParseError, "gzip stream error in " + path.string());
      if (n == 0) break;
      parser.feed(std::string_view(buf.data(), static_cast<std::size_t>(n)), on_event);
    }
  } else {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
    std::unique_ptr<std::FILE, decltype(&std::fclose)> guard(f, &std::fclose);
    for (;;) {
      const std::size_t n = std::fread(buf.data(), 1, buf.size(), f);
      if (n == 0) break;
      parser.feed(std::string_view(buf.data(), n), on_event);
    }
  }
  parser.finish(on_event);
  return parser.events();
}

inline std::vector<OrderEvent> read_events(const std::filesystem::path& path) {
  std::vector<OrderEvent> out;
  for_each_event(path, [&](const OrderEvent& ev) { out.push_back(ev); });
  return out;
}

inline void append_csv(std::string& out, const OrderEvent& ev) {
  char buf[128];
  const int n = std::snprintf(buf, sizeof buf, "%d,%lld,%c,%c,%lld,%lld\n", ev.session_id,
                              static_cast<long long>(ev.timestamp), kind_code(ev.kind), side_code(ev.side),
                              static_cast<long long>(ev.price), static_cast<long long>(ev.quantity));
  out.append(buf, static_cast<std::size_t>(n));
}

inline void write_events_csv(std::ostream& os, std::span<const OrderEvent> events) {
  std::string out;
  out.reserve(events.size() * 28 + 64);
  out.append(kEventCsvHeader).push_back('\n');
  for (const auto& ev : events) append_csv(out, ev);
  os << out;
}

inline void write_events_ndjson(std::ostream& os, std::span<const OrderEvent> events) {
  for (const auto& ev : events) {
    nlohmann::ordered_json j;
    j["session_id"] = ev.session_id;
    j["timestamp_ns"] = ev.timestamp;
    j["kind"] = std::string(1, kind_code(ev.kind));
    j["side"] = std::string(1, side_code(ev.side));
    j["price_ticks"] = ev.price;
    j["quantity"] = ev.quantity;
    os << j.dump() << '\n';
  }
}

}  // namespace ratioflow
