#pragma once

// Raw event streams: the EVT2 binary word format, a CSV fallback, and
// per-stream statistics.
//
// EVT2 word layout (32-bit little-endian):
//   [31:28] type   0x0 CD negative, 0x1 CD positive, 0x8 EVT_TIME_HIGH
//   CD:        [27:22] timestamp bits [5:0], [21:11] x, [10:0] y
//   TIME_HIGH: [27:0]  timestamp bits [33:6]
// Other types are skipped. ASCII header lines starting with '%' may precede
// the binary payload.

#include <algorithm>
#include <charconv>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "llec/errors.hpp"

namespace llec {

struct Event {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint64_t t = 0; ///< microseconds
  std::uint8_t p = 0;  ///< 0 = negative, 1 = positive

  friend bool operator==(const Event&, const Event&) = default;
};

/// Canonical total order: (t, p, y, x).
inline bool canonical_less(const Event& a, const Event& b) {
  return std::tie(a.t, a.p, a.y, a.x) < std::tie(b.t, b.p, b.y, b.x);
}

struct EventStream {
  std::uint32_t sensor_width = 0;
  std::uint32_t sensor_height = 0;
  std::vector<Event> events;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

struct StreamStats {
  double duration = 0.0;   ///< seconds
  std::uint64_t event_count = 0;
  double event_rate = 0.0; ///< mega-events per second
  double positive_fraction = 0.0;
};

enum class ParseMode { Strict, Lenient };

/// Counters filled by the lenient parse path.
struct ParseDiagnostics {
  std::size_t header_bytes = 0;
  std::size_t skipped_words = 0;
  std::size_t out_of_bounds_dropped = 0;
  std::size_t reordered = 0;
};

namespace evt2 {

inline constexpr std::uint32_t kTypeCdOff = 0x0;
inline constexpr std::uint32_t kTypeCdOn = 0x1;
inline constexpr std::uint32_t kTypeTimeHigh = 0x8;
inline constexpr std::uint32_t kCoordMax = 1u << 11;
inline constexpr std::uint64_t kTimestampLimit = std::uint64_t{1} << 34;

inline std::uint32_t make_time_high(std::uint64_t t) {
  return (kTypeTimeHigh << 28) | static_cast<std::uint32_t>((t >> 6) & 0x0FFFFFFF);
}

inline std::uint32_t make_cd(const Event& e) {
  return (static_cast<std::uint32_t>(e.p & 1) << 28) |
         (static_cast<std::uint32_t>(e.t & 0x3F) << 22) | (e.x << 11) | e.y;
}

/// Length of the leading '%' ASCII header block, 0 if there is none. A line
/// only counts as header if it is printable ASCII terminated by '\n'.
inline std::size_t header_length(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  while (pos < bytes.size() && bytes[pos] == '%') {
    std::size_t end = pos;
    bool printable = true;
    while (end < bytes.size() && bytes[end] != '\n') {
      const auto c = bytes[end];
      if ((c < 0x20 || c > 0x7E) && c != '\r' && c != '\t') {
        printable = false;
        break;
      }
      ++end;
    }
    if (!printable || end == bytes.size()) break;
    pos = end + 1;
  }
  return pos;
}

/// Sensor geometry from a "% geometry WxH" header line, if present.
inline std::optional<std::pair<std::uint32_t, std::uint32_t>>
read_geometry(std::span<const std::uint8_t> bytes) {
  const std::size_t len = header_length(bytes);
  std::string_view header(reinterpret_cast<const char*>(bytes.data()), len);
  std::istringstream lines{std::string(header)};
  std::string line;
  while (std::getline(lines, line)) {
    const auto at = line.find("geometry");
    if (at == std::string::npos) continue;
    unsigned w = 0, h = 0;
    if (std::sscanf(line.c_str() + at, "geometry %ux%u", &w, &h) == 2 && w > 0 && h > 0)
      return std::make_pair(w, h);
  }
  return std::nullopt;
}

} // namespace evt2

inline EventStream parse_evt2(std::span<const std::uint8_t> bytes, std::uint32_t width,
                              std::uint32_t height, ParseMode mode = ParseMode::Strict,
                              ParseDiagnostics* diag = nullptr) {
  ParseDiagnostics local;
  ParseDiagnostics& d = diag ? *diag : local;
  d.header_bytes = evt2::header_length(bytes);
  const auto payload = bytes.subspan(d.header_bytes);
  if (payload.size() % 4 != 0)
    throw FormatError("EVT2 payload length " + std::to_string(payload.size()) +
                      " is not a multiple of 4 (truncated word)");

  EventStream out{width, height, {}};
  out.events.reserve(payload.size() / 4);
  std::uint64_t time_base = 0;
  bool sorted = true;
  for (std::size_t i = 0; i < payload.size(); i += 4) {
    const std::uint32_t w = std::uint32_t{payload[i]} | (std::uint32_t{payload[i + 1]} << 8) |
                            (std::uint32_t{payload[i + 2]} << 16) |
                            (std::uint32_t{payload[i + 3]} << 24);
    const std::uint32_t type = w >> 28;
    if (type == evt2::kTypeTimeHigh) {
      time_base = static_cast<std::uint64_t>(w & 0x0FFFFFFF) << 6;
      continue;
    }
    if (type != evt2::kTypeCdOff && type != evt2::kTypeCdOn) {
      ++d.skipped_words;
      continue;
    }
    Event e;
    e.t = time_base | ((w >> 22) & 0x3F);
    e.x = (w >> 11) & 0x7FF;
    e.y = w & 0x7FF;
    e.p = static_cast<std::uint8_t>(type);
    if (e.x >= width || e.y >= height) {
      if (mode == ParseMode::Strict)
        throw RangeError("EVT2 word " + std::to_string(i / 4) + ": event (" +
                         std::to_string(e.x) + "," + std::to_string(e.y) +
                         ") outside sensor " + std::to_string(width) + "x" +
                         std::to_string(height));
      ++d.out_of_bounds_dropped;
      continue;
    }
    if (!out.events.empty() && e.t < out.events.back().t) {
      if (mode == ParseMode::Strict)
        throw FormatError("EVT2 word " + std::to_string(i / 4) +
                          ": timestamp goes backwards");
      sorted = false;
      ++d.reordered;
    }
    out.events.push_back(e);
  }
  if (!sorted)
    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
  return out;
}

inline std::vector<std::uint8_t> serialize_evt2(const EventStream& stream) {
  std::vector<std::uint8_t> out;
  out.reserve(stream.events.size() * 4 + 64);
  auto put = [&out](std::uint32_t w) {
    out.push_back(static_cast<std::uint8_t>(w));
    out.push_back(static_cast<std::uint8_t>(w >> 8));
    out.push_back(static_cast<std::uint8_t>(w >> 16));
    out.push_back(static_cast<std::uint8_t>(w >> 24));
  };
  std::optional<std::uint64_t> window;
  std::uint64_t last_t = 0;
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.x >= evt2::kCoordMax || e.y >= evt2::kCoordMax)
      throw RangeError("event " + std::to_string(i) + ": coordinate exceeds 11 bits");
    if (e.t >= evt2::kTimestampLimit)
      throw RangeError("event " + std::to_string(i) + ": timestamp exceeds 34 bits");
    if (e.p > 1) throw RangeError("event " + std::to_string(i) + ": polarity not in {0,1}");
    if (i > 0 && e.t < last_t)
      throw RangeError("event " + std::to_string(i) + ": stream is not chronological");
    last_t = e.t;
    if (!window || *window != (e.t >> 6)) {
      window = e.t >> 6;
      put(evt2::make_time_high(e.t));
    }
    put(evt2::make_cd(e));
  }
  return out;
}

/// Size of the EVT2 representation in bits; the CR numerator.
inline std::uint64_t evt2_size_bits(const EventStream& stream) {
  std::uint64_t words = 0;
  std::optional<std::uint64_t> window;
  for (const Event& e : stream.events) {
    if (!window || *window != (e.t >> 6)) {
      window = e.t >> 6;
      ++words;
    }
    ++words;
  }
  return words * 32;
}

inline EventStream parse_csv(std::string_view text, std::uint32_t width, std::uint32_t height) {
  EventStream out{width, height, {}};
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    if (line_no == 1 && !(line.front() >= '0' && line.front() <= '9')) continue; // header

    std::uint64_t fields[4];
    std::size_t field = 0;
    const char* p = line.data();
    const char* const last = line.data() + line.size();
    while (true) {
      if (field == 4)
        throw FormatError("CSV line " + std::to_string(line_no) + ": too many fields");
      while (p < last && *p == ' ') ++p;
      auto [next, ec] = std::from_chars(p, last, fields[field]);
      if (ec != std::errc{})
        throw FormatError("CSV line " + std::to_string(line_no) + ": bad field " +
                          std::to_string(field + 1));
      ++field;
      p = next;
      while (p < last && *p == ' ') ++p;
      if (p == last) break;
      if (*p != ',')
        throw FormatError("CSV line " + std::to_string(line_no) + ": expected ','");
      ++p;
    }
    if (field != 4)
      throw FormatError("CSV line " + std::to_string(line_no) + ": expected 4 fields x,y,t,p");
    if (fields[3] > 1)
      throw RangeError("CSV line " + std::to_string(line_no) + ": polarity " +
                       std::to_string(fields[3]) + " not in {0,1}");
    if (fields[0] >= width || fields[1] >= height)
      throw RangeError("CSV line " + std::to_string(line_no) + ": coordinate outside sensor");
    Event e{static_cast<std::uint32_t>(fields[0]), static_cast<std::uint32_t>(fields[1]),
            fields[2], static_cast<std::uint8_t>(fields[3])};
    if (!out.events.empty() && e.t < out.events.back().t)
      throw FormatError("CSV line " + std::to_string(line_no) + ": timestamp goes backwards");
    out.events.push_back(e);
  }
  return out;
}

inline std::string serialize_csv(const EventStream& stream) {
  std::string out = "x,y,t,p\n";
  out.reserve(out.size() + stream.events.size() * 20);
  for (const Event& e : stream.events) {
    out += std::to_string(e.x);
    out += ',';
    out += std::to_string(e.y);
    out += ',';
    out += std::to_string(e.t);
    out += ',';
    out += static_cast<char>('0' + e.p);
    out += '\n';
  }
  return out;
}

inline StreamStats compute_stats(const EventStream& stream) {
  StreamStats s;
  if (stream.events.empty()) return s;
  s.event_count = stream.events.size();
  s.duration = static_cast<double>(stream.events.back().t - stream.events.front().t) * 1e-6;
  if (s.duration > 0.0) s.event_rate = static_cast<double>(s.event_count) / s.duration / 1e6;
  std::uint64_t positive = 0;
  for (const Event& e : stream.events) positive += e.p;
  s.positive_fraction = static_cast<double>(positive) / static_cast<double>(s.event_count);
  return s;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

} // namespace llec
