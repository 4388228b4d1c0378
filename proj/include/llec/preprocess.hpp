#pragma once

// Polarity split, fixed-length time segmentation and per-segment timestamp
// normalization, plus the decoder-side inverse.

#include <algorithm>
#include <bit>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "llec/errors.hpp"
#include "llec/event_io.hpp"

namespace llec {

/// One occupied (x, y, t_norm) voxel.
struct Voxel {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t t = 0;

  friend auto operator<=>(const Voxel&, const Voxel&) = default;
};

struct SegmentKey {
  std::uint64_t segment_index = 0;
  std::uint8_t polarity = 0;

  friend auto operator<=>(const SegmentKey&, const SegmentKey&) = default;
};

struct Segment {
  SegmentKey key;
  std::uint64_t min_timestamp = 0;
  std::vector<Voxel> points; ///< sorted ascending, unique

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct PreprocessConfig {
  std::uint32_t segment_length = 1024; ///< T_s in microseconds, power of two

  void validate() const {
    if (segment_length == 0 || !std::has_single_bit(segment_length))
      throw DataError("segment length " + std::to_string(segment_length) +
                      " us is not a power of two");
  }
};

/// Default T_s for a sensor: the smallest power of two covering the larger
/// sensor dimension (1024 for 640x480, 2048 for 1280x720).
inline std::uint32_t default_segment_length(std::uint32_t width, std::uint32_t height) {
  return std::bit_ceil(std::max({width, height, 1u}));
}

struct Segmentation {
  std::vector<Segment> segments; ///< ordered by (segment_index, polarity)
  std::size_t duplicates_collapsed = 0;
};

inline Segmentation segment_stream(const EventStream& stream, const PreprocessConfig& cfg) {
  cfg.validate();
  Segmentation out;
  std::map<SegmentKey, Segment> by_key;
  for (const Event& e : stream.events) {
    const SegmentKey key{e.t / cfg.segment_length, e.p};
    auto [it, inserted] = by_key.try_emplace(key);
    Segment& seg = it->second;
    if (inserted) {
      seg.key = key;
      seg.min_timestamp = e.t;
    }
    seg.min_timestamp = std::min(seg.min_timestamp, e.t);
    // Absolute offsets from the window start for now; rebased below.
    seg.points.push_back(
        {e.x, e.y, static_cast<std::uint32_t>(e.t - key.segment_index * cfg.segment_length)});
  }
  out.segments.reserve(by_key.size());
  for (auto& [key, seg] : by_key) {
    const auto shift =
        static_cast<std::uint32_t>(seg.min_timestamp - key.segment_index * cfg.segment_length);
    for (Voxel& v : seg.points) v.t -= shift;
    std::sort(seg.points.begin(), seg.points.end());
    const auto last = std::unique(seg.points.begin(), seg.points.end());
    out.duplicates_collapsed += static_cast<std::size_t>(seg.points.end() - last);
    seg.points.erase(last, seg.points.end());
    out.segments.push_back(std::move(seg));
  }
  return out;
}

inline EventStream reassemble_stream(const std::vector<Segment>& segments,
                                     const PreprocessConfig& cfg, std::uint32_t width,
                                     std::uint32_t height) {
  cfg.validate();
  EventStream out{width, height, {}};
  std::size_t total = 0;
  for (const Segment& s : segments) total += s.points.size();
  out.events.reserve(total);
  for (const Segment& s : segments) {
    const std::uint64_t window_start = s.key.segment_index * cfg.segment_length;
    const std::uint64_t window_end = window_start + cfg.segment_length;
    for (const Voxel& v : s.points) {
      const std::uint64_t t = s.min_timestamp + v.t;
      if (t < window_start || t >= window_end)
        throw ConsistencyError("segment " + std::to_string(s.key.segment_index) +
                               ": timestamp " + std::to_string(t) +
                               " falls outside its window");
      if (v.x >= width || v.y >= height)
        throw ConsistencyError("segment " + std::to_string(s.key.segment_index) +
                               ": coordinate outside sensor");
      out.events.push_back({v.x, v.y, t, s.key.polarity});
    }
  }
  std::sort(out.events.begin(), out.events.end(), canonical_less);
  return out;
}

/// Canonical form of a stream: sorted by (t, p, y, x) with exact duplicates
/// removed. Lossless roundtrip is defined against this.
inline EventStream canonicalize(EventStream s) {
  std::sort(s.events.begin(), s.events.end(), canonical_less);
  s.events.erase(std::unique(s.events.begin(), s.events.end()), s.events.end());
  return s;
}

} // namespace llec
