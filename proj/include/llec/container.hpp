#pragma once

// The LLEC bitstream and the end-to-end encode/decode pipelines.
//
// Header (38 bytes)
//   "LLEC" | u16 version | u32 width | u32 height | u32 T_s | u32 segment_count | 16-byte model id
// Segment record, repeated segment_count times in (segment_index, polarity) order
//   varint segment_index | u8 polarity | u64 min_timestamp | varint occupancy_byte_count
//   | varint tile_count | u32 crc32(occupancy bytes)
//   | tile_count x ( 6-byte packed latent | varint payload_length | payload )
// Integers are little-endian; varints are unsigned LEB128.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "llec/entropy_coder.hpp"
#include "llec/errors.hpp"
#include "llec/event_io.hpp"
#include "llec/hyperprior.hpp"
#include "llec/octree.hpp"
#include "llec/preprocess.hpp"

namespace llec {

inline constexpr std::array<std::uint8_t, 4> kContainerMagic{'L', 'L', 'E', 'C'};
inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::size_t kHeaderBytes = 38;

struct BitstreamHeader {
  std::uint16_t format_version = kContainerVersion;
  std::uint32_t sensor_width = 0;
  std::uint32_t sensor_height = 0;
  std::uint32_t segment_length = 0;
  std::uint32_t segment_count = 0;
  ModelDigest model_id{};
};

struct TileRecord {
  std::array<std::uint8_t, kPackedLatentBytes> latent{};
  std::span<const std::uint8_t> payload;
};

struct SegmentRecord {
  SegmentKey key;
  std::uint64_t min_timestamp = 0;
  std::uint64_t occupancy_byte_count = 0;
  std::uint32_t checksum = 0;
  std::vector<TileRecord> tiles;
  std::size_t metadata_bytes = 0; ///< record bytes that are neither latents nor payloads
};

struct ParsedContainer {
  BitstreamHeader header;
  std::vector<SegmentRecord> segments;
};

struct BitstreamBreakdown {
  std::uint64_t header_bits = 0;
  std::uint64_t metadata_bits = 0; ///< per-segment fields and payload length varints
  std::uint64_t latent_bits = 0;
  std::uint64_t payload_bits = 0;
  std::uint64_t total_bits = 0;
  std::uint64_t segments = 0;
  std::uint64_t tiles = 0;
  std::uint64_t occupancy_bytes = 0;
};

struct EncoderConfig {
  std::uint32_t segment_length = 0; ///< T_s; 0 picks the default for the sensor
};

namespace container_detail {

inline void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = crc32(crc, bytes.data() + pos, n);
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) throw FormatError(std::string("container truncated reading ") + what);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T le(const char* what) {
    const auto s = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(s[i]) << (8 * i));
    return v;
  }

  std::uint64_t varint(const char* what) {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const std::uint8_t b = take(1, what)[0];
      v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
      if (!(b & 0x80)) return v;
    }
    throw FormatError(std::string("varint too long reading ") + what);
  }

  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

/// Hard-quantized latent and integer CDF for one tile; the part of the
/// pipeline shared by encoder and decoder.
inline QuantizedCdf tile_cdf(const HyperpriorModel& model, const QuantizedLatent& q) {
  const auto dist = decode_probs(model, q);
  return quantize_cdf(dist);
}

inline void check_codable(const HyperpriorModel& model) {
  const auto& a = model.architecture();
  if (a.latent_size != 8 || a.levels > 64)
    throw DataError("container packs 8 latents of 6 bits; model has M=" + std::to_string(a.latent_size) +
                    ", L=" + std::to_string(a.levels));
}

} // namespace container_detail

inline ParsedContainer parse_container(std::span<const std::uint8_t> bytes) {
  container_detail::Reader r(bytes);
  ParsedContainer pc;
  const auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kContainerMagic.begin()))
    throw FormatError("not an LLEC container (bad magic)");
  auto& h = pc.header;
  h.format_version = r.le<std::uint16_t>("version");
  if (h.format_version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(h.format_version));
  h.sensor_width = r.le<std::uint32_t>("width");
  h.sensor_height = r.le<std::uint32_t>("height");
  h.segment_length = r.le<std::uint32_t>("segment length");
  h.segment_count = r.le<std::uint32_t>("segment count");
  const auto id = r.take(16, "model id");
  std::copy(id.begin(), id.end(), h.model_id.begin());

  pc.segments.reserve(std::min<std::size_t>(h.segment_count, bytes.size()));
  for (std::uint32_t s = 0; s < h.segment_count; ++s) {
    SegmentRecord rec;
    const std::size_t start = r.position();
    rec.key.segment_index = r.varint("segment index");
    rec.key.polarity = r.take(1, "polarity")[0];
    if (rec.key.polarity > 1) throw FormatError("segment " + std::to_string(s) + ": bad polarity");
    rec.min_timestamp = r.le<std::uint64_t>("min timestamp");
    rec.occupancy_byte_count = r.varint("occupancy byte count");
    const std::uint64_t tile_count = r.varint("tile count");
    if (rec.occupancy_byte_count == 0 || tile_count != (rec.occupancy_byte_count + kTileSize - 1) / kTileSize)
      throw FormatError("segment " + std::to_string(s) + ": tile count does not match byte count");
    rec.checksum = r.le<std::uint32_t>("checksum");
    if (!pc.segments.empty() && !(pc.segments.back().key < rec.key))
      throw FormatError("segment records out of order");
    std::size_t coded = 0;
    rec.tiles.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(tile_count, bytes.size())));
    for (std::uint64_t t = 0; t < tile_count; ++t) {
      TileRecord tr;
      const auto lat = r.take(kPackedLatentBytes, "latent");
      std::copy(lat.begin(), lat.end(), tr.latent.begin());
      const std::uint64_t len = r.varint("payload length");
      tr.payload = r.take(static_cast<std::size_t>(len), "payload");
      coded += kPackedLatentBytes + tr.payload.size();
      rec.tiles.push_back(tr);
    }
    rec.metadata_bytes = r.position() - start - coded;
    pc.segments.push_back(std::move(rec));
  }
  if (!r.done()) throw FormatError("trailing bytes after the last segment record");
  return pc;
}

inline BitstreamBreakdown measure_bitstream(std::span<const std::uint8_t> bytes) {
  const ParsedContainer pc = parse_container(bytes);
  BitstreamBreakdown b;
  b.header_bits = 8 * kHeaderBytes;
  for (const auto& s : pc.segments) {
    b.metadata_bits += 8 * s.metadata_bytes;
    b.occupancy_bytes += s.occupancy_byte_count;
    for (const auto& t : s.tiles) {
      b.latent_bits += 8 * kPackedLatentBytes;
      b.payload_bits += 8 * t.payload.size();
    }
    b.tiles += s.tiles.size();
  }
  b.segments = pc.segments.size();
  b.total_bits = b.header_bits + b.metadata_bits + b.latent_bits + b.payload_bits;
  return b;
}

inline std::vector<std::uint8_t> encode_stream(const EventStream& stream, const HyperpriorModel& model,
                                               const EncoderConfig& cfg = {}) {
  using namespace container_detail;
  check_codable(model);
  HyperpriorModel frozen = model;
  frozen.snap_to_float32();
  frozen.check_finite();

  const PreprocessConfig pre{cfg.segment_length ? cfg.segment_length
                                                : default_segment_length(stream.sensor_width, stream.sensor_height)};
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.x >= stream.sensor_width || e.y >= stream.sensor_height || e.p > 1)
      throw RangeError("event " + std::to_string(i) + " outside sensor or bad polarity");
  }
  const auto segmentation = segment_stream(stream, pre);
  const auto params = compute_depth(std::max(stream.sensor_width, 1u), std::max(stream.sensor_height, 1u),
                                    pre.segment_length);

  std::vector<std::uint8_t> out(kContainerMagic.begin(), kContainerMagic.end());
  put_le<std::uint16_t>(out, kContainerVersion);
  put_le<std::uint32_t>(out, stream.sensor_width);
  put_le<std::uint32_t>(out, stream.sensor_height);
  put_le<std::uint32_t>(out, pre.segment_length);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(segmentation.segments.size()));
  const ModelDigest id = model_id(frozen);
  out.insert(out.end(), id.begin(), id.end());

  for (const Segment& seg : segmentation.segments) {
    const auto occ = build_occupancy(seg.points, params);
    const auto tiles = make_tiles(occ.bytes);
    put_varint(out, seg.key.segment_index);
    out.push_back(seg.key.polarity);
    put_le<std::uint64_t>(out, seg.min_timestamp);
    put_varint(out, occ.bytes.size());
    put_varint(out, tiles.size());
    put_le<std::uint32_t>(out, crc32_of(occ.bytes));
    for (const Tile& tile : tiles) {
      const auto q = quantize_hard(encode_tile(frozen, tile), frozen.architecture().levels);
      const auto packed = pack_latents(q.indices);
      const auto payload = ac_encode(tile.symbols, tile_cdf(frozen, q));
      out.insert(out.end(), packed.begin(), packed.end());
      put_varint(out, payload.size());
      out.insert(out.end(), payload.begin(), payload.end());
    }
  }
  return out;
}

inline EventStream decode_stream(std::span<const std::uint8_t> bytes, const HyperpriorModel& model) {
  using namespace container_detail;
  const ParsedContainer pc = parse_container(bytes);
  const auto& h = pc.header;
  check_codable(model);
  HyperpriorModel frozen = model;
  frozen.snap_to_float32();
  if (model_id(frozen) != h.model_id)
    throw ModelMismatchError("container was encoded with model " + to_hex(h.model_id) +
                             ", loaded model is " + to_hex(model_id(frozen)));
  const PreprocessConfig pre{h.segment_length};
  pre.validate();
  if (h.sensor_width == 0 || h.sensor_height == 0) {
    if (!pc.segments.empty()) throw FormatError("segments present for an empty sensor");
    return {h.sensor_width, h.sensor_height, {}};
  }
  const auto params = compute_depth(h.sensor_width, h.sensor_height, h.segment_length);

  std::vector<Segment> segments;
  segments.reserve(pc.segments.size());
  std::vector<std::uint8_t> occupancy;
  for (const SegmentRecord& rec : pc.segments) {
    occupancy.clear();
    for (std::size_t t = 0; t < rec.tiles.size(); ++t) {
      const auto indices = unpack_latents(rec.tiles[t].latent);
      const QuantizedLatent q{{indices.begin(), indices.end()}};
      for (const auto j : q.indices)
        if (j >= frozen.architecture().levels) throw CorruptionError("latent index out of range");
      const auto symbols = ac_decode(rec.tiles[t].payload, tile_cdf(frozen, q), kTileSize);
      const std::size_t valid =
          std::min<std::size_t>(kTileSize, rec.occupancy_byte_count - t * kTileSize);
      for (std::size_t i = valid; i < kTileSize; ++i)
        if (symbols[i] != 0) throw CorruptionError("non-zero padding in the last tile");
      occupancy.insert(occupancy.end(), symbols.begin(), symbols.begin() + static_cast<std::ptrdiff_t>(valid));
    }
    if (crc32_of(occupancy) != rec.checksum)
      throw CorruptionError("segment " + std::to_string(rec.key.segment_index) + ": checksum mismatch");
    Segment seg;
    seg.key = rec.key;
    seg.min_timestamp = rec.min_timestamp;
    seg.points = decode_occupancy(occupancy, params);
    segments.push_back(std::move(seg));
  }
  return reassemble_stream(segments, pre, h.sensor_width, h.sensor_height);
}

} // namespace llec
