#pragma once

// Lossless octree over (x, y, t_norm) voxels, serialized as level-order
// occupancy bytes.
//
// Child index within a node: c = (x_bit << 2) | (y_bit << 1) | t_bit, using
// the coordinate bits of the current level, most significant first. Bit c
// of the occupancy byte (LSB = child 0) is set iff child c is non-empty.
// Nodes of a level are emitted in their parents' emission order, children
// by ascending index, which is the same as ascending interleaved key order.

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llec/errors.hpp"
#include "llec/preprocess.hpp"

namespace llec {

struct OctreeParams {
  int depth = 1;
  std::uint32_t cube_side = 2;
  /// Set when the bounds were too small and D was raised to 1.
  bool padded_to_minimum = false;
};

struct OccupancyStream {
  std::vector<std::uint8_t> bytes;
  std::vector<std::size_t> level_offsets; ///< start of each level in `bytes`
};

// Interleaved keys hold 3 bits per level in a 64-bit word.
inline constexpr int kMaxOctreeDepth = 21;

inline OctreeParams compute_depth(std::uint32_t x_max, std::uint32_t y_max, std::uint32_t t_max) {
  if (x_max == 0 || y_max == 0 || t_max == 0)
    throw DataError("octree bounds must be >= 1");
  const std::uint32_t largest = std::max({x_max, y_max, t_max});
  int depth = std::bit_width(largest - 1); // ceil(log2(largest))
  OctreeParams p;
  if (depth < 1) {
    depth = 1;
    p.padded_to_minimum = true;
  }
  if (depth > kMaxOctreeDepth)
    throw RangeError("octree depth " + std::to_string(depth) + " exceeds " +
                     std::to_string(kMaxOctreeDepth));
  p.depth = depth;
  p.cube_side = std::uint32_t{1} << depth;
  return p;
}

namespace octree_detail {

inline std::uint64_t interleave(const Voxel& v, int depth) {
  std::uint64_t key = 0;
  for (int level = depth - 1; level >= 0; --level) {
    const std::uint64_t c = (((v.x >> level) & 1u) << 2) | (((v.y >> level) & 1u) << 1) |
                            ((v.t >> level) & 1u);
    key = (key << 3) | c;
  }
  return key;
}

inline Voxel deinterleave(std::uint64_t key, int depth) {
  Voxel v;
  for (int level = 0; level < depth; ++level) {
    const auto c = static_cast<std::uint32_t>(key & 7u);
    v.x |= ((c >> 2) & 1u) << level;
    v.y |= ((c >> 1) & 1u) << level;
    v.t |= (c & 1u) << level;
    key >>= 3;
  }
  return v;
}

} // namespace octree_detail

inline OccupancyStream build_occupancy(std::span<const Voxel> points, const OctreeParams& params) {
  if (points.empty()) throw DataError("cannot build an octree over an empty point set");
  const int depth = params.depth;
  std::vector<std::uint64_t> keys;
  keys.reserve(points.size());
  for (const Voxel& v : points) {
    if (v.x >= params.cube_side || v.y >= params.cube_side || v.t >= params.cube_side)
      throw RangeError("voxel (" + std::to_string(v.x) + "," + std::to_string(v.y) + "," +
                       std::to_string(v.t) + ") outside cube of side " +
                       std::to_string(params.cube_side));
    keys.push_back(octree_detail::interleave(v, depth));
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  OccupancyStream out;
  out.level_offsets.reserve(static_cast<std::size_t>(depth));
  for (int level = 0; level < depth; ++level) {
    out.level_offsets.push_back(out.bytes.size());
    const int node_shift = 3 * (depth - level);
    const int child_shift = node_shift - 3;
    std::uint64_t current = keys.front() >> node_shift;
    std::uint8_t occupancy = 0;
    for (const std::uint64_t key : keys) {
      const std::uint64_t node = key >> node_shift;
      if (node != current) {
        out.bytes.push_back(occupancy);
        occupancy = 0;
        current = node;
      }
      occupancy |= static_cast<std::uint8_t>(1u << ((key >> child_shift) & 7u));
    }
    out.bytes.push_back(occupancy);
  }
  return out;
}

/// Rebuilds the voxel set from level-order occupancy bytes. The result is
/// sorted ascending.
inline std::vector<Voxel> decode_occupancy(std::span<const std::uint8_t> bytes,
                                           const OctreeParams& params) {
  const int depth = params.depth;
  std::vector<std::uint64_t> nodes{0};
  std::vector<std::uint64_t> next;
  std::size_t pos = 0;
  for (int level = 0; level < depth; ++level) {
    if (bytes.size() - pos < nodes.size())
      throw CorruptionError("occupancy stream exhausted at level " + std::to_string(level) +
                            ": need " + std::to_string(nodes.size()) + " bytes, have " +
                            std::to_string(bytes.size() - pos));
    next.clear();
    for (const std::uint64_t node : nodes) {
      const std::uint8_t occ = bytes[pos++];
      if (occ == 0)
        throw CorruptionError("zero occupancy byte at offset " + std::to_string(pos - 1));
      for (unsigned c = 0; c < 8; ++c)
        if (occ & (1u << c)) next.push_back((node << 3) | c);
    }
    nodes.swap(next);
  }
  if (pos != bytes.size())
    throw CorruptionError(std::to_string(bytes.size() - pos) +
                          " occupancy bytes left after the last level");

  std::vector<Voxel> out;
  out.reserve(nodes.size());
  for (const std::uint64_t key : nodes) out.push_back(octree_detail::deinterleave(key, depth));
  std::sort(out.begin(), out.end());
  return out;
}

/// Checks the level structure of an occupancy stream: no zero bytes and each
/// level holds exactly as many bytes as the previous level's popcount sum.
inline bool check_popcount_chain(const OccupancyStream& occ, int depth) {
  if (occ.level_offsets.size() != static_cast<std::size_t>(depth)) return false;
  std::size_t expected = 1;
  for (int level = 0; level < depth; ++level) {
    const std::size_t begin = occ.level_offsets[static_cast<std::size_t>(level)];
    const std::size_t end = level + 1 < depth
                                ? occ.level_offsets[static_cast<std::size_t>(level) + 1]
                                : occ.bytes.size();
    if (begin > end || end > occ.bytes.size() || end - begin != expected) return false;
    std::size_t children = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (occ.bytes[i] == 0) return false;
      children += static_cast<std::size_t>(std::popcount(occ.bytes[i]));
    }
    expected = children;
  }
  return true;
}

} // namespace llec
