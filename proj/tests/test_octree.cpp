#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <random>
#include <set>

#include "llec/octree.hpp"

using namespace llec;

namespace {

std::vector<Voxel> random_points(std::mt19937_64& rng, int depth, double density) {
  const std::uint32_t side = 1u << depth;
  const double cells = std::pow(static_cast<double>(side), 3);
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(cells * density));
  std::set<Voxel> pts;
  if (density > 0.2) {
    std::bernoulli_distribution keep(density);
    for (std::uint32_t x = 0; x < side; ++x)
      for (std::uint32_t y = 0; y < side; ++y)
        for (std::uint32_t t = 0; t < side; ++t)
          if (keep(rng)) pts.insert({x, y, t});
    if (pts.empty()) pts.insert({0, 0, 0});
  } else {
    while (pts.size() < n)
      pts.insert({static_cast<std::uint32_t>(rng() % side), static_cast<std::uint32_t>(rng() % side),
                  static_cast<std::uint32_t>(rng() % side)});
  }
  return {pts.begin(), pts.end()};
}

// Node count per level computed by brute force: distinct prefixes.
std::vector<std::size_t> nodes_per_level(const std::vector<Voxel>& pts, int depth) {
  std::vector<std::size_t> out;
  for (int level = 0; level < depth; ++level) {
    const int shift = depth - level;
    std::set<std::tuple<std::uint32_t, std::uint32_t, std::uint32_t>> prefixes;
    for (const auto& v : pts) prefixes.insert({v.x >> shift, v.y >> shift, v.t >> shift});
    out.push_back(prefixes.size());
  }
  return out;
}

} // namespace

TEST(Depth, StandardSensorConfigurations) {
  const auto a = compute_depth(640, 480, 1024);
  EXPECT_EQ(a.depth, 10);
  EXPECT_EQ(a.cube_side, 1024u);
  const auto b = compute_depth(1280, 720, 2048);
  EXPECT_EQ(b.depth, 11);
  EXPECT_EQ(b.cube_side, 2048u);
}

TEST(Depth, DegenerateBoundsPaddedToOne) {
  const auto p = compute_depth(1, 1, 1);
  EXPECT_EQ(p.depth, 1);
  EXPECT_EQ(p.cube_side, 2u);
  EXPECT_TRUE(p.padded_to_minimum);
  EXPECT_FALSE(compute_depth(640, 480, 1024).padded_to_minimum);
  EXPECT_THROW(compute_depth(0, 1, 1), DataError);
}

TEST(Depth, CeilingForNonPowerOfTwo) {
  EXPECT_EQ(compute_depth(640, 480, 512).depth, 10);
  EXPECT_EQ(compute_depth(1025, 2, 2).depth, 11);
  EXPECT_EQ(compute_depth(2, 2, 2).depth, 1);
  EXPECT_EQ(compute_depth(3, 2, 2).depth, 2);
}

TEST(Occupancy, SinglePointAtOriginDepth2) {
  const std::vector<Voxel> pts{{0, 0, 0}};
  const OctreeParams p{2, 4, false};
  const auto occ = build_occupancy(pts, p);
  EXPECT_EQ(occ.bytes, (std::vector<std::uint8_t>{0x01, 0x01}));
  EXPECT_EQ(decode_occupancy(occ.bytes, p), pts);
}

TEST(Occupancy, SinglePointChildSeven) {
  const OctreeParams p{1, 2, false};
  EXPECT_EQ(build_occupancy(std::vector<Voxel>{{1, 1, 1}}, p).bytes, (std::vector<std::uint8_t>{0x80}));
  // x alone is child 4, y alone child 2, t alone child 1.
  EXPECT_EQ(build_occupancy(std::vector<Voxel>{{1, 0, 0}}, p).bytes, (std::vector<std::uint8_t>{0x10}));
  EXPECT_EQ(build_occupancy(std::vector<Voxel>{{0, 1, 0}}, p).bytes, (std::vector<std::uint8_t>{0x04}));
  EXPECT_EQ(build_occupancy(std::vector<Voxel>{{0, 0, 1}}, p).bytes, (std::vector<std::uint8_t>{0x02}));
}

TEST(Occupancy, FullCube) {
  std::vector<Voxel> all;
  for (std::uint32_t x = 0; x < 2; ++x)
    for (std::uint32_t y = 0; y < 2; ++y)
      for (std::uint32_t t = 0; t < 2; ++t) all.push_back({x, y, t});
  const OctreeParams p{1, 2, false};
  EXPECT_EQ(build_occupancy(all, p).bytes, (std::vector<std::uint8_t>{0xFF}));
  EXPECT_EQ(decode_occupancy(std::vector<std::uint8_t>{0xFF}, p), all);
}

TEST(Occupancy, LevelOrderFollowsParentOrder) {
  // Two points in different root children; level 1 lists child 0's byte first.
  const OctreeParams p{2, 4, false};
  const std::vector<Voxel> pts{{0, 0, 1}, {3, 3, 3}};
  const auto occ = build_occupancy(pts, p);
  EXPECT_EQ(occ.bytes, (std::vector<std::uint8_t>{0x81, 0x02, 0x80}));
  EXPECT_EQ(occ.level_offsets, (std::vector<std::size_t>{0, 1}));
}

TEST(Occupancy, Errors) {
  const OctreeParams p{2, 4, false};
  EXPECT_THROW(build_occupancy(std::vector<Voxel>{}, p), DataError);
  EXPECT_THROW(build_occupancy(std::vector<Voxel>{{4, 0, 0}}, p), RangeError);
  EXPECT_THROW(decode_occupancy(std::vector<std::uint8_t>{0x01}, p), CorruptionError);
  EXPECT_THROW(decode_occupancy(std::vector<std::uint8_t>{0x01, 0x01, 0x01}, p), CorruptionError);
  EXPECT_THROW(decode_occupancy(std::vector<std::uint8_t>{0x01, 0x00}, p), CorruptionError);
  EXPECT_THROW(decode_occupancy(std::vector<std::uint8_t>{}, p), CorruptionError);
}

TEST(Occupancy, SinglePointYieldsDepthBytes) {
  for (int d = 1; d <= 12; ++d) {
    const OctreeParams p{d, 1u << d, false};
    const std::uint32_t c = (1u << d) - 1;
    EXPECT_EQ(build_occupancy(std::vector<Voxel>{{c, c / 2, c / 3}}, p).bytes.size(), static_cast<std::size_t>(d));
  }
}

TEST(Occupancy, RandomRoundtripAndStructure) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> depth_dist(3, 10);
  for (int trial = 0; trial < 200; ++trial) {
    const int depth = depth_dist(rng);
    const double log_density = -4.0 + (std::log10(0.5) + 4.0) * (rng() % 1000) / 999.0;
    double density = std::pow(10.0, log_density);
    if (depth >= 8) density = std::min(density, 2e-3); // keep the set small enough
    const auto pts = random_points(rng, depth, density);
    const OctreeParams p{depth, 1u << depth, false};
    const auto occ = build_occupancy(pts, p);
    ASSERT_TRUE(check_popcount_chain(occ, depth));
    ASSERT_EQ(decode_occupancy(occ.bytes, p), pts);
    const auto counts = nodes_per_level(pts, depth);
    for (int level = 0; level < depth; ++level) {
      const std::size_t begin = occ.level_offsets[level];
      const std::size_t end = level + 1 < depth ? occ.level_offsets[level + 1] : occ.bytes.size();
      ASSERT_EQ(end - begin, counts[level]);
    }
  }
}

TEST(Occupancy, AddingPointNeverShrinksLevels) {
  std::mt19937_64 rng(5);
  const OctreeParams p{6, 64, false};
  for (int trial = 0; trial < 50; ++trial) {
    auto pts = random_points(rng, 6, 1e-3);
    const auto before = build_occupancy(pts, p);
    pts.push_back({static_cast<std::uint32_t>(rng() % 64), static_cast<std::uint32_t>(rng() % 64),
                   static_cast<std::uint32_t>(rng() % 64)});
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    const auto after = build_occupancy(pts, p);
    for (int level = 0; level < 6; ++level) {
      auto size_of = [&](const OccupancyStream& o) {
        const std::size_t end = level + 1 < 6 ? o.level_offsets[level + 1] : o.bytes.size();
        return end - o.level_offsets[level];
      };
      EXPECT_GE(size_of(after), size_of(before));
    }
  }
}

TEST(Occupancy, PopcountChainRejectsTampering) {
  const OctreeParams p{3, 8, false};
  auto occ = build_occupancy(std::vector<Voxel>{{1, 2, 3}, {7, 7, 0}, {0, 5, 5}}, p);
  ASSERT_TRUE(check_popcount_chain(occ, 3));
  auto broken = occ;
  ASSERT_EQ(occ.bytes[0], 0x49);
  broken.bytes[0] |= 0x80;
  EXPECT_FALSE(check_popcount_chain(broken, 3));
  broken = occ;
  broken.bytes.back() = 0;
  EXPECT_FALSE(check_popcount_chain(broken, 3));
}
