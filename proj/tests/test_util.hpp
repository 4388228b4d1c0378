#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "llec/event_io.hpp"
#include "llec/hyperprior.hpp"

namespace testutil {

/// Random chronological stream; may contain duplicates and simultaneous events.
inline llec::EventStream random_stream(std::size_t n, std::uint32_t w, std::uint32_t h, std::uint64_t t_span,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  llec::EventStream s{w, h, {}};
  s.events.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    s.events.push_back({static_cast<std::uint32_t>(rng() % w), static_cast<std::uint32_t>(rng() % h),
                        rng() % t_span, static_cast<std::uint8_t>(rng() & 1)});
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const llec::Event& a, const llec::Event& b) { return a.t < b.t; });
  return s;
}

inline llec::Tile random_tile(std::mt19937_64& rng, std::uint16_t valid = 512) {
  llec::Tile t;
  t.valid_count = valid;
  for (std::size_t i = 0; i < valid; ++i) t.symbols[i] = static_cast<std::uint8_t>(1 + rng() % 255);
  return t;
}

/// Tile shaped like real occupancy data: mostly single-child bytes.
inline llec::Tile skewed_tile(std::mt19937_64& rng) {
  llec::Tile t;
  t.valid_count = 512;
  std::discrete_distribution<int> pick({40, 20, 10, 5, 5, 5, 5, 10});
  for (auto& s : t.symbols) {
    const int k = pick(rng);
    s = k < 7 ? static_cast<std::uint8_t>(1u << k) : static_cast<std::uint8_t>(1 + rng() % 255);
  }
  return t;
}

} // namespace testutil
