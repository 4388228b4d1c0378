#pragma once

// Seeded synthetic event streams for tests, training and benchmarks.
//
// Structured patterns emulate a sensor watching moving edges: a pixel fires
// once when an edge crosses it, so events lie on the edges' swept surfaces in
// (x, y, t). The motion speed is derived from the requested event rate, which
// keeps about one event per pixel crossing. Leading edges emit positive
// events and trailing edges negative ones.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "llec/errors.hpp"
#include "llec/event_io.hpp"

namespace llec {

enum class SyntheticPattern { MovingDot, RotatingSpinner, UniformNoise, FallingParticles };

inline SyntheticPattern parse_pattern(std::string_view name) {
  if (name == "moving-dot") return SyntheticPattern::MovingDot;
  if (name == "rotating-spinner") return SyntheticPattern::RotatingSpinner;
  if (name == "uniform-noise") return SyntheticPattern::UniformNoise;
  if (name == "falling-particles") return SyntheticPattern::FallingParticles;
  throw DataError("unknown synthetic pattern '" + std::string(name) + "'");
}

inline const char* pattern_name(SyntheticPattern p) {
  switch (p) {
  case SyntheticPattern::MovingDot: return "moving-dot";
  case SyntheticPattern::RotatingSpinner: return "rotating-spinner";
  case SyntheticPattern::UniformNoise: return "uniform-noise";
  case SyntheticPattern::FallingParticles: return "falling-particles";
  }
  return "?";
}

struct SyntheticSpec {
  SyntheticPattern pattern = SyntheticPattern::MovingDot;
  std::uint32_t width = 640;
  std::uint32_t height = 480;
  double duration = 1.0; ///< seconds
  double rate = 1e5;     ///< events per second
  std::uint64_t seed = 1;
};

/// Trajectory of the moving dot: straight line reflected at the borders.
struct DotPath {
  double x0, y0, vx, vy, radius, width, height;

  static double reflect(double v, double lo, double hi) {
    const double span = hi - lo;
    double m = std::fmod(v - lo, 2.0 * span);
    if (m < 0) m += 2.0 * span;
    return lo + (m <= span ? m : 2.0 * span - m);
  }
  double cx(double t_us) const { return reflect(x0 + vx * t_us * 1e-6, radius, width - 1 - radius); }
  double cy(double t_us) const { return reflect(y0 + vy * t_us * 1e-6, radius, height - 1 - radius); }

  /// A dot of radius r moving at speed v sweeps about 4 r v pixels per second
  /// (leading plus trailing rim), so v = rate / (4 r).
  static DotPath for_sensor(std::uint32_t w, std::uint32_t h, double rate) {
    const double r = std::max(3.0, std::min(w, h) / 20.0);
    const double speed = rate / (4.0 * r);
    return {w * 0.3, h * 0.4, 0.8 * speed, 0.6 * speed, r, static_cast<double>(w), static_cast<double>(h)};
  }
};

namespace synthetic_detail {

/// Angle on a circle whose density is proportional to |cos(theta - heading)|,
/// i.e. to the normal speed of the rim point.
inline double sample_rim_angle(std::mt19937_64& rng, double heading) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // |cos| on [-pi/2, pi/2]: inverse CDF is asin(2u - 1).
  const double a = std::asin(2.0 * unit(rng) - 1.0);
  return heading + a + ((rng() & 1) ? std::numbers::pi : 0.0);
}

} // namespace synthetic_detail

inline EventStream generate_synthetic(const SyntheticSpec& spec) {
  if (spec.width < 16 || spec.height < 16 || spec.width > 2048 || spec.height > 2048)
    throw DataError("synthetic sensor must be between 16 and 2048 pixels per side");
  if (!(spec.duration > 0) || !(spec.rate > 0)) throw DataError("duration and rate must be positive");
  const auto count = static_cast<std::size_t>(std::llround(spec.duration * spec.rate));
  const double duration_us = spec.duration * 1e6;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::uint64_t> times(count);
  for (auto& t : times) t = static_cast<std::uint64_t>(unit(rng) * duration_us);
  std::sort(times.begin(), times.end());

  EventStream out{spec.width, spec.height, {}};
  out.events.reserve(count);
  const double w = spec.width, h = spec.height;
  auto emit = [&](double x, double y, std::uint64_t t, bool positive) {
    const auto px = static_cast<std::uint32_t>(std::clamp(std::lround(x), 0L, static_cast<long>(spec.width) - 1));
    const auto py = static_cast<std::uint32_t>(std::clamp(std::lround(y), 0L, static_cast<long>(spec.height) - 1));
    out.events.push_back({px, py, t, static_cast<std::uint8_t>(positive ? 1 : 0)});
  };

  switch (spec.pattern) {
  case SyntheticPattern::UniformNoise: {
    std::uniform_int_distribution<std::uint32_t> xs(0, spec.width - 1), ys(0, spec.height - 1);
    for (const auto t : times) {
      const auto x = xs(rng);
      const auto y = ys(rng);
      out.events.push_back({x, y, t, static_cast<std::uint8_t>(rng() & 1)});
    }
    break;
  }
  case SyntheticPattern::MovingDot: {
    const DotPath path = DotPath::for_sensor(spec.width, spec.height, spec.rate);
    for (const auto t : times) {
      const double tt = static_cast<double>(t);
      const double vx = path.cx(tt + 1.0) - path.cx(tt), vy = path.cy(tt + 1.0) - path.cy(tt);
      const double theta = synthetic_detail::sample_rim_angle(rng, std::atan2(vy, vx));
      const double dx = std::cos(theta), dy = std::sin(theta);
      emit(path.cx(tt) + path.radius * dx, path.cy(tt) + path.radius * dy, t, dx * vx + dy * vy > 0);
    }
    break;
  }
  case SyntheticPattern::RotatingSpinner: {
    // Three blades of angular width `blade`; each edge sweeps reach^2/2 pixels
    // per radian, six edges in total.
    const double cx = w / 2, cy = h / 2, reach = 0.4 * std::min(w, h);
    const double blade = 0.25;
    const double omega = spec.rate / (3.0 * reach * reach); // rad/s
    for (const auto t : times) {
      const int index = static_cast<int>(rng() % 3);
      const bool leading = rng() & 1;
      const double phi = omega * static_cast<double>(t) * 1e-6 + index * 2.0 * std::numbers::pi / 3.0 -
                         (leading ? 0.0 : blade);
      const double s = reach * std::sqrt(unit(rng)); // sweep speed grows with radius
      emit(cx + s * std::cos(phi), cy + s * std::sin(phi), t, leading);
    }
    break;
  }
  case SyntheticPattern::FallingParticles: {
    constexpr int kParticles = 24;
    struct Particle {
      double x, y0, speed, radius;
    };
    std::vector<Particle> ps;
    std::vector<double> weights;
    double sweep = 0.0;
    for (int i = 0; i < kParticles; ++i) {
      Particle p{(0.05 + 0.9 * unit(rng)) * w, unit(rng) * h, 0.5 + 1.5 * unit(rng), 2.0 + 3.0 * unit(rng)};
      sweep += 4.0 * p.radius * p.speed;
      ps.push_back(p);
    }
    // Relative speeds scaled so that the summed sweep matches the rate.
    for (auto& p : ps) {
      p.speed *= spec.rate / sweep;
      weights.push_back(p.radius * p.speed);
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    for (const auto t : times) {
      const Particle& p = ps[pick(rng)];
      const double span = h + 2 * p.radius;
      const double y = std::fmod(p.y0 + p.speed * static_cast<double>(t) * 1e-6, span) - p.radius;
      const double theta = synthetic_detail::sample_rim_angle(rng, std::numbers::pi / 2);
      emit(p.x + p.radius * std::cos(theta), y + p.radius * std::sin(theta), t, std::sin(theta) > 0);
    }
    break;
  }
  }
  return out;
}

} // namespace llec
