#pragma once

// Static-model range coder over a 256-symbol alphabet with a 16-bit
// quantized CDF, plus raw packing of the quantized hyperprior latents.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "llec/errors.hpp"

namespace llec {

inline constexpr int kAlphabetSize = 256;
inline constexpr int kCdfBits = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfBits;

struct QuantizedCdf {
  std::array<std::uint32_t, kAlphabetSize + 1> cumulative{};

  std::uint32_t freq(int symbol) const {
    return cumulative[static_cast<std::size_t>(symbol) + 1] -
           cumulative[static_cast<std::size_t>(symbol)];
  }
  friend bool operator==(const QuantizedCdf&, const QuantizedCdf&) = default;
};

inline bool is_valid_cdf(const QuantizedCdf& cdf) {
  if (cdf.cumulative[0] != 0 || cdf.cumulative[kAlphabetSize] != kCdfTotal) return false;
  for (int k = 0; k < kAlphabetSize; ++k)
    if (cdf.cumulative[static_cast<std::size_t>(k) + 1] <= cdf.cumulative[static_cast<std::size_t>(k)])
      return false;
  return true;
}

/// Integer frequencies max(1, round(p * 2^16)); the excess or deficit against
/// 2^16 is then moved one unit at a time to/from the current largest
/// frequency (ties to the lower symbol). A pure function of the input bits.
inline QuantizedCdf quantize_cdf(std::span<const double> probabilities) {
  if (probabilities.size() != kAlphabetSize)
    throw DataError("quantize_cdf expects 256 probabilities");
  std::array<std::int64_t, kAlphabetSize> freq{};
  std::int64_t total = 0;
  for (int k = 0; k < kAlphabetSize; ++k) {
    const double p = probabilities[static_cast<std::size_t>(k)];
    if (!std::isfinite(p) || p < 0.0) throw ModelCorruptionError("invalid probability");
    freq[static_cast<std::size_t>(k)] =
        std::max<std::int64_t>(1, std::llround(p * static_cast<double>(kCdfTotal)));
    total += freq[static_cast<std::size_t>(k)];
  }
  auto argmax = [&freq] {
    std::size_t best = 0;
    for (std::size_t k = 1; k < freq.size(); ++k)
      if (freq[k] > freq[best]) best = k;
    return best;
  };
  while (total > kCdfTotal) {
    const std::size_t k = argmax();
    if (freq[k] <= 1) throw DataError("cannot fit CDF into 16 bits"); // unreachable for 256 symbols
    --freq[k];
    --total;
  }
  if (total < kCdfTotal) {
    freq[argmax()] += kCdfTotal - total;
    total = kCdfTotal;
  }
  QuantizedCdf cdf;
  for (int k = 0; k < kAlphabetSize; ++k)
    cdf.cumulative[static_cast<std::size_t>(k) + 1] =
        cdf.cumulative[static_cast<std::size_t>(k)] +
        static_cast<std::uint32_t>(freq[static_cast<std::size_t>(k)]);
  return cdf;
}

/// Ideal code length in bits of `symbols` under `cdf`.
inline double ideal_codelength_bits(std::span<const std::uint8_t> symbols, const QuantizedCdf& cdf) {
  double bits = 0.0;
  for (const std::uint8_t s : symbols)
    bits -= std::log2(static_cast<double>(cdf.freq(s)) / static_cast<double>(kCdfTotal));
  return bits;
}

// Range coder: 32-bit range, 64-bit low with deferred carry propagation
// (cache byte plus a run of pending 0xFF bytes), byte-wise renormalization
// below 2^24. The first byte the classic construction emits is always zero
// and is not stored.
class RangeEncoder {
public:
  void encode(std::uint32_t cum, std::uint32_t freq) {
    const std::uint32_t r = range_ >> kCdfBits;
    low_ += static_cast<std::uint64_t>(r) * cum;
    range_ = r * freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

private:
  static constexpr std::uint32_t kTop = 1u << 24;

  void shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
      const auto carry = static_cast<std::uint8_t>(low_ >> 32);
      std::uint8_t byte = cache_;
      do {
        emit(static_cast<std::uint8_t>(byte + carry));
        byte = 0xFF;
      } while (--pending_ != 0);
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++pending_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
  }

  void emit(std::uint8_t b) {
    if (skip_first_) {
      skip_first_ = false;
      return;
    }
    out_.push_back(b);
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;
  bool skip_first_ = true;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
public:
  explicit RangeDecoder(std::span<const std::uint8_t> in) : in_(in) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next();
  }

  int decode(const QuantizedCdf& cdf) {
    const std::uint32_t r = range_ >> kCdfBits;
    const std::uint32_t target = std::min<std::uint32_t>(code_ / r, kCdfTotal - 1);
    // Largest symbol whose cumulative start is <= target.
    int lo = 0, hi = kAlphabetSize - 1;
    while (lo < hi) {
      const int mid = (lo + hi + 1) / 2;
      if (cdf.cumulative[static_cast<std::size_t>(mid)] <= target)
        lo = mid;
      else
        hi = mid - 1;
    }
    code_ -= r * cdf.cumulative[static_cast<std::size_t>(lo)];
    range_ = r * cdf.freq(lo);
    while (range_ < kTop) {
      range_ <<= 8;
      code_ = (code_ << 8) | next();
    }
    return lo;
  }

  std::size_t consumed() const { return pos_; }

private:
  static constexpr std::uint32_t kTop = 1u << 24;

  std::uint32_t next() {
    if (pos_ >= in_.size()) throw CorruptionError("arithmetic-coded payload truncated");
    return in_[pos_++];
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

inline std::vector<std::uint8_t> ac_encode(std::span<const std::uint8_t> symbols,
                                           const QuantizedCdf& cdf) {
  RangeEncoder enc;
  for (const std::uint8_t s : symbols) enc.encode(cdf.cumulative[s], cdf.freq(s));
  return enc.finish();
}

/// Decodes exactly `count` symbols; the payload must be consumed exactly.
inline std::vector<std::uint8_t> ac_decode(std::span<const std::uint8_t> payload,
                                           const QuantizedCdf& cdf, std::size_t count) {
  RangeDecoder dec(payload);
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<std::uint8_t>(dec.decode(cdf));
  if (dec.consumed() != payload.size())
    throw CorruptionError("arithmetic-coded payload has " +
                          std::to_string(payload.size() - dec.consumed()) + " trailing bytes");
  return out;
}

inline constexpr int kLatentBits = 6;
inline constexpr std::size_t kPackedLatentBytes = 6;

/// Packs eight 6-bit indices big-endian into 48 bits.
inline std::array<std::uint8_t, kPackedLatentBytes> pack_latents(std::span<const std::uint8_t> indices) {
  if (indices.size() != 8) throw RangeError("expected 8 latent indices");
  std::uint64_t bits = 0;
  for (const std::uint8_t v : indices) {
    if (v > 63) throw RangeError("latent index " + std::to_string(v) + " exceeds 63");
    bits = (bits << kLatentBits) | v;
  }
  std::array<std::uint8_t, kPackedLatentBytes> out{};
  for (std::size_t i = 0; i < kPackedLatentBytes; ++i)
    out[i] = static_cast<std::uint8_t>(bits >> (8 * (kPackedLatentBytes - 1 - i)));
  return out;
}

inline std::array<std::uint8_t, 8> unpack_latents(std::span<const std::uint8_t> packed) {
  if (packed.size() != kPackedLatentBytes) throw FormatError("packed latent must be 6 bytes");
  std::uint64_t bits = 0;
  for (const std::uint8_t b : packed) bits = (bits << 8) | b;
  std::array<std::uint8_t, 8> out{};
  for (std::size_t i = 0; i < 8; ++i)
    out[i] = static_cast<std::uint8_t>((bits >> (kLatentBits * (7 - i))) & 63u);
  return out;
}

} // namespace llec
