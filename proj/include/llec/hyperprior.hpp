#pragma once

// Learned hyperprior entropy model.
//
//   encoder: tile/255 -> [FC -> BN -> ELU]* -> FC -> tanh     (latent z, M values)
//   quantizer: nearest of L levels evenly spaced in [-1, 1]
//   decoder: levels -> [FC -> BN -> ELU]* -> FC -> softmax    (256-way pmf)
//
// One distribution is produced per tile and shared by all its positions.
// Parameters live in one flat vector (weights, biases, BN affine) and BN
// running statistics in a second one, so optimizers and the model file can
// treat them as plain arrays.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <sodium.h>

#include "llec/entropy_coder.hpp"
#include "llec/errors.hpp"
#include "json.hpp"

namespace llec {

inline constexpr std::size_t kTileSize = 512;

struct Tile {
  std::array<std::uint8_t, kTileSize> symbols{};
  std::uint16_t valid_count = 0;

  std::span<const std::uint8_t> valid() const { return {symbols.data(), valid_count}; }
};

/// Splits occupancy bytes into tiles of 512; the last tile is zero-padded.
inline std::vector<Tile> make_tiles(std::span<const std::uint8_t> bytes) {
  std::vector<Tile> tiles((bytes.size() + kTileSize - 1) / kTileSize);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const std::size_t n = std::min(kTileSize, bytes.size() - i * kTileSize);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(i * kTileSize), n,
                tiles[i].symbols.begin());
    tiles[i].valid_count = static_cast<std::uint16_t>(n);
  }
  return tiles;
}

struct Architecture {
  std::vector<int> encoder_hidden{64, 32};
  int latent_size = 8;
  std::vector<int> decoder_hidden{72};
  int levels = 64;
  double sigma_q = 2.0;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

using LatentCode = std::vector<double>;
using SymbolDistribution = std::array<double, kAlphabetSize>;

struct QuantizedLatent {
  std::vector<std::uint8_t> indices;
  friend bool operator==(const QuantizedLatent&, const QuantizedLatent&) = default;
};

// ---------------------------------------------------------------------------
// Quantizers

/// Level j of an L-level grid over [-1, 1]. Written as an exact integer
/// numerator so that l_j == -l_{L-1-j} bit for bit.
inline double quant_level(int j, int levels) {
  return static_cast<double>(2 * j - (levels - 1)) / static_cast<double>(levels - 1);
}

/// Nearest level; ties go to the lower index.
inline std::uint8_t quantize_hard(double z, int levels) {
  const double clamped = std::clamp(z, -1.0, 1.0);
  int lo = static_cast<int>(std::floor((clamped + 1.0) * 0.5 * (levels - 1)));
  lo = std::clamp(lo, 0, levels - 1);
  // floor() on the scaled value can be off by one near level boundaries.
  int best = lo;
  double best_d = std::abs(clamped - quant_level(lo, levels));
  for (int j = std::max(0, lo - 1); j <= std::min(levels - 1, lo + 1); ++j) {
    const double d = std::abs(clamped - quant_level(j, levels));
    if (d < best_d || (d == best_d && j < best)) {
      best = j;
      best_d = d;
    }
  }
  return static_cast<std::uint8_t>(best);
}

inline QuantizedLatent quantize_hard(std::span<const double> z, int levels = 64) {
  QuantizedLatent q;
  q.indices.reserve(z.size());
  for (const double v : z) q.indices.push_back(quantize_hard(v, levels));
  return q;
}

inline std::vector<double> dequantize(const QuantizedLatent& q, int levels = 64) {
  std::vector<double> out;
  out.reserve(q.indices.size());
  for (const auto j : q.indices) out.push_back(quant_level(j, levels));
  return out;
}

struct SoftQuantized {
  double value = 0.0;
  double derivative = 0.0; ///< d value / d z
};

/// Softmax-weighted average of the levels with weights exp(-sigma |z - l_j|).
inline SoftQuantized quantize_soft(double z, double sigma, int levels = 64) {
  double max_a = -INFINITY;
  for (int j = 0; j < levels; ++j)
    max_a = std::max(max_a, -sigma * std::abs(z - quant_level(j, levels)));
  double sum_w = 0.0, sum_wl = 0.0, sum_wd = 0.0, sum_wld = 0.0;
  for (int j = 0; j < levels; ++j) {
    const double l = quant_level(j, levels);
    const double w = std::exp(-sigma * std::abs(z - l) - max_a);
    // d a_j / d z; zero exactly on a level
    const double d = z > l ? -sigma : (z < l ? sigma : 0.0);
    sum_w += w;
    sum_wl += w * l;
    sum_wd += w * d;
    sum_wld += w * l * d;
  }
  const double value = sum_wl / sum_w;
  return {value, sum_wld / sum_w - value * (sum_wd / sum_w)};
}

// ---------------------------------------------------------------------------
// Model

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::size_t weight = 0; ///< offset of the out x in row-major matrix
  std::size_t bias = 0;
};

struct NormLayer {
  int size = 0;
  std::size_t gamma = 0; ///< offsets into parameters
  std::size_t beta = 0;
  std::size_t mean = 0;  ///< offsets into buffers
  std::size_t var = 0;
};

/// FC layers of one network half; every layer except the last is followed by
/// a norm layer and ELU.
struct Stack {
  std::vector<DenseLayer> dense;
  std::vector<NormLayer> norm;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

class HyperpriorModel {
public:
  explicit HyperpriorModel(Architecture arch = {}) : arch_(std::move(arch)) {
    if (arch_.latent_size < 1 || arch_.levels < 2 || arch_.levels > 256 || !(arch_.sigma_q > 0))
      throw DataError("invalid hyperprior architecture");
    encoder_ = build_stack(static_cast<int>(kTileSize), arch_.encoder_hidden, arch_.latent_size);
    encoder_params_ = param_count_;
    decoder_ = build_stack(arch_.latent_size, arch_.decoder_hidden, kAlphabetSize);
    params_.assign(param_count_, 0.0);
    buffers_.assign(buffer_count_, 0.0);
    reset_norm_layers();
  }

  const Architecture& architecture() const { return arch_; }
  const Stack& encoder() const { return encoder_; }
  const Stack& decoder() const { return decoder_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::span<double> buffers() { return buffers_; }
  std::span<const double> buffers() const { return buffers_; }

  std::size_t encoder_parameter_count() const { return encoder_params_; }
  std::size_t decoder_parameter_count() const { return param_count_ - encoder_params_; }

  static std::size_t macs(const Stack& s) {
    std::size_t n = 0;
    for (const auto& d : s.dense) n += static_cast<std::size_t>(d.in) * static_cast<std::size_t>(d.out);
    return n;
  }
  std::size_t encoder_macs() const { return macs(encoder_); }
  std::size_t decoder_macs() const { return macs(decoder_); }

  /// Weights and biases uniform in +-1/sqrt(fan_in); BN gamma 1, beta 0,
  /// running mean 0, running variance 1.
  void init_uniform(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (const Stack* s : {&encoder_, &decoder_}) {
      for (const auto& d : s->dense) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(d.in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (std::size_t i = 0; i < static_cast<std::size_t>(d.in * d.out); ++i)
          params_[d.weight + i] = dist(rng);
        for (std::size_t i = 0; i < static_cast<std::size_t>(d.out); ++i)
          params_[d.bias + i] = dist(rng);
      }
    }
    reset_norm_layers();
  }

  /// Rounds every value to float32, the precision of the model file. Coding
  /// always runs on snapped values so encoder and decoder agree.
  void snap_to_float32() {
    for (double& v : params_) v = static_cast<double>(static_cast<float>(v));
    for (double& v : buffers_) v = static_cast<double>(static_cast<float>(v));
  }

  void check_finite() const {
    for (const double v : params_)
      if (!std::isfinite(v)) throw ModelCorruptionError("non-finite model parameter");
    for (const double v : buffers_)
      if (!std::isfinite(v)) throw ModelCorruptionError("non-finite normalization statistic");
  }

private:
  Stack build_stack(int input, const std::vector<int>& hidden, int output) {
    Stack s;
    int in = input;
    auto add_dense = [&](int out) {
      if (out < 1) throw DataError("layer width must be positive");
      DenseLayer d{in, out, param_count_, param_count_ + static_cast<std::size_t>(in * out)};
      param_count_ += static_cast<std::size_t>(in * out + out);
      s.dense.push_back(d);
      in = out;
    };
    for (const int width : hidden) {
      add_dense(width);
      NormLayer n{width, param_count_, param_count_ + static_cast<std::size_t>(width),
                  buffer_count_, buffer_count_ + static_cast<std::size_t>(width)};
      param_count_ += 2 * static_cast<std::size_t>(width);
      buffer_count_ += 2 * static_cast<std::size_t>(width);
      s.norm.push_back(n);
    }
    add_dense(output);
    return s;
  }

  void reset_norm_layers() {
    for (const Stack* s : {&encoder_, &decoder_})
      for (const auto& n : s->norm)
        for (std::size_t i = 0; i < static_cast<std::size_t>(n.size); ++i) {
          params_[n.gamma + i] = 1.0;
          params_[n.beta + i] = 0.0;
          buffers_[n.mean + i] = 0.0;
          buffers_[n.var + i] = 1.0;
        }
  }

  Architecture arch_;
  Stack encoder_;
  Stack decoder_;
  std::size_t param_count_ = 0;
  std::size_t buffer_count_ = 0;
  std::size_t encoder_params_ = 0;
  std::vector<double> params_;
  std::vector<double> buffers_;
};

// ---------------------------------------------------------------------------
// Inference path (BN running statistics, hard quantizer)

namespace nn_detail {

inline double elu(double v) { return v > 0.0 ? v : std::expm1(v); }

inline void dense_forward(std::span<const double> params, const DenseLayer& d,
                          std::span<const double> in, std::span<double> out) {
  for (int o = 0; o < d.out; ++o) {
    const double* w = params.data() + d.weight + static_cast<std::size_t>(o) * static_cast<std::size_t>(d.in);
    double acc = 0.0;
    for (int i = 0; i < d.in; ++i) acc += w[i] * in[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(o)] = acc + params[d.bias + static_cast<std::size_t>(o)];
  }
}

/// Runs a stack on one sample and returns the final layer's pre-activation.
inline std::vector<double> stack_infer(const HyperpriorModel& m, const Stack& s,
                                       std::vector<double> x) {
  const auto params = m.parameters();
  const auto buffers = m.buffers();
  std::vector<double> y;
  for (std::size_t l = 0; l < s.dense.size(); ++l) {
    const DenseLayer& d = s.dense[l];
    y.assign(static_cast<std::size_t>(d.out), 0.0);
    dense_forward(params, d, x, y);
    if (l < s.norm.size()) {
      const NormLayer& n = s.norm[l];
      for (std::size_t i = 0; i < static_cast<std::size_t>(n.size); ++i) {
        const double xhat = (y[i] - buffers[n.mean + i]) / std::sqrt(buffers[n.var + i] + kBatchNormEps);
        y[i] = elu(params[n.gamma + i] * xhat + params[n.beta + i]);
      }
    }
    x.swap(y);
  }
  return x;
}

inline void softmax_inplace(std::span<double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

} // namespace nn_detail

inline LatentCode encode_tile(const HyperpriorModel& model, const Tile& tile) {
  std::vector<double> x(kTileSize);
  for (std::size_t i = 0; i < kTileSize; ++i) x[i] = tile.symbols[i] / 255.0;
  auto z = nn_detail::stack_infer(model, model.encoder(), std::move(x));
  for (double& v : z) {
    v = std::tanh(v);
    if (!std::isfinite(v)) throw ModelCorruptionError("non-finite latent");
  }
  return z;
}

inline SymbolDistribution decode_probs(const HyperpriorModel& model, const QuantizedLatent& zq) {
  const int levels = model.architecture().levels;
  if (zq.indices.size() != static_cast<std::size_t>(model.architecture().latent_size))
    throw DataError("quantized latent has wrong size");
  std::vector<double> x;
  x.reserve(zq.indices.size());
  for (const auto j : zq.indices) {
    if (j >= levels) throw RangeError("latent index out of range");
    x.push_back(quant_level(j, levels));
  }
  auto logits = nn_detail::stack_infer(model, model.decoder(), std::move(x));
  SymbolDistribution p{};
  std::copy(logits.begin(), logits.end(), p.begin());
  nn_detail::softmax_inplace(p);
  for (const double v : p)
    if (!std::isfinite(v)) throw ModelCorruptionError("non-finite symbol probability");
  return p;
}

/// Code length in bits of the tile's valid symbols; padding is excluded.
inline double tile_rate_loss(const SymbolDistribution& dist, const Tile& tile) {
  double bits = 0.0;
  for (const std::uint8_t s : tile.valid()) bits -= std::log2(dist[s]);
  return bits;
}

/// Mean bits per valid symbol over `tiles` on the inference path.
inline double evaluate_bits_per_symbol(const HyperpriorModel& model, std::span<const Tile> tiles) {
  double bits = 0.0;
  std::size_t symbols = 0;
  for (const Tile& t : tiles) {
    const auto z = encode_tile(model, t);
    const auto dist = decode_probs(model, quantize_hard(z, model.architecture().levels));
    bits += tile_rate_loss(dist, t);
    symbols += t.valid_count;
  }
  return symbols ? bits / static_cast<double>(symbols) : 0.0;
}

// ---------------------------------------------------------------------------
// Training path (batch statistics, soft quantizer) with backpropagation

enum class QuantizerMode {
  Soft,            ///< forward and backward through the soft quantizer
  StraightThrough, ///< forward hard, backward through the soft quantizer
};

struct ForwardOptions {
  QuantizerMode quantizer = QuantizerMode::Soft;
  bool update_running_stats = true;
};

namespace nn_detail {

struct StackCache {
  std::vector<std::vector<double>> inputs;  ///< input of each dense layer, B x in
  std::vector<std::vector<double>> xhat;    ///< normalized values per norm layer
  std::vector<std::vector<double>> preact;  ///< BN output before ELU
  std::vector<std::vector<double>> inv_std; ///< per-feature 1/sqrt(var+eps)
  std::vector<double> output;               ///< final dense output, B x out
};

inline void stack_train_forward(HyperpriorModel& m, const Stack& s, std::vector<double> x,
                                std::size_t batch, bool update_running, StackCache& c) {
  const auto params = m.parameters();
  auto buffers = m.buffers();
  c.inputs.assign(s.dense.size(), {});
  c.xhat.assign(s.norm.size(), {});
  c.preact.assign(s.norm.size(), {});
  c.inv_std.assign(s.norm.size(), {});
  for (std::size_t l = 0; l < s.dense.size(); ++l) {
    const DenseLayer& d = s.dense[l];
    const auto in = static_cast<std::size_t>(d.in);
    const auto out = static_cast<std::size_t>(d.out);
    std::vector<double> y(batch * out);
    for (std::size_t b = 0; b < batch; ++b)
      dense_forward(params, d, std::span<const double>(x).subspan(b * in, in),
                    std::span<double>(y).subspan(b * out, out));
    c.inputs[l] = std::move(x);
    if (l < s.norm.size()) {
      const NormLayer& n = s.norm[l];
      auto& xh = c.xhat[l];
      auto& pre = c.preact[l];
      auto& inv = c.inv_std[l];
      xh.resize(batch * out);
      pre.resize(batch * out);
      inv.resize(out);
      for (std::size_t j = 0; j < out; ++j) {
        double mean = 0.0;
        for (std::size_t b = 0; b < batch; ++b) mean += y[b * out + j];
        mean /= static_cast<double>(batch);
        double var = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const double dv = y[b * out + j] - mean;
          var += dv * dv;
        }
        var /= static_cast<double>(batch);
        inv[j] = 1.0 / std::sqrt(var + kBatchNormEps);
        for (std::size_t b = 0; b < batch; ++b) {
          const double h = (y[b * out + j] - mean) * inv[j];
          xh[b * out + j] = h;
          const double v = params[n.gamma + j] * h + params[n.beta + j];
          pre[b * out + j] = v;
          y[b * out + j] = elu(v);
        }
        if (update_running) {
          const double unbiased = batch > 1 ? var * static_cast<double>(batch) / static_cast<double>(batch - 1) : var;
          buffers[n.mean + j] = (1.0 - kBatchNormMomentum) * buffers[n.mean + j] + kBatchNormMomentum * mean;
          buffers[n.var + j] = (1.0 - kBatchNormMomentum) * buffers[n.var + j] + kBatchNormMomentum * unbiased;
        }
      }
    }
    x = std::move(y);
  }
  c.output = std::move(x);
}

/// Backpropagates `dout` (B x final width) through a stack, accumulating into
/// `grads`. Returns the gradient with respect to the stack input when
/// `want_input_grad` is set.
inline std::vector<double> stack_backward(const HyperpriorModel& m, const Stack& s,
                                          const StackCache& c, std::vector<double> dy,
                                          std::size_t batch, std::span<double> grads,
                                          bool want_input_grad) {
  const auto params = m.parameters();
  for (std::size_t li = s.dense.size(); li-- > 0;) {
    const DenseLayer& d = s.dense[li];
    const auto in = static_cast<std::size_t>(d.in);
    const auto out = static_cast<std::size_t>(d.out);
    if (li < s.norm.size()) {
      // ELU then BN backward; dy holds dL/d(ELU output).
      const NormLayer& n = s.norm[li];
      const auto& xh = c.xhat[li];
      const auto& pre = c.preact[li];
      const auto& inv = c.inv_std[li];
      for (std::size_t j = 0; j < out; ++j) {
        double sum_dv = 0.0, sum_dv_xh = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const double v = pre[b * out + j];
          double& g = dy[b * out + j];
          g *= v > 0.0 ? 1.0 : std::exp(v);
          sum_dv += g;
          sum_dv_xh += g * xh[b * out + j];
        }
        grads[n.gamma + j] += sum_dv_xh;
        grads[n.beta + j] += sum_dv;
        const double scale = params[n.gamma + j] * inv[j] / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          double& g = dy[b * out + j];
          g = scale * (static_cast<double>(batch) * g - sum_dv - xh[b * out + j] * sum_dv_xh);
        }
      }
    }
    const auto& x = c.inputs[li];
    double* gw = grads.data() + d.weight;
    double* gb = grads.data() + d.bias;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xb = x.data() + b * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = dy[b * out + o];
        gb[o] += g;
        if (g == 0.0) continue;
        double* row = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += g * xb[i];
      }
    }
    if (li == 0 && !want_input_grad) return {};
    std::vector<double> dx(batch * in, 0.0);
    const double* w = params.data() + d.weight;
    for (std::size_t b = 0; b < batch; ++b) {
      double* dxb = dx.data() + b * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double g = dy[b * out + o];
        if (g == 0.0) continue;
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) dxb[i] += g * row[i];
      }
    }
    dy = std::move(dx);
  }
  return dy;
}

} // namespace nn_detail

/// One training-mode pass over `batch`: returns the mean bits per valid
/// symbol and adds its gradient to `grads` (sized like the parameters).
inline double forward_backward(HyperpriorModel& model, std::span<const Tile> batch,
                               std::span<double> grads, const ForwardOptions& opts = {}) {
  if (batch.empty()) throw DataError("forward_backward on an empty batch");
  if (grads.size() != model.parameters().size()) throw DataError("gradient buffer size mismatch");
  const std::size_t B = batch.size();
  const Architecture& arch = model.architecture();
  const auto M = static_cast<std::size_t>(arch.latent_size);

  std::vector<double> x(B * kTileSize);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < kTileSize; ++i) x[b * kTileSize + i] = batch[b].symbols[i] / 255.0;

  nn_detail::StackCache enc, dec;
  nn_detail::stack_train_forward(model, model.encoder(), std::move(x), B, opts.update_running_stats, enc);

  std::vector<double> z(B * M), dq_dz(B * M), zq(B * M);
  for (std::size_t i = 0; i < B * M; ++i) {
    z[i] = std::tanh(enc.output[i]);
    const auto soft = quantize_soft(z[i], arch.sigma_q, arch.levels);
    zq[i] = opts.quantizer == QuantizerMode::Soft ? soft.value
                                                  : quant_level(quantize_hard(z[i], arch.levels), arch.levels);
    dq_dz[i] = soft.derivative;
  }

  nn_detail::stack_train_forward(model, model.decoder(), zq, B, opts.update_running_stats, dec);

  // Softmax cross-entropy in bits against each tile's symbol histogram.
  std::size_t total_symbols = 0;
  for (const Tile& t : batch) total_symbols += t.valid_count;
  if (total_symbols == 0) throw DataError("batch has no valid symbols");
  const double norm = 1.0 / static_cast<double>(total_symbols);
  double loss = 0.0;
  std::vector<double> dlogits(B * kAlphabetSize);
  for (std::size_t b = 0; b < B; ++b) {
    std::array<std::uint32_t, kAlphabetSize> counts{};
    for (const std::uint8_t s : batch[b].valid()) ++counts[s];
    const double* logit = dec.output.data() + b * kAlphabetSize;
    const double mx = *std::max_element(logit, logit + kAlphabetSize);
    double sum = 0.0;
    for (std::size_t k = 0; k < kAlphabetSize; ++k) sum += std::exp(logit[k] - mx);
    const double log_sum = std::log(sum);
    const double n = batch[b].valid_count;
    for (std::size_t k = 0; k < kAlphabetSize; ++k) {
      const double log_p = logit[k] - mx - log_sum;
      if (counts[k]) loss -= counts[k] * log_p;
      dlogits[b * kAlphabetSize + k] = (n * std::exp(log_p) - counts[k]) * norm / std::numbers::ln2;
    }
  }
  loss = loss * norm / std::numbers::ln2;
  if (!std::isfinite(loss)) throw DataError("training loss is not finite");

  auto dzq = nn_detail::stack_backward(model, model.decoder(), dec, std::move(dlogits), B, grads, true);
  std::vector<double> da(B * M);
  for (std::size_t i = 0; i < B * M; ++i) da[i] = dzq[i] * dq_dz[i] * (1.0 - z[i] * z[i]);
  nn_detail::stack_backward(model, model.encoder(), enc, std::move(da), B, grads, false);
  return loss;
}

// ---------------------------------------------------------------------------
// Model file
//
//   "LLECMODL" | u32 LE header length | JSON header | f32 LE parameters | f32 LE buffers
//
// The header records the layer sizes, sigma_q, L, M, N, the value counts and a
// BLAKE2b-128 digest of the float payload.

inline constexpr char kModelMagic[8] = {'L', 'L', 'E', 'C', 'M', 'O', 'D', 'L'};
inline constexpr int kModelFormatVersion = 1;

using ModelDigest = std::array<std::uint8_t, 16>;

inline ModelDigest blake2b_128(std::span<const std::uint8_t> bytes) {
  if (sodium_init() < 0) throw Error("libsodium initialization failed");
  ModelDigest d{};
  crypto_generichash(d.data(), d.size(), bytes.data(), bytes.size(), nullptr, 0);
  return d;
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  for (const auto b : bytes) {
    s += kDigits[b >> 4];
    s += kDigits[b & 15];
  }
  return s;
}

namespace model_detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, double v) {
  const auto f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

inline double get_f32(std::span<const std::uint8_t> in, std::size_t pos) {
  const std::uint32_t bits = std::uint32_t{in[pos]} | (std::uint32_t{in[pos + 1]} << 8) |
                             (std::uint32_t{in[pos + 2]} << 16) | (std::uint32_t{in[pos + 3]} << 24);
  float f;
  std::memcpy(&f, &bits, 4);
  return static_cast<double>(f);
}

} // namespace model_detail

inline std::vector<std::uint8_t> serialize_model(const HyperpriorModel& model) {
  std::vector<std::uint8_t> payload;
  payload.reserve(4 * (model.parameters().size() + model.buffers().size()));
  for (const double v : model.parameters()) model_detail::put_f32(payload, v);
  for (const double v : model.buffers()) model_detail::put_f32(payload, v);

  const Architecture& a = model.architecture();
  nlohmann::json header = {
      {"format", "llec-model"},
      {"version", kModelFormatVersion},
      {"tile_size", kTileSize},
      {"alphabet", kAlphabetSize},
      {"encoder_hidden", a.encoder_hidden},
      {"latent_size", a.latent_size},
      {"decoder_hidden", a.decoder_hidden},
      {"levels", a.levels},
      {"sigma_q", a.sigma_q},
      {"parameter_count", model.parameters().size()},
      {"buffer_count", model.buffers().size()},
      {"payload_digest", to_hex(blake2b_128(payload))},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(std::begin(kModelMagic), std::end(kModelMagic));
  model_detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

struct LoadedModel {
  HyperpriorModel model;
  std::size_t consumed = 0; ///< bytes of the model section
};

/// Parses a model section at the start of `bytes`; trailing sections (e.g.
/// optimizer state in a checkpoint) are left to the caller.
inline LoadedModel load_model_section(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || !std::equal(std::begin(kModelMagic), std::end(kModelMagic), bytes.begin()))
    throw FormatError("not an LLEC model file (bad magic)");
  const std::uint32_t header_len = std::uint32_t{bytes[8]} | (std::uint32_t{bytes[9]} << 8) |
                                   (std::uint32_t{bytes[10]} << 16) | (std::uint32_t{bytes[11]} << 24);
  if (bytes.size() - 12 < header_len) throw FormatError("model header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    if (header.at("format") != "llec-model") throw FormatError("model header: wrong format tag");
    if (header.at("version") != kModelFormatVersion)
      throw FormatError("model header: unsupported version");
    if (header.at("tile_size") != kTileSize || header.at("alphabet") != kAlphabetSize)
      throw FormatError("model header: tile size / alphabet mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }
  Architecture arch;
  try {
    arch.encoder_hidden = header.at("encoder_hidden").get<std::vector<int>>();
    arch.latent_size = header.at("latent_size").get<int>();
    arch.decoder_hidden = header.at("decoder_hidden").get<std::vector<int>>();
    arch.levels = header.at("levels").get<int>();
    arch.sigma_q = header.at("sigma_q").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model header: ") + e.what());
  }
  LoadedModel out{HyperpriorModel(arch), 0};
  auto params = out.model.parameters();
  auto buffers = out.model.buffers();
  if (header.at("parameter_count") != params.size() || header.at("buffer_count") != buffers.size())
    throw FormatError("model header: value counts do not match the layer sizes");
  const std::size_t begin = 12 + header_len;
  const std::size_t payload_len = 4 * (params.size() + buffers.size());
  if (bytes.size() - begin < payload_len) throw FormatError("model payload truncated");
  const auto payload = bytes.subspan(begin, payload_len);
  if (header.at("payload_digest") != to_hex(blake2b_128(payload)))
    throw ModelCorruptionError("model payload digest mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = model_detail::get_f32(payload, 4 * i);
  for (std::size_t i = 0; i < buffers.size(); ++i)
    buffers[i] = model_detail::get_f32(payload, 4 * (params.size() + i));
  out.model.check_finite();
  out.consumed = begin + payload_len;
  return out;
}

inline HyperpriorModel load_model(std::span<const std::uint8_t> bytes) {
  auto loaded = load_model_section(bytes);
  if (loaded.consumed != bytes.size()) throw FormatError("trailing bytes after model payload");
  return std::move(loaded.model);
}

/// Identity of a model as written into containers: BLAKE2b-128 of its file.
inline ModelDigest model_id(const HyperpriorModel& model) {
  return blake2b_128(serialize_model(model));
}

} // namespace llec
