#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "llec/hyperprior.hpp"
#include "test_util.hpp"

using namespace llec;

namespace {

// Soft quantizer by direct summation, no max-shift, straight from the definition.
double soft_oracle(double z, double sigma) {
  double num = 0.0, den = 0.0;
  for (int j = 0; j < 64; ++j) {
    const double l = -1.0 + 2.0 * j / 63.0;
    const double w = std::exp(-sigma * std::abs(z - l));
    num += w * l;
    den += w;
  }
  return num / den;
}

Architecture tiny_arch() {
  Architecture a;
  a.encoder_hidden = {8, 4};
  a.latent_size = 2;
  a.decoder_hidden = {4};
  return a;
}

double batch_loss(HyperpriorModel& m, std::span<const Tile> batch) {
  std::vector<double> scratch(m.parameters().size());
  return forward_backward(m, batch, scratch, {QuantizerMode::Soft, false});
}

} // namespace

TEST(Quantizer, ExactLevels) {
  EXPECT_EQ(quantize_hard(1.0, 64), 63);
  EXPECT_EQ(quantize_hard(-1.0, 64), 0);
  EXPECT_EQ(quant_level(63, 64), 1.0);
  EXPECT_EQ(quant_level(0, 64), -1.0);
}

TEST(Quantizer, ZeroTiesToLowerIndex) {
  EXPECT_NEAR(quant_level(31, 64), -1.0 / 63.0, 1e-15);
  EXPECT_NEAR(quant_level(32, 64), 1.0 / 63.0, 1e-15);
  // Enumeration over all levels confirms the tie.
  double best = 1e9;
  for (int j = 0; j < 64; ++j) best = std::min(best, std::abs(quant_level(j, 64)));
  EXPECT_DOUBLE_EQ(best, 1.0 / 63.0);
  EXPECT_EQ(quantize_hard(0.0, 64), 31);
}

TEST(Quantizer, HardMatchesEnumeration) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (int i = 0; i < 20'000; ++i) {
    const double z = u(rng);
    int best = 0;
    for (int j = 1; j < 64; ++j)
      if (std::abs(std::clamp(z, -1.0, 1.0) - quant_level(j, 64)) <
          std::abs(std::clamp(z, -1.0, 1.0) - quant_level(best, 64)))
        best = j;
    ASSERT_EQ(quantize_hard(z, 64), best) << z;
  }
}

TEST(Quantizer, HalfSpacingBound) {
  for (int i = -10'000; i <= 10'000; ++i) {
    const double z = i * 1e-4;
    ASSERT_LE(std::abs(quant_level(quantize_hard(z, 64), 64) - z), 1.0 / 63.0 + 1e-15) << z;
  }
}

TEST(Quantizer, SoftAgainstDirectSummation) {
  EXPECT_NEAR(quantize_soft(0.9, 2.0).value, soft_oracle(0.9, 2.0), 1e-9);
  for (int i = -100; i <= 100; ++i) {
    const double z = i / 100.0;
    for (const double sigma : {0.5, 2.0, 10.0, 50.0})
      ASSERT_NEAR(quantize_soft(z, sigma).value, soft_oracle(z, sigma), 1e-9) << z << " " << sigma;
  }
}

TEST(Quantizer, SoftIsZeroAtZero) {
  for (const double sigma : {0.1, 2.0, 37.0, 1e4}) EXPECT_NEAR(quantize_soft(0.0, sigma).value, 0.0, 1e-15);
}

TEST(Quantizer, SoftConvergesToHardForLargeSigma) {
  EXPECT_NEAR(quantize_soft(0.7, 1e4).value, quant_level(quantize_hard(0.7, 64), 64), 1e-6);
}

TEST(Quantizer, SoftDerivativeMatchesFiniteDifference) {
  const double h = 1e-6;
  for (const double z : {-0.93, -0.41, 0.003, 0.25, 0.77}) {
    const double fd = (quantize_soft(z + h, 2.0).value - quantize_soft(z - h, 2.0).value) / (2 * h);
    EXPECT_NEAR(quantize_soft(z, 2.0).derivative, fd, 1e-6);
  }
}

TEST(Quantizer, SoftHardGapAwayFromMidpoints) {
  // Tolerance band around midpoints where 1e-3 is unreachable at the given sigma.
  auto max_gap = [](double sigma, double band) {
    double worst = 0.0;
    for (int i = -1000; i <= 1000; ++i) {
      const double z = i * 1e-3;
      const double pos = (z + 1.0) * 31.5;
      if (std::abs(pos - std::floor(pos) - 0.5) * (2.0 / 63.0) < band) continue;
      worst = std::max(worst, std::abs(quantize_soft(z, sigma).value - quant_level(quantize_hard(z, 64), 64)));
    }
    return worst;
  };
  EXPECT_LT(max_gap(200.0, 0.01), 1e-3);
  EXPECT_LT(max_gap(2000.0, 1e-3), 1e-3);
}

TEST(Model, ParameterAndMacBudget) {
  const HyperpriorModel m;
  EXPECT_EQ(m.encoder_parameter_count(), 35'368u);
  EXPECT_EQ(m.decoder_parameter_count(), 19'480u);
  EXPECT_EQ(m.encoder_macs(), 35'072u);
  EXPECT_EQ(m.decoder_macs(), 19'008u);
  EXPECT_LT(std::abs(m.encoder_parameter_count() / 35'800.0 - 1.0), 0.05);
  EXPECT_LT(std::abs(m.decoder_parameter_count() / 19'660.0 - 1.0), 0.05);
  EXPECT_LT(std::abs(m.encoder_macs() / 36'020.0 - 1.0), 0.05);
  EXPECT_LT(std::abs(m.decoder_macs() / 19'890.0 - 1.0), 0.05);
}

TEST(Inference, ZeroModelGivesZeroLatentAndUniformDistribution) {
  HyperpriorModel m;
  std::fill(m.parameters().begin(), m.parameters().end(), 0.0);
  Tile t;
  const auto z = encode_tile(m, t);
  ASSERT_EQ(z.size(), 8u);
  for (const double v : z) EXPECT_EQ(v, 0.0);
  const auto p = decode_probs(m, quantize_hard(z));
  for (const double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 256.0);
}

TEST(Inference, LatentRangeAndDeterminism) {
  HyperpriorModel m;
  m.init_uniform(42);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto t = testutil::random_tile(rng, static_cast<std::uint16_t>(1 + rng() % 512));
    const auto a = encode_tile(m, t);
    const auto b = encode_tile(m, t);
    ASSERT_EQ(a, b);
    for (const double v : a) {
      EXPECT_GT(v, -1.0);
      EXPECT_LT(v, 1.0);
    }
    const auto q = quantize_hard(a);
    EXPECT_EQ(decode_probs(m, q), decode_probs(m, q));
  }
}

TEST(Inference, DistributionValidForRandomLatents) {
  HyperpriorModel m;
  m.init_uniform(9);
  std::mt19937_64 rng(10);
  for (int i = 0; i < 10'000; ++i) {
    QuantizedLatent q;
    for (int k = 0; k < 8; ++k) q.indices.push_back(static_cast<std::uint8_t>(rng() % 64));
    const auto p = decode_probs(m, q);
    double sum = 0.0;
    for (const double v : p) {
      ASSERT_GT(v, 0.0);
      sum += v;
    }
    ASSERT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Inference, NonFiniteWeightsRejected) {
  HyperpriorModel m;
  m.init_uniform(1);
  m.parameters()[17] = std::nan("");
  EXPECT_THROW(m.check_finite(), ModelCorruptionError);
  EXPECT_THROW(encode_tile(m, Tile{}), ModelCorruptionError);
}

TEST(RateLoss, UniformAndPeaked) {
  SymbolDistribution uniform;
  uniform.fill(1.0 / 256.0);
  std::mt19937_64 rng(2);
  EXPECT_NEAR(tile_rate_loss(uniform, testutil::random_tile(rng)), 4096.0, 1e-9);

  SymbolDistribution peaked;
  peaked.fill(0.5 / 255.0);
  peaked[1] = 0.5;
  Tile ones;
  ones.valid_count = 512;
  ones.symbols.fill(1);
  EXPECT_NEAR(tile_rate_loss(peaked, ones), 512.0, 1e-9);
}

TEST(RateLoss, MatchesSummationOracleAndIgnoresPadding) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    SymbolDistribution d;
    double sum = 0.0;
    for (auto& v : d) sum += (v = u(rng));
    for (auto& v : d) v /= sum;
    const auto t = testutil::random_tile(rng, static_cast<std::uint16_t>(1 + rng() % 512));
    double oracle = 0.0;
    for (std::size_t i = 0; i < t.valid_count; ++i) oracle -= std::log(d[t.symbols[i]]) / std::log(2.0);
    ASSERT_NEAR(tile_rate_loss(d, t), oracle, 1e-9);
  }
}

TEST(Training, GradientCheckTinyModel) {
  // Plain central differences at h = 1e-4, plus a Richardson-extrapolated
  // difference (h, 2h) for batches where curvature makes the plain one too coarse.
  for (const std::size_t batch_size : {2u, 4u}) {
    HyperpriorModel m(tiny_arch());
    m.init_uniform(123 + batch_size);
    std::mt19937_64 rng(77 + batch_size);
    std::vector<Tile> batch;
    for (std::size_t i = 0; i < batch_size; ++i) batch.push_back(testutil::skewed_tile(rng));

    std::vector<double> grads(m.parameters().size(), 0.0);
    forward_backward(m, batch, grads, {QuantizerMode::Soft, false});
    auto central = [&](std::size_t i, double h) {
      const double saved = m.parameters()[i];
      m.parameters()[i] = saved + h;
      const double up = batch_loss(m, batch);
      m.parameters()[i] = saved - h;
      const double down = batch_loss(m, batch);
      m.parameters()[i] = saved;
      return (up - down) / (2 * h);
    };
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
    const double h = 1e-4;
    double worst = 0.0, worst_extrapolated = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      const double d1 = central(i, h);
      const double d2 = central(i, 2 * h);
      worst = std::max(worst, rel(d1, grads[i]));
      worst_extrapolated = std::max(worst_extrapolated, rel((4 * d1 - d2) / 3, grads[i]));
    }
    RecordProperty("worst_rel_error_batch_" + std::to_string(batch_size), std::to_string(worst));
    if (batch_size == 2) EXPECT_LT(worst, 1e-4);
    EXPECT_LT(worst, 1e-3) << "batch " << batch_size;
    EXPECT_LT(worst_extrapolated, 1e-4) << "batch " << batch_size;
  }
}

TEST(Training, UniformDecoderGivesNoEncoderSignal) {
  HyperpriorModel m;
  m.init_uniform(5);
  const auto& last = m.decoder().dense.back();
  for (std::size_t i = 0; i < static_cast<std::size_t>(last.in * last.out); ++i) m.parameters()[last.weight + i] = 0.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(last.out); ++i) m.parameters()[last.bias + i] = 0.0;
  std::mt19937_64 rng(6);
  std::vector<Tile> batch{testutil::skewed_tile(rng), testutil::skewed_tile(rng), testutil::skewed_tile(rng)};
  std::vector<double> grads(m.parameters().size(), 0.0);
  const double loss = forward_backward(m, batch, grads);
  EXPECT_NEAR(loss, 8.0, 1e-12);
  for (std::size_t i = 0; i < m.encoder_parameter_count(); ++i) ASSERT_EQ(grads[i], 0.0) << i;
}

TEST(Training, SmallStepDecreasesLoss) {
  HyperpriorModel m;
  m.init_uniform(8);
  std::mt19937_64 rng(8);
  const Tile t = testutil::skewed_tile(rng);
  const std::vector<Tile> batch(4, t);
  std::vector<double> grads(m.parameters().size(), 0.0);
  const double before = forward_backward(m, batch, grads, {QuantizerMode::Soft, false});
  for (std::size_t i = 0; i < grads.size(); ++i) m.parameters()[i] -= 1e-3 * grads[i];
  EXPECT_LT(batch_loss(m, batch), before);
}

TEST(Training, EmptyBatchRejected) {
  HyperpriorModel m;
  std::vector<double> grads(m.parameters().size());
  EXPECT_THROW(forward_backward(m, {}, grads), DataError);
}

TEST(ModelFile, RoundtripAndIdentity) {
  HyperpriorModel m;
  m.init_uniform(21);
  const auto bytes = serialize_model(m);
  const auto loaded = load_model(bytes);
  HyperpriorModel snapped = m;
  snapped.snap_to_float32();
  EXPECT_TRUE(std::equal(loaded.parameters().begin(), loaded.parameters().end(), snapped.parameters().begin()));
  EXPECT_TRUE(std::equal(loaded.buffers().begin(), loaded.buffers().end(), snapped.buffers().begin()));
  EXPECT_EQ(serialize_model(loaded), bytes);
  EXPECT_EQ(model_id(loaded), model_id(m));

  HyperpriorModel other = m;
  other.parameters()[0] += 0.25;
  EXPECT_NE(model_id(other), model_id(m));
}

TEST(ModelFile, CorruptionDetected) {
  HyperpriorModel m;
  m.init_uniform(22);
  auto bytes = serialize_model(m);
  auto flipped = bytes;
  flipped[flipped.size() - 100] ^= 0x40;
  EXPECT_THROW(load_model(flipped), ModelCorruptionError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(load_model(bad_magic), FormatError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 4);
  EXPECT_THROW(load_model(truncated), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(load_model(trailing), FormatError);
}

TEST(ModelFile, CustomArchitectureRoundtrip) {
  HyperpriorModel m(tiny_arch());
  m.init_uniform(3);
  const auto loaded = load_model(serialize_model(m));
  EXPECT_EQ(loaded.architecture(), tiny_arch());
}
