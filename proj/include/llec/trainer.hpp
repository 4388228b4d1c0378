#pragma once

// Tile datasets and hyperprior training (Adam, step learning-rate decay,
// early stopping on validation bits/symbol).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "llec/errors.hpp"
#include "llec/event_io.hpp"
#include "llec/hyperprior.hpp"
#include "llec/octree.hpp"
#include "llec/preprocess.hpp"
#include "json.hpp"

namespace llec {

struct TrainConfig {
  double learning_rate = 1e-4;
  double lr_decay_factor = 0.1;
  int lr_decay_every = 5; ///< epochs
  std::size_t batch_size = 512;
  int max_epochs = 100;
  int early_stop_patience = 10;
  std::size_t train_tile_target = 110'000;
  std::uint64_t rng_seed = 1;
  QuantizerMode quantizer = QuantizerMode::Soft;

  void validate() const {
    if (!(learning_rate > 0) || !(lr_decay_factor > 0) || lr_decay_every < 1 || batch_size < 2 ||
        max_epochs < 1 || early_stop_patience < 1)
      throw DataError("invalid training configuration");
  }

  double learning_rate_at(int epoch) const {
    return learning_rate * std::pow(lr_decay_factor, epoch / lr_decay_every);
  }
};

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
  c.train_tile_target = j.value("train_tile_target", c.train_tile_target);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  const std::string q = j.value("quantizer", std::string("soft"));
  if (q == "soft")
    c.quantizer = QuantizerMode::Soft;
  else if (q == "straight_through")
    c.quantizer = QuantizerMode::StraightThrough;
  else
    throw DataError("unknown quantizer mode '" + q + "'");
  c.validate();
  return c;
}

struct TileProvenance {
  std::size_t sequence = 0;
  SegmentKey segment;
  std::size_t tile_index = 0;
};

struct TileDataset {
  std::vector<Tile> tiles; ///< all full (valid_count == 512)
  std::vector<TileProvenance> provenance;
};

/// Samples segments uniformly at random across all streams and collects
/// their full tiles until `target_count` is reached (then truncates).
inline TileDataset build_dataset(std::span<const EventStream> streams, const PreprocessConfig& cfg,
                                 std::size_t target_count, std::uint64_t seed) {
  if (streams.empty()) throw DataError("no training streams given");
  bool any_events = false;
  for (const auto& s : streams) any_events |= !s.events.empty();
  if (!any_events) throw DataError("training streams contain no events");
  TileDataset out;
  if (target_count == 0) return out;

  struct Candidate {
    std::size_t sequence;
    std::size_t segment;
  };
  std::vector<Segmentation> segmented;
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    segmented.push_back(segment_stream(streams[i], cfg));
    for (std::size_t k = 0; k < segmented.back().segments.size(); ++k) candidates.push_back({i, k});
  }
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);

  for (const Candidate& c : candidates) {
    const EventStream& s = streams[c.sequence];
    const Segment& seg = segmented[c.sequence].segments[c.segment];
    const auto params = compute_depth(s.sensor_width, s.sensor_height, cfg.segment_length);
    const auto occ = build_occupancy(seg.points, params);
    const std::size_t full = occ.bytes.size() / kTileSize;
    for (std::size_t t = 0; t < full; ++t) {
      Tile tile;
      std::copy_n(occ.bytes.begin() + static_cast<std::ptrdiff_t>(t * kTileSize), kTileSize,
                  tile.symbols.begin());
      tile.valid_count = kTileSize;
      out.tiles.push_back(tile);
      out.provenance.push_back({c.sequence, seg.key, t});
    }
    if (out.tiles.size() >= target_count) break;
  }
  if (out.tiles.size() < target_count)
    throw DataError("insufficient data: requested " + std::to_string(target_count) +
                    " tiles, only " + std::to_string(out.tiles.size()) + " achievable");
  out.tiles.resize(target_count);
  out.provenance.resize(target_count);
  return out;
}

class Adam {
public:
  explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<double> params, std::span<const double> grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i] * grads[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  std::uint64_t steps() const { return t_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }
  void restore(std::uint64_t steps, std::span<const double> m, std::span<const double> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw DataError("optimizer state size mismatch");
    t_ = steps;
    std::copy(m.begin(), m.end(), m_.begin());
    std::copy(v.begin(), v.end(), v_.begin());
  }

private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

/// Patience rule: stop once `patience` consecutive epochs fail to improve
/// strictly on the best validation loss.
class EarlyStopping {
public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Records an epoch's validation loss; returns true when training should stop.
  bool update(int epoch, double val_loss) {
    if (best_epoch_ < 0 || val_loss < best_) {
      best_ = val_loss;
      best_epoch_ = epoch;
      wait_ = 0;
      return false;
    }
    return ++wait_ >= patience_;
  }

  bool improved_at(int epoch) const { return best_epoch_ == epoch; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

private:
  int patience_;
  int best_epoch_ = -1;
  double best_ = 0.0;
  int wait_ = 0;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0; ///< mean training-mode bits/symbol over the epoch's batches
  double val_loss = 0.0;   ///< inference-path bits/symbol on the validation set
};

struct TrainResult {
  HyperpriorModel model; ///< weights from the best validation epoch, float32-snapped
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  bool early_stopped = false;
  HyperpriorModel last_model; ///< weights after the last epoch, for checkpointing
  Adam optimizer{0};
  int last_epoch = -1;
};

/// Training state saved between runs. The patience counter is not part of it.
struct Checkpoint {
  HyperpriorModel model;
  Adam optimizer;
  int epoch = 0; ///< last completed epoch
};

inline std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,learning_rate,train_bits_per_symbol,val_bits_per_symbol\n";
  for (const auto& r : history)
    out << r.epoch << ',' << r.learning_rate << ',' << r.train_loss << ',' << r.val_loss << '\n';
  return out.str();
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from `model`, or continues from `resume` (its model replaces
/// `model` and epochs restart after the saved one).
inline TrainResult train(HyperpriorModel model, std::span<const Tile> train_set,
                         std::span<const Tile> val_set, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}, const Checkpoint* resume = nullptr) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw DataError("training and validation sets must be non-empty");

  std::mt19937_64 rng(cfg.rng_seed);
  Adam adam(model.parameters().size());
  int first_epoch = 0;
  if (resume) {
    if (!(resume->model.architecture() == model.architecture()))
      throw DataError("checkpoint architecture differs from the configured model");
    model = resume->model;
    adam = resume->optimizer;
    first_epoch = resume->epoch + 1;
  }
  EarlyStopping stopper(cfg.early_stop_patience);
  std::vector<double> grads(model.parameters().size());
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tile> batch;
  batch.reserve(cfg.batch_size);
  ForwardOptions fwd;
  fwd.quantizer = cfg.quantizer;

  TrainResult result{model, {}, 0, false, model, Adam(0), -1};
  for (int epoch = first_epoch; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cfg.learning_rate_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break; // batch statistics need two samples
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      std::fill(grads.begin(), grads.end(), 0.0);
      const double loss = forward_backward(model, batch, grads, fwd);
      if (!std::isfinite(loss)) throw DataError("training diverged at epoch " + std::to_string(epoch));
      adam.step(model.parameters(), grads, lr);
      loss_sum += loss;
      ++batches;
    }
    HyperpriorModel snapped = model;
    snapped.snap_to_float32();
    const double val = evaluate_bits_per_symbol(snapped, val_set);
    if (!std::isfinite(val)) throw DataError("validation loss diverged at epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, lr, batches ? loss_sum / static_cast<double>(batches) : 0.0, val};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const bool stop = stopper.update(epoch, val);
    if (stopper.improved_at(epoch)) result.model = std::move(snapped);
    result.last_epoch = epoch;
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }
  result.best_epoch = stopper.best_epoch();
  result.last_model = model;
  result.optimizer = adam;
  return result;
}

// Checkpoint = model section followed by an optimizer section:
//   "LLECOPTS" | u32 LE header length | JSON {steps, epoch} | f64 LE m | f64 LE v

inline constexpr char kOptimizerMagic[8] = {'L', 'L', 'E', 'C', 'O', 'P', 'T', 'S'};

inline std::vector<std::uint8_t> serialize_checkpoint(const HyperpriorModel& model, const Adam& adam,
                                                      int epoch) {
  auto out = serialize_model(model);
  out.insert(out.end(), std::begin(kOptimizerMagic), std::end(kOptimizerMagic));
  const std::string header =
      nlohmann::json{{"steps", adam.steps()}, {"epoch", epoch}, {"moments", adam.first_moment().size()}}.dump();
  model_detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  auto put_f64 = [&out](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  };
  for (const double v : adam.first_moment()) put_f64(v);
  for (const double v : adam.second_moment()) put_f64(v);
  return out;
}

inline Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes) {
  auto loaded = load_model_section(bytes);
  auto rest = bytes.subspan(loaded.consumed);
  if (rest.size() < 12 || !std::equal(std::begin(kOptimizerMagic), std::end(kOptimizerMagic), rest.begin()))
    throw FormatError("checkpoint has no optimizer section");
  const std::uint32_t len = std::uint32_t{rest[8]} | (std::uint32_t{rest[9]} << 8) |
                            (std::uint32_t{rest[10]} << 16) | (std::uint32_t{rest[11]} << 24);
  if (rest.size() - 12 < len) throw FormatError("optimizer header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(rest.begin() + 12, rest.begin() + 12 + len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("optimizer header: ") + e.what());
  }
  const std::size_t n = loaded.model.parameters().size();
  if (header.value("moments", std::size_t{0}) != n) throw FormatError("optimizer state size mismatch");
  const auto data = rest.subspan(12 + len);
  if (data.size() != 16 * n) throw FormatError("optimizer payload has wrong length");
  auto get_f64 = [&data](std::size_t i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{data[8 * i + static_cast<std::size_t>(b)]} << (8 * b);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  };
  std::vector<double> m(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = get_f64(i);
    v[i] = get_f64(n + i);
  }
  Checkpoint cp{std::move(loaded.model), Adam(n), header.value("epoch", 0)};
  cp.optimizer.restore(header.value("steps", std::uint64_t{0}), m, v);
  return cp;
}

} // namespace llec
