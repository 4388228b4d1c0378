// llec: command-line front end for the codec, trainer and benchmark harness.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "llec/llec.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool has_extension(const std::string& path, const char* ext) {
  return fs::path(path).extension() == ext;
}

llec::EventStream load_stream(const std::string& path, std::uint32_t width, std::uint32_t height,
                              bool lenient = false) {
  const auto bytes = llec::read_file(path);
  if (has_extension(path, ".csv")) {
    if (!width || !height) throw llec::DataError(path + ": CSV input needs --width and --height");
    return llec::parse_csv({reinterpret_cast<const char*>(bytes.data()), bytes.size()}, width, height);
  }
  if (!width || !height) {
    const auto geometry = llec::evt2::read_geometry(bytes);
    if (!geometry) throw llec::DataError(path + ": no '% geometry WxH' header; pass --width and --height");
    width = geometry->first;
    height = geometry->second;
  }
  llec::ParseDiagnostics diag;
  auto stream = llec::parse_evt2(bytes, width, height,
                                 lenient ? llec::ParseMode::Lenient : llec::ParseMode::Strict, &diag);
  if (diag.skipped_words || diag.out_of_bounds_dropped || diag.reordered)
    std::fprintf(stderr, "%s: skipped %zu words, dropped %zu out-of-bounds events, reordered %zu\n",
                 path.c_str(), diag.skipped_words, diag.out_of_bounds_dropped, diag.reordered);
  return stream;
}

void save_stream(const std::string& path, const llec::EventStream& s) {
  if (has_extension(path, ".csv")) {
    const std::string text = llec::serialize_csv(s);
    llec::write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
    return;
  }
  const std::string header =
      "% geometry " + std::to_string(s.sensor_width) + "x" + std::to_string(s.sensor_height) + "\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const auto body = llec::serialize_evt2(s);
  bytes.insert(bytes.end(), body.begin(), body.end());
  llec::write_file(path, bytes);
}

llec::HyperpriorModel load_model_file(const std::string& path) {
  return llec::load_model(llec::read_file(path));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// --- train config -----------------------------------------------------------

llec::EventStream stream_from_json(const json& entry, std::uint32_t width, std::uint32_t height) {
  if (entry.is_string()) return load_stream(entry.get<std::string>(), width, height);
  llec::SyntheticSpec spec;
  spec.pattern = llec::parse_pattern(entry.at("pattern").get<std::string>());
  spec.width = entry.value("width", width ? width : spec.width);
  spec.height = entry.value("height", height ? height : spec.height);
  spec.duration = entry.value("duration", spec.duration);
  spec.rate = entry.value("rate", spec.rate);
  spec.seed = entry.value("seed", spec.seed);
  return llec::generate_synthetic(spec);
}

std::vector<llec::EventStream> streams_from_json(const json& list, std::uint32_t width, std::uint32_t height) {
  std::vector<llec::EventStream> out;
  for (const auto& entry : list) out.push_back(stream_from_json(entry, width, height));
  return out;
}

llec::Architecture architecture_from_json(const json& j) {
  llec::Architecture a;
  if (!j.is_object()) return a;
  a.encoder_hidden = j.value("encoder_hidden", a.encoder_hidden);
  a.latent_size = j.value("latent_size", a.latent_size);
  a.decoder_hidden = j.value("decoder_hidden", a.decoder_hidden);
  a.levels = j.value("levels", a.levels);
  a.sigma_q = j.value("sigma_q", a.sigma_q);
  return a;
}

int cmd_train(const std::string& config_path) {
  json cfg;
  try {
    std::ifstream in(config_path);
    if (!in) throw llec::Error("cannot open " + config_path);
    cfg = json::parse(in);
  } catch (const json::exception& e) {
    throw llec::FormatError(config_path + ": " + e.what());
  }
  try {
    const auto width = cfg.value("width", 0u);
    const auto height = cfg.value("height", 0u);
    const llec::TrainConfig tc = llec::train_config_from_json(cfg.value("hyperparameters", json::object()));
    const auto train_streams = streams_from_json(cfg.at("train"), width, height);
    const auto val_streams = streams_from_json(cfg.at("validation"), width, height);
    if (train_streams.empty() || val_streams.empty())
      throw llec::DataError("config needs non-empty 'train' and 'validation' lists");
    const std::uint32_t ts = cfg.value(
        "segment_length", llec::default_segment_length(train_streams[0].sensor_width, train_streams[0].sensor_height));
    const llec::PreprocessConfig pre{ts};
    const auto train_set = llec::build_dataset(train_streams, pre, tc.train_tile_target, tc.rng_seed);
    const std::size_t val_target = cfg.value("validation_tile_target", tc.train_tile_target / 10);
    const auto val_set = llec::build_dataset(val_streams, pre, val_target, tc.rng_seed + 1);
    std::fprintf(stderr, "train tiles %zu, validation tiles %zu, T_s %u\n", train_set.tiles.size(),
                 val_set.tiles.size(), ts);

    llec::HyperpriorModel model(architecture_from_json(cfg.value("architecture", json::object())));
    model.init_uniform(cfg.value("init_seed", tc.rng_seed));
    std::optional<llec::Checkpoint> resume;
    if (cfg.contains("resume")) resume = llec::load_checkpoint(llec::read_file(cfg.at("resume")));

    const auto started = std::chrono::steady_clock::now();
    auto result = llec::train(model, train_set.tiles, val_set.tiles, tc, [&](const llec::EpochRecord& r) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      std::fprintf(stderr, "epoch %3d  lr %.1e  train %.4f  val %.4f bits/symbol  (%.1fs)\n", r.epoch,
                   r.learning_rate, r.train_loss, r.val_loss, secs);
    }, resume ? &*resume : nullptr);

    const std::string out_model = cfg.value("output_model", std::string("model.bin"));
    llec::write_file(out_model, llec::serialize_model(result.model));
    if (cfg.contains("history_csv")) {
      const std::string csv = llec::history_csv(result.history);
      llec::write_file(cfg.at("history_csv"), {reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()});
    }
    if (cfg.contains("checkpoint"))
      llec::write_file(cfg.at("checkpoint"),
                       llec::serialize_checkpoint(result.last_model, result.optimizer, result.last_epoch));
    std::printf("best epoch %d, val %.4f bits/symbol%s; model %s (id %s)\n", result.best_epoch,
                result.history.empty() ? 0.0 : [&] {
                  double best = result.history.front().val_loss;
                  for (const auto& r : result.history) best = std::min(best, r.val_loss);
                  return best;
                }(),
                result.early_stopped ? ", early stop" : "", out_model.c_str(),
                llec::to_hex(llec::model_id(result.model)).c_str());
  } catch (const json::exception& e) {
    throw llec::FormatError(config_path + ": " + e.what());
  }
  return 0;
}

// --- inspect ----------------------------------------------------------------

int cmd_inspect(const std::string& path, bool segments, bool as_json) {
  const auto bytes = llec::read_file(path);
  const auto pc = llec::parse_container(bytes);
  const auto b = llec::measure_bitstream(bytes);
  const auto& h = pc.header;
  if (as_json) {
    json j = {{"version", h.format_version}, {"width", h.sensor_width},
              {"height", h.sensor_height},   {"segment_length", h.segment_length},
              {"segment_count", h.segment_count}, {"model_id", llec::to_hex(h.model_id)},
              {"bits", {{"header", b.header_bits}, {"metadata", b.metadata_bits},
                        {"latents", b.latent_bits}, {"payloads", b.payload_bits}, {"total", b.total_bits}}},
              {"tiles", b.tiles}, {"occupancy_bytes", b.occupancy_bytes}};
    if (segments) {
      j["segments"] = json::array();
      for (const auto& s : pc.segments)
        j["segments"].push_back({{"index", s.key.segment_index}, {"polarity", s.key.polarity},
                                 {"min_timestamp", s.min_timestamp}, {"occupancy_bytes", s.occupancy_byte_count},
                                 {"tiles", s.tiles.size()}, {"crc32", s.checksum}});
    }
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::printf("LLEC v%u  %ux%u  T_s %u us  segments %u\nmodel %s\n", h.format_version, h.sensor_width,
              h.sensor_height, h.segment_length, h.segment_count, llec::to_hex(h.model_id).c_str());
  std::printf("bits: header %llu  metadata %llu  latents %llu  payloads %llu  total %llu\n",
              static_cast<unsigned long long>(b.header_bits), static_cast<unsigned long long>(b.metadata_bits),
              static_cast<unsigned long long>(b.latent_bits), static_cast<unsigned long long>(b.payload_bits),
              static_cast<unsigned long long>(b.total_bits));
  std::printf("tiles %llu  occupancy bytes %llu", static_cast<unsigned long long>(b.tiles),
              static_cast<unsigned long long>(b.occupancy_bytes));
  if (b.occupancy_bytes)
    std::printf("  (%.3f payload bits/symbol)", static_cast<double>(b.payload_bits) / b.occupancy_bytes);
  std::printf("\n");
  if (segments)
    for (const auto& s : pc.segments)
      std::printf("  seg %8llu p%u  min_t %12llu  occ %6llu  tiles %3zu  crc %08x\n",
                  static_cast<unsigned long long>(s.key.segment_index), s.key.polarity,
                  static_cast<unsigned long long>(s.min_timestamp),
                  static_cast<unsigned long long>(s.occupancy_byte_count), s.tiles.size(), s.checksum);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLEC lossless event-camera codec"};
  app.require_subcommand(1);

  std::string input, output, model_path, config_path, anchors, csv_path, json_path;
  std::uint32_t width = 0, height = 0, ts = 0;
  bool lenient = false;

  auto* encode = app.add_subcommand("encode", "Compress an EVT2 (.raw) or CSV event file");
  encode->add_option("-i,--input", input, "input .raw or .csv")->required()->check(CLI::ExistingFile);
  encode->add_option("-o,--output", output, "output container")->required();
  encode->add_option("-m,--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  encode->add_option("--ts", ts, "segment length T_s in us (power of two; default from sensor size)");
  encode->add_option("--width", width, "sensor width (CSV input, or raw without geometry header)");
  encode->add_option("--height", height, "sensor height");
  encode->add_flag("--lenient", lenient, "drop malformed EVT2 words instead of failing");

  auto* decode = app.add_subcommand("decode", "Decompress a container to .raw or .csv");
  decode->add_option("-i,--input", input, "input container")->required()->check(CLI::ExistingFile);
  decode->add_option("-o,--output", output, "output .raw or .csv")->required();
  decode->add_option("-m,--model", model_path, "model file")->required()->check(CLI::ExistingFile);

  auto* train = app.add_subcommand("train", "Train a hyperprior model from a JSON config");
  train->add_option("--config", config_path, "training config")->required()->check(CLI::ExistingFile);

  bool strict_anchors = false;
  auto* bench = app.add_subcommand("bench", "Report CR and bits/event for LLEC and anchor codecs");
  bench->add_option("-i,--input", input, "input .raw or .csv")->required()->check(CLI::ExistingFile);
  bench->add_option("-m,--model", model_path, "model file")->required()->check(CLI::ExistingFile);
  bench->add_option("--anchors", anchors, "comma-separated subset of lz4,bzip2,7z");
  bench->add_option("--ts", ts, "segment length T_s in us");
  bench->add_option("--width", width, "sensor width");
  bench->add_option("--height", height, "sensor height");
  bench->add_option("--csv", csv_path, "write the report as CSV");
  bench->add_option("--json", json_path, "write the report as JSON");
  bench->add_flag("--require-anchors", strict_anchors, "exit 4 if a requested anchor is not installed");

  bool show_segments = false, inspect_json = false;
  auto* inspect = app.add_subcommand("inspect", "Describe a container");
  inspect->add_option("file", input, "container")->required()->check(CLI::ExistingFile);
  inspect->add_flag("--segments", show_segments, "list segment records");
  inspect->add_flag("--json", inspect_json, "JSON output");

  std::string pattern = "moving-dot";
  llec::SyntheticSpec spec;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic event stream");
  synth->add_option("--pattern", pattern, "moving-dot | rotating-spinner | uniform-noise | falling-particles");
  synth->add_option("--width", spec.width, "sensor width")->capture_default_str();
  synth->add_option("--height", spec.height, "sensor height")->capture_default_str();
  synth->add_option("--duration", spec.duration, "seconds")->capture_default_str();
  synth->add_option("--rate", spec.rate, "events per second")->capture_default_str();
  synth->add_option("--seed", spec.seed, "RNG seed")->capture_default_str();
  synth->add_option("-o,--output", output, "output .raw or .csv")->required();

  auto* stats = app.add_subcommand("stats", "Duration, event count and rate of an event file");
  stats->add_option("-i,--input", input, "input .raw or .csv")->required()->check(CLI::ExistingFile);
  stats->add_option("--width", width, "sensor width");
  stats->add_option("--height", height, "sensor height");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*encode) {
      const auto stream = load_stream(input, width, height, lenient);
      const auto model = load_model_file(model_path);
      const auto bytes = llec::encode_stream(stream, model, {ts});
      llec::write_file(output, bytes);
      const auto in_bits = 8 * fs::file_size(input);
      std::printf("%zu events -> %zu bytes  CR %.3f  S %.3f bits/event\n", stream.events.size(), bytes.size(),
                  llec::compute_cr(in_bits, 8 * bytes.size()),
                  stream.events.empty() ? 0.0 : llec::compute_s(8 * bytes.size(), stream.events.size()));
    } else if (*decode) {
      const auto model = load_model_file(model_path);
      const auto stream = llec::decode_stream(llec::read_file(input), model);
      save_stream(output, stream);
      std::printf("%zu events -> %s\n", stream.events.size(), output.c_str());
    } else if (*train) {
      return cmd_train(config_path);
    } else if (*bench) {
      const auto stream = load_stream(input, width, height);
      const auto model = load_model_file(model_path);
      const auto bytes = llec::encode_stream(stream, model, {ts});
      if (llec::canonicalize(llec::decode_stream(bytes, model)).events != llec::canonicalize(stream).events)
        throw llec::ConsistencyError("roundtrip mismatch on " + input);
      const std::uint64_t in_bits = 8 * fs::file_size(input);
      std::vector<llec::CompressionReport> rows;
      rows.push_back(llec::make_report(fs::path(input).filename().string(), "llec", in_bits, 8 * bytes.size(),
                                       stream.events.size()));
      rows.back().breakdown = llec::measure_bitstream(bytes);
      bool missing = false;
      if (!anchors.empty()) {
        llec::AnchorOptions opts;
        opts.tools = split_list(anchors);
        for (auto& r : llec::bench_anchors(input, stream.events.size(), opts)) {
          missing |= r.status == llec::RowStatus::Skipped;
          rows.push_back(std::move(r));
        }
      }
      std::cout << llec::reports_table(rows);
      if (!csv_path.empty()) {
        const std::string csv = llec::reports_csv(rows);
        llec::write_file(csv_path, {reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()});
      }
      if (!json_path.empty()) {
        const std::string text = llec::reports_json(rows).dump(2) + "\n";
        llec::write_file(json_path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
      }
      if (missing && strict_anchors) throw llec::ToolMissingError("one or more anchor tools are not installed");
    } else if (*inspect) {
      return cmd_inspect(input, show_segments, inspect_json);
    } else if (*synth) {
      spec.pattern = llec::parse_pattern(pattern);
      const auto stream = llec::generate_synthetic(spec);
      save_stream(output, stream);
      std::printf("%s: %zu events, %ux%u, %.3f s\n", output.c_str(), stream.events.size(), spec.width,
                  spec.height, spec.duration);
    } else if (*stats) {
      const auto s = llec::compute_stats(load_stream(input, width, height));
      std::printf("duration %.6f s  events %llu  rate %.4f Mev/s  positive %.4f\n", s.duration,
                  static_cast<unsigned long long>(s.event_count), s.event_rate, s.positive_fraction);
    }
  } catch (const llec::Error& e) {
    std::fprintf(stderr, "llec: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "llec: %s\n", e.what());
    return 1;
  }
  return 0;
}
