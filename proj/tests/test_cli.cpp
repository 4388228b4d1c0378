#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "llec/container.hpp"
#include "llec/event_io.hpp"
#include "llec/synthetic.hpp"

#ifndef LLEC_CLI_PATH
#error "LLEC_CLI_PATH must point at the built llec binary"
#endif

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("llec-cli-" + std::to_string(std::random_device{}()));
    fs::create_directories(dir_);
    const nlohmann::json cfg = {
        {"width", 640},
        {"height", 480},
        {"hyperparameters", {{"batch_size", 32}, {"max_epochs", 2}, {"train_tile_target", 64},
                             {"learning_rate", 1e-3}}},
        {"train", {{{"pattern", "rotating-spinner"}, {"duration", 0.05}, {"rate", 1e6}, {"seed", 1}}}},
        {"validation", {{{"pattern", "falling-particles"}, {"duration", 0.05}, {"rate", 1e6}, {"seed", 2}}}},
        {"validation_tile_target", 16},
        {"output_model", (dir_ / "model.bin").string()},
        {"history_csv", (dir_ / "history.csv").string()},
        {"checkpoint", (dir_ / "model.ckpt").string()},
    };
    std::ofstream(dir_ / "train.json") << cfg.dump(2);
    train_rc_ = run("train --config " + (dir_ / "train.json").string());
  }
  static void TearDownTestSuite() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  static int run(const std::string& args, std::string* out = nullptr) {
    const auto log = dir_ / "stdout.txt";
    const std::string cmd = std::string(LLEC_CLI_PATH) + " " + args + " > " + log.string() + " 2> " +
                            (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    if (out) {
      std::ifstream in(log);
      std::stringstream ss;
      ss << in.rdbuf();
      *out = ss.str();
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string p(const char* name) { return (dir_ / name).string(); }

  static inline fs::path dir_;
  static inline int train_rc_ = -1;
};

} // namespace

TEST_F(Cli, TrainWritesModelHistoryAndCheckpoint) {
  ASSERT_EQ(train_rc_, 0);
  EXPECT_TRUE(fs::exists(p("model.bin")));
  EXPECT_TRUE(fs::exists(p("model.ckpt")));
  std::ifstream in(p("history.csv"));
  std::string header;
  std::getline(in, header);
  EXPECT_NE(header.find("val"), std::string::npos);
}

TEST_F(Cli, SynthEncodeDecodeRoundtrip) {
  ASSERT_EQ(train_rc_, 0);
  ASSERT_EQ(run("synth --pattern moving-dot --duration 0.05 --rate 400000 --seed 3 -o " + p("dot.raw")), 0);
  ASSERT_EQ(run("encode -i " + p("dot.raw") + " -o " + p("dot.llec") + " -m " + p("model.bin")), 0);
  ASSERT_EQ(run("decode -i " + p("dot.llec") + " -o " + p("dot.out.raw") + " -m " + p("model.bin")), 0);
  const auto original = llec::canonicalize(llec::generate_synthetic(
      {llec::SyntheticPattern::MovingDot, 640, 480, 0.05, 4e5, 3}));
  const auto bytes = llec::read_file(p("dot.out.raw"));
  const auto geometry = llec::evt2::read_geometry(bytes);
  ASSERT_TRUE(geometry);
  EXPECT_EQ(llec::parse_evt2(bytes, geometry->first, geometry->second).events, original.events);

  ASSERT_EQ(run("decode -i " + p("dot.llec") + " -o " + p("dot.out.csv") + " -m " + p("model.bin")), 0);
  std::ifstream csv(p("dot.out.csv"));
  std::stringstream ss;
  ss << csv.rdbuf();
  EXPECT_EQ(llec::parse_csv(ss.str(), 640, 480).events, original.events);
}

TEST_F(Cli, InspectReportsHeader) {
  ASSERT_EQ(train_rc_, 0);
  ASSERT_EQ(run("synth --pattern uniform-noise --duration 0.01 --rate 100000 -o " + p("noise.raw")), 0);
  ASSERT_EQ(run("encode -i " + p("noise.raw") + " -o " + p("noise.llec") + " -m " + p("model.bin")), 0);
  std::string out;
  ASSERT_EQ(run("inspect --json --segments " + p("noise.llec"), &out), 0);
  const auto j = nlohmann::json::parse(out);
  EXPECT_EQ(j["width"], 640);
  EXPECT_EQ(j["segment_length"], 1024);
  EXPECT_EQ(j["bits"]["total"].get<std::uint64_t>(), 8 * fs::file_size(p("noise.llec")));
  EXPECT_EQ(j["segments"].size(), j["segment_count"].get<std::size_t>());
}

TEST_F(Cli, ExitCodes) {
  ASSERT_EQ(train_rc_, 0);
  ASSERT_EQ(run("synth --pattern falling-particles --duration 0.01 --rate 200000 -o " + p("fp.raw")), 0);
  ASSERT_EQ(run("encode -i " + p("fp.raw") + " -o " + p("fp.llec") + " -m " + p("model.bin")), 0);

  // Another model: different weights, so a different identifier.
  llec::HyperpriorModel other;
  other.init_uniform(99);
  llec::write_file(p("other.bin"), llec::serialize_model(other));
  EXPECT_EQ(run("decode -i " + p("fp.llec") + " -o " + p("x.raw") + " -m " + p("other.bin")), 3);

  auto bytes = llec::read_file(p("fp.llec"));
  bytes[0] = 'Z';
  llec::write_file(p("bad.llec"), bytes);
  EXPECT_EQ(run("decode -i " + p("bad.llec") + " -o " + p("x.raw") + " -m " + p("model.bin")), 2);

  auto model = llec::read_file(p("model.bin"));
  model[model.size() - 1] ^= 0xFF;
  llec::write_file(p("corrupt-model.bin"), model);
  EXPECT_EQ(run("decode -i " + p("fp.llec") + " -o " + p("x.raw") + " -m " + p("corrupt-model.bin")), 3);

  // A corrupt EVT2 word (truncated file) is a format error.
  auto raw = llec::read_file(p("fp.raw"));
  raw.resize(raw.size() - 2);
  llec::write_file(p("cut.raw"), raw);
  EXPECT_EQ(run("encode -i " + p("cut.raw") + " -o " + p("x.llec") + " -m " + p("model.bin")), 2);

  EXPECT_EQ(run("encode -i " + p("fp.raw") + " -o " + p("x.llec") + " -m " + p("model.bin") + " --ts 1000"), 1);
  EXPECT_EQ(run("bogus-subcommand"), 1);
}

TEST_F(Cli, BenchRequireAnchors) {
  ASSERT_EQ(train_rc_, 0);
  ASSERT_EQ(run("synth --pattern moving-dot --duration 0.01 --rate 200000 -o " + p("b.raw")), 0);
  std::string out;
  ASSERT_EQ(run("bench -i " + p("b.raw") + " -m " + p("model.bin") + " --csv " + p("b.csv"), &out), 0);
  EXPECT_NE(out.find("llec"), std::string::npos);
  EXPECT_TRUE(fs::exists(p("b.csv")));
  // With an empty PATH no anchor can be found.
  const std::string env = "env PATH=" + p("nowhere") + " ";
  const std::string cmd = env + LLEC_CLI_PATH + " bench -i " + p("b.raw") + " -m " + p("model.bin") +
                          " --anchors lz4 --require-anchors > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 4);
}

TEST_F(Cli, StatsOnSynthetic) {
  ASSERT_EQ(run("synth --pattern uniform-noise --duration 0.5 --rate 20000 --seed 4 -o " + p("s.csv")), 0);
  std::string out;
  ASSERT_EQ(run("stats -i " + p("s.csv") + " --width 640 --height 480", &out), 0);
  EXPECT_NE(out.find("10000"), std::string::npos) << out;
}
