#pragma once

// Compression ratio / bits-per-event reporting and the external anchor
// harness (lz4, bzip2, 7z run as child processes with default settings).

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "llec/container.hpp"
#include "llec/errors.hpp"
#include "json.hpp"

namespace llec {

/// size(input) / size(compressed bitstream), both in bits.
inline double compute_cr(std::uint64_t input_bits, std::uint64_t compressed_bits) {
  if (compressed_bits == 0) throw DataError("compression ratio undefined for an empty bitstream");
  return static_cast<double>(input_bits) / static_cast<double>(compressed_bits);
}

/// size(compressed bitstream) / number of input events, in bits/event.
inline double compute_s(std::uint64_t compressed_bits, std::uint64_t event_count) {
  if (event_count == 0) throw DataError("bits per event undefined for zero events");
  return static_cast<double>(compressed_bits) / static_cast<double>(event_count);
}

enum class RowStatus { Ok, Skipped, Failed };

inline const char* to_string(RowStatus s) {
  switch (s) {
  case RowStatus::Ok: return "ok";
  case RowStatus::Skipped: return "skipped";
  case RowStatus::Failed: return "failed";
  }
  return "?";
}

struct CompressionReport {
  std::string sequence;
  std::string codec;
  RowStatus status = RowStatus::Ok;
  std::string note; ///< tool version, or why the row was skipped
  std::uint64_t input_bits = 0;
  std::uint64_t compressed_bits = 0;
  std::uint64_t event_count = 0;
  double cr = 0.0;
  double s = 0.0;
  std::optional<BitstreamBreakdown> breakdown;
};

inline CompressionReport make_report(std::string sequence, std::string codec, std::uint64_t input_bits,
                                     std::uint64_t compressed_bits, std::uint64_t event_count) {
  CompressionReport r;
  r.sequence = std::move(sequence);
  r.codec = std::move(codec);
  r.input_bits = input_bits;
  r.compressed_bits = compressed_bits;
  r.event_count = event_count;
  r.cr = compute_cr(input_bits, compressed_bits);
  r.s = event_count ? compute_s(compressed_bits, event_count) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Anchors

struct AnchorTool {
  std::string name;
  std::vector<std::string> binaries; ///< candidates searched on PATH, in order
};

inline const std::vector<AnchorTool>& known_anchors() {
  static const std::vector<AnchorTool> tools = {
      {"lz4", {"lz4"}},
      {"bzip2", {"bzip2"}},
      {"7z", {"7z", "7za", "7zr"}},
  };
  return tools;
}

namespace metrics_detail {

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (const char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

inline std::optional<std::filesystem::path> find_on_path(const std::string& binary,
                                                         const std::string& search_path) {
  std::stringstream dirs(search_path);
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    if (dir.empty()) continue;
    const auto candidate = std::filesystem::path(dir) / binary;
    if (::access(candidate.c_str(), X_OK) == 0 && std::filesystem::is_regular_file(candidate))
      return candidate;
  }
  return std::nullopt;
}

inline std::string first_line_of(const std::string& command) {
  FILE* pipe = ::popen(command.c_str(), "r");
  if (!pipe) return {};
  std::array<char, 512> buf{};
  std::string line;
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) {
    line = buf.data();
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos) {
      line = line.substr(first);
      break;
    }
    line.clear();
  }
  ::pclose(pipe);
  return line;
}

} // namespace metrics_detail

struct AnchorOptions {
  std::vector<std::string> tools{"lz4", "bzip2", "7z"};
  /// Directories searched for the tool binaries; defaults to $PATH.
  std::string search_path;
};

/// Compresses `input_file` with each requested anchor and reports CR and S.
/// A missing or failing tool yields a skipped/failed row, never an exception.
inline std::vector<CompressionReport> bench_anchors(const std::filesystem::path& input_file,
                                                    std::uint64_t event_count, const AnchorOptions& opts = {}) {
  using namespace metrics_detail;
  const std::uint64_t input_bits = 8 * std::filesystem::file_size(input_file);
  std::string search = opts.search_path;
  if (search.empty()) {
    const char* env = std::getenv("PATH");
    search = env ? env : "/usr/bin:/bin";
  }
  std::mt19937_64 rng(std::random_device{}());
  const auto scratch = std::filesystem::temp_directory_path() /
                       ("llec-bench-" + std::to_string(::getpid()) + "-" + std::to_string(rng()));
  std::filesystem::create_directories(scratch);

  std::vector<CompressionReport> rows;
  for (const std::string& name : opts.tools) {
    CompressionReport row;
    row.sequence = input_file.filename().string();
    row.codec = name;
    row.input_bits = input_bits;
    row.event_count = event_count;
    const AnchorTool* tool = nullptr;
    for (const auto& t : known_anchors())
      if (t.name == name) tool = &t;
    if (!tool) {
      row.status = RowStatus::Skipped;
      row.note = "unknown anchor";
      rows.push_back(row);
      continue;
    }
    std::optional<std::filesystem::path> exe;
    for (const auto& b : tool->binaries)
      if ((exe = find_on_path(b, search))) break;
    if (!exe) {
      row.status = RowStatus::Skipped;
      row.note = "not installed";
      rows.push_back(row);
      continue;
    }
    const std::string in = shell_quote(input_file.string());
    const std::string bin = shell_quote(exe->string());
    std::filesystem::path out_file;
    std::string cmd;
    if (name == "lz4") {
      out_file = scratch / "out.lz4";
      cmd = bin + " -q -c " + in + " > " + shell_quote(out_file.string());
      row.note = first_line_of(bin + " -V 2>&1");
    } else if (name == "bzip2") {
      out_file = scratch / "out.bz2";
      cmd = bin + " -c " + in + " > " + shell_quote(out_file.string());
      row.note = first_line_of(bin + " --version 2>&1 < /dev/null");
    } else {
      out_file = scratch / "out.7z";
      cmd = bin + " a -bd -y " + shell_quote(out_file.string()) + " " + in + " > /dev/null 2>&1";
      row.note = first_line_of(bin + " 2>&1 < /dev/null");
    }
    std::error_code ec;
    std::filesystem::remove(out_file, ec);
    const int rc = std::system(cmd.c_str());
    if (rc != 0 || !std::filesystem::exists(out_file) || std::filesystem::file_size(out_file) == 0) {
      row.status = RowStatus::Failed;
      row.note = "exit status " + std::to_string(rc);
      rows.push_back(row);
      continue;
    }
    row.compressed_bits = 8 * std::filesystem::file_size(out_file);
    row.cr = compute_cr(row.input_bits, row.compressed_bits);
    row.s = event_count ? compute_s(row.compressed_bits, event_count) : 0.0;
    rows.push_back(row);
  }
  std::error_code ec;
  std::filesystem::remove_all(scratch, ec);
  return rows;
}

// ---------------------------------------------------------------------------
// Report formatting

inline std::string reports_table(const std::vector<CompressionReport>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %-8s %-8s %14s %14s %8s %10s\n", "sequence", "codec", "status",
                "input_bits", "compressed", "CR", "S(b/ev)");
  out << line;
  for (const auto& r : rows) {
    if (r.status == RowStatus::Ok)
      std::snprintf(line, sizeof line, "%-24s %-8s %-8s %14llu %14llu %8.3f %10.3f\n", r.sequence.c_str(),
                    r.codec.c_str(), to_string(r.status), static_cast<unsigned long long>(r.input_bits),
                    static_cast<unsigned long long>(r.compressed_bits), r.cr, r.s);
    else
      std::snprintf(line, sizeof line, "%-24s %-8s %-8s %14llu %14s %8s %10s  (%s)\n", r.sequence.c_str(),
                    r.codec.c_str(), to_string(r.status), static_cast<unsigned long long>(r.input_bits), "-",
                    "-", "-", r.note.c_str());
    out << line;
  }
  return out.str();
}

inline std::string reports_csv(const std::vector<CompressionReport>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "sequence,codec,status,input_bits,compressed_bits,event_count,cr,s,header_bits,metadata_bits,"
         "latent_bits,payload_bits,note\n";
  for (const auto& r : rows) {
    out << r.sequence << ',' << r.codec << ',' << to_string(r.status) << ',' << r.input_bits << ','
        << r.compressed_bits << ',' << r.event_count << ',' << r.cr << ',' << r.s << ',';
    if (r.breakdown)
      out << r.breakdown->header_bits << ',' << r.breakdown->metadata_bits << ',' << r.breakdown->latent_bits
          << ',' << r.breakdown->payload_bits;
    else
      out << ",,,";
    std::string note = r.note;
    for (char& c : note)
      if (c == ',' || c == '\n') c = ' ';
    out << ',' << note << '\n';
  }
  return out.str();
}

inline nlohmann::json reports_json(const std::vector<CompressionReport>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"sequence", r.sequence},       {"codec", r.codec},
                        {"status", to_string(r.status)}, {"note", r.note},
                        {"input_bits", r.input_bits},   {"compressed_bits", r.compressed_bits},
                        {"event_count", r.event_count}, {"cr", r.cr},
                        {"s", r.s}};
    if (r.breakdown)
      j["breakdown"] = {{"header_bits", r.breakdown->header_bits},
                        {"metadata_bits", r.breakdown->metadata_bits},
                        {"latent_bits", r.breakdown->latent_bits},
                        {"payload_bits", r.breakdown->payload_bits},
                        {"total_bits", r.breakdown->total_bits},
                        {"segments", r.breakdown->segments},
                        {"tiles", r.breakdown->tiles},
                        {"occupancy_bytes", r.breakdown->occupancy_bytes}};
    arr.push_back(std::move(j));
  }
  return arr;
}

} // namespace llec
