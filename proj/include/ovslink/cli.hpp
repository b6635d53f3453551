#pragma once

// Command implementations behind the `ovslink` executable. Each command is
// callable in-process; run_cli() adds argument parsing and maps exceptions
// to exit codes (0 ok, 1 internal failure, 2 bad input, 3 inconsistent input).

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ovslink/cascade.hpp"
#include "ovslink/simulator.hpp"

namespace ovslink::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitConsistency = 3;

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct RunRequest {
  fs::path candidates;
  fs::path flow_dir;
  fs::path first_frame;
  fs::path output;
  CascadeConfig config;
  std::optional<fs::path> dump_masks;  // one PPM per frame
  bool quiet = false;
};

struct RunSummary {
  std::uint64_t frames = 0;  // frames the engine processed
  std::uint64_t lines_read = 0;  // candidate lines consumed
  std::uint64_t instances = 0;
  std::uint64_t iou = 0;
  std::uint64_t reid = 0;
  std::uint64_t flow = 0;
  double mean_us = 0.0;
  double max_us = 0.0;
};

// Streams the candidate file through the engine and atomically writes the
// prediction JSON-lines file plus `<output>.summary.json`. Diagnostics go to
// `log`. Throws InputError / ConsistencyError.
RunSummary cmd_run(const RunRequest& request, std::ostream& log);

struct BenchReport {
  std::vector<double> latencies_us;  // every frame of every repetition
  std::uint64_t frames = 0;
  std::uint64_t repetitions = 0;
  double median_us = 0.0;
  double p95_us = 0.0;  // nearest rank
  double mean_us = 0.0;
  double fps = 0.0;  // 1e6 / mean_us
  std::uint64_t instances = 0;
  double candidates_per_frame = 0.0;
  std::uint64_t max_candidates = 0;
  std::string machine;
};

// Fills the latency statistics from `latencies_us`. Throws
// std::invalid_argument when empty.
void summarize_latencies(BenchReport& report);
std::string machine_descriptor();

struct BenchRequest {
  std::optional<fs::path> sequence_dir;
  std::optional<SceneSpec> scene;  // generated in memory instead of read
  std::uint64_t repetitions = 5;
  CascadeConfig config;
};

// Loads or generates the whole sequence up front, then times association
// only. Throws ConsistencyError if repetitions disagree on their results.
BenchReport cmd_bench(const BenchRequest& request);

std::string report_to_json(const BenchReport& report);

}  // namespace ovslink::cli
