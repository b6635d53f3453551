#pragma once

// File formats: JSON-lines candidate and mask streams, RLE JSON, key=value
// config files, scene descriptions, and the simulator output directory.
// Parse failures throw InputError with the offending line number.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ovslink/cascade.hpp"
#include "ovslink/eval.hpp"
#include "ovslink/simulator.hpp"

namespace ovslink::io {

namespace fs = std::filesystem;
using nlohmann::json;

// {"size": [height, width], "counts": [...]}
json rle_to_json(const BitMask& mask);
BitMask rle_from_json(const json& j);

// --- candidate stream --------------------------------------------------------

struct CandidateFrame {
  std::int64_t frame = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<Candidate> candidates;
  std::optional<std::string> flow;  // relative to the flow directory
};

std::string format_candidate_line(const CandidateFrame& frame);
// `line_no` only feeds error messages.
CandidateFrame parse_candidate_line(std::string_view line, std::uint64_t line_no);

// --- mask streams ------------------------------------------------------------

// {"frame": f, "masks": {"<id>": RLE, ...}}; extra keys are ignored.
std::string format_mask_frame(const MaskFrame& frame);
MaskFrame parse_mask_frame(std::string_view line, std::uint64_t line_no);

// A mask frame plus "paths" and "matches" objects keyed by instance id.
std::string format_prediction_line(const FrameResult& result);

// --- config ------------------------------------------------------------------

// key=value lines using CascadeConfig field names; '#' starts a comment.
// Unknown keys and unparsable values throw InputError; out-of-range values
// throw std::invalid_argument.
CascadeConfig parse_config(std::string_view text);
CascadeConfig load_config(const fs::path& path);
std::string format_config(const CascadeConfig& config);

// --- scene descriptions ------------------------------------------------------

json scene_to_json(const SceneSpec& spec);
// Missing fields keep their defaults; unknown fields throw InputError.
SceneSpec scene_from_json(const json& j);
SceneSpec load_scene(const fs::path& path);

// --- plumbing ----------------------------------------------------------------

std::string read_text(const fs::path& path);

// Line-by-line reader that skips blank lines and tracks line numbers.
class LineReader {
 public:
  explicit LineReader(const fs::path& path);  // throws InputError if unreadable

  bool next(std::string& line);
  std::uint64_t line_number() const { return line_no_; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::ifstream in_;
  std::uint64_t line_no_ = 0;
};

// Writes to a temporary sibling file; commit() renames it over the target.
// Destroying an uncommitted file removes the temporary.
class AtomicFile {
 public:
  explicit AtomicFile(fs::path target);
  ~AtomicFile();
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;

  std::ostream& stream() { return out_; }
  void commit();

 private:
  fs::path target_;
  fs::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

void write_file_atomic(const fs::path& path, std::string_view contents);

// Streams a candidates file, loading referenced flow files on demand. When
// the flow directory does not exist every frame gets identity flow and
// `warn` is called once.
class CandidateReader {
 public:
  CandidateReader(const fs::path& candidates, const fs::path& flow_dir,
                  std::function<void(const std::string&)> warn = {});

  // Throws InputError for malformed lines or missing flow files, and
  // DimensionMismatch when a frame's size differs from the first frame's.
  bool next(SequenceFrame& out);
  std::uint64_t frames_read() const { return frames_read_; }
  std::uint64_t line_number() const { return lines_.line_number(); }

 private:
  LineReader lines_;
  fs::path flow_dir_;
  bool have_flow_dir_;
  std::uint32_t width_ = 0;
  std::uint32_t height_ = 0;
  std::optional<std::int64_t> last_frame_;
  std::uint64_t frames_read_ = 0;
};

MaskFrame load_mask_frame(const fs::path& path);
std::vector<MaskFrame> load_mask_frames(const fs::path& path);

// --- simulator output --------------------------------------------------------

struct SimFiles {
  static constexpr const char* kCandidates = "candidates.jsonl";
  static constexpr const char* kGroundTruth = "gt.jsonl";
  static constexpr const char* kFirstFrame = "first_frame.json";
  static constexpr const char* kScene = "scene.json";
  static constexpr const char* kFlowDir = "flow";
};

struct SimInventory {
  std::uint64_t frames = 0;
  std::uint64_t candidates = 0;
  std::uint64_t false_positives = 0;
  std::uint64_t flow_files = 0;
  std::vector<fs::path> files;  // top-level files written
};

// Writes candidates.jsonl, gt.jsonl, first_frame.json, scene.json and one
// flow/NNNNNN.ovsf per frame with nonzero flow. Frames are generated and
// written one at a time.
SimInventory write_sim_dir(const SceneSpec& spec, const fs::path& dir);

std::string flow_file_name(std::int64_t frame);

// Reads a simulator directory fully into memory.
EvalSequence load_sequence(const fs::path& dir);

}  // namespace ovslink::io
