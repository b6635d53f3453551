#pragma once

// Region (J) and contour (F) accuracy for instance masks, sequence scoring,
// and a parameter sweep over the association thresholds.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ovslink/cascade.hpp"
#include "ovslink/mask.hpp"

namespace ovslink {

// mask_iou under another name; 1.0 when both masks are empty.
double jaccard(const BitMask& pred, const BitMask& gt);

// ceil(0.0075 * frame diagonal).
std::uint32_t default_tolerance(std::uint32_t width, std::uint32_t height);

// Boundary F-measure. A boundary pixel is a foreground pixel with a 4-neighbour
// in the background or on the frame edge. A pred boundary pixel counts as
// precise when some gt boundary pixel lies within `tolerance_px` in Chebyshev
// distance; recall is the same with the roles swapped.
double contour_f(const BitMask& pred, const BitMask& gt,
                 std::uint32_t tolerance_px);
double contour_f(const BitMask& pred, const BitMask& gt);

// One line of a ground-truth or prediction file.
struct MaskFrame {
  std::int64_t frame = 0;
  std::map<InstanceId, BitMask> masks;

  bool operator==(const MaskFrame&) const = default;
};

MaskFrame to_mask_frame(const FrameResult& result);

struct InstanceScore {
  InstanceId id = 0;
  double j = 0.0;
  double f = 0.0;
  std::uint64_t frames = 0;
};

struct SequenceScore {
  std::vector<InstanceScore> instances;  // ascending id
  double j_mean = 0.0;
  double f_mean = 0.0;
  double g_mean = 0.0;
};

// Accumulates per-instance sums frame by frame. The first frame added is the
// given annotation and is checked but not scored.
class SequenceScorer {
 public:
  // nullopt tolerance = default_tolerance() of each frame's size.
  explicit SequenceScorer(std::optional<std::uint32_t> tolerance = std::nullopt);

  // Throws ConsistencyError when frame ids or instance ids differ, and
  // DimensionMismatch for masks of different sizes.
  void add(const MaskFrame& pred, const MaskFrame& gt);

  std::uint64_t frames_seen() const { return frames_seen_; }
  // Throws ConsistencyError when no frame was scored.
  SequenceScore finish() const;

 private:
  struct Sums {
    double j = 0.0;
    double f = 0.0;
    std::uint64_t n = 0;
  };
  std::optional<std::uint32_t> tolerance_;
  std::map<InstanceId, Sums> sums_;
  std::uint64_t frames_seen_ = 0;
};

SequenceScore score_sequence(std::span<const MaskFrame> pred,
                             std::span<const MaskFrame> gt,
                             std::optional<std::uint32_t> tolerance = std::nullopt);

// Pools the instances of several sequences and averages them unweighted.
SequenceScore aggregate(std::span<const SequenceScore> scores);

// Everything needed to run and score one sequence in memory.
struct EvalSequence {
  std::string name;
  std::map<InstanceId, BitMask> first_masks;
  std::vector<SequenceFrame> frames;
  std::vector<MaskFrame> truth;  // parallel to frames
};

SequenceScore evaluate(const EvalSequence& seq, const CascadeConfig& config,
                       std::optional<std::uint32_t> tolerance = std::nullopt);

struct AblationRow {
  std::string label;
  CascadeConfig config;
  double j = 0.0;
  double f = 0.0;
  double g = 0.0;
};

// "rho_reid=2.3;rho_iou=0.3;reid=on"
std::string config_label(const CascadeConfig& config);

// Every (config, sequence) pair on up to `threads` workers (0 = hardware
// concurrency). Rows come back sorted by descending G; equal G keeps grid
// order. Results do not depend on the thread count.
std::vector<AblationRow> ablation_sweep(std::span<const EvalSequence> sequences,
                                        std::span<const CascadeConfig> grid,
                                        std::size_t threads = 0);

// Header "config,J,F,G", values with 6 decimals.
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

}  // namespace ovslink
