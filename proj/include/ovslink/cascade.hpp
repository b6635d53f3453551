#pragma once

// Single forward-pass association of per-frame candidate masks to tracked
// instances.
//
// Every frame, each live instance (ascending id) warps its previous mask with
// the frame's backward flow and then tries, in order:
//   IOU   the unclaimed candidate with the largest IoU against the warped
//         mask, if that IoU is > rho_iou; its embedding joins the gallery.
//   REID  the unclaimed candidate with the smallest minimum gallery distance
//         among those passing the quorum rule (distance < rho_reid for at
//         least `quorum` of the gallery).
//   FLOW  the warped mask itself, passed through the refiner.
// A candidate claimed by one instance is unavailable to later instances in
// the same frame. Instances never die.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ovslink/flow.hpp"
#include "ovslink/mask.hpp"
#include "ovslink/reid.hpp"

namespace ovslink {

struct Candidate {
  Box box;
  double score = 0.0;
  BitMask mask;
  Embedding embedding;
};

// Box within `tolerance_px` of the mask's bounding region on every side.
// Empty masks are always consistent.
bool box_consistent(const Candidate& c, double tolerance_px = 2.0);

enum class Path { Iou, Reid, Flow };

std::string_view to_string(Path path);
std::optional<Path> parse_path(std::string_view text);

struct CascadeConfig {
  double rho_reid = kDefaultRhoReid;
  double rho_iou = 0.3;
  double quorum = kDefaultQuorum;
  double score_thresh = kDefaultScoreThresh;
  double nms_iou = kDefaultNmsIou;
  std::size_t gallery_capacity = kDefaultGalleryCapacity;
  bool reid_path_enabled = true;
  bool append_on_reid = true;

  // Throws std::invalid_argument for out-of-range values.
  void validate() const;
  bool operator==(const CascadeConfig&) const = default;
};

struct InstanceState {
  InstanceId id;
  BitMask last_mask;
  Gallery gallery;
  std::uint32_t missing_streak = 0;
  bool alive = true;
};

struct InstanceResult {
  InstanceId id = 0;
  BitMask mask;
  Path path = Path::Flow;
  std::optional<std::size_t> matched_candidate;  // index into the frame input
  // IoU on the IOU path, minimum gallery distance on the REID path.
  std::optional<double> match_value;

  bool operator==(const InstanceResult&) const = default;
};

struct FrameResult {
  std::int64_t frame_id = 0;
  std::vector<InstanceResult> instances;  // ascending id

  bool operator==(const FrameResult&) const = default;
};

struct RefineContext {
  std::int64_t frame_id;
  InstanceId instance;
  std::uint32_t frame_width;
  std::uint32_t frame_height;
};

// Flow-path hook: receives the warped mask and its box expanded by 20%.
using Refiner =
    std::function<BitMask(const BitMask&, const Box&, const RefineContext&)>;

Refiner identity_refiner();
Refiner closing_refiner(std::uint32_t radius = 1);

class CascadeEngine {
 public:
  explicit CascadeEngine(CascadeConfig config = {});

  // Creates one instance per mask and seeds each gallery from the candidate
  // with the highest IoU against its mask (if > rho_iou). When two instances
  // want the same candidate the higher IoU wins and the other stays unseeded.
  // Returns the result for the first frame: the given masks, path IOU when
  // seeded and FLOW otherwise.
  FrameResult init(std::int64_t frame_id,
                   const std::map<InstanceId, BitMask>& first_masks,
                   std::span<const Candidate> candidates);

  FrameResult step(std::int64_t frame_id, std::span<const Candidate> candidates,
                   const FlowField& flow);
  // Same as step() with identity flow.
  FrameResult step(std::int64_t frame_id, std::span<const Candidate> candidates);

  void set_refiner(Refiner refiner);

  bool initialized() const { return initialized_; }
  const CascadeConfig& config() const { return config_; }
  const std::vector<InstanceState>& instances() const { return instances_; }
  std::uint32_t frame_width() const { return width_; }
  std::uint32_t frame_height() const { return height_; }
  // Frames consumed by init() + step().
  std::uint64_t frames_processed() const { return frames_processed_; }

 private:
  FrameResult associate(std::int64_t frame_id,
                        std::span<const Candidate> candidates,
                        const FlowField* flow);
  void check_candidates(std::span<const Candidate> candidates) const;
  std::vector<std::size_t> filter(std::span<const Candidate> candidates);

  CascadeConfig config_;
  Refiner refiner_;
  std::vector<InstanceState> instances_;
  std::uint32_t width_ = 0;
  std::uint32_t height_ = 0;
  bool initialized_ = false;
  std::uint64_t frames_processed_ = 0;
  // Per-frame scratch, reused to keep steady-state allocations flat.
  std::vector<ScoredBox> scored_;
  std::vector<bool> claimed_;
};

struct SequenceFrame {
  std::int64_t frame_id = 0;
  std::vector<Candidate> candidates;
  std::optional<FlowField> flow;  // absent = identity
};

// Pulls the next frame into `out`; returns false at end of stream.
using FrameSource = std::function<bool(SequenceFrame& out)>;
using ResultSink = std::function<void(const FrameResult&, double latency_us)>;

struct StreamStats {
  std::uint64_t frames = 0;
  double total_us = 0.0;
  double max_us = 0.0;
};

// Feeds every frame to the engine exactly once, in order. The first frame
// initialises the engine (its flow is ignored). Latency covers association
// only.
StreamStats run_stream(CascadeEngine& engine,
                       const std::map<InstanceId, BitMask>& first_masks,
                       const FrameSource& source, const ResultSink& sink);

struct SequenceRun {
  std::vector<FrameResult> results;
  std::vector<double> latencies_us;
};

SequenceRun run_sequence(const std::map<InstanceId, BitMask>& first_masks,
                         const FrameSource& source, const CascadeConfig& config,
                         Refiner refiner = {});
SequenceRun run_sequence(const std::map<InstanceId, BitMask>& first_masks,
                         std::span<const SequenceFrame> frames,
                         const CascadeConfig& config, Refiner refiner = {});

// Adapts an in-memory frame list to a FrameSource.
FrameSource frames_from(std::span<const SequenceFrame> frames);

}  // namespace ovslink
