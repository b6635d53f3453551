#pragma once

// Synthetic scenes with exact ground truth.
//
// Objects are rectangles or ellipses moving along piecewise-linear waypoint
// tracks, with positions rounded to whole pixels so that ground-truth flow is
// exact. Occlusion is resolved by depth (lower depth is nearer the camera).
// The detector model turns each sufficiently visible object into a jittered
// candidate with an embedding drawn around a per-object centroid, drops some
// detections, and adds background clutter.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ovslink/cascade.hpp"
#include "ovslink/flow.hpp"
#include "ovslink/mask.hpp"
#include "ovslink/reid.hpp"
#include "ovslink/rng.hpp"

namespace ovslink {

enum class Shape { Rectangle, Ellipse };

std::string_view to_string(Shape shape);
std::optional<Shape> parse_shape(std::string_view text);

// Top-left corner of the object's box at frame t.
struct Waypoint {
  std::int64_t t = 0;
  double x = 0.0;
  double y = 0.0;
};

struct SceneObject {
  InstanceId id = 0;
  Shape shape = Shape::Rectangle;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<Waypoint> track;
  std::int32_t depth = 0;
};

// Embeddings are centroid + isotropic Gaussian noise in the 128-d embedding
// space. Centroids sit on distinct coordinate axes so every pair (including
// the clutter centroid) is exactly `centroid_spacing` apart. `noise_sigma` is
// the RMS norm of one noise draw (per-coordinate stddev sigma/sqrt(128)).
struct EmbeddingModel {
  double centroid_spacing = 3.0;
  double noise_sigma = 0.75;
};

struct DetectorModel {
  double miss_prob = 0.02;
  double fp_rate = 0.1;  // mean false positives per frame (Poisson)
  std::uint32_t jitter = 1;  // max per-edge dilation/erosion, pixels
  double score_min = 0.6;
  double score_max = 1.0;
  double fp_score_min = 0.06;
  double fp_score_max = 0.5;
  // Objects showing less than this fraction of their full area are treated
  // as occluded and produce no candidate.
  double min_visible_fraction = 0.25;
};

struct SceneSpec {
  std::string name = "custom";
  std::uint32_t width = 320;
  std::uint32_t height = 240;
  std::uint32_t frames = 60;
  std::vector<SceneObject> objects;
  EmbeddingModel embedding;
  DetectorModel detector;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument.
  void validate() const;
};

struct SimFrame {
  std::int64_t frame_id = 0;
  // One entry per object; empty mask when the object is not visible.
  std::map<InstanceId, BitMask> truth;
  std::map<InstanceId, double> visible_fraction;
  std::vector<Candidate> candidates;
  // Parallel to `candidates`; nullopt marks a false positive.
  std::vector<std::optional<InstanceId>> sources;
  // Backward flow to the previous frame; all zero on frame 0.
  FlowField flow;
};

// Streams frames one at a time; memory does not grow with sequence length.
class SceneGenerator {
 public:
  explicit SceneGenerator(SceneSpec spec);

  const SceneSpec& spec() const { return spec_; }
  bool next(SimFrame& out);

  // Integer top-left position of object `index` at frame t.
  std::pair<std::int64_t, std::int64_t> position(std::size_t index,
                                                 std::int64_t t) const;
  const Embedding& centroid(InstanceId id) const;
  const Embedding& clutter_centroid() const { return clutter_centroid_; }

 private:
  struct Sprite {
    std::vector<std::uint8_t> pixels;  // row-major, width x height
    std::uint64_t area = 0;
  };

  void render(std::int64_t t, std::vector<std::int32_t>& owner) const;
  Embedding draw_embedding(const Embedding& centre, Rng& rng) const;
  BitMask jitter(const BitMask& mask, Rng& rng) const;
  void add_clutter(SimFrame& out, Rng& rng) const;

  SceneSpec spec_;
  std::vector<Sprite> sprites_;
  std::vector<std::size_t> paint_order_;  // far to near
  std::map<InstanceId, Embedding> centroids_;
  Embedding clutter_centroid_;
  std::int64_t next_frame_ = 0;
  std::vector<std::int32_t> owner_;
};

struct SimSequence {
  SceneSpec spec;
  std::vector<SimFrame> frames;

  std::map<InstanceId, BitMask> first_masks() const;
  std::vector<SequenceFrame> sequence_frames() const;
};

SimSequence generate(const SceneSpec& spec);

// Overrides applied on top of a preset; unset fields keep preset values.
struct PresetOptions {
  std::optional<std::uint32_t> width;
  std::optional<std::uint32_t> height;
  std::optional<std::uint32_t> frames;
  std::optional<std::uint32_t> objects;  // crowd only
  std::optional<double> fp_rate;
  std::optional<double> noise_sigma;
};

// Canonical scenes:
//   crossing      two objects swap sides; the near one fully covers the far
//                 one for about ten frames.
//   exit-reenter  one object leaves through the right edge and comes back in
//                 from the left; a second object drifts elsewhere.
//   crowd         five wandering objects with 0.2 clutter detections/frame.
//   static        three fixed objects and a noiseless detector.
// Throws std::invalid_argument for an unknown name.
SceneSpec preset(std::string_view name, std::uint64_t seed = 0,
                 const PresetOptions& options = {});

const std::vector<std::string>& preset_names();

}  // namespace ovslink
