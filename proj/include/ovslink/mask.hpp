#pragma once

// Binary masks and boxes.
//
// BitMask stores a run-length encoding in column-major order, starting with a
// (possibly empty) run of background pixels, the same layout COCO mask tools
// use. Masks are immutable once built; area and pixel bounds are computed at
// construction so IoU can reject disjoint pairs without touching the runs.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ovslink {

struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min <= x_max && y_min <= y_max; }
  bool contains(const Box& other) const {
    return other.x_min >= x_min && other.y_min >= y_min &&
           other.x_max <= x_max && other.y_max <= y_max;
  }
  bool operator==(const Box&) const = default;
};

struct ScoredBox {
  Box box;
  double score = 0.0;
};

// Half-open integer pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  std::int32_t x0 = 0;
  std::int32_t y0 = 0;
  std::int32_t x1 = 0;
  std::int32_t y1 = 0;

  std::int32_t width() const { return x1 - x0; }
  std::int32_t height() const { return y1 - y0; }
  bool operator==(const PixelRect&) const = default;
};

class BitMask {
 public:
  BitMask() = default;
  // All-background mask.
  BitMask(std::uint32_t width, std::uint32_t height);

  // Validates that the runs cover width*height pixels. Zero-length runs after
  // the first are merged away so equal masks always compare equal.
  static BitMask from_runs(std::uint32_t width, std::uint32_t height,
                           std::span<const std::uint32_t> runs);
  // `pixels` is row-major, nonzero = foreground.
  static BitMask from_dense(std::uint32_t width, std::uint32_t height,
                            std::span<const std::uint8_t> pixels);
  static BitMask from_rect(std::uint32_t width, std::uint32_t height,
                           const PixelRect& rect);

  std::uint32_t width() const { return width_; }
  std::uint32_t height() const { return height_; }
  const std::vector<std::uint32_t>& runs() const { return runs_; }
  std::uint64_t area() const { return area_; }
  bool empty() const { return area_ == 0; }
  // Tight pixel bounds of the foreground; nullopt for an empty mask.
  const std::optional<PixelRect>& bounds() const { return bounds_; }
  // Continuous-coordinate box around the foreground pixels.
  Box bounding_box() const;

  bool at(std::uint32_t x, std::uint32_t y) const;
  std::vector<std::uint8_t> to_dense() const;

  bool same_shape(const BitMask& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }
  bool operator==(const BitMask& other) const {
    return width_ == other.width_ && height_ == other.height_ &&
           runs_ == other.runs_;
  }

 private:
  friend class RleBuilder;
  void finalize();

  std::uint32_t width_ = 0;
  std::uint32_t height_ = 0;
  std::vector<std::uint32_t> runs_;
  std::uint64_t area_ = 0;
  std::optional<PixelRect> bounds_;
};

// Appends pixels in column-major order and produces a canonical BitMask.
class RleBuilder {
 public:
  RleBuilder(std::uint32_t width, std::uint32_t height);

  void append(bool value, std::uint64_t count = 1);
  BitMask finish() &&;

 private:
  BitMask mask_;
  bool current_ = false;
  std::uint64_t pending_ = 0;
  std::uint64_t written_ = 0;
};

// Intersection over union; 1.0 when both masks are empty.
double mask_iou(const BitMask& a, const BitMask& b);
std::uint64_t intersection_area(const BitMask& a, const BitMask& b);

double box_iou(const Box& a, const Box& b);

inline constexpr double kDefaultScoreThresh = 0.05;
inline constexpr double kDefaultNmsIou = 0.6;

// Greedy NMS. Drops scores <= score_thresh, then suppresses any box whose IoU
// with an already kept box exceeds iou_thresh. Returns indices into
// `candidates` by descending score, equal scores ordered by index.
std::vector<std::size_t> nms(std::span<const ScoredBox> candidates,
                             double score_thresh = kDefaultScoreThresh,
                             double iou_thresh = kDefaultNmsIou);

inline constexpr double kDefaultExpandFactor = 0.20;

// Grows width and height by `factor` about the center, then clips to the
// frame.
Box expand_box(const Box& box, double factor, double frame_width,
               double frame_height);

// Dense float map over the pixel cells covered by `outer`, row-major.
struct AttentionMap {
  PixelRect region;
  std::vector<float> values;

  float at(std::int32_t x, std::int32_t y) const {
    return values[static_cast<std::size_t>(y - region.y0) * region.width() +
                  (x - region.x0)];
  }
};

inline constexpr double kDefaultAttentionFill = 0.5;

// Mask values inside `inner`, constant `fill` in the ring outer minus inner.
// A box covers pixel cells [floor(min), ceil(max)). Throws
// std::invalid_argument when inner is not inside outer.
AttentionMap pad_mask_region(const BitMask& mask, const Box& inner,
                             const Box& outer,
                             double fill = kDefaultAttentionFill);

PixelRect pixel_cover(const Box& box);

// Row-major pixels of `rect`; cells outside the frame read as background.
std::vector<std::uint8_t> decode_region(const BitMask& mask,
                                        const PixelRect& rect);
// Mask whose foreground is `pixels` (row-major over `rect`), background
// elsewhere.
BitMask encode_region(std::uint32_t width, std::uint32_t height,
                      const PixelRect& rect,
                      std::span<const std::uint8_t> pixels);
PixelRect clip_to_frame(const PixelRect& rect, std::uint32_t width,
                        std::uint32_t height);

// Dilation followed by erosion with a (2r+1)x(2r+1) square. Erosion treats
// out-of-frame pixels as foreground, so the result always contains the input.
BitMask morphological_close(const BitMask& mask, std::uint32_t radius = 1);

}  // namespace ovslink
