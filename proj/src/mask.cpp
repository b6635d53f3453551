#include "ovslink/mask.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "ovslink/errors.hpp"

namespace ovslink {
namespace {

std::uint64_t checked_pixel_count(std::uint32_t width, std::uint32_t height) {
  const std::uint64_t n = std::uint64_t{width} * height;
  if (n > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("mask too large: " + std::to_string(width) +
                                "x" + std::to_string(height));
  }
  return n;
}

// Separable square filter over a row-major buffer. `dilate` takes the max of
// the window, otherwise the min; out-of-frame samples read as `outside`.
std::vector<std::uint8_t> square_filter(const std::vector<std::uint8_t>& src,
                                        std::uint32_t w, std::uint32_t h,
                                        std::int32_t r, bool dilate,
                                        std::uint8_t outside) {
  auto pass = [&](const std::vector<std::uint8_t>& in, bool horizontal) {
    std::vector<std::uint8_t> out(in.size());
    for (std::uint32_t y = 0; y < h; ++y) {
      for (std::uint32_t x = 0; x < w; ++x) {
        std::uint8_t acc = dilate ? 0 : 1;
        for (std::int32_t d = -r; d <= r; ++d) {
          const std::int64_t sx = horizontal ? std::int64_t{x} + d : x;
          const std::int64_t sy = horizontal ? y : std::int64_t{y} + d;
          std::uint8_t v = outside;
          if (sx >= 0 && sy >= 0 && sx < w && sy < h) {
            v = in[static_cast<std::size_t>(sy) * w + sx] ? 1 : 0;
          }
          acc = dilate ? std::max(acc, v) : std::min(acc, v);
        }
        out[static_cast<std::size_t>(y) * w + x] = acc;
      }
    }
    return out;
  };
  return pass(pass(src, true), false);
}

}  // namespace

BitMask::BitMask(std::uint32_t width, std::uint32_t height)
    : width_(width), height_(height) {
  const auto n = checked_pixel_count(width, height);
  if (n > 0) runs_.push_back(static_cast<std::uint32_t>(n));
}

BitMask BitMask::from_runs(std::uint32_t width, std::uint32_t height,
                           std::span<const std::uint32_t> runs) {
  const auto n = checked_pixel_count(width, height);
  const std::uint64_t total =
      std::accumulate(runs.begin(), runs.end(), std::uint64_t{0});
  if (total != n) {
    throw std::invalid_argument("RLE runs sum to " + std::to_string(total) +
                                ", expected " + std::to_string(n));
  }
  RleBuilder builder(width, height);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    builder.append(i % 2 == 1, runs[i]);
  }
  return std::move(builder).finish();
}

BitMask BitMask::from_dense(std::uint32_t width, std::uint32_t height,
                            std::span<const std::uint8_t> pixels) {
  const auto n = checked_pixel_count(width, height);
  if (pixels.size() != n) {
    throw std::invalid_argument("dense mask has " +
                                std::to_string(pixels.size()) +
                                " pixels, expected " + std::to_string(n));
  }
  RleBuilder builder(width, height);
  for (std::uint32_t x = 0; x < width; ++x) {
    for (std::uint32_t y = 0; y < height; ++y) {
      builder.append(pixels[static_cast<std::size_t>(y) * width + x] != 0);
    }
  }
  return std::move(builder).finish();
}

BitMask BitMask::from_rect(std::uint32_t width, std::uint32_t height,
                           const PixelRect& rect) {
  const std::int64_t x0 = std::clamp<std::int64_t>(rect.x0, 0, width);
  const std::int64_t x1 = std::clamp<std::int64_t>(rect.x1, x0, width);
  const std::int64_t y0 = std::clamp<std::int64_t>(rect.y0, 0, height);
  const std::int64_t y1 = std::clamp<std::int64_t>(rect.y1, y0, height);
  RleBuilder builder(width, height);
  builder.append(false, static_cast<std::uint64_t>(x0) * height);
  for (std::int64_t x = x0; x < x1; ++x) {
    builder.append(false, y0);
    builder.append(true, y1 - y0);
    builder.append(false, height - y1);
  }
  builder.append(false, static_cast<std::uint64_t>(width - x1) * height);
  return std::move(builder).finish();
}

void BitMask::finalize() {
  area_ = 0;
  bounds_.reset();
  if (height_ == 0) return;
  std::uint64_t pos = 0;
  std::int32_t x0 = std::numeric_limits<std::int32_t>::max();
  std::int32_t y0 = x0;
  std::int32_t x1 = -1;
  std::int32_t y1 = -1;
  for (std::size_t i = 0; i < runs_.size(); ++i) {
    const std::uint64_t len = runs_[i];
    if (i % 2 == 1 && len > 0) {
      area_ += len;
      const auto first = pos;
      const auto last = pos + len - 1;
      const auto cx0 = static_cast<std::int32_t>(first / height_);
      const auto cx1 = static_cast<std::int32_t>(last / height_);
      x0 = std::min(x0, cx0);
      x1 = std::max(x1, cx1);
      if (cx0 == cx1) {
        y0 = std::min(y0, static_cast<std::int32_t>(first % height_));
        y1 = std::max(y1, static_cast<std::int32_t>(last % height_));
      } else {
        y0 = 0;
        y1 = static_cast<std::int32_t>(height_) - 1;
      }
    }
    pos += len;
  }
  if (area_ > 0) bounds_ = PixelRect{x0, y0, x1 + 1, y1 + 1};
}

Box BitMask::bounding_box() const {
  if (!bounds_) return Box{};
  return Box{static_cast<double>(bounds_->x0), static_cast<double>(bounds_->y0),
             static_cast<double>(bounds_->x1),
             static_cast<double>(bounds_->y1)};
}

bool BitMask::at(std::uint32_t x, std::uint32_t y) const {
  if (x >= width_ || y >= height_) return false;
  const std::uint64_t target = std::uint64_t{x} * height_ + y;
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < runs_.size(); ++i) {
    pos += runs_[i];
    if (target < pos) return i % 2 == 1;
  }
  return false;
}

std::vector<std::uint8_t> BitMask::to_dense() const {
  std::vector<std::uint8_t> out(std::size_t{width_} * height_, 0);
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < runs_.size(); ++i) {
    if (i % 2 == 1) {
      for (std::uint64_t p = pos; p < pos + runs_[i]; ++p) {
        const auto x = p / height_;
        const auto y = p % height_;
        out[y * width_ + x] = 1;
      }
    }
    pos += runs_[i];
  }
  return out;
}

RleBuilder::RleBuilder(std::uint32_t width, std::uint32_t height) {
  checked_pixel_count(width, height);
  mask_.width_ = width;
  mask_.height_ = height;
}

void RleBuilder::append(bool value, std::uint64_t count) {
  if (count == 0) return;
  if (value != current_) {
    mask_.runs_.push_back(static_cast<std::uint32_t>(pending_));
    current_ = value;
    pending_ = 0;
  }
  pending_ += count;
  written_ += count;
}

BitMask RleBuilder::finish() && {
  const std::uint64_t expected = std::uint64_t{mask_.width_} * mask_.height_;
  if (written_ != expected) {
    throw std::logic_error("RleBuilder wrote " + std::to_string(written_) +
                           " of " + std::to_string(expected) + " pixels");
  }
  if (pending_ > 0) mask_.runs_.push_back(static_cast<std::uint32_t>(pending_));
  mask_.finalize();
  return std::move(mask_);
}

std::uint64_t intersection_area(const BitMask& a, const BitMask& b) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch("mask size mismatch: " + std::to_string(a.width()) +
                            "x" + std::to_string(a.height()) + " vs " +
                            std::to_string(b.width()) + "x" +
                            std::to_string(b.height()));
  }
  const auto& ra = a.runs();
  const auto& rb = b.runs();
  if (ra.empty() || rb.empty()) return 0;
  std::uint64_t inter = 0;
  std::size_t ia = 0;
  std::size_t ib = 0;
  std::uint64_t ca = ra[0];
  std::uint64_t cb = rb[0];
  bool va = false;
  bool vb = false;
  while (true) {
    const std::uint64_t step = std::min(ca, cb);
    if (va && vb) inter += step;
    ca -= step;
    cb -= step;
    if (ca == 0) {
      if (++ia == ra.size()) break;
      ca = ra[ia];
      va = !va;
    }
    if (cb == 0) {
      if (++ib == rb.size()) break;
      cb = rb[ib];
      vb = !vb;
    }
  }
  return inter;
}

double mask_iou(const BitMask& a, const BitMask& b) {
  if (!a.same_shape(b)) {
    // intersection_area raises the detailed error.
    intersection_area(a, b);
  }
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  const auto& ba = *a.bounds();
  const auto& bb = *b.bounds();
  if (ba.x1 <= bb.x0 || bb.x1 <= ba.x0 || ba.y1 <= bb.y0 || bb.y1 <= ba.y0) {
    return 0.0;
  }
  const std::uint64_t inter = intersection_area(a, b);
  const std::uint64_t uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double box_iou(const Box& a, const Box& b) {
  const double iw =
      std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih =
      std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

std::vector<std::size_t> nms(std::span<const ScoredBox> candidates,
                             double score_thresh, double iou_thresh) {
  std::vector<std::size_t> order;
  order.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].score > score_thresh) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t l, std::size_t r) {
                     return candidates[l].score > candidates[r].score;
                   });
  std::vector<bool> suppressed(order.size(), false);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (suppressed[i]) continue;
    keep.push_back(order[i]);
    const Box& kept = candidates[order[i]].box;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (!suppressed[j] &&
          box_iou(kept, candidates[order[j]].box) > iou_thresh) {
        suppressed[j] = true;
      }
    }
  }
  return keep;
}

Box expand_box(const Box& box, double factor, double frame_width,
               double frame_height) {
  const double dx = 0.5 * factor * box.width();
  const double dy = 0.5 * factor * box.height();
  return Box{std::clamp(box.x_min - dx, 0.0, frame_width),
             std::clamp(box.y_min - dy, 0.0, frame_height),
             std::clamp(box.x_max + dx, 0.0, frame_width),
             std::clamp(box.y_max + dy, 0.0, frame_height)};
}

PixelRect pixel_cover(const Box& box) {
  return PixelRect{static_cast<std::int32_t>(std::floor(box.x_min)),
                   static_cast<std::int32_t>(std::floor(box.y_min)),
                   static_cast<std::int32_t>(std::ceil(box.x_max)),
                   static_cast<std::int32_t>(std::ceil(box.y_max))};
}

AttentionMap pad_mask_region(const BitMask& mask, const Box& inner,
                             const Box& outer, double fill) {
  if (!inner.valid() || !outer.valid() || !outer.contains(inner)) {
    throw std::invalid_argument("inner box is not contained in outer box");
  }
  AttentionMap map;
  map.region = pixel_cover(outer);
  const PixelRect in = pixel_cover(inner);
  const auto dense = mask.to_dense();
  map.values.assign(static_cast<std::size_t>(map.region.width()) *
                        map.region.height(),
                    static_cast<float>(fill));
  const auto mw = static_cast<std::int32_t>(mask.width());
  const auto mh = static_cast<std::int32_t>(mask.height());
  for (std::int32_t y = in.y0; y < in.y1; ++y) {
    for (std::int32_t x = in.x0; x < in.x1; ++x) {
      // Inner cells outside the frame read as background.
      const bool inside = x >= 0 && y >= 0 && x < mw && y < mh;
      const bool fg =
          inside && dense[static_cast<std::size_t>(y) * mask.width() + x];
      map.values[static_cast<std::size_t>(y - map.region.y0) *
                     map.region.width() +
                 (x - map.region.x0)] = fg ? 1.0f : 0.0f;
    }
  }
  return map;
}

PixelRect clip_to_frame(const PixelRect& rect, std::uint32_t width,
                        std::uint32_t height) {
  const auto w = static_cast<std::int32_t>(width);
  const auto h = static_cast<std::int32_t>(height);
  PixelRect r{std::clamp(rect.x0, 0, w), std::clamp(rect.y0, 0, h),
              std::clamp(rect.x1, 0, w), std::clamp(rect.y1, 0, h)};
  r.x1 = std::max(r.x1, r.x0);
  r.y1 = std::max(r.y1, r.y0);
  return r;
}

std::vector<std::uint8_t> decode_region(const BitMask& mask,
                                        const PixelRect& rect) {
  const auto rw = static_cast<std::int64_t>(std::max(rect.width(), 0));
  const auto rh = static_cast<std::int64_t>(std::max(rect.height(), 0));
  std::vector<std::uint8_t> out(static_cast<std::size_t>(rw * rh), 0);
  if (out.empty() || mask.empty()) return out;
  const std::uint64_t h = mask.height();
  const auto& runs = mask.runs();
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::uint64_t end = pos + runs[i];
    if (i % 2 == 1) {
      // Walk the run column by column, clipped to the rect.
      std::uint64_t p = pos;
      while (p < end) {
        const auto x = static_cast<std::int64_t>(p / h);
        const auto y_start = static_cast<std::int64_t>(p % h);
        const std::uint64_t col_end = std::min<std::uint64_t>(
            end, static_cast<std::uint64_t>(x + 1) * h);
        const auto y_stop = y_start + static_cast<std::int64_t>(col_end - p);
        if (x >= rect.x0 && x < rect.x1) {
          const std::int64_t lo = std::max<std::int64_t>(y_start, rect.y0);
          const std::int64_t hi = std::min<std::int64_t>(y_stop, rect.y1);
          for (std::int64_t y = lo; y < hi; ++y) {
            out[static_cast<std::size_t>((y - rect.y0) * rw + (x - rect.x0))] = 1;
          }
        }
        p = col_end;
      }
    }
    pos = end;
  }
  return out;
}

BitMask encode_region(std::uint32_t width, std::uint32_t height,
                      const PixelRect& rect,
                      std::span<const std::uint8_t> pixels) {
  const PixelRect r = clip_to_frame(rect, width, height);
  if (r != rect) throw std::invalid_argument("region extends past the frame");
  const auto rw = static_cast<std::uint64_t>(r.width());
  const auto rh = static_cast<std::uint64_t>(r.height());
  if (pixels.size() != rw * rh) {
    throw std::invalid_argument("region pixel count mismatch");
  }
  RleBuilder builder(width, height);
  builder.append(false, static_cast<std::uint64_t>(r.x0) * height);
  for (std::uint64_t x = 0; x < rw; ++x) {
    builder.append(false, static_cast<std::uint64_t>(r.y0));
    for (std::uint64_t y = 0; y < rh; ++y) {
      builder.append(pixels[y * rw + x] != 0);
    }
    builder.append(false, height - static_cast<std::uint64_t>(r.y1));
  }
  builder.append(false, static_cast<std::uint64_t>(width - r.x1) * height);
  return std::move(builder).finish();
}

BitMask morphological_close(const BitMask& mask, std::uint32_t radius) {
  if (radius == 0 || mask.empty()) return mask;
  const auto w = mask.width();
  const auto h = mask.height();
  const auto r = static_cast<std::int32_t>(radius);
  auto dense = mask.to_dense();
  dense = square_filter(dense, w, h, r, /*dilate=*/true, /*outside=*/0);
  dense = square_filter(dense, w, h, r, /*dilate=*/false, /*outside=*/1);
  return BitMask::from_dense(w, h, dense);
}

}  // namespace ovslink
