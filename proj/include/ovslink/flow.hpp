#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "ovslink/mask.hpp"

namespace ovslink {

// Dense backward flow: pixel (x, y) of the current frame corresponds to
// (x + dx, y + dy) in the previous frame. Storage is row-major.
class FlowField {
 public:
  FlowField() = default;
  // Throws std::invalid_argument on size mismatch or non-finite entries.
  FlowField(std::uint32_t width, std::uint32_t height, std::vector<float> dx,
            std::vector<float> dy);

  std::uint32_t width() const { return width_; }
  std::uint32_t height() const { return height_; }
  std::span<const float> dx() const { return dx_; }
  std::span<const float> dy() const { return dy_; }
  float dx(std::uint32_t x, std::uint32_t y) const {
    return dx_[std::size_t{y} * width_ + x];
  }
  float dy(std::uint32_t x, std::uint32_t y) const {
    return dy_[std::size_t{y} * width_ + x];
  }

  // Largest |dx| and |dy| over the field; bounds how far warping can move
  // foreground.
  float max_abs_dx() const { return max_abs_dx_; }
  float max_abs_dy() const { return max_abs_dy_; }
  bool is_zero() const { return max_abs_dx_ == 0.0f && max_abs_dy_ == 0.0f; }

  bool operator==(const FlowField& other) const {
    return width_ == other.width_ && height_ == other.height_ &&
           dx_ == other.dx_ && dy_ == other.dy_;
  }

 private:
  std::uint32_t width_ = 0;
  std::uint32_t height_ = 0;
  std::vector<float> dx_;
  std::vector<float> dy_;
  float max_abs_dx_ = 0.0f;
  float max_abs_dy_ = 0.0f;
};

FlowField compose_identity(std::uint32_t width, std::uint32_t height);

// Backward nearest-neighbour warp: output pixel (x, y) copies prev at
// (floor(x + dx + 0.5), floor(y + dy + 0.5)); samples outside the frame are
// background. Throws DimensionMismatch when sizes differ.
BitMask warp_mask(const BitMask& prev, const FlowField& flow);

// "OVSF" magic, u32 width, u32 height, then width*height (dx, dy) float32
// pairs, row-major, all little-endian.
void write_flow(std::ostream& out, const FlowField& flow);
FlowField read_flow(std::istream& in);  // throws InputError
void save_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField load_flow(const std::filesystem::path& path);

}  // namespace ovslink
