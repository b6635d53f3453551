#include "ovslink/flow.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "ovslink/errors.hpp"

namespace ovslink {
namespace {

constexpr std::array<char, 4> kMagic = {'O', 'V', 'S', 'F'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xff),
                                 static_cast<char>((v >> 8) & 0xff),
                                 static_cast<char>((v >> 16) & 0xff),
                                 static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), b.size());
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
         (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

std::int64_t round_half_up(double v) {
  return static_cast<std::int64_t>(std::floor(v + 0.5));
}

}  // namespace

FlowField::FlowField(std::uint32_t width, std::uint32_t height,
                     std::vector<float> dx, std::vector<float> dy)
    : width_(width), height_(height), dx_(std::move(dx)), dy_(std::move(dy)) {
  const std::size_t n = std::size_t{width} * height;
  if (dx_.size() != n || dy_.size() != n) {
    throw std::invalid_argument("flow field needs " + std::to_string(n) +
                                " entries per component");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(dx_[i]) || !std::isfinite(dy_[i])) {
      throw std::invalid_argument("flow field has a non-finite displacement");
    }
    max_abs_dx_ = std::max(max_abs_dx_, std::fabs(dx_[i]));
    max_abs_dy_ = std::max(max_abs_dy_, std::fabs(dy_[i]));
  }
}

FlowField compose_identity(std::uint32_t width, std::uint32_t height) {
  const std::size_t n = std::size_t{width} * height;
  return FlowField(width, height, std::vector<float>(n, 0.0f),
                   std::vector<float>(n, 0.0f));
}

BitMask warp_mask(const BitMask& prev, const FlowField& flow) {
  if (prev.width() != flow.width() || prev.height() != flow.height()) {
    throw DimensionMismatch(
        "flow is " + std::to_string(flow.width()) + "x" +
        std::to_string(flow.height()) + " but mask is " +
        std::to_string(prev.width()) + "x" + std::to_string(prev.height()));
  }
  if (prev.empty() || flow.is_zero()) return prev;

  const auto w = static_cast<std::int64_t>(prev.width());
  const auto h = static_cast<std::int64_t>(prev.height());
  const PixelRect src = *prev.bounds();

  // Only target pixels within max displacement of the source bounds can
  // sample foreground.
  const auto reach_x =
      static_cast<std::int64_t>(std::ceil(flow.max_abs_dx())) + 1;
  const auto reach_y =
      static_cast<std::int64_t>(std::ceil(flow.max_abs_dy())) + 1;
  const std::int64_t tx0 = std::max<std::int64_t>(0, src.x0 - reach_x);
  const std::int64_t tx1 = std::min<std::int64_t>(w, src.x1 + reach_x);
  const std::int64_t ty0 = std::max<std::int64_t>(0, src.y0 - reach_y);
  const std::int64_t ty1 = std::min<std::int64_t>(h, src.y1 + reach_y);

  // Source pixels, column-major within the source bounds.
  const std::int64_t sw = src.width();
  const std::int64_t sh = src.height();
  std::vector<std::uint8_t> source(static_cast<std::size_t>(sw * sh), 0);
  {
    std::uint64_t pos = 0;
    const auto& runs = prev.runs();
    for (std::size_t i = 0; i < runs.size(); ++i) {
      if (i % 2 == 1) {
        for (std::uint64_t p = pos; p < pos + runs[i]; ++p) {
          const auto x = static_cast<std::int64_t>(p / h) - src.x0;
          const auto y = static_cast<std::int64_t>(p % h) - src.y0;
          source[static_cast<std::size_t>(x * sh + y)] = 1;
        }
      }
      pos += runs[i];
    }
  }

  // Target pixels, column-major within the target window.
  const std::int64_t tw = tx1 - tx0;
  const std::int64_t th = ty1 - ty0;
  std::vector<std::uint8_t> target(static_cast<std::size_t>(tw * th), 0);
  const auto dx = flow.dx();
  const auto dy = flow.dy();
  for (std::int64_t y = ty0; y < ty1; ++y) {
    const std::size_t row = static_cast<std::size_t>(y * w);
    for (std::int64_t x = tx0; x < tx1; ++x) {
      const std::int64_t sx = round_half_up(static_cast<double>(x) + dx[row + x]);
      const std::int64_t sy = round_half_up(static_cast<double>(y) + dy[row + x]);
      if (sx < src.x0 || sx >= src.x1 || sy < src.y0 || sy >= src.y1) continue;
      if (source[static_cast<std::size_t>((sx - src.x0) * sh + (sy - src.y0))]) {
        target[static_cast<std::size_t>((x - tx0) * th + (y - ty0))] = 1;
      }
    }
  }

  RleBuilder builder(prev.width(), prev.height());
  builder.append(false, static_cast<std::uint64_t>(tx0 * h));
  for (std::int64_t x = 0; x < tw; ++x) {
    builder.append(false, static_cast<std::uint64_t>(ty0));
    const std::uint8_t* col = target.data() + x * th;
    for (std::int64_t y = 0; y < th; ++y) builder.append(col[y] != 0);
    builder.append(false, static_cast<std::uint64_t>(h - ty1));
  }
  builder.append(false, static_cast<std::uint64_t>((w - tx1) * h));
  return std::move(builder).finish();
}

void write_flow(std::ostream& out, const FlowField& flow) {
  static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, flow.width());
  put_u32(out, flow.height());
  const auto dx = flow.dx();
  const auto dy = flow.dy();
  std::vector<char> buf(dx.size() * 8);
  for (std::size_t i = 0; i < dx.size(); ++i) {
    for (int c = 0; c < 2; ++c) {
      const auto bits = std::bit_cast<std::uint32_t>(c == 0 ? dx[i] : dy[i]);
      char* p = buf.data() + i * 8 + c * 4;
      p[0] = static_cast<char>(bits & 0xff);
      p[1] = static_cast<char>((bits >> 8) & 0xff);
      p[2] = static_cast<char>((bits >> 16) & 0xff);
      p[3] = static_cast<char>((bits >> 24) & 0xff);
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("failed writing flow field");
}

FlowField read_flow(std::istream& in) {
  std::array<unsigned char, 12> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (in.gcount() != static_cast<std::streamsize>(header.size())) {
    throw InputError("flow file truncated in header");
  }
  if (std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0) {
    throw InputError("flow file has wrong magic bytes");
  }
  const std::uint32_t width = get_u32(header.data() + 4);
  const std::uint32_t height = get_u32(header.data() + 8);
  const std::size_t n = std::size_t{width} * height;
  if (n > (std::size_t{1} << 28)) {
    throw InputError("flow file dimensions too large");
  }
  std::vector<unsigned char> buf(n * 8);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw InputError("flow file truncated: expected " +
                     std::to_string(buf.size()) + " payload bytes");
  }
  std::vector<float> dx(n);
  std::vector<float> dy(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] = std::bit_cast<float>(get_u32(buf.data() + i * 8));
    dy[i] = std::bit_cast<float>(get_u32(buf.data() + i * 8 + 4));
  }
  try {
    return FlowField(width, height, std::move(dx), std::move(dy));
  } catch (const std::invalid_argument& e) {
    throw InputError(e.what());
  }
}

void save_flow(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  write_flow(out, flow);
}

FlowField load_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open flow file " + path.string());
  try {
    return read_flow(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace ovslink
