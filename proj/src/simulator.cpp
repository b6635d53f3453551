#include "ovslink/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace ovslink {
namespace {

std::int64_t round_half_up(double v) {
  return static_cast<std::int64_t>(std::floor(v + 0.5));
}

std::vector<std::uint8_t> raster(Shape shape, std::uint32_t w, std::uint32_t h) {
  std::vector<std::uint8_t> px(std::size_t{w} * h, 0);
  const double rx = 0.5 * w;
  const double ry = 0.5 * h;
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      bool in = true;
      if (shape == Shape::Ellipse) {
        const double nx = (x + 0.5 - rx) / rx;
        const double ny = (y + 0.5 - ry) / ry;
        in = nx * nx + ny * ny <= 1.0;
      }
      px[std::size_t{y} * w + x] = in ? 1 : 0;
    }
  }
  return px;
}

// Moves one edge of a row-major region by `offset` pixels: positive grows the
// mask outward across that edge, negative shrinks it. `step_x`/`step_y` point
// outward through the edge.
std::vector<std::uint8_t> shift_edge(const std::vector<std::uint8_t>& in,
                                     std::int64_t w, std::int64_t h,
                                     int step_x, int step_y,
                                     std::int64_t offset) {
  if (offset == 0) return in;
  auto get = [&](std::int64_t x, std::int64_t y) -> std::uint8_t {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0;
    return in[static_cast<std::size_t>(y * w + x)];
  };
  std::vector<std::uint8_t> out(in.size());
  const std::int64_t n = std::abs(offset);
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::uint8_t v = get(x, y);
      for (std::int64_t d = 1; d <= n; ++d) {
        if (offset > 0) {
          // A pixel joins if foreground lies inward (against the edge).
          v = v | get(x - step_x * d, y - step_y * d);
        } else {
          // A pixel survives only if foreground continues outward.
          v = v & get(x + step_x * d, y + step_y * d);
        }
      }
      out[static_cast<std::size_t>(y * w + x)] = v;
    }
  }
  return out;
}

void check(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("invalid scene: " + what);
}

bool in_unit(double p) { return p >= 0.0 && p <= 1.0; }

}  // namespace

std::string_view to_string(Shape shape) {
  return shape == Shape::Ellipse ? "ellipse" : "rectangle";
}

std::optional<Shape> parse_shape(std::string_view text) {
  if (text == "rectangle" || text == "rect") return Shape::Rectangle;
  if (text == "ellipse") return Shape::Ellipse;
  return std::nullopt;
}

void SceneSpec::validate() const {
  check(width > 0 && height > 0, "frame size must be positive");
  check(frames >= 1, "need at least one frame");
  check(!objects.empty(), "need at least one object");
  check(objects.size() < kEmbeddingDim, "too many objects");
  std::set<InstanceId> ids;
  for (const auto& o : objects) {
    const std::string tag = "object " + std::to_string(o.id);
    check(ids.insert(o.id).second, tag + " has a duplicate id");
    check(o.width > 0 && o.height > 0, tag + " has zero size");
    check(o.width <= width && o.height <= height,
          tag + " is larger than the frame");
    check(!o.track.empty(), tag + " has no waypoints");
    for (std::size_t i = 0; i < o.track.size(); ++i) {
      check(std::isfinite(o.track[i].x) && std::isfinite(o.track[i].y),
            tag + " has a non-finite waypoint");
      if (i > 0) {
        check(o.track[i].t > o.track[i - 1].t,
              tag + " waypoint times must strictly increase");
      }
    }
  }
  check(embedding.centroid_spacing > 0.0, "centroid_spacing must be positive");
  check(embedding.noise_sigma >= 0.0, "noise_sigma must be non-negative");
  check(in_unit(detector.miss_prob), "miss_prob must be in [0, 1]");
  check(in_unit(detector.min_visible_fraction),
        "min_visible_fraction must be in [0, 1]");
  check(detector.fp_rate >= 0.0 && std::isfinite(detector.fp_rate),
        "fp_rate must be non-negative");
  check(in_unit(detector.score_min) && in_unit(detector.score_max) &&
            detector.score_min <= detector.score_max,
        "score range must lie in [0, 1]");
  check(in_unit(detector.fp_score_min) && in_unit(detector.fp_score_max) &&
            detector.fp_score_min <= detector.fp_score_max,
        "fp score range must lie in [0, 1]");
}

SceneGenerator::SceneGenerator(SceneSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const double axis = spec_.embedding.centroid_spacing / std::sqrt(2.0);
  for (std::size_t i = 0; i < spec_.objects.size(); ++i) {
    const auto& o = spec_.objects[i];
    Sprite s;
    s.pixels = raster(o.shape, o.width, o.height);
    for (auto v : s.pixels) s.area += v;
    sprites_.push_back(std::move(s));
    std::array<float, kEmbeddingDim> c{};
    c[i] = static_cast<float>(axis);
    centroids_.emplace(o.id, Embedding(std::span<const float>(c)));
  }
  std::array<float, kEmbeddingDim> bg{};
  bg[spec_.objects.size()] = static_cast<float>(axis);
  clutter_centroid_ = Embedding(std::span<const float>(bg));

  paint_order_.resize(spec_.objects.size());
  for (std::size_t i = 0; i < paint_order_.size(); ++i) paint_order_[i] = i;
  // Far objects first; equal depth paints in list order.
  std::stable_sort(paint_order_.begin(), paint_order_.end(),
                   [&](std::size_t a, std::size_t b) {
                     return spec_.objects[a].depth > spec_.objects[b].depth;
                   });
}

const Embedding& SceneGenerator::centroid(InstanceId id) const {
  return centroids_.at(id);
}

std::pair<std::int64_t, std::int64_t> SceneGenerator::position(
    std::size_t index, std::int64_t t) const {
  const auto& track = spec_.objects.at(index).track;
  if (t <= track.front().t) {
    return {round_half_up(track.front().x), round_half_up(track.front().y)};
  }
  if (t >= track.back().t) {
    return {round_half_up(track.back().x), round_half_up(track.back().y)};
  }
  std::size_t k = 1;
  while (track[k].t < t) ++k;
  const Waypoint& a = track[k - 1];
  const Waypoint& b = track[k];
  const double u = static_cast<double>(t - a.t) / static_cast<double>(b.t - a.t);
  return {round_half_up(a.x + u * (b.x - a.x)), round_half_up(a.y + u * (b.y - a.y))};
}

void SceneGenerator::render(std::int64_t t, std::vector<std::int32_t>& owner) const {
  const auto fw = static_cast<std::int64_t>(spec_.width);
  const auto fh = static_cast<std::int64_t>(spec_.height);
  owner.assign(static_cast<std::size_t>(fw * fh), -1);
  for (const std::size_t idx : paint_order_) {
    const auto& o = spec_.objects[idx];
    const auto [px, py] = position(idx, t);
    const auto& sprite = sprites_[idx].pixels;
    for (std::int64_t j = 0; j < o.height; ++j) {
      const std::int64_t y = py + j;
      if (y < 0 || y >= fh) continue;
      for (std::int64_t i = 0; i < o.width; ++i) {
        const std::int64_t x = px + i;
        if (x < 0 || x >= fw) continue;
        if (sprite[static_cast<std::size_t>(j * o.width + i)]) {
          owner[static_cast<std::size_t>(y * fw + x)] =
              static_cast<std::int32_t>(idx);
        }
      }
    }
  }
}

Embedding SceneGenerator::draw_embedding(const Embedding& centre, Rng& rng) const {
  const double sd =
      spec_.embedding.noise_sigma / std::sqrt(static_cast<double>(kEmbeddingDim));
  std::array<double, kEmbeddingDim> v{};
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
    v[i] = static_cast<double>(centre[i]) + rng.normal(0.0, sd);
  }
  return Embedding(std::span<const double>(v));
}

BitMask SceneGenerator::jitter(const BitMask& mask, Rng& rng) const {
  const auto amp = static_cast<std::int64_t>(spec_.detector.jitter);
  std::array<std::int64_t, 4> offsets{};
  for (auto& o : offsets) o = rng.uniform_int(-amp, amp);
  if (amp == 0 || mask.empty()) return mask;
  const PixelRect b = *mask.bounds();
  const auto a = static_cast<std::int32_t>(amp);
  const PixelRect region = clip_to_frame(
      PixelRect{b.x0 - a, b.y0 - a, b.x1 + a, b.y1 + a}, spec_.width, spec_.height);
  auto px = decode_region(mask, region);
  const std::int64_t w = region.width();
  const std::int64_t h = region.height();
  px = shift_edge(px, w, h, -1, 0, offsets[0]);  // left
  px = shift_edge(px, w, h, 1, 0, offsets[1]);   // right
  px = shift_edge(px, w, h, 0, -1, offsets[2]);  // top
  px = shift_edge(px, w, h, 0, 1, offsets[3]);   // bottom
  return encode_region(spec_.width, spec_.height, region, px);
}

void SceneGenerator::add_clutter(SimFrame& out, Rng& rng) const {
  const std::uint32_t count = rng.poisson(spec_.detector.fp_rate);
  const auto fw = static_cast<std::int64_t>(spec_.width);
  const auto fh = static_cast<std::int64_t>(spec_.height);
  const std::int64_t max_side = std::max<std::int64_t>(
      1, std::min<std::int64_t>(std::min(fw, fh), std::max<std::int64_t>(6, std::min(fw, fh) / 6)));
  const std::int64_t min_side = std::min<std::int64_t>(6, max_side);
  for (std::uint32_t k = 0; k < count; ++k) {
    const Shape shape = rng.bernoulli(0.5) ? Shape::Ellipse : Shape::Rectangle;
    const auto w = static_cast<std::uint32_t>(rng.uniform_int(min_side, max_side));
    const auto h = static_cast<std::uint32_t>(rng.uniform_int(min_side, max_side));
    const auto x = static_cast<std::int32_t>(rng.uniform_int(0, fw - w));
    const auto y = static_cast<std::int32_t>(rng.uniform_int(0, fh - h));
    const auto px = raster(shape, w, h);
    BitMask mask = encode_region(
        spec_.width, spec_.height,
        PixelRect{x, y, x + static_cast<std::int32_t>(w), y + static_cast<std::int32_t>(h)},
        px);
    Candidate c;
    c.box = mask.bounding_box();
    c.score = rng.uniform(spec_.detector.fp_score_min, spec_.detector.fp_score_max);
    c.mask = std::move(mask);
    c.embedding = draw_embedding(clutter_centroid_, rng);
    out.candidates.push_back(std::move(c));
    out.sources.push_back(std::nullopt);
  }
}

bool SceneGenerator::next(SimFrame& out) {
  if (next_frame_ >= static_cast<std::int64_t>(spec_.frames)) return false;
  const std::int64_t t = next_frame_++;
  render(t, owner_);

  const auto fw = static_cast<std::int64_t>(spec_.width);
  const auto fh = static_cast<std::int64_t>(spec_.height);
  out.frame_id = t;
  out.truth.clear();
  out.visible_fraction.clear();
  out.candidates.clear();
  out.sources.clear();

  const std::size_t n = static_cast<std::size_t>(fw * fh);
  std::vector<float> dx(n, 0.0f);
  std::vector<float> dy(n, 0.0f);

  for (std::size_t idx = 0; idx < spec_.objects.size(); ++idx) {
    const auto& o = spec_.objects[idx];
    const auto [px, py] = position(idx, t);
    const PixelRect box = clip_to_frame(
        PixelRect{static_cast<std::int32_t>(std::clamp<std::int64_t>(px, -fw, 2 * fw)),
                  static_cast<std::int32_t>(std::clamp<std::int64_t>(py, -fh, 2 * fh)),
                  static_cast<std::int32_t>(std::clamp<std::int64_t>(px + o.width, -fw, 2 * fw)),
                  static_cast<std::int32_t>(std::clamp<std::int64_t>(py + o.height, -fh, 2 * fh))},
        spec_.width, spec_.height);
    std::vector<std::uint8_t> region(
        static_cast<std::size_t>(box.width()) * box.height(), 0);
    std::uint64_t visible = 0;
    float fdx = 0.0f;
    float fdy = 0.0f;
    if (t > 0) {
      const auto [qx, qy] = position(idx, t - 1);
      fdx = static_cast<float>(qx - px);
      fdy = static_cast<float>(qy - py);
    }
    for (std::int32_t y = box.y0; y < box.y1; ++y) {
      for (std::int32_t x = box.x0; x < box.x1; ++x) {
        const auto p = static_cast<std::size_t>(std::int64_t{y} * fw + x);
        if (owner_[p] != static_cast<std::int32_t>(idx)) continue;
        region[static_cast<std::size_t>(y - box.y0) * box.width() + (x - box.x0)] = 1;
        ++visible;
        dx[p] = fdx;
        dy[p] = fdy;
      }
    }
    out.truth[o.id] = encode_region(spec_.width, spec_.height, box, region);
    out.visible_fraction[o.id] =
        static_cast<double>(visible) / static_cast<double>(sprites_[idx].area);
  }
  out.flow = FlowField(spec_.width, spec_.height, std::move(dx), std::move(dy));

  const Rng frame_rng = Rng(spec_.seed).split("frame", static_cast<std::uint64_t>(t));
  for (const auto& o : spec_.objects) {
    Rng rng = frame_rng.split("object", static_cast<std::uint64_t>(o.id));
    const bool detectable =
        out.visible_fraction[o.id] >= spec_.detector.min_visible_fraction &&
        !out.truth[o.id].empty();
    if (!detectable || rng.bernoulli(spec_.detector.miss_prob)) continue;
    BitMask mask = jitter(out.truth[o.id], rng);
    if (mask.empty()) continue;
    Candidate c;
    c.box = mask.bounding_box();
    c.score = rng.uniform(spec_.detector.score_min, spec_.detector.score_max);
    c.mask = std::move(mask);
    c.embedding = draw_embedding(centroids_.at(o.id), rng);
    out.candidates.push_back(std::move(c));
    out.sources.push_back(o.id);
  }
  Rng clutter_rng = frame_rng.split("clutter");
  add_clutter(out, clutter_rng);
  return true;
}

std::map<InstanceId, BitMask> SimSequence::first_masks() const {
  if (frames.empty()) return {};
  return frames.front().truth;
}

std::vector<SequenceFrame> SimSequence::sequence_frames() const {
  std::vector<SequenceFrame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    SequenceFrame s;
    s.frame_id = f.frame_id;
    s.candidates = f.candidates;
    if (!f.flow.is_zero()) s.flow = f.flow;
    out.push_back(std::move(s));
  }
  return out;
}

SimSequence generate(const SceneSpec& spec) {
  SceneGenerator gen(spec);
  SimSequence seq;
  seq.spec = gen.spec();
  seq.frames.reserve(spec.frames);
  SimFrame frame;
  while (gen.next(frame)) seq.frames.push_back(frame);
  return seq;
}

// --- presets -------------------------------------------------------------

namespace {

SceneSpec crossing(std::uint64_t seed) {
  Rng rng = Rng(seed).split("preset");
  SceneSpec s;
  s.name = "crossing";
  s.seed = seed;
  const double dy = static_cast<double>(rng.uniform_int(-30, 30));
  const std::int64_t meet = 25 + rng.uniform_int(-3, 3);
  const std::int64_t part = meet + 10;
  // Far object (id 1) slides behind the larger near object (id 2); both
  // pause while fully overlapped, then continue to the opposite sides.
  s.objects.push_back({1, Shape::Ellipse, 36, 36,
                       {{0, 20, 102 + dy}, {meet, 130, 102 + dy},
                        {part, 130, 102 + dy}, {59, 264, 102 + dy}},
                       1});
  s.objects.push_back({2, Shape::Rectangle, 56, 56,
                       {{0, 244, 92 + dy}, {meet, 120, 92 + dy},
                        {part, 120, 92 + dy}, {59, 20, 92 + dy}},
                       0});
  return s;
}

SceneSpec exit_reenter(std::uint64_t seed) {
  Rng rng = Rng(seed).split("preset");
  SceneSpec s;
  s.name = "exit-reenter";
  s.seed = seed;
  const double y = 60.0 + static_cast<double>(rng.uniform_int(-30, 30));
  const std::int64_t back = 32 + rng.uniform_int(-3, 3);
  // Leaves through the right edge, waits off-screen, re-enters from the left.
  s.objects.push_back({1, Shape::Rectangle, 40, 40,
                       {{0, 60, y}, {25, 330, y}, {26, -60, y},
                        {back, -60, y}, {back + 18, 120, y}},
                       0});
  s.objects.push_back(
      {2, Shape::Ellipse, 44, 44, {{0, 200, 170}, {59, 100, 170}}, 1});
  return s;
}

SceneSpec crowd(std::uint64_t seed, std::uint32_t count, std::uint32_t width,
                std::uint32_t height, std::uint32_t frames) {
  Rng rng = Rng(seed).split("preset");
  SceneSpec s;
  s.name = "crowd";
  s.seed = seed;
  s.width = width;
  s.height = height;
  s.frames = frames;
  s.detector.fp_rate = 0.2;
  const std::int64_t side = std::min(width, height);
  const std::int64_t lo = std::max<std::int64_t>(4, side / 10);
  const std::int64_t hi = std::max<std::int64_t>(lo, side / 4);
  std::vector<std::int32_t> depths(count);
  for (std::uint32_t i = 0; i < count; ++i) depths[i] = static_cast<std::int32_t>(i);
  std::shuffle(depths.begin(), depths.end(), rng.engine());
  for (std::uint32_t i = 0; i < count; ++i) {
    SceneObject o;
    o.id = i + 1;
    o.shape = rng.bernoulli(0.5) ? Shape::Ellipse : Shape::Rectangle;
    o.width = static_cast<std::uint32_t>(rng.uniform_int(lo, hi));
    o.height = static_cast<std::uint32_t>(rng.uniform_int(lo, hi));
    o.depth = depths[i];
    const std::int64_t last = std::max<std::int64_t>(1, frames - 1);
    for (int k = 0; k < 4; ++k) {
      const std::int64_t t = k * last / 3;
      if (!o.track.empty() && t <= o.track.back().t) continue;
      o.track.push_back({t,
                         rng.uniform(-0.25 * o.width, width - 0.75 * o.width),
                         rng.uniform(-0.25 * o.height, height - 0.75 * o.height)});
    }
    s.objects.push_back(std::move(o));
  }
  return s;
}

SceneSpec static_scene(std::uint64_t seed) {
  SceneSpec s;
  s.name = "static";
  s.seed = seed;
  s.detector = DetectorModel{};
  s.detector.miss_prob = 0.0;
  s.detector.fp_rate = 0.0;
  s.detector.jitter = 0;
  s.objects.push_back({1, Shape::Rectangle, 50, 40, {{0, 30, 30}}, 0});
  s.objects.push_back({2, Shape::Ellipse, 60, 60, {{0, 150, 60}}, 0});
  s.objects.push_back({3, Shape::Rectangle, 80, 50, {{0, 60, 150}}, 0});
  return s;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"crossing", "exit-reenter",
                                                 "crowd", "static"};
  return names;
}

SceneSpec preset(std::string_view name, std::uint64_t seed,
                 const PresetOptions& options) {
  SceneSpec s;
  if (name == "crossing") {
    s = crossing(seed);
  } else if (name == "exit-reenter") {
    s = exit_reenter(seed);
  } else if (name == "crowd") {
    s = crowd(seed, options.objects.value_or(5), options.width.value_or(320),
              options.height.value_or(240), options.frames.value_or(60));
  } else if (name == "static") {
    s = static_scene(seed);
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
  }
  if (options.objects && name != "crowd") {
    throw std::invalid_argument("object count can only be set for 'crowd'");
  }
  if (options.width) s.width = *options.width;
  if (options.height) s.height = *options.height;
  if (options.frames) s.frames = *options.frames;
  if (options.fp_rate) s.detector.fp_rate = *options.fp_rate;
  if (options.noise_sigma) s.embedding.noise_sigma = *options.noise_sigma;
  s.validate();
  return s;
}

}  // namespace ovslink
