#include "ovslink/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <thread>

#include "ovslink/errors.hpp"

namespace ovslink {
namespace {

std::string dims(const BitMask& m) {
  return std::to_string(m.width()) + "x" + std::to_string(m.height());
}

void require_same_shape(const BitMask& a, const BitMask& b) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch("masks differ in size: " + dims(a) + " vs " + dims(b));
  }
}

PixelRect unite(const PixelRect& a, const PixelRect& b) {
  return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1),
          std::max(a.y1, b.y1)};
}

// Boundary pixels of `mask` over `region` (row-major, region inside frame).
std::vector<std::uint8_t> boundary(const BitMask& mask, const PixelRect& region) {
  const PixelRect padded{region.x0 - 1, region.y0 - 1, region.x1 + 1, region.y1 + 1};
  const auto px = decode_region(mask, padded);
  const std::int32_t pw = padded.width();
  const std::int32_t fw = static_cast<std::int32_t>(mask.width());
  const std::int32_t fh = static_cast<std::int32_t>(mask.height());
  std::vector<std::uint8_t> out(
      static_cast<std::size_t>(region.width()) * region.height(), 0);
  for (std::int32_t y = region.y0; y < region.y1; ++y) {
    for (std::int32_t x = region.x0; x < region.x1; ++x) {
      const std::size_t p =
          static_cast<std::size_t>(y - padded.y0) * pw + (x - padded.x0);
      if (!px[p]) continue;
      const bool edge = x == 0 || y == 0 || x == fw - 1 || y == fh - 1;
      const bool open = !px[p - 1] || !px[p + 1] || !px[p - pw] || !px[p + pw];
      if (edge || open) {
        out[static_cast<std::size_t>(y - region.y0) * region.width() +
            (x - region.x0)] = 1;
      }
    }
  }
  return out;
}

// Square (Chebyshev) dilation by `r`, clipped to the grid, via prefix counts
// along rows then columns.
std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& in,
                                 std::int64_t w, std::int64_t h, std::int64_t r) {
  std::vector<std::uint8_t> rows(in.size(), 0);
  std::vector<std::int64_t> prefix(static_cast<std::size_t>(std::max(w, h)) + 1);
  for (std::int64_t y = 0; y < h; ++y) {
    prefix[0] = 0;
    for (std::int64_t x = 0; x < w; ++x) {
      prefix[x + 1] = prefix[x] + in[static_cast<std::size_t>(y * w + x)];
    }
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t lo = std::max<std::int64_t>(0, x - r);
      const std::int64_t hi = std::min(w, x + r + 1);
      rows[static_cast<std::size_t>(y * w + x)] = prefix[hi] > prefix[lo];
    }
  }
  std::vector<std::uint8_t> out(in.size(), 0);
  for (std::int64_t x = 0; x < w; ++x) {
    prefix[0] = 0;
    for (std::int64_t y = 0; y < h; ++y) {
      prefix[y + 1] = prefix[y] + rows[static_cast<std::size_t>(y * w + x)];
    }
    for (std::int64_t y = 0; y < h; ++y) {
      const std::int64_t lo = std::max<std::int64_t>(0, y - r);
      const std::int64_t hi = std::min(h, y + r + 1);
      out[static_cast<std::size_t>(y * w + x)] = prefix[hi] > prefix[lo];
    }
  }
  return out;
}

// Fraction of `from` pixels covered by `cover`.
double hit_rate(const std::vector<std::uint8_t>& from,
                const std::vector<std::uint8_t>& cover) {
  std::uint64_t total = 0;
  std::uint64_t hits = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!from[i]) continue;
    ++total;
    hits += cover[i];
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double jaccard(const BitMask& pred, const BitMask& gt) { return mask_iou(pred, gt); }

std::uint32_t default_tolerance(std::uint32_t width, std::uint32_t height) {
  const double diag = std::hypot(static_cast<double>(width), static_cast<double>(height));
  return static_cast<std::uint32_t>(std::ceil(0.0075 * diag));
}

double contour_f(const BitMask& pred, const BitMask& gt, std::uint32_t tolerance_px) {
  require_same_shape(pred, gt);
  if (pred.empty() && gt.empty()) return 1.0;
  if (pred.empty() || gt.empty()) return 0.0;
  const auto t = static_cast<std::int32_t>(
      std::min<std::uint32_t>(tolerance_px, pred.width() + pred.height()));
  const PixelRect both = unite(*pred.bounds(), *gt.bounds());
  const PixelRect region = clip_to_frame(
      PixelRect{both.x0 - t, both.y0 - t, both.x1 + t, both.y1 + t}, pred.width(),
      pred.height());
  const auto bp = boundary(pred, region);
  const auto bg = boundary(gt, region);
  const std::int64_t w = region.width();
  const std::int64_t h = region.height();
  const double precision = hit_rate(bp, dilate(bg, w, h, t));
  const double recall = hit_rate(bg, dilate(bp, w, h, t));
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double contour_f(const BitMask& pred, const BitMask& gt) {
  return contour_f(pred, gt, default_tolerance(gt.width(), gt.height()));
}

MaskFrame to_mask_frame(const FrameResult& result) {
  MaskFrame f;
  f.frame = result.frame_id;
  for (const auto& r : result.instances) f.masks.emplace(r.id, r.mask);
  return f;
}

SequenceScorer::SequenceScorer(std::optional<std::uint32_t> tolerance)
    : tolerance_(tolerance) {}

void SequenceScorer::add(const MaskFrame& pred, const MaskFrame& gt) {
  if (pred.frame != gt.frame) {
    throw ConsistencyError("frame id mismatch: prediction " +
                           std::to_string(pred.frame) + ", ground truth " +
                           std::to_string(gt.frame));
  }
  bool same_ids = pred.masks.size() == gt.masks.size();
  for (auto a = pred.masks.begin(), b = gt.masks.begin();
       same_ids && a != pred.masks.end(); ++a, ++b) {
    same_ids = a->first == b->first;
  }
  if (!same_ids) {
    std::string p;
    std::string g;
    for (const auto& [id, m] : pred.masks) p += (p.empty() ? "" : ",") + std::to_string(id);
    for (const auto& [id, m] : gt.masks) g += (g.empty() ? "" : ",") + std::to_string(id);
    throw ConsistencyError("instance ids differ in frame " + std::to_string(gt.frame) +
                           ": prediction {" + p + "}, ground truth {" + g + "}");
  }
  const bool scored = frames_seen_ > 0;
  ++frames_seen_;
  for (auto a = pred.masks.begin(), b = gt.masks.begin(); a != pred.masks.end();
       ++a, ++b) {
    require_same_shape(a->second, b->second);
    if (!scored) continue;
    const std::uint32_t tol =
        tolerance_.value_or(default_tolerance(b->second.width(), b->second.height()));
    Sums& s = sums_[a->first];
    s.j += jaccard(a->second, b->second);
    s.f += contour_f(a->second, b->second, tol);
    ++s.n;
  }
}

SequenceScore SequenceScorer::finish() const {
  SequenceScore out;
  for (const auto& [id, s] : sums_) {
    if (s.n == 0) continue;
    const double n = static_cast<double>(s.n);
    out.instances.push_back({id, s.j / n, s.f / n, s.n});
  }
  if (out.instances.empty()) {
    throw ConsistencyError("no frames to score after the first frame");
  }
  double j = 0.0;
  double f = 0.0;
  for (const auto& i : out.instances) {
    j += i.j;
    f += i.f;
  }
  out.j_mean = j / static_cast<double>(out.instances.size());
  out.f_mean = f / static_cast<double>(out.instances.size());
  out.g_mean = (out.j_mean + out.f_mean) / 2.0;
  return out;
}

SequenceScore score_sequence(std::span<const MaskFrame> pred,
                             std::span<const MaskFrame> gt,
                             std::optional<std::uint32_t> tolerance) {
  if (pred.size() != gt.size()) {
    throw ConsistencyError("prediction has " + std::to_string(pred.size()) +
                           " frames, ground truth has " + std::to_string(gt.size()));
  }
  SequenceScorer scorer(tolerance);
  for (std::size_t i = 0; i < pred.size(); ++i) scorer.add(pred[i], gt[i]);
  return scorer.finish();
}

SequenceScore aggregate(std::span<const SequenceScore> scores) {
  SequenceScore out;
  double j = 0.0;
  double f = 0.0;
  for (const auto& s : scores) {
    for (const auto& i : s.instances) {
      out.instances.push_back(i);
      j += i.j;
      f += i.f;
    }
  }
  if (out.instances.empty()) throw ConsistencyError("nothing to aggregate");
  out.j_mean = j / static_cast<double>(out.instances.size());
  out.f_mean = f / static_cast<double>(out.instances.size());
  out.g_mean = (out.j_mean + out.f_mean) / 2.0;
  return out;
}

SequenceScore evaluate(const EvalSequence& seq, const CascadeConfig& config,
                       std::optional<std::uint32_t> tolerance) {
  if (seq.frames.size() != seq.truth.size()) {
    throw ConsistencyError("sequence '" + seq.name + "' has " +
                           std::to_string(seq.frames.size()) + " frames but " +
                           std::to_string(seq.truth.size()) + " ground-truth frames");
  }
  SequenceScorer scorer(tolerance);
  CascadeEngine engine(config);
  std::size_t i = 0;
  run_stream(engine, seq.first_masks, frames_from(seq.frames),
             [&](const FrameResult& r, double) {
               scorer.add(to_mask_frame(r), seq.truth[i++]);
             });
  return scorer.finish();
}

std::string config_label(const CascadeConfig& config) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "rho_reid=%g;rho_iou=%g;reid=%s", config.rho_reid,
                config.rho_iou, config.reid_path_enabled ? "on" : "off");
  return buf;
}

std::vector<AblationRow> ablation_sweep(std::span<const EvalSequence> sequences,
                                        std::span<const CascadeConfig> grid,
                                        std::size_t threads) {
  if (grid.empty()) throw std::invalid_argument("ablation grid is empty");
  if (sequences.empty()) throw std::invalid_argument("no sequences to evaluate");
  for (const auto& c : grid) c.validate();

  const std::size_t jobs = grid.size() * sequences.size();
  std::vector<std::optional<SequenceScore>> scores(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < jobs; k = next++) {
      try {
        scores[k] = evaluate(sequences[k % sequences.size()],
                             grid[k / sequences.size()]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<AblationRow> rows;
  rows.reserve(grid.size());
  for (std::size_t c = 0; c < grid.size(); ++c) {
    std::vector<SequenceScore> per_seq;
    per_seq.reserve(sequences.size());
    for (std::size_t s = 0; s < sequences.size(); ++s) {
      per_seq.push_back(std::move(*scores[c * sequences.size() + s]));
    }
    const SequenceScore total = aggregate(per_seq);
    rows.push_back({config_label(grid[c]), grid[c], total.j_mean, total.f_mean,
                    total.g_mean});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const AblationRow& a, const AblationRow& b) { return a.g > b.g; });
  return rows;
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "config,J,F,G\n";
  for (const auto& r : rows) {
    out << r.label << ',' << format_number(r.j) << ',' << format_number(r.f) << ','
        << format_number(r.g) << '\n';
  }
}

}  // namespace ovslink
