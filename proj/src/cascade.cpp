#include "ovslink/cascade.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ovslink/errors.hpp"

namespace ovslink {
namespace {

std::string dims(std::uint32_t w, std::uint32_t h) {
  return std::to_string(w) + "x" + std::to_string(h);
}

using Clock = std::chrono::steady_clock;

double elapsed_us(Clock::time_point t0, Clock::time_point t1) {
  return std::chrono::duration<double, std::micro>(t1 - t0).count();
}

}  // namespace

bool box_consistent(const Candidate& c, double tolerance_px) {
  if (c.mask.empty()) return true;
  const Box bb = c.mask.bounding_box();
  return std::fabs(c.box.x_min - bb.x_min) <= tolerance_px &&
         std::fabs(c.box.y_min - bb.y_min) <= tolerance_px &&
         std::fabs(c.box.x_max - bb.x_max) <= tolerance_px &&
         std::fabs(c.box.y_max - bb.y_max) <= tolerance_px;
}

std::string_view to_string(Path path) {
  switch (path) {
    case Path::Iou: return "IOU";
    case Path::Reid: return "REID";
    case Path::Flow: return "FLOW";
  }
  return "?";
}

std::optional<Path> parse_path(std::string_view text) {
  if (text == "IOU") return Path::Iou;
  if (text == "REID") return Path::Reid;
  if (text == "FLOW") return Path::Flow;
  return std::nullopt;
}

void CascadeConfig::validate() const {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("invalid cascade config: " + what);
  };
  if (!(rho_iou > 0.0 && rho_iou < 1.0)) fail("rho_iou must be in (0, 1)");
  if (!(rho_reid > 0.0) || !std::isfinite(rho_reid)) {
    fail("rho_reid must be positive");
  }
  if (!(quorum >= 0.0 && quorum <= 1.0)) fail("quorum must be in [0, 1]");
  if (!(score_thresh >= 0.0 && score_thresh <= 1.0)) {
    fail("score_thresh must be in [0, 1]");
  }
  if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) fail("nms_iou must be in [0, 1]");
  if (gallery_capacity == 0) fail("gallery_capacity must be positive");
}

Refiner identity_refiner() {
  return [](const BitMask& m, const Box&, const RefineContext&) { return m; };
}

Refiner closing_refiner(std::uint32_t radius) {
  return [radius](const BitMask& m, const Box&, const RefineContext&) {
    return morphological_close(m, radius);
  };
}

CascadeEngine::CascadeEngine(CascadeConfig config)
    : config_(config), refiner_(identity_refiner()) {
  config_.validate();
}

void CascadeEngine::set_refiner(Refiner refiner) {
  refiner_ = refiner ? std::move(refiner) : identity_refiner();
}

void CascadeEngine::check_candidates(std::span<const Candidate> candidates) const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const BitMask& m = candidates[i].mask;
    if (m.width() != width_ || m.height() != height_) {
      throw DimensionMismatch("candidate " + std::to_string(i) + " mask is " +
                              dims(m.width(), m.height()) + ", frame is " +
                              dims(width_, height_));
    }
  }
}

std::vector<std::size_t> CascadeEngine::filter(
    std::span<const Candidate> candidates) {
  scored_.clear();
  for (const auto& c : candidates) {
    // Empty-mask proposals carry nothing to associate; score them out.
    scored_.push_back({c.box, c.mask.empty() ? -1.0 : c.score});
  }
  return nms(scored_, config_.score_thresh, config_.nms_iou);
}

FrameResult CascadeEngine::init(std::int64_t frame_id,
                                const std::map<InstanceId, BitMask>& first_masks,
                                std::span<const Candidate> candidates) {
  if (initialized_) throw std::logic_error("cascade engine already initialized");
  if (first_masks.empty()) {
    throw std::invalid_argument("init needs at least one instance mask");
  }
  const BitMask& ref = first_masks.begin()->second;
  for (const auto& [id, mask] : first_masks) {
    if (!mask.same_shape(ref)) {
      throw DimensionMismatch("instance " + std::to_string(id) + " mask is " +
                              dims(mask.width(), mask.height()) +
                              ", expected " + dims(ref.width(), ref.height()));
    }
  }
  width_ = ref.width();
  height_ = ref.height();
  check_candidates(candidates);
  const auto kept = filter(candidates);

  struct Best {
    std::optional<std::size_t> candidate;
    double iou = 0.0;
  };
  std::vector<Best> best(first_masks.size());
  std::size_t k = 0;
  for (const auto& [id, mask] : first_masks) {
    for (const std::size_t idx : kept) {
      const double iou = mask_iou(mask, candidates[idx].mask);
      if (!best[k].candidate || iou > best[k].iou ||
          (iou == best[k].iou && idx < *best[k].candidate)) {
        best[k] = {idx, iou};
      }
    }
    if (best[k].candidate && !(best[k].iou > config_.rho_iou)) best[k] = {};
    ++k;
  }
  // Contested candidates go to the higher IoU; ties to the lower id.
  for (std::size_t i = 0; i < best.size(); ++i) {
    if (!best[i].candidate) continue;
    for (std::size_t j = 0; j < best.size(); ++j) {
      if (i == j || best[j].candidate != best[i].candidate) continue;
      if (best[j].iou > best[i].iou || (best[j].iou == best[i].iou && j < i)) {
        best[i] = {};
        break;
      }
    }
  }

  instances_.clear();
  instances_.reserve(first_masks.size());
  FrameResult result{frame_id, {}};
  result.instances.reserve(first_masks.size());
  k = 0;
  for (const auto& [id, mask] : first_masks) {
    InstanceState state{id, mask, Gallery(id, config_.gallery_capacity)};
    InstanceResult r{id, mask, Path::Flow, std::nullopt, std::nullopt};
    if (best[k].candidate) {
      state.gallery.add(candidates[*best[k].candidate].embedding);
      r.path = Path::Iou;
      r.matched_candidate = best[k].candidate;
      r.match_value = best[k].iou;
    }
    instances_.push_back(std::move(state));
    result.instances.push_back(std::move(r));
    ++k;
  }
  initialized_ = true;
  frames_processed_ = 1;
  return result;
}

FrameResult CascadeEngine::step(std::int64_t frame_id,
                                std::span<const Candidate> candidates,
                                const FlowField& flow) {
  return associate(frame_id, candidates, &flow);
}

FrameResult CascadeEngine::step(std::int64_t frame_id,
                                std::span<const Candidate> candidates) {
  return associate(frame_id, candidates, nullptr);
}

FrameResult CascadeEngine::associate(std::int64_t frame_id,
                                     std::span<const Candidate> candidates,
                                     const FlowField* flow) {
  if (!initialized_) throw std::logic_error("step() called before init()");
  if (flow && (flow->width() != width_ || flow->height() != height_)) {
    throw DimensionMismatch("flow is " + dims(flow->width(), flow->height()) +
                            ", frame is " + dims(width_, height_));
  }
  check_candidates(candidates);
  const auto kept = filter(candidates);
  claimed_.assign(candidates.size(), false);

  FrameResult result{frame_id, {}};
  result.instances.reserve(instances_.size());
  for (InstanceState& inst : instances_) {
    BitMask warped = flow ? warp_mask(inst.last_mask, *flow) : inst.last_mask;
    InstanceResult r{inst.id, {}, Path::Flow, std::nullopt, std::nullopt};

    std::optional<std::size_t> pick;
    double pick_value = 0.0;
    for (const std::size_t idx : kept) {
      if (claimed_[idx]) continue;
      const double iou = mask_iou(warped, candidates[idx].mask);
      if (!(iou > config_.rho_iou)) continue;
      if (!pick || iou > pick_value || (iou == pick_value && idx < *pick)) {
        pick = idx;
        pick_value = iou;
      }
    }
    if (pick) {
      r.path = Path::Iou;
    } else if (config_.reid_path_enabled && !inst.gallery.empty()) {
      for (const std::size_t idx : kept) {
        if (claimed_[idx]) continue;
        const auto d = gallery_match(inst.gallery, candidates[idx].embedding,
                                     config_.rho_reid, config_.quorum);
        if (!d) continue;
        if (!pick || *d < pick_value || (*d == pick_value && idx < *pick)) {
          pick = idx;
          pick_value = *d;
        }
      }
      if (pick) r.path = Path::Reid;
    }

    if (pick) {
      const Candidate& c = candidates[*pick];
      claimed_[*pick] = true;
      r.mask = c.mask;
      r.matched_candidate = pick;
      r.match_value = pick_value;
      if (r.path == Path::Iou || config_.append_on_reid) {
        inst.gallery.add(c.embedding);
      }
      inst.missing_streak = 0;
    } else {
      const Box region = expand_box(warped.bounding_box(), kDefaultExpandFactor,
                                    width_, height_);
      r.mask = refiner_(warped, region,
                        RefineContext{frame_id, inst.id, width_, height_});
      if (r.mask.width() != width_ || r.mask.height() != height_) {
        throw DimensionMismatch("refiner returned a " +
                                dims(r.mask.width(), r.mask.height()) +
                                " mask for a " + dims(width_, height_) +
                                " frame");
      }
      ++inst.missing_streak;
    }
    inst.last_mask = r.mask;
    result.instances.push_back(std::move(r));
  }
  ++frames_processed_;
  return result;
}

StreamStats run_stream(CascadeEngine& engine,
                       const std::map<InstanceId, BitMask>& first_masks,
                       const FrameSource& source, const ResultSink& sink) {
  StreamStats stats;
  SequenceFrame frame;
  if (!source(frame)) throw std::invalid_argument("sequence has no frames");
  auto record = [&](const FrameResult& r, double us) {
    ++stats.frames;
    stats.total_us += us;
    stats.max_us = std::max(stats.max_us, us);
    if (sink) sink(r, us);
  };
  {
    const auto t0 = Clock::now();
    const FrameResult r = engine.init(frame.frame_id, first_masks, frame.candidates);
    record(r, elapsed_us(t0, Clock::now()));
  }
  while (source(frame)) {
    const auto t0 = Clock::now();
    const FrameResult r =
        frame.flow ? engine.step(frame.frame_id, frame.candidates, *frame.flow)
                   : engine.step(frame.frame_id, frame.candidates);
    record(r, elapsed_us(t0, Clock::now()));
  }
  return stats;
}

SequenceRun run_sequence(const std::map<InstanceId, BitMask>& first_masks,
                         const FrameSource& source, const CascadeConfig& config,
                         Refiner refiner) {
  CascadeEngine engine(config);
  if (refiner) engine.set_refiner(std::move(refiner));
  SequenceRun run;
  run_stream(engine, first_masks, source,
             [&](const FrameResult& r, double us) {
               run.results.push_back(r);
               run.latencies_us.push_back(us);
             });
  return run;
}

SequenceRun run_sequence(const std::map<InstanceId, BitMask>& first_masks,
                         std::span<const SequenceFrame> frames,
                         const CascadeConfig& config, Refiner refiner) {
  if (frames.empty()) throw std::invalid_argument("sequence has no frames");
  CascadeEngine engine(config);
  if (refiner) engine.set_refiner(std::move(refiner));
  SequenceRun run;
  run.results.reserve(frames.size());
  run.latencies_us.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const SequenceFrame& f = frames[i];
    const auto t0 = Clock::now();
    FrameResult r = i == 0 ? engine.init(f.frame_id, first_masks, f.candidates)
                    : f.flow ? engine.step(f.frame_id, f.candidates, *f.flow)
                             : engine.step(f.frame_id, f.candidates);
    run.latencies_us.push_back(elapsed_us(t0, Clock::now()));
    run.results.push_back(std::move(r));
  }
  return run;
}

FrameSource frames_from(std::span<const SequenceFrame> frames) {
  return [frames, next = std::size_t{0}](SequenceFrame& out) mutable {
    if (next >= frames.size()) return false;
    out = frames[next++];
    return true;
  };
}

}  // namespace ovslink
