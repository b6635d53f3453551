#include <gtest/gtest.h>

#include <set>

#include "ovslink/cascade.hpp"
#include "ovslink/errors.hpp"
#include "ovslink/simulator.hpp"

using namespace ovslink;

namespace {

constexpr std::uint32_t W = 64;
constexpr std::uint32_t H = 48;

BitMask rect(std::int32_t x0, std::int32_t y0, std::int32_t x1, std::int32_t y1) {
  return BitMask::from_rect(W, H, {x0, y0, x1, y1});
}

Embedding axis(std::size_t k, float v) {
  std::array<float, kEmbeddingDim> a{};
  a[k] = v;
  return Embedding(std::span<const float>(a));
}

Candidate cand(const BitMask& m, double score, const Embedding& e) {
  return Candidate{m.bounding_box(), score, m, e};
}

}  // namespace

TEST(Candidate, BoxConsistency) {
  Candidate c = cand(rect(10, 10, 20, 20), 0.9, Embedding{});
  EXPECT_TRUE(box_consistent(c));
  c.box.x_min -= 2.0;
  EXPECT_TRUE(box_consistent(c));
  c.box.x_min -= 0.5;
  EXPECT_FALSE(box_consistent(c));
}

TEST(CascadeConfig, Validation) {
  EXPECT_NO_THROW(CascadeConfig{}.validate());
  CascadeConfig c;
  c.rho_iou = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.rho_iou = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.quorum = 1.5;
  EXPECT_THROW(CascadeEngine{c}, std::invalid_argument);
}

TEST(Init, SeedsGalleryFromBestCandidate) {
  CascadeEngine e;
  const std::vector<Candidate> cands{cand(rect(10, 10, 20, 20), 0.9, axis(0, 1))};
  const FrameResult r = e.init(0, {{1, rect(10, 10, 20, 20)}}, cands);
  EXPECT_EQ(e.instances().at(0).gallery.size(), 1u);
  EXPECT_EQ(r.instances.at(0).path, Path::Iou);
  EXPECT_EQ(r.instances.at(0).mask, rect(10, 10, 20, 20));
}

TEST(Init, LowIouLeavesGalleryEmpty) {
  CascadeEngine e;
  // 10x10 vs 10x1 inside it: IoU 0.1.
  const std::vector<Candidate> cands{cand(rect(10, 10, 20, 11), 0.9, axis(0, 1))};
  const FrameResult r = e.init(0, {{1, rect(10, 10, 20, 20)}}, cands);
  EXPECT_TRUE(e.instances().at(0).gallery.empty());
  EXPECT_TRUE(e.instances().at(0).alive);
  EXPECT_EQ(r.instances.at(0).mask, rect(10, 10, 20, 20));
  EXPECT_EQ(r.instances.at(0).path, Path::Flow);
}

TEST(Init, ContestedCandidateGoesToHigherIou) {
  CascadeEngine e;
  const std::vector<Candidate> cands{cand(rect(10, 10, 20, 20), 0.9, axis(0, 1))};
  // Instance 1 overlaps 60%, instance 2 matches exactly.
  e.init(0, {{1, rect(10, 10, 20, 16)}, {2, rect(10, 10, 20, 20)}}, cands);
  EXPECT_TRUE(e.instances().at(0).gallery.empty());
  EXPECT_EQ(e.instances().at(1).gallery.size(), 1u);
}

TEST(Init, Errors) {
  CascadeEngine e;
  EXPECT_THROW(e.init(0, {}, {}), std::invalid_argument);
  EXPECT_THROW(e.init(0, {{1, BitMask(4, 4)}, {2, BitMask(5, 4)}}, {}), DimensionMismatch);
  CascadeEngine f;
  EXPECT_THROW(f.step(1, {}), std::logic_error);
}

TEST(Step, IouPath) {
  CascadeEngine e;
  e.init(0, {{1, rect(10, 10, 20, 20)}}, {});
  // IoU 50/150 = 0.333 > 0.3.
  const std::vector<Candidate> cands{cand(rect(15, 10, 25, 20), 0.9, axis(0, 1))};
  const FrameResult r = e.step(1, cands, compose_identity(W, H));
  EXPECT_EQ(r.instances[0].path, Path::Iou);
  EXPECT_EQ(r.instances[0].mask, cands[0].mask);
  EXPECT_EQ(r.instances[0].matched_candidate, 0u);
  EXPECT_NEAR(*r.instances[0].match_value, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(e.instances()[0].gallery.size(), 1u);
}

TEST(Step, FlowPathWhenNothingMatches) {
  CascadeEngine e;
  e.init(0, {{1, rect(10, 10, 20, 20)}}, {});
  const std::size_t n = std::size_t{W} * H;
  const FlowField shift(W, H, std::vector<float>(n, -2.0f), std::vector<float>(n, 0.0f));
  const FrameResult r = e.step(1, {}, shift);
  EXPECT_EQ(r.instances[0].path, Path::Flow);
  EXPECT_EQ(r.instances[0].mask, rect(12, 10, 22, 20));
  EXPECT_FALSE(r.instances[0].matched_candidate);
  EXPECT_FALSE(r.instances[0].match_value);
  EXPECT_EQ(e.instances()[0].missing_streak, 1u);
}

TEST(Step, ReidRecoversAfterGap) {
  CascadeEngine e;
  e.init(0, {{1, rect(0, 0, 10, 10)}}, {});
  // Build a gallery of ten: four near the query embedding, six far.
  for (int i = 0; i < 10; ++i) {
    const std::vector<Candidate> c{cand(rect(0, 0, 10, 10), 0.9, axis(0, i < 4 ? 1.0f : 9.0f))};
    ASSERT_EQ(e.step(i + 1, c).instances[0].path, Path::Iou);
  }
  // Object disappears for three frames.
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(e.step(20 + i, {}).instances[0].path, Path::Flow);
  }
  const std::vector<Candidate> c{cand(rect(40, 30, 50, 40), 0.9, Embedding{})};
  const FrameResult r = e.step(30, c);
  EXPECT_EQ(r.instances[0].path, Path::Reid);
  EXPECT_DOUBLE_EQ(*r.instances[0].match_value, 1.0);
  EXPECT_EQ(e.instances()[0].missing_streak, 0u);
  EXPECT_EQ(e.instances()[0].gallery.size(), 11u);
}

TEST(Step, ReidDisabledOrAppendOff) {
  for (const bool enabled : {false, true}) {
    CascadeConfig cfg;
    cfg.reid_path_enabled = enabled;
    cfg.append_on_reid = false;
    CascadeEngine e(cfg);
    const std::vector<Candidate> c0{cand(rect(0, 0, 10, 10), 0.9, Embedding{})};
    e.init(0, {{1, rect(0, 0, 10, 10)}}, c0);
    const std::vector<Candidate> c{cand(rect(40, 30, 50, 40), 0.9, Embedding{})};
    const FrameResult r = e.step(1, c);
    EXPECT_EQ(r.instances[0].path, enabled ? Path::Reid : Path::Flow);
    EXPECT_EQ(e.instances()[0].gallery.size(), 1u);
  }
}

TEST(Step, ClaimedCandidateUnavailableToLaterIds) {
  CascadeEngine e;
  e.init(0, {{1, rect(10, 10, 20, 20)}, {2, rect(10, 10, 20, 20)}}, {});
  const std::vector<Candidate> c{cand(rect(10, 10, 20, 20), 0.9, Embedding{})};
  const FrameResult r = e.step(1, c);
  EXPECT_EQ(r.instances[0].path, Path::Iou);
  EXPECT_EQ(r.instances[1].path, Path::Flow);
}

TEST(Step, NmsAndEmptyCandidatesFiltered) {
  CascadeEngine e;
  e.init(0, {{1, rect(10, 10, 20, 20)}}, {});
  std::vector<Candidate> c{cand(rect(10, 10, 20, 20), 0.04, Embedding{}),
                           Candidate{Box{10, 10, 20, 20}, 0.9, BitMask(W, H), Embedding{}}};
  EXPECT_EQ(e.step(1, c).instances[0].path, Path::Flow);
  // A lower-score duplicate is suppressed, so the higher one is claimed.
  c = {cand(rect(10, 10, 20, 19), 0.5, Embedding{}), cand(rect(10, 10, 20, 20), 0.9, Embedding{})};
  EXPECT_EQ(e.step(2, c).instances[0].matched_candidate, 1u);
}

TEST(Step, DimensionMismatch) {
  CascadeEngine e;
  e.init(0, {{1, rect(10, 10, 20, 20)}}, {});
  EXPECT_THROW(e.step(1, {}, compose_identity(W + 1, H)), DimensionMismatch);
  const std::vector<Candidate> c{Candidate{{}, 0.9, BitMask(W, H + 1), Embedding{}}};
  EXPECT_THROW(e.step(1, c), DimensionMismatch);
}

TEST(Refiner, IdentityClosingAndEmptying) {
  const std::size_t n = std::size_t{W} * H;
  const FlowField zero(W, H, std::vector<float>(n), std::vector<float>(n));
  std::vector<std::uint8_t> px(n, 0);
  for (int x = 10; x < 30; x += 2) px[20 * W + x] = 1;  // dotted line
  const BitMask dotted = BitMask::from_dense(W, H, px);
  {
    CascadeEngine e;
    e.init(0, {{1, dotted}}, {});
    EXPECT_EQ(e.step(1, {}, zero).instances[0].mask, dotted);
  }
  {
    CascadeEngine e;
    e.set_refiner(closing_refiner(1));
    e.init(0, {{1, dotted}}, {});
    EXPECT_GE(e.step(1, {}, zero).instances[0].mask.area(), dotted.area());
  }
  {
    CascadeEngine e;
    BitMask seen;
    Box region;
    e.set_refiner([&](const BitMask& m, const Box& b, const RefineContext& ctx) {
      seen = m;
      region = b;
      return BitMask(ctx.frame_width, ctx.frame_height);
    });
    e.init(0, {{1, rect(20, 20, 30, 30)}}, {});
    const FrameResult r = e.step(1, {});
    EXPECT_TRUE(r.instances[0].mask.empty());
    EXPECT_EQ(seen, rect(20, 20, 30, 30));
    EXPECT_EQ(region, (Box{19, 19, 31, 31}));
    EXPECT_TRUE(e.instances()[0].alive);
    EXPECT_EQ(e.step(2, {}).instances.size(), 1u);
  }
}

TEST(Step, IdenticalCandidateAlwaysClaimedViaIou) {
  for (double rho : {0.01, 0.3, 0.9, 0.999}) {
    CascadeConfig cfg;
    cfg.rho_iou = rho;
    CascadeEngine e(cfg);
    e.init(0, {{1, rect(5, 5, 25, 25)}}, {});
    const std::vector<Candidate> c{cand(rect(5, 5, 25, 25), 0.9, Embedding{})};
    EXPECT_EQ(e.step(1, c).instances[0].path, Path::Iou);
  }
}

namespace {

SimSequence sim(const std::string& name, std::uint64_t seed) {
  return generate(preset(name, seed));
}

}  // namespace

TEST(RunSequence, OneFrameEqualsInit) {
  const auto s = sim("crossing", 1);
  const auto frames = s.sequence_frames();
  const auto run = run_sequence(s.first_masks(), std::span(frames).first(1), CascadeConfig{});
  CascadeEngine e;
  EXPECT_EQ(run.results.size(), 1u);
  EXPECT_EQ(run.results[0], e.init(0, s.first_masks(), frames[0].candidates));
  EXPECT_EQ(run.latencies_us.size(), 1u);
}

TEST(RunSequence, ExclusivityPriorityAndDeterminism) {
  for (const char* name : {"crossing", "exit-reenter", "crowd"}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const auto s = sim(name, seed);
      const auto frames = s.sequence_frames();
      const auto a = run_sequence(s.first_masks(), frames, CascadeConfig{});
      const auto b = run_sequence(s.first_masks(), frames, CascadeConfig{});
      EXPECT_EQ(a.results, b.results);
      for (const auto& r : a.results) {
        std::set<std::size_t> used;
        for (const auto& i : r.instances) {
          if (i.matched_candidate) {
            EXPECT_TRUE(used.insert(*i.matched_candidate).second) << name << " frame " << r.frame_id;
          }
        }
      }
    }
  }
}

TEST(RunSequence, RaisingRhoIouNeverAddsIouEvents) {
  const auto s = sim("crowd", 3);
  const auto frames = s.sequence_frames();
  std::size_t prev_non_iou = 0;
  for (double rho : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    CascadeConfig cfg;
    cfg.rho_iou = rho;
    // Isolate the IOU threshold from Re-ID side effects.
    cfg.reid_path_enabled = false;
    const auto run = run_sequence(s.first_masks(), frames, cfg);
    std::size_t non_iou = 0;
    for (const auto& r : run.results) {
      for (const auto& i : r.instances) non_iou += i.path != Path::Iou;
    }
    EXPECT_GE(non_iou, prev_non_iou) << "rho_iou " << rho;
    prev_non_iou = non_iou;
  }
}

TEST(RunSequence, StreamVisitsEachFrameOnce) {
  const auto s = sim("exit-reenter", 2);
  const auto frames = s.sequence_frames();
  std::size_t pulled = 0;
  FrameSource src = [&, inner = frames_from(frames)](SequenceFrame& f) mutable {
    const bool ok = inner(f);
    pulled += ok;
    return ok;
  };
  CascadeEngine e;
  std::size_t sunk = 0;
  const StreamStats st = run_stream(e, s.first_masks(), src, [&](const FrameResult&, double) { ++sunk; });
  EXPECT_EQ(pulled, frames.size());
  EXPECT_EQ(sunk, frames.size());
  EXPECT_EQ(st.frames, frames.size());
  EXPECT_EQ(e.frames_processed(), frames.size());
}

namespace {

// First path after the object is back in view for a stretch.
struct Recovery {
  bool gap = false;
  std::optional<Path> path;
  bool correct = false;
};

Recovery first_recovery(const SimSequence& s, const SequenceRun& run, InstanceId id) {
  Recovery out;
  std::size_t k = 0;
  for (; k < s.frames.size(); ++k) {
    if (s.frames[k].visible_fraction.at(id) < s.spec.detector.min_visible_fraction) {
      out.gap = true;
      break;
    }
  }
  for (; k < s.frames.size(); ++k) {
    const auto& inst = *std::find_if(run.results[k].instances.begin(), run.results[k].instances.end(),
                                     [&](const InstanceResult& r) { return r.id == id; });
    if (inst.path != Path::Flow) {
      out.path = inst.path;
      out.correct = s.frames[k].sources.at(*inst.matched_candidate) == id;
      break;
    }
  }
  return out;
}

}  // namespace

TEST(RunSequence, OcclusionGapRecoveredOnceViaReid) {
  const auto s = sim("crossing", 5);
  const auto frames = s.sequence_frames();
  const auto run = run_sequence(s.first_masks(), frames, CascadeConfig{});
  const Recovery r = first_recovery(s, run, 1);
  ASSERT_TRUE(r.gap);
  EXPECT_EQ(r.path, Path::Reid);
  EXPECT_TRUE(r.correct);
  std::size_t reid_events = 0;
  for (const auto& f : run.results) {
    for (const auto& i : f.instances) reid_events += i.id == 1 && i.path == Path::Reid;
  }
  EXPECT_EQ(reid_events, 1u);

  CascadeConfig off;
  off.reid_path_enabled = false;
  const auto run_off = run_sequence(s.first_masks(), frames, off);
  const Recovery r_off = first_recovery(s, run_off, 1);
  EXPECT_NE(r_off.path, Path::Reid);
  EXPECT_FALSE(r_off.path && r_off.correct);
}
