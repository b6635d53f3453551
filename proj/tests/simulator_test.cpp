#include <gtest/gtest.h>

#include "ovslink/cascade.hpp"
#include "ovslink/simulator.hpp"

using namespace ovslink;

namespace {

SceneSpec two_rects() {
  SceneSpec s;
  s.width = 80;
  s.height = 40;
  s.frames = 30;
  s.detector.miss_prob = 0.0;
  s.detector.fp_rate = 0.0;
  s.detector.jitter = 0;
  // Object 1 slides right behind object 2, which stays put at x = 40..60.
  s.objects.push_back({1, Shape::Rectangle, 10, 10, {{0, 0, 10}, {29, 58, 10}}, 1});
  s.objects.push_back({2, Shape::Rectangle, 20, 20, {{0, 40, 5}}, 0});
  return s;
}

}  // namespace

TEST(SceneSpec, Validation) {
  SceneSpec s = two_rects();
  EXPECT_NO_THROW(s.validate());
  s.objects[0].width = 100;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = two_rects();
  s.objects[1].id = 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = two_rects();
  s.objects[0].track = {{0, 0, 0}, {0, 5, 5}};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = two_rects();
  s.detector.miss_prob = 1.5;
  EXPECT_THROW(SceneGenerator{s}, std::invalid_argument);
}

TEST(Shapes, ParseAndPrint) {
  EXPECT_EQ(parse_shape("ellipse"), Shape::Ellipse);
  EXPECT_EQ(parse_shape(to_string(Shape::Rectangle)), Shape::Rectangle);
  EXPECT_FALSE(parse_shape("hexagon"));
}

TEST(Generate, DeterministicInSeed) {
  for (const auto& name : preset_names()) {
    const auto a = generate(preset(name, 7));
    const auto b = generate(preset(name, 7));
    ASSERT_EQ(a.frames.size(), b.frames.size());
    for (std::size_t k = 0; k < a.frames.size(); ++k) {
      EXPECT_EQ(a.frames[k].truth, b.frames[k].truth);
      EXPECT_EQ(a.frames[k].flow, b.frames[k].flow);
      ASSERT_EQ(a.frames[k].candidates.size(), b.frames[k].candidates.size());
      for (std::size_t c = 0; c < a.frames[k].candidates.size(); ++c) {
        EXPECT_EQ(a.frames[k].candidates[c].mask, b.frames[k].candidates[c].mask);
        EXPECT_EQ(a.frames[k].candidates[c].embedding, b.frames[k].candidates[c].embedding);
        EXPECT_EQ(a.frames[k].candidates[c].score, b.frames[k].candidates[c].score);
      }
    }
  }
}

TEST(Generate, GroundTruthMasksDisjoint) {
  for (const auto& name : preset_names()) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const auto s = generate(preset(name, seed));
      for (std::size_t k = 0; k < s.frames.size(); ++k) {
        const auto& f = s.frames[k];
        for (auto a = f.truth.begin(); a != f.truth.end(); ++a) {
          for (auto b = std::next(a); b != f.truth.end(); ++b) {
            EXPECT_EQ(intersection_area(a->second, b->second), 0u) << name << " frame " << k;
          }
        }
        if (k == 0) EXPECT_TRUE(f.flow.is_zero());
      }
    }
  }
}

TEST(Generate, FlowReproducesUnoccludedMotion) {
  // Exact check against a geometry oracle: the un-occluded portion of each
  // object's mask at t is its mask at t-1 shifted by the integer motion,
  // intersected with the pixels it owns at t.
  for (const auto& name : preset_names()) {
  const auto s = generate(preset(name, 4));
  SceneGenerator gen(s.spec);
  for (std::size_t k = 1; k < s.frames.size(); ++k) {
    for (std::size_t i = 0; i < s.spec.objects.size(); ++i) {
      const InstanceId id = s.spec.objects[i].id;
      const BitMask& now = s.frames[k].truth.at(id);
      const BitMask warped = warp_mask(s.frames[k - 1].truth.at(id), s.frames[k].flow);
      const auto [x0, y0] = gen.position(i, static_cast<std::int64_t>(k) - 1);
      const auto [x1, y1] = gen.position(i, static_cast<std::int64_t>(k));
      const auto prev = s.frames[k - 1].truth.at(id).to_dense();
      const auto cur = now.to_dense();
      const auto w = warped.to_dense();
      const auto fw = static_cast<std::int64_t>(s.spec.width);
      const auto fh = static_cast<std::int64_t>(s.spec.height);
      for (std::int64_t y = 0; y < fh; ++y) {
        for (std::int64_t x = 0; x < fw; ++x) {
          if (!cur[y * fw + x]) continue;
          const std::int64_t sx = x + (x0 - x1), sy = y + (y0 - y1);
          const bool was = sx >= 0 && sy >= 0 && sx < fw && sy < fh && prev[sy * fw + sx];
          EXPECT_EQ(static_cast<bool>(w[y * fw + x]), was);
        }
      }
    }
  }
  }
}

TEST(Generate, NoiselessStaticSceneIsAllIou) {
  const auto s = generate(preset("static", 3));
  for (const auto& f : s.frames) {
    EXPECT_TRUE(f.flow.is_zero());
    ASSERT_EQ(f.candidates.size(), f.truth.size());
    for (std::size_t c = 0; c < f.candidates.size(); ++c) {
      EXPECT_EQ(f.candidates[c].mask, f.truth.at(*f.sources[c]));
    }
  }
  const auto frames = s.sequence_frames();
  const auto run = run_sequence(s.first_masks(), frames, CascadeConfig{});
  for (std::size_t k = 0; k < run.results.size(); ++k) {
    for (const auto& i : run.results[k].instances) {
      EXPECT_EQ(i.path, Path::Iou);
      EXPECT_EQ(i.mask, s.frames[k].truth.at(i.id));
    }
  }
}

TEST(Generate, OccludedObjectHasNoCandidate) {
  const auto s = generate(two_rects());
  SceneGenerator gen(s.spec);
  for (std::size_t k = 0; k < s.frames.size(); ++k) {
    // Geometry oracle: object 1 spans [x, x+10) with x = round(2k);
    // object 2 covers [40, 60) in x and fully covers it in y.
    const auto [x, y] = gen.position(0, static_cast<std::int64_t>(k));
    const std::int64_t hidden = std::max<std::int64_t>(0, std::min<std::int64_t>(x + 10, 60) - std::max<std::int64_t>(x, 40));
    const double visible = (10.0 - static_cast<double>(hidden)) / 10.0;
    EXPECT_DOUBLE_EQ(s.frames[k].visible_fraction.at(1), visible) << "frame " << k;
    const bool has = std::count(s.frames[k].sources.begin(), s.frames[k].sources.end(),
                                std::optional<InstanceId>(1)) > 0;
    EXPECT_EQ(has, visible >= 0.25) << "frame " << k;
  }
}

TEST(Generate, CandidatesMatchTruthWithoutNoise) {
  SceneSpec s = two_rects();
  s.objects[0].track = {{0, 0, 10}};  // no occlusion
  const auto g = generate(s);
  for (const auto& f : g.frames) {
    ASSERT_EQ(f.candidates.size(), 2u);
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_EQ(f.candidates[c].mask, f.truth.at(*f.sources[c]));
      EXPECT_TRUE(box_consistent(f.candidates[c]));
    }
  }
}

TEST(Generate, JitterStaysWithinAmplitude) {
  SceneSpec s = two_rects();
  s.detector.jitter = 2;
  const auto g = generate(s);
  for (const auto& f : g.frames) {
    for (std::size_t c = 0; c < f.candidates.size(); ++c) {
      const auto& cand = f.candidates[c];
      EXPECT_TRUE(box_consistent(cand));
      const Box t = f.truth.at(*f.sources[c]).bounding_box();
      const Box b = cand.mask.bounding_box();
      EXPECT_LE(std::abs(b.x_min - t.x_min), 2.0);
      EXPECT_LE(std::abs(b.x_max - t.x_max), 2.0);
      EXPECT_LE(std::abs(b.y_min - t.y_min), 2.0);
      EXPECT_LE(std::abs(b.y_max - t.y_max), 2.0);
    }
  }
}

TEST(Presets, Shapes) {
  EXPECT_THROW(preset("nope"), std::invalid_argument);
  for (const auto& name : preset_names()) EXPECT_NO_THROW(preset(name, 1));

  const auto crossing = generate(preset("crossing", 1));
  EXPECT_EQ(crossing.frames.front().truth.size(), 2u);

  const auto crowd = preset("crowd", 1);
  EXPECT_EQ(crowd.objects.size(), 5u);
  EXPECT_DOUBLE_EQ(crowd.detector.fp_rate, 0.2);
  PresetOptions big;
  big.objects = 10;
  big.width = 854;
  big.height = 480;
  EXPECT_EQ(preset("crowd", 1, big).objects.size(), 10u);
  EXPECT_THROW(preset("static", 1, big), std::invalid_argument);

  const auto st = generate(preset("static", 1));
  for (const auto& f : st.frames) EXPECT_TRUE(f.flow.is_zero());
}

TEST(Presets, ExitReenterHasFramesWithoutTheObject) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate(preset("exit-reenter", seed));
    std::size_t absent = 0;
    bool back = false;
    for (const auto& f : s.frames) {
      const bool has = std::count(f.sources.begin(), f.sources.end(),
                                  std::optional<InstanceId>(1)) > 0;
      if (!has) ++absent;
      if (absent > 0 && has) back = true;
    }
    EXPECT_GE(absent, 1u);
    EXPECT_TRUE(back) << "seed " << seed;
  }
}

TEST(Presets, CrowdHasFalsePositives) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = generate(preset("crowd", seed));
    std::size_t fp = 0;
    for (const auto& f : s.frames) {
      fp += std::count(f.sources.begin(), f.sources.end(), std::nullopt);
    }
    EXPECT_GE(fp, 1u) << "seed " << seed;
  }
}

TEST(Embeddings, SeparableBelowHalfSpacing) {
  // sigma at 0.45 of the spacing; same-id queries should pass the default
  // quorum rule against a gallery of earlier same-id draws.
  std::size_t trials = 0, ok = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PresetOptions o;
    o.noise_sigma = 0.45 * 3.0;
    const auto s = generate(preset("crowd", seed, o));
    std::map<InstanceId, Gallery> galleries;
    for (const auto& f : s.frames) {
      for (std::size_t c = 0; c < f.candidates.size(); ++c) {
        if (!f.sources[c]) continue;
        auto [it, fresh] = galleries.try_emplace(*f.sources[c], *f.sources[c], 64);
        if (!it->second.empty()) {
          ++trials;
          ok += gallery_match(it->second, f.candidates[c].embedding).has_value();
        }
        it->second.add(f.candidates[c].embedding);
      }
    }
  }
  ASSERT_GT(trials, 1000u);
  EXPECT_GE(static_cast<double>(ok) / trials, 0.99);
}
