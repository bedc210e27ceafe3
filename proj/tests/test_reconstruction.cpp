#include <toothbox/pipeline.hpp>
#include <toothbox/reconstruction.hpp>

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace toothbox;

namespace {

// One voxel per sampled slice, 1.4 mm apart: slice index == sample index.
SliceGrid unit_grid(int n) {
  SliceGrid g;
  for (int z = 0; z < n; ++z) g.slices.push_back(z);
  g.z_spacing_mm = 1.4;
  g.step_mm = 1.4;
  return g;
}

const MatchConfig kCfg = MatchConfig::for_step(1.4);

Detection2D det(int slice, Box2D box, int label) { return {slice, box, Label(label), 1.0}; }

ToothVolume volume_with(std::initializer_list<Detection2D> ds) {
  ToothVolume t;
  std::size_t i = 0;
  for (const auto& d : ds) t.add(d, i++);
  return t;
}

DetectionMap to_map(const std::vector<Detection2D>& ds) {
  DetectionMap m;
  for (const auto& d : ds) m[d.slice].push_back(d);
  return m;
}

const Box2D kBox{10, 10, 20, 20};

}  // namespace

TEST(StepGate, Boundaries) {
  EXPECT_EQ(step_gate(1.4, 1.4), 0);
  EXPECT_EQ(step_gate(0.0, 1.4), 0);
  EXPECT_EQ(step_gate(2.8, 1.4), 1);
}

TEST(MatchCost, PerfectAdjacentMatchIsZero) {
  const auto t = volume_with({det(0, kBox, 4)});
  EXPECT_NEAR(match_cost(t, det(1, kBox, 4), kCfg, 1.4), 0.0, 1e-12);
}

TEST(MatchCost, OneSkippedSliceCostsHalfBeta) {
  const auto t = volume_with({det(0, kBox, 4)});
  EXPECT_NEAR(match_cost(t, det(2, kBox, 4), kCfg, 1.4), 0.5, 1e-12);
  EXPECT_TRUE(gated_match_cost(t, det(2, kBox, 4), kCfg, 1.4));
}

TEST(MatchCost, UnseenLabelCostsPointTwoBeta) {
  const auto t = volume_with({det(0, kBox, 4)});
  EXPECT_NEAR(match_cost(t, det(1, kBox, 5), kCfg, 1.4), 0.2, 1e-12);
}

TEST(MatchCost, ZeroOverlapIsRejected) {
  const auto t = volume_with({det(0, kBox, 4)});
  const auto far = det(1, Box2D{30, 30, 40, 40}, 4);
  EXPECT_GT(match_cost(t, far, kCfg, 1.4), kCfg.beta);
  EXPECT_FALSE(gated_match_cost(t, far, kCfg, 1.4));
}

TEST(MatchCost, TwoSkippedSlicesAreRejected) {
  const auto t = volume_with({det(0, kBox, 4)});
  // Both the cost and the lifecycle refuse a match three samples later.
  EXPECT_NEAR(match_cost(t, det(3, kBox, 4), kCfg, 1.4), 0.75, 1e-12);
  const auto vols = reconstruct(to_map({det(0, kBox, 4), det(1, kBox, 4), det(2, kBox, 4), det(5, kBox, 4),
                                        det(6, kBox, 4), det(7, kBox, 4)}),
                                unit_grid(10), kCfg);
  ASSERT_EQ(vols.size(), 2u);
  EXPECT_EQ(vols[0].last().slice, 2);
  EXPECT_EQ(vols[1].matches.front().slice, 5);
}

TEST(MatchCost, LabelTermUsesHistogram) {
  const auto t = volume_with({det(0, kBox, 4), det(1, kBox, 4), det(2, kBox, 5), det(3, kBox, 4)});
  EXPECT_NEAR(match_cost(t, det(4, kBox, 5), kCfg, 1.4), 0.2 * (1 - 0.25), 1e-12);
}

TEST(MatchCost, DefaultWeightsFromStep) {
  const auto c = MatchConfig::for_step(1.5, 2.0);
  EXPECT_DOUBLE_EQ(c.gamma_mm, 1.5);
  EXPECT_DOUBLE_EQ(c.w1, 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(c.w2, 2.0 * (1 + 1e-6));
  EXPECT_DOUBLE_EQ(c.w3, 0.4);
}

TEST(Reconstruct, ThreeConsecutiveSlices) {
  const auto vols = reconstruct(to_map({det(0, kBox, 2), det(1, kBox, 2), det(2, kBox, 2)}), unit_grid(5), kCfg);
  ASSERT_EQ(vols.size(), 1u);
  EXPECT_EQ(vols[0].total(), 3);
  EXPECT_EQ(vols[0].final_label, Label(2));
}

TEST(Reconstruct, OneSkippedSliceIsBridged) {
  const auto vols = reconstruct(to_map({det(1, kBox, 2), det(2, kBox, 2), det(4, kBox, 2)}), unit_grid(6), kCfg);
  ASSERT_EQ(vols.size(), 1u);
  EXPECT_EQ(vols[0].matches.front().slice, 1);
  EXPECT_EQ(vols[0].last().slice, 4);
}

TEST(Reconstruct, TwoSlicesAreNotATooth) {
  EXPECT_TRUE(reconstruct(to_map({det(0, kBox, 2), det(1, kBox, 2)}), unit_grid(4), kCfg).empty());
}

TEST(Reconstruct, MislabeledMiddleDetection) {
  const auto vols = reconstruct(to_map({det(0, kBox, 7), det(1, kBox, 6), det(2, kBox, 7)}), unit_grid(3), kCfg);
  ASSERT_EQ(vols.size(), 1u);
  EXPECT_EQ(vols[0].total(), 3);
  EXPECT_EQ(*vols[0].final_label, Label(7));
}

TEST(Reconstruct, ShortVolumesDropped) {
  MatchConfig cfg = kCfg;
  cfg.min_height_mm = 5.0;  // three samples span 3 * 1.4 = 4.2 mm
  EXPECT_TRUE(reconstruct(to_map({det(0, kBox, 2), det(1, kBox, 2), det(2, kBox, 2)}), unit_grid(3), cfg).empty());
}

TEST(Reconstruct, TwoTeethSideBySide) {
  const Box2D other{40, 10, 50, 20};
  std::vector<Detection2D> ds;
  for (int z = 0; z < 6; ++z) {
    ds.push_back(det(z, kBox, 1));
    ds.push_back(det(z, other, 2));
  }
  const auto vols = reconstruct(to_map(ds), unit_grid(6), kCfg);
  ASSERT_EQ(vols.size(), 2u);
  for (const auto& v : vols) EXPECT_EQ(v.total(), 6);
}

TEST(FinalizeLabel, Examples) {
  EXPECT_EQ(finalize_label(volume_with({det(0, kBox, 7), det(1, kBox, 6), det(2, kBox, 7)})), Label(7));
  EXPECT_EQ(finalize_label(volume_with({det(0, kBox, 3)})), Label(3));
  EXPECT_EQ(finalize_label(volume_with({det(0, kBox, 4), det(1, kBox, 5), det(2, kBox, 5), det(3, kBox, 4)})),
            Label(5));
  EXPECT_EQ(finalize_label(volume_with({det(0, kBox, 5), det(1, kBox, 4), det(2, kBox, 4), det(3, kBox, 5)})),
            Label(4));
  // Equal counts and runs: lowest class.
  EXPECT_EQ(finalize_label(volume_with({det(0, kBox, 6), det(1, kBox, 2)})), Label(2));
}

TEST(Interpolate, MidpointOfSkippedSlice) {
  const auto t = volume_with({det(0, Box2D{10, 0, 20, 5}, 1), det(2, Box2D{14, 0, 24, 5}, 1)});
  const auto s = interpolate_volume(t);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[1].slice, 1);
  EXPECT_DOUBLE_EQ(s[1].box.x_min, 12.0);
  EXPECT_DOUBLE_EQ(s[1].box.x_max, 22.0);
}

TEST(Interpolate, AdjacentMatchesUnchanged) {
  const auto t = volume_with({det(3, Box2D{1, 2, 3, 4}, 1), det(4, Box2D{2, 3, 5, 6}, 1)});
  const auto s = interpolate_volume(t);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_DOUBLE_EQ(s[0].box.x_min, 1);
  EXPECT_DOUBLE_EQ(s[1].box.y_max, 6);
}

TEST(Interpolate, MonotoneBetweenEndpoints) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> c(0, 50), gap(1, 6);
  for (int i = 0; i < 200; ++i) {
    ToothVolume t;
    int z = 0;
    for (int k = 0; k < 5; ++k) {
      const int x0 = c(rng), y0 = c(rng);
      t.add(det(z, Box2D{x0, y0, x0 + 1 + c(rng), y0 + 1 + c(rng)}, 1), 0);
      z += gap(rng);
    }
    const auto s = interpolate_volume(t);
    for (std::size_t k = 0; k + 1 < t.matches.size(); ++k) {
      const auto& a = t.matches[k];
      const auto& b = t.matches[k + 1];
      auto first = std::find_if(s.begin(), s.end(), [&](auto& x) { return x.slice == a.slice; });
      ASSERT_NE(first, s.end());
      for (auto it = first; it->slice < b.slice; ++it) {
        auto nxt = std::next(it);
        const double dir = b.box.x_min - a.box.x_min;
        EXPECT_GE((nxt->box.x_min - it->box.x_min) * dir, -1e-12);
        EXPECT_EQ(nxt->slice, it->slice + 1);
      }
    }
  }
}

TEST(BoundingBox, NoMarginSingleBox) {
  MatchConfig cfg = kCfg;
  cfg.context_margin_mm = 0;
  const auto t = volume_with({det(3, kBox, 1), det(6, kBox, 1), det(9, kBox, 1)});
  const auto b = bounding_box_3d(t, cfg, {64, 64, 64}, {0.5f, 0.5f, 0.5f});
  EXPECT_EQ(b.vox, (VoxelBox{{10, 10, 3}, {20, 20, 10}}));
  EXPECT_DOUBLE_EQ(b.mm_min[2], 1.5);
  EXPECT_DOUBLE_EQ(b.mm_max[0], 10.0);
}

TEST(BoundingBox, OneMillimetreMarginClampedAtFaces) {
  MatchConfig cfg = kCfg;
  cfg.context_margin_mm = 1.0;
  const auto t = volume_with({det(0, Box2D{0, 10, 8, 20}, 1), det(3, Box2D{0, 10, 8, 20}, 1), det(6, Box2D{0, 10, 8, 20}, 1)});
  const auto b = bounding_box_3d(t, cfg, {64, 64, 64}, {0.5f, 0.5f, 0.5f});
  EXPECT_EQ(b.vox, (VoxelBox{{0, 8, 0}, {10, 22, 9}}));
}

TEST(BoundingBox, NoiseFreeHullContainsGroundTruth) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ArchParams p;
    p.seed = seed;
    p.upper_count = 6;
    p.lower_count = 6;
    const auto ph = generate_phantom(make_arch_phantom(p));
    PipelineConfig cfg;
    const auto r = run_pipeline(ph.volume, nullptr, &ph.truth, cfg);
    ASSERT_EQ(r.undivided.size(), ph.truth.teeth.size());
    for (const auto& t : ph.truth.teeth) {
      const bool contained = std::any_of(r.undivided.begin(), r.undivided.end(),
                                         [&](const Box3D& b) { return b.vox.contains(t.box); });
      EXPECT_TRUE(contained) << "seed " << seed << " tooth " << t.id;
    }
  }
}

TEST(Fdi, QuadrantMapping) {
  auto make = [](int x, int z, int label) {
    Box3D b = make_box3d(1, VoxelBox{{x, 0, z}, {x + 2, 2, z + 2}}, {1, 1, 1}, Label(label));
    return b;
  };
  // Two references on the far sides put the midline at x = 50.
  std::vector<Box3D> boxes{make(10, 10, 3), make(90, 80, 3), make(10, 80, 1), make(90, 10, 1)};
  const auto out = assign_fdi(boxes, 50);
  EXPECT_EQ(out[0].fdi, 13);  // upper, patient's right
  EXPECT_EQ(out[1].fdi, 33);  // lower, patient's left
  EXPECT_EQ(out[2].fdi, 41);
  EXPECT_EQ(out[3].fdi, 21);
}

TEST(Fdi, SymmetricPhantomMatchesGroundTruth) {
  ArchParams p;
  p.upper_count = 16;
  p.lower_count = 16;
  const auto ph = generate_phantom(make_arch_phantom(p));
  const auto r = run_pipeline(ph.volume, nullptr, &ph.truth, PipelineConfig{});
  const auto c = match_pred_to_gt(r.boxes.boxes, ph.truth, EvaluationConfig{});
  for (std::size_t g = 0; g < ph.truth.teeth.size(); ++g) {
    ASSERT_TRUE(c.matched[g]);
    EXPECT_EQ(r.boxes.boxes[*c.matched[g]].fdi, ph.truth.teeth[g].fdi) << "tooth " << ph.truth.teeth[g].id;
  }
}

TEST(Lifecycle, RandomStacksObeyRules) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> nslices(3, 25), ntracks(1, 5), coord(0, 80), lab(1, 8);
    std::uniform_real_distribution<double> u(0, 1);
    const int n = nslices(rng);
    std::vector<Detection2D> ds;
    for (int k = 0; k < ntracks(rng); ++k) {
      const int x = coord(rng), y = coord(rng);
      const int start = std::uniform_int_distribution<int>(0, n - 1)(rng);
      const int len = std::uniform_int_distribution<int>(1, n - start)(rng);
      for (int z = start; z < start + len; ++z) {
        if (u(rng) < 0.2) continue;
        ds.push_back(det(z, Box2D{x + (u(rng) < 0.3), y, x + 8, y + 8}, u(rng) < 0.2 ? lab(rng) : 3));
      }
    }
    const auto dets = to_map(ds);
    const auto vols = reconstruct(dets, unit_grid(n), kCfg);
    std::set<std::pair<int, std::size_t>> used;
    for (const auto& v : vols) {
      EXPECT_GE(v.total(), kCfg.min_detections);
      for (std::size_t i = 0; i < v.matches.size(); ++i) {
        EXPECT_TRUE(used.insert({v.matches[i].slice, v.matches[i].source}).second);
        if (i > 0) {
          EXPECT_LE(v.matches[i].slice - v.matches[i - 1].slice, 2);
        }
      }
    }
  }
}

TEST(Lifecycle, IndependentOfWithinSliceOrder) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection2D> ds;
    std::uniform_int_distribution<int> coord(0, 60), lab(1, 8);
    for (int k = 0; k < 4; ++k) {
      const int x = coord(rng), y = coord(rng);
      for (int z = 0; z < 10; ++z) ds.push_back(det(z, Box2D{x, y, x + 10, y + 10}, lab(rng)));
    }
    auto a = to_map(ds);
    auto b = a;
    for (auto& [z, v] : b) std::shuffle(v.begin(), v.end(), rng);
    const auto va = reconstruct(a, unit_grid(10), kCfg);
    const auto vb = reconstruct(b, unit_grid(10), kCfg);
    ASSERT_EQ(va.size(), vb.size());
    for (std::size_t i = 0; i < va.size(); ++i) {
      ASSERT_EQ(va[i].matches.size(), vb[i].matches.size());
      for (std::size_t k = 0; k < va[i].matches.size(); ++k) {
        EXPECT_EQ(va[i].matches[k].slice, vb[i].matches[k].slice);
        EXPECT_EQ(va[i].matches[k].box, vb[i].matches[k].box);
        EXPECT_EQ(va[i].matches[k].label, vb[i].matches[k].label);
      }
      EXPECT_EQ(va[i].final_label, vb[i].final_label);
    }
  }
}
