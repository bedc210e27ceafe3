#include <toothbox/phantom.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include <unistd.h>

using namespace toothbox;

namespace {

ToothSpec tooth(Arch arch, int cls, double x, double y, double height = 21) {
  ToothSpec t;
  t.arch = arch;
  t.tooth_class = cls;
  t.center_x_mm = x;
  t.center_y_mm = y;
  t.height_mm = height;
  return t;
}

PhantomSpec small_spec() {
  PhantomSpec s;
  s.dims = {64, 64, 96};
  s.spacing = {0.5f, 0.5f, 0.5f};
  s.teeth = {tooth(Arch::upper, 1, 10, 10), tooth(Arch::lower, 1, 10, 10), tooth(Arch::upper, 6, 22, 16),
             tooth(Arch::lower, 7, 22, 20)};
  return s;
}

// Brute-force tight bounds of every tooth id in the label map.
std::map<int, VoxelBox> label_bounds(const VoxelVolume& labels) {
  std::map<int, VoxelBox> out;
  for (int z = 0; z < labels.nz(); ++z) {
    for (int y = 0; y < labels.ny(); ++y) {
      for (int x = 0; x < labels.nx(); ++x) {
        const int id = labels.at(x, y, z);
        if (id == 0) continue;
        auto [it, fresh] = out.try_emplace(id, VoxelBox{{x, y, z}, {x + 1, y + 1, z + 1}});
        if (!fresh) {
          auto& b = it->second;
          b.min = {std::min(b.min[0], x), std::min(b.min[1], y), std::min(b.min[2], z)};
          b.max = {std::max(b.max[0], x + 1), std::max(b.max[1], y + 1), std::max(b.max[2], z + 1)};
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST(Phantom, NoTeethGivesUniformBackground) {
  PhantomSpec s;
  s.dims = {16, 16, 16};
  const auto ph = generate_phantom(s);
  EXPECT_TRUE(ph.truth.teeth.empty());
  for (auto v : ph.volume.data()) ASSERT_EQ(v, s.density.background);
}

TEST(Phantom, TenMillimetreToothSpansTwentyVoxels) {
  PhantomSpec s;
  s.dims = {32, 32, 64};
  s.teeth = {tooth(Arch::lower, 3, 8, 8, 10)};
  const auto ph = generate_phantom(s);
  ASSERT_EQ(ph.truth.teeth.size(), 1u);
  EXPECT_NEAR(ph.truth.teeth[0].box.extent(2), 20, 1);
}

TEST(Phantom, NegativeGapMakesCounterpartsOverlapInZ) {
  auto s = small_spec();
  s.gap_mm = -2;
  const auto ph = generate_phantom(s);
  bool overlap = false;
  for (const auto& u : ph.truth.teeth) {
    for (const auto& l : ph.truth.teeth) {
      if (u.arch == Arch::upper && l.arch == Arch::lower && u.box.max[2] > l.box.min[2] && l.box.max[2] > u.box.min[2]) {
        overlap = true;
      }
    }
  }
  EXPECT_TRUE(overlap);
}

TEST(Phantom, PositiveGapSeparatesArches) {
  const auto ph = generate_phantom(small_spec());
  int upper_bottom = 0;
  int lower_top = 1 << 30;
  for (const auto& t : ph.truth.teeth) {
    if (t.arch == Arch::upper) upper_bottom = std::max(upper_bottom, t.box.max[2]);
    else lower_top = std::min(lower_top, t.box.min[2]);
  }
  EXPECT_LE(upper_bottom + 5, lower_top);  // 3 mm = 6 voxels, minus rasterization
}

TEST(Phantom, DeterministicForFixedSeed) {
  auto s = small_spec();
  s.noise_amplitude = 40;
  s.seed = 99;
  const auto a = generate_phantom(s);
  const auto b = generate_phantom(s);
  EXPECT_EQ(a.volume, b.volume);
  EXPECT_EQ(a.truth, b.truth);
  s.seed = 100;
  EXPECT_NE(generate_phantom(s).volume, a.volume);
}

TEST(Phantom, GroundTruthBoxesAreTight) {
  const auto ph = generate_phantom(small_spec());
  ASSERT_TRUE(ph.truth.labels);
  const auto bounds = label_bounds(*ph.truth.labels);
  ASSERT_EQ(bounds.size(), ph.truth.teeth.size());
  for (const auto& t : ph.truth.teeth) {
    EXPECT_EQ(bounds.at(t.id), t.box) << "tooth " << t.id;
  }
}

TEST(Phantom, ToothVoxelsCarryToothDensity) {
  const auto s = small_spec();
  const auto ph = generate_phantom(s);
  const auto& lab = *ph.truth.labels;
  long long n = 0;
  for (std::size_t i = 0; i < lab.data().size(); ++i) {
    if (lab.data()[i] == 0) continue;
    ++n;
    ASSERT_EQ(ph.volume.data()[i], s.density.tooth);
  }
  long long expected = 0;
  for (const auto& t : ph.truth.teeth) expected += t.voxel_count;
  EXPECT_EQ(n, expected);
}

TEST(Phantom, SectionsAreTightPerSlice) {
  const auto ph = generate_phantom(small_spec());
  const auto& lab = *ph.truth.labels;
  for (const auto& t : ph.truth.teeth) {
    ASSERT_EQ(static_cast<int>(t.sections.size()), t.box.extent(2));
    for (const auto& s : t.sections) {
      Box2D b{1 << 30, 1 << 30, -1, -1};
      for (int y = 0; y < lab.ny(); ++y) {
        for (int x = 0; x < lab.nx(); ++x) {
          if (lab.at(x, y, s.z) != t.id) continue;
          b = {std::min(b.x_min, x), std::min(b.y_min, y), std::max(b.x_max, x + 1), std::max(b.y_max, y + 1)};
        }
      }
      EXPECT_EQ(b, s.box);
    }
  }
}

TEST(Phantom, InvalidPhantomSpecsRejected) {
  auto s = small_spec();
  s.teeth[0].tooth_class = 9;
  EXPECT_THROW(generate_phantom(s), ValidationError);
  s = small_spec();
  s.teeth[0].height_mm = -1;
  EXPECT_THROW(generate_phantom(s), ValidationError);
  s = small_spec();
  s.teeth[0].center_x_mm = 1000;
  EXPECT_THROW(generate_phantom(s), ValidationError);
}

TEST(Phantom, PhantomSpecJsonRoundTrip) {
  auto s = small_spec();
  s.seed = 5;
  s.noise_amplitude = 12;
  s.occlusal_plane_mm = 24;
  const auto back = phantom_spec_from_json(to_json(s));
  EXPECT_EQ(generate_phantom(back).volume, generate_phantom(s).volume);
}

TEST(Phantom, GroundTruthFileRoundTrip) {
  const auto ph = generate_phantom(small_spec());
  const auto dir = std::filesystem::temp_directory_path() / ("toothbox_phantom_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  save_ground_truth(ph.truth, dir / "gt.json");
  EXPECT_TRUE(std::filesystem::exists(dir / "gt.labels.vol"));
  EXPECT_EQ(load_ground_truth(dir / "gt.json"), ph.truth);
}

TEST(Phantom, GroundTruthRejectsDuplicateIds) {
  auto j = to_json(generate_phantom(small_spec()).truth);
  j["teeth"][1]["id"] = j["teeth"][0]["id"];
  EXPECT_THROW(ground_truth_from_json(j), ValidationError);
}

TEST(Phantom, ArchPhantomHasRequestedTeethAndFdi) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ArchParams p;
    p.seed = seed;
    p.upper_count = 3 + static_cast<int>(seed);
    p.lower_count = 12 - static_cast<int>(seed);
    const auto spec = make_arch_phantom(p);
    const auto ph = generate_phantom(spec);
    int upper = 0;
    int lower = 0;
    std::set<int> fdis;
    for (const auto& t : ph.truth.teeth) {
      (t.arch == Arch::upper ? upper : lower)++;
      ASSERT_TRUE(t.fdi);
      EXPECT_EQ(*t.fdi % 10, t.label.value());
      const int q = *t.fdi / 10;
      EXPECT_EQ(q <= 2, t.arch == Arch::upper);
      fdis.insert(*t.fdi);
    }
    EXPECT_EQ(upper, p.upper_count);
    EXPECT_EQ(lower, p.lower_count);
    EXPECT_EQ(fdis.size(), ph.truth.teeth.size());
  }
}

TEST(Phantom, EdgeToEdgeSlotIsAlwaysPresentAndAligned) {
  ArchParams p;
  p.upper_count = 6;
  p.lower_count = 6;
  p.edge_to_edge = {3};
  const auto spec = make_arch_phantom(p);
  const ToothSpec* up = nullptr;
  const ToothSpec* lo = nullptr;
  for (const auto& t : spec.teeth) {
    if (t.fdi == 15) up = &t;
    if (t.fdi == 45) lo = &t;
  }
  ASSERT_TRUE(up && lo);
  EXPECT_DOUBLE_EQ(up->center_x_mm, lo->center_x_mm);
  EXPECT_DOUBLE_EQ(up->center_y_mm, lo->center_y_mm);
}
