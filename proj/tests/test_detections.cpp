#include <toothbox/detections.hpp>
#include <toothbox/slab.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace toothbox;

namespace {

Phantom arch_phantom(std::uint64_t seed) {
  ArchParams p;
  p.seed = seed;
  p.upper_count = 7;
  p.lower_count = 7;
  return generate_phantom(make_arch_phantom(p));
}

std::vector<int> sampled(const Phantom& ph) {
  return sample_slices(select_tooth_slab(axial_mean_profile(ph.volume)), ph.volume.spacing().sz);
}

}  // namespace

TEST(DetectionFile, EmptyInputIsEmptyMap) {
  std::istringstream in("");
  EXPECT_TRUE(read_detections(in).empty());
}

TEST(DetectionFile, OneLine) {
  std::istringstream in(R"({"slice": 4, "x_min": 1, "y_min": 2, "x_max": 5, "y_max": 7, "label": 3, "conf": 0.8})");
  const auto m = read_detections(in);
  ASSERT_EQ(m.size(), 1u);
  const auto& d = m.at(4).at(0);
  EXPECT_EQ(d.box, (Box2D{1, 2, 5, 7}));
  EXPECT_EQ(d.label, Label(3));
  EXPECT_DOUBLE_EQ(d.confidence, 0.8);
}

TEST(DetectionFile, LabelNineNamesTheLine) {
  std::istringstream in(
      "{\"slice\": 0, \"x_min\": 0, \"y_min\": 0, \"x_max\": 1, \"y_max\": 1, \"label\": 1}\n"
      "\n"
      "{\"slice\": 0, \"x_min\": 0, \"y_min\": 0, \"x_max\": 1, \"y_max\": 1, \"label\": 9}\n");
  try {
    read_detections(in);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(DetectionFile, MalformedAndInvalidLines) {
  for (const char* bad : {"{not json", "[1, 2]", R"({"slice": 0, "x_min": 0})"}) {
    std::istringstream in(bad);
    EXPECT_THROW(read_detections(in), FormatError) << bad;
  }
  for (const char* bad : {R"({"slice": 0, "x_min": 3, "y_min": 0, "x_max": 3, "y_max": 1, "label": 1})",
                          R"({"slice": -1, "x_min": 0, "y_min": 0, "x_max": 3, "y_max": 1, "label": 1})",
                          R"({"slice": 0, "x_min": 0, "y_min": 0, "x_max": 3, "y_max": 1, "label": 1, "conf": 2})"}) {
    std::istringstream in(bad);
    EXPECT_THROW(read_detections(in), ValidationError) << bad;
  }
}

TEST(DetectionFile, WriteReadRoundTrip) {
  const auto ph = arch_phantom(3);
  NoiseModel n;
  n.center_jitter = 1;
  n.seed = 4;
  const auto dets = synth_detect(ph.truth, sampled(ph), n);
  std::ostringstream out;
  for (const auto& [z, v] : dets) {
    for (const auto& d : v) out << detection_line(d) << '\n';
  }
  std::istringstream in(out.str());
  EXPECT_EQ(read_detections(in), dets);
}

TEST(SynthDetect, NoiseFreeEqualsGroundTruthSections) {
  const auto ph = arch_phantom(1);
  const auto slices = sampled(ph);
  const auto dets = synth_detect(ph.truth, slices, {});
  std::size_t expected = 0;
  for (int z : slices) {
    for (const auto& t : ph.truth.teeth) {
      for (const auto& s : t.sections) {
        if (s.z != z) continue;
        ++expected;
        const auto it = dets.find(z);
        ASSERT_NE(it, dets.end());
        const bool found = std::any_of(it->second.begin(), it->second.end(), [&](const Detection2D& d) {
          return d.box == s.box && d.label == t.label;
        });
        EXPECT_TRUE(found) << "tooth " << t.id << " slice " << z;
      }
    }
  }
  EXPECT_EQ(detection_count(dets), expected);
}

TEST(SynthDetect, FullDropoutIsEmpty) {
  const auto ph = arch_phantom(2);
  NoiseModel n;
  n.dropout = 1.0;
  EXPECT_TRUE(synth_detect(ph.truth, sampled(ph), n).empty());
}

TEST(SynthDetect, DropoutCountWithinThreeSigmaOfBinomial) {
  const auto ph = arch_phantom(5);
  const auto slices = sampled(ph);
  const auto clean = static_cast<double>(detection_count(synth_detect(ph.truth, slices, {})));
  const double p = 0.9;
  const double sigma = std::sqrt(clean * p * (1 - p));
  int outside = 0;
  double total = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    NoiseModel n;
    n.dropout = 0.1;
    n.seed = seed;
    const auto k = static_cast<double>(detection_count(synth_detect(ph.truth, slices, n)));
    total += k;
    if (std::abs(k - p * clean) > 3 * sigma) ++outside;
  }
  // 3-sigma excursions occur with probability ~0.0027 each.
  EXPECT_LE(outside, 2);
  // The mean over 100 runs is within 3 standard errors.
  EXPECT_NEAR(total / 100, p * clean, 3 * sigma / 10);
}

TEST(SynthDetect, DeterministicForSeed) {
  const auto ph = arch_phantom(6);
  NoiseModel n;
  n.dropout = 0.2;
  n.label_confusion = 0.2;
  n.center_jitter = 1.5;
  n.size_jitter = 1;
  n.spurious_rate = 0.7;
  n.seed = 77;
  EXPECT_EQ(synth_detect(ph.truth, sampled(ph), n), synth_detect(ph.truth, sampled(ph), n));
}

TEST(SynthDetect, ConfusedLabelsAlwaysDiffer) {
  const auto ph = arch_phantom(7);
  NoiseModel n;
  n.label_confusion = 1.0;
  const auto dets = synth_detect(ph.truth, sampled(ph), n);
  for (const auto& [z, v] : dets) {
    for (const auto& d : v) {
      for (const auto& t : ph.truth.teeth) {
        for (const auto& s : t.sections) {
          if (s.z == z && s.box == d.box) {
            EXPECT_NE(d.label, t.label);
          }
        }
      }
    }
  }
}

TEST(SynthDetect, JitteredBoxesStayInsideVolume) {
  const auto ph = arch_phantom(8);
  NoiseModel n;
  n.center_jitter = 20;
  n.size_jitter = 20;
  n.spurious_rate = 3;
  n.seed = 1;
  for (const auto& [z, v] : synth_detect(ph.truth, sampled(ph), n)) {
    for (const auto& d : v) {
      ASSERT_TRUE(d.box.valid());
      ASSERT_GE(d.box.x_min, 0);
      ASSERT_GE(d.box.y_min, 0);
      ASSERT_LE(d.box.x_max, ph.volume.nx());
      ASSERT_LE(d.box.y_max, ph.volume.ny());
    }
  }
}

TEST(SynthDetect, InvalidNoiseRejected) {
  const auto ph = arch_phantom(9);
  NoiseModel n;
  n.dropout = 1.5;
  EXPECT_THROW(synth_detect(ph.truth, {}, n), ValidationError);
  n = {};
  n.spurious_rate = -1;
  EXPECT_THROW(synth_detect(ph.truth, {}, n), ValidationError);
}
