#pragma once

// Per-slice 2D detections: the contract of the upstream axial detector, a
// JSON-lines reader/writer, and a synthetic detector driven by ground truth.

#include <toothbox/error.hpp>
#include <toothbox/geometry.hpp>
#include <toothbox/phantom.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace toothbox {

struct Detection2D {
  int slice = 0;
  Box2D box;
  Label label;
  double confidence = 1.0;

  friend bool operator==(const Detection2D&, const Detection2D&) = default;
};

using DetectionMap = std::map<int, std::vector<Detection2D>>;

struct NoiseModel {
  double dropout = 0.0;
  double label_confusion = 0.0;
  double center_jitter = 0.0;  // voxels, std-dev
  double size_jitter = 0.0;    // voxels, std-dev
  double spurious_rate = 0.0;  // expected spurious boxes per slice
  std::uint64_t seed = 0;

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string("noise.") + name + " must be in [0, 1]");
    };
    prob(dropout, "dropout");
    prob(label_confusion, "label_confusion");
    if (!(center_jitter >= 0)) throw ValidationError("noise.center_jitter must be >= 0");
    if (!(size_jitter >= 0)) throw ValidationError("noise.size_jitter must be >= 0");
    if (!(spurious_rate >= 0)) throw ValidationError("noise.spurious_rate must be >= 0");
  }
};

inline std::size_t detection_count(const DetectionMap& m) {
  std::size_t n = 0;
  for (const auto& [z, v] : m) n += v.size();
  return n;
}

// ---------------------------------------------------------- JSON lines ----

inline Detection2D parse_detection_line(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no) + ": ";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "malformed JSON (" + e.what() + ")");
  }
  if (!j.is_object()) throw FormatError(where + "expected a JSON object");
  Detection2D d;
  try {
    d.slice = j.at("slice").get<int>();
    d.box = {j.at("x_min").get<int>(), j.at("y_min").get<int>(), j.at("x_max").get<int>(),
             j.at("y_max").get<int>()};
    const int label = j.at("label").get<int>();
    if (label < 1 || label > Label::kCount) {
      throw ValidationError(where + "label " + std::to_string(label) + " outside [1, 8]");
    }
    d.label = Label(label);
    d.confidence = j.value("conf", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + e.what());
  }
  if (!d.box.valid()) throw ValidationError(where + "box needs x_min < x_max and y_min < y_max");
  if (d.slice < 0) throw ValidationError(where + "negative slice index");
  if (!(d.confidence >= 0.0 && d.confidence <= 1.0)) throw ValidationError(where + "conf outside [0, 1]");
  return d;
}

inline DetectionMap read_detections(std::istream& in) {
  DetectionMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto d = parse_detection_line(line, line_no);
    out[d.slice].push_back(d);
  }
  return out;
}

inline DetectionMap load_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  try {
    return read_detections(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline std::string detection_line(const Detection2D& d) {
  nlohmann::ordered_json j{{"slice", d.slice},        {"x_min", d.box.x_min},
                           {"y_min", d.box.y_min},    {"x_max", d.box.x_max},
                           {"y_max", d.box.y_max},    {"label", d.label.value()},
                           {"conf", d.confidence}};
  return j.dump();
}

inline void save_detections(const DetectionMap& dets, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& [z, v] : dets) {
    for (const auto& d : v) out << detection_line(d) << '\n';
  }
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

// --------------------------------------------------- synthetic detector ----

namespace detail {

inline Box2D clamp_box(Box2D b, int nx, int ny) {
  b.x_min = std::clamp(b.x_min, 0, nx - 1);
  b.y_min = std::clamp(b.y_min, 0, ny - 1);
  b.x_max = std::clamp(b.x_max, b.x_min + 1, nx);
  b.y_max = std::clamp(b.y_max, b.y_min + 1, ny);
  return b;
}

}  // namespace detail

// Emits each ground-truth tooth's axial cross-section on every requested
// slice it intersects, then applies dropout, label confusion, box jitter and
// spurious boxes, in that order. Deterministic for a fixed noise seed.
inline DetectionMap synth_detect(const GroundTruth& gt, const std::vector<int>& slices,
                                 const NoiseModel& noise) {
  noise.validate();
  const int nx = static_cast<int>(gt.dims.nx);
  const int ny = static_cast<int>(gt.dims.ny);
  std::mt19937_64 rng(noise.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> other_label(1, Label::kCount - 1);
  std::uniform_int_distribution<int> any_label(1, Label::kCount);
  std::poisson_distribution<int> spurious(noise.spurious_rate > 0 ? noise.spurious_rate : 1.0);

  DetectionMap out;
  for (int z : slices) {
    std::vector<Detection2D> found;
    for (const auto& t : gt.teeth) {
      if (z < t.box.min[2] || z >= t.box.max[2]) continue;
      Box2D sec = t.box.axial();
      if (!t.sections.empty()) {
        auto it = std::find_if(t.sections.begin(), t.sections.end(),
                               [z](const AxialSection& s) { return s.z == z; });
        if (it == t.sections.end()) continue;
        sec = it->box;
      }
      Detection2D d{z, sec, t.label, 1.0};
      if (noise.dropout > 0 && unit(rng) < noise.dropout) continue;
      if (noise.label_confusion > 0 && unit(rng) < noise.label_confusion) {
        int l = other_label(rng);
        if (l >= t.label.value()) ++l;
        d.label = Label(l);
      }
      if (noise.center_jitter > 0 || noise.size_jitter > 0) {
        const double cx = 0.5 * (sec.x_min + sec.x_max) + noise.center_jitter * gauss(rng);
        const double cy = 0.5 * (sec.y_min + sec.y_max) + noise.center_jitter * gauss(rng);
        const double w = std::max(1.0, (sec.x_max - sec.x_min) + noise.size_jitter * gauss(rng));
        const double h = std::max(1.0, (sec.y_max - sec.y_min) + noise.size_jitter * gauss(rng));
        Box2D j{static_cast<int>(std::lround(cx - 0.5 * w)), static_cast<int>(std::lround(cy - 0.5 * h)),
                static_cast<int>(std::lround(cx + 0.5 * w)), static_cast<int>(std::lround(cy + 0.5 * h))};
        if (j.x_max <= j.x_min) j.x_max = j.x_min + 1;
        if (j.y_max <= j.y_min) j.y_max = j.y_min + 1;
        d.box = detail::clamp_box(j, nx, ny);
      }
      d.confidence = 1.0 - 0.05 * unit(rng);
      found.push_back(d);
    }
    if (noise.spurious_rate > 0 && !gt.teeth.empty()) {
      const int n = spurious(rng);
      std::uniform_int_distribution<std::size_t> pick_tooth(0, gt.teeth.size() - 1);
      for (int k = 0; k < n; ++k) {
        const auto& ref = gt.teeth[pick_tooth(rng)].box;
        const int w = std::min(ref.extent(0), nx);
        const int h = std::min(ref.extent(1), ny);
        std::uniform_int_distribution<int> px(0, nx - w);
        std::uniform_int_distribution<int> py(0, ny - h);
        const int x0 = px(rng);
        const int y0 = py(rng);
        Detection2D d{z, Box2D{x0, y0, x0 + w, y0 + h}, Label(any_label(rng)), 1.0 - 0.05 * unit(rng)};
        found.push_back(d);
      }
    }
    if (!found.empty()) out[z] = std::move(found);
  }
  return out;
}

}  // namespace toothbox
