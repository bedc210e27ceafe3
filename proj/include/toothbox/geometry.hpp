#pragma once

// Shared value types: tooth class labels and axis-aligned boxes.
// All voxel-space boxes are half-open: [min, max).

#include <toothbox/error.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace toothbox {

// Tooth class 1..8 (first incisor .. third molar). Upper/lower and
// left/right counterparts share a class.
class Label {
 public:
  static constexpr int kCount = 8;

  constexpr Label() = default;
  explicit Label(int value) : value_(value) {
    if (value < 1 || value > kCount) {
      throw ValidationError("label " + std::to_string(value) + " outside [1, 8]");
    }
  }

  [[nodiscard]] constexpr int value() const { return value_; }

  // FDI codes sharing this class, one per quadrant (e.g. 3 -> 13, 23, 33, 43).
  [[nodiscard]] std::array<int, 4> fdi_codes() const {
    return {10 + value_, 20 + value_, 30 + value_, 40 + value_};
  }

  friend constexpr auto operator<=>(const Label&, const Label&) = default;

 private:
  int value_ = 1;
};

inline const char* label_name(Label l) {
  static constexpr const char* names[] = {"first incisor",   "second incisor", "canine",
                                          "first premolar",  "second premolar", "first molar",
                                          "second molar",    "third molar"};
  return names[l.value() - 1];
}

// FDI quadrants: 1 upper right, 2 upper left, 3 lower left, 4 lower right
// (patient's side).
inline int fdi_code(int quadrant, Label l) { return quadrant * 10 + l.value(); }

inline int fdi_quadrant(bool upper, bool patient_right) {
  if (upper) return patient_right ? 1 : 2;
  return patient_right ? 4 : 3;
}

enum class Arch { upper, lower };

inline const char* arch_name(Arch a) { return a == Arch::upper ? "upper" : "lower"; }

inline Arch parse_arch(const std::string& s) {
  if (s == "upper") return Arch::upper;
  if (s == "lower") return Arch::lower;
  throw ValidationError("arch must be \"upper\" or \"lower\", got \"" + s + "\"");
}

// Axial-plane box in voxel coordinates.
struct Box2D {
  int x_min = 0;
  int y_min = 0;
  int x_max = 1;
  int y_max = 1;

  [[nodiscard]] bool valid() const { return x_min < x_max && y_min < y_max; }
  [[nodiscard]] long long area() const {
    return valid() ? static_cast<long long>(x_max - x_min) * (y_max - y_min) : 0;
  }
  friend bool operator==(const Box2D&, const Box2D&) = default;
  friend auto operator<=>(const Box2D&, const Box2D&) = default;
};

inline double iou(const Box2D& a, const Box2D& b) {
  const int ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const int iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = static_cast<double>(ix) * iy;
  const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Box2D with real-valued edges, produced by interpolation.
struct BoxF {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;
};

struct VoxelBox {
  std::array<int, 3> min{0, 0, 0};
  std::array<int, 3> max{1, 1, 1};

  [[nodiscard]] bool valid() const {
    return min[0] < max[0] && min[1] < max[1] && min[2] < max[2];
  }
  [[nodiscard]] int extent(int axis) const { return max[axis] - min[axis]; }
  [[nodiscard]] long long volume() const {
    return valid() ? static_cast<long long>(extent(0)) * extent(1) * extent(2) : 0;
  }
  [[nodiscard]] bool contains(int x, int y, int z) const {
    return x >= min[0] && x < max[0] && y >= min[1] && y < max[1] && z >= min[2] && z < max[2];
  }
  [[nodiscard]] bool contains(const VoxelBox& o) const {
    for (int a = 0; a < 3; ++a) {
      if (o.min[a] < min[a] || o.max[a] > max[a]) return false;
    }
    return true;
  }
  [[nodiscard]] std::array<double, 3> centroid() const {
    return {0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1]), 0.5 * (min[2] + max[2])};
  }
  [[nodiscard]] Box2D axial() const { return {min[0], min[1], max[0], max[1]}; }

  friend bool operator==(const VoxelBox&, const VoxelBox&) = default;
};

inline long long intersection_volume(const VoxelBox& a, const VoxelBox& b) {
  long long v = 1;
  for (int i = 0; i < 3; ++i) {
    const int e = std::min(a.max[i], b.max[i]) - std::max(a.min[i], b.min[i]);
    if (e <= 0) return 0;
    v *= e;
  }
  return v;
}

inline double iou3d(const VoxelBox& a, const VoxelBox& b) {
  const double inter = static_cast<double>(intersection_volume(a, b));
  const double uni = static_cast<double>(a.volume()) + static_cast<double>(b.volume()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Axial box of one matched detection, without context margin.
struct SliceFootprint {
  int z = 0;
  Box2D box;

  friend bool operator==(const SliceFootprint&, const SliceFootprint&) = default;
};

// Final labeled 3D tooth box.
struct Box3D {
  int id = 0;
  VoxelBox vox;
  std::array<double, 3> mm_min{0, 0, 0};
  std::array<double, 3> mm_max{0, 0, 0};
  Label label;
  std::optional<int> fdi;
  int detection_count = 0;
  std::optional<int> divided_from;
  // Matched slice boxes the box was built from; empty when unknown.
  std::vector<SliceFootprint> footprints;

  friend bool operator==(const Box3D&, const Box3D&) = default;
};

}  // namespace toothbox
