#pragma once

// Synthetic dental phantoms and their ground truth.
//
// Each tooth is a crown frustum stacked on a root cone, aligned with z. The
// crown narrows toward the occlusal face (radius tip_fraction * crown_radius)
// and widens to crown_radius at the neck; the root tapers from root_radius to
// a point at the apex. Upper teeth hang from the maxilla (apex cranial, small
// z), lower teeth stand on the mandible. The occlusal faces sit at
// occlusal_plane -/+ gap/2, so a negative gap makes counterparts interpenetrate.
//
// Surroundings: a soft-tissue slab spanning the dentition, an air pocket in
// the interocclusal space (gap > 0 only), bone sockets around roots, optional
// uniform noise.

#include <toothbox/error.hpp>
#include <toothbox/geometry.hpp>
#include <toothbox/volume.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace toothbox {

struct DensityLevels {
  std::int16_t background = 0;
  std::int16_t soft_tissue = 300;
  std::int16_t bone = 700;
  std::int16_t tooth = 1800;
};

struct ToothSpec {
  Arch arch = Arch::upper;
  int tooth_class = 1;
  double center_x_mm = 0;
  double center_y_mm = 0;
  double crown_radius_mm = 2.5;
  double root_radius_mm = 1.9;
  double height_mm = 21;
  std::int16_t density = 1800;
  std::optional<int> fdi;
};

struct PhantomSpec {
  Dims dims{128, 128, 128};
  Spacing spacing{0.5f, 0.5f, 0.5f};
  std::vector<ToothSpec> teeth;
  double gap_mm = 3.0;
  // Defaults to the vertical center of the volume.
  std::optional<double> occlusal_plane_mm;
  double crown_fraction = 0.4;
  double tip_fraction = 0.4;
  DensityLevels density;
  double tissue_margin_mm = 2.0;
  double pocket_margin_mm = 3.0;
  double bone_margin_mm = 1.0;
  double noise_amplitude = 0;
  std::uint64_t seed = 0;

  [[nodiscard]] double occlusal_plane() const {
    return occlusal_plane_mm.value_or(0.5 * dims.nz * static_cast<double>(spacing.sz));
  }
};

struct AxialSection {
  int z = 0;
  Box2D box;
  friend bool operator==(const AxialSection&, const AxialSection&) = default;
};

struct GroundTruthTooth {
  int id = 0;
  Label label;
  std::optional<int> fdi;
  VoxelBox box;
  Arch arch = Arch::upper;
  long long voxel_count = 0;
  // Tight per-slice bounds of the rendered tooth, ordered by z.
  std::vector<AxialSection> sections;

  friend bool operator==(const GroundTruthTooth&, const GroundTruthTooth&) = default;
};

struct GroundTruth {
  Dims dims;
  Spacing spacing;
  double gap_mm = 0;
  double occlusal_plane_mm = 0;
  std::vector<GroundTruthTooth> teeth;
  // Per-voxel tooth id (0 = no tooth). Present for generated phantoms; may be
  // absent for truth loaded without its label file.
  std::optional<VoxelVolume> labels;

  [[nodiscard]] const GroundTruthTooth* find(int id) const {
    for (const auto& t : teeth) {
      if (t.id == id) return &t;
    }
    return nullptr;
  }

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct Phantom {
  VoxelVolume volume;
  GroundTruth truth;
};

namespace detail {

struct ToothFrame {
  double occlusal_z = 0;  // mm
  double dir = 1;         // +1 if the tooth extends toward larger z from its occlusal face
  double crown_len = 0;
  double tip_radius = 0;
};

inline ToothFrame tooth_frame(const PhantomSpec& spec, const ToothSpec& t) {
  ToothFrame f;
  const double zp = spec.occlusal_plane();
  if (t.arch == Arch::upper) {
    f.occlusal_z = zp - 0.5 * spec.gap_mm;
    f.dir = -1;
  } else {
    f.occlusal_z = zp + 0.5 * spec.gap_mm;
    f.dir = 1;
  }
  f.crown_len = spec.crown_fraction * t.height_mm;
  f.tip_radius = spec.tip_fraction * t.crown_radius_mm;
  return f;
}

// Radius of the solid at depth u (mm from the occlusal face), or -1 outside.
inline double tooth_radius_at(const ToothSpec& t, const ToothFrame& f, double u) {
  if (u < 0 || u > t.height_mm) return -1;
  if (u <= f.crown_len) {
    return f.tip_radius + (t.crown_radius_mm - f.tip_radius) * (u / f.crown_len);
  }
  return t.root_radius_mm * (t.height_mm - u) / (t.height_mm - f.crown_len);
}

struct IndexRange {
  int lo = 0;
  int hi = 0;  // exclusive
};

inline IndexRange index_range(double lo_mm, double hi_mm, double spacing, int n) {
  // Voxel k has its center at (k + 0.5) * spacing.
  int lo = static_cast<int>(std::floor(lo_mm / spacing - 0.5)) - 1;
  int hi = static_cast<int>(std::ceil(hi_mm / spacing - 0.5)) + 2;
  return {std::clamp(lo, 0, n), std::clamp(hi, 0, n)};
}

}  // namespace detail

inline void validate(const PhantomSpec& spec) {
  VoxelVolume::validate_header(spec.dims, spec.spacing);
  if (!(spec.crown_fraction > 0 && spec.crown_fraction < 1)) {
    throw ValidationError("crown_fraction must be in (0, 1)");
  }
  if (!(spec.tip_fraction > 0 && spec.tip_fraction <= 1)) {
    throw ValidationError("tip_fraction must be in (0, 1]");
  }
  if (spec.noise_amplitude < 0) throw ValidationError("noise_amplitude must be >= 0");
  int upper = 0;
  int lower = 0;
  const double wx = spec.dims.nx * static_cast<double>(spec.spacing.sx);
  const double wy = spec.dims.ny * static_cast<double>(spec.spacing.sy);
  const double wz = spec.dims.nz * static_cast<double>(spec.spacing.sz);
  for (std::size_t i = 0; i < spec.teeth.size(); ++i) {
    const auto& t = spec.teeth[i];
    const std::string where = "tooth " + std::to_string(i) + ": ";
    (t.arch == Arch::upper ? upper : lower) += 1;
    if (t.tooth_class < 1 || t.tooth_class > 8) throw ValidationError(where + "class outside [1, 8]");
    if (!(t.crown_radius_mm > 0) || !(t.root_radius_mm > 0) || !(t.height_mm > 0)) {
      throw ValidationError(where + "radii and height must be > 0");
    }
    if (t.center_x_mm - t.crown_radius_mm < 0 || t.center_x_mm + t.crown_radius_mm > wx ||
        t.center_y_mm - t.crown_radius_mm < 0 || t.center_y_mm + t.crown_radius_mm > wy) {
      throw ValidationError(where + "crown extends outside the volume footprint");
    }
    const auto f = detail::tooth_frame(spec, t);
    const double z_apex = f.occlusal_z + f.dir * t.height_mm;
    if (std::min(f.occlusal_z, z_apex) < 0 || std::max(f.occlusal_z, z_apex) > wz) {
      throw ValidationError(where + "vertical extent outside the volume");
    }
  }
  if (upper > 16) throw ValidationError("upper arch has more than 16 teeth");
  if (lower > 16) throw ValidationError("lower arch has more than 16 teeth");
  if (spec.gap_mm <= 0 && !spec.teeth.empty() && (upper == 0 || lower == 0)) {
    throw ValidationError("gap <= 0 requires teeth in both arches");
  }
}

inline Phantom generate_phantom(const PhantomSpec& spec) {
  validate(spec);
  const int nx = static_cast<int>(spec.dims.nx);
  const int ny = static_cast<int>(spec.dims.ny);
  const int nz = static_cast<int>(spec.dims.nz);
  const double sx = spec.spacing.sx;
  const double sy = spec.spacing.sy;
  const double sz = spec.spacing.sz;
  const auto& dl = spec.density;
  const double zp = spec.occlusal_plane();

  VoxelVolume vol(spec.dims, spec.spacing, dl.background);
  VoxelVolume labels(spec.dims, spec.spacing, std::int16_t{0});

  std::vector<detail::ToothFrame> frames;
  frames.reserve(spec.teeth.size());
  for (const auto& t : spec.teeth) frames.push_back(detail::tooth_frame(spec, t));

  auto zc = [&](int z) { return (z + 0.5) * sz; };
  auto xc = [&](int x) { return (x + 0.5) * sx; };
  auto yc = [&](int y) { return (y + 0.5) * sy; };

  if (!spec.teeth.empty()) {
    double top = 1e300;
    double bottom = -1e300;
    for (std::size_t i = 0; i < spec.teeth.size(); ++i) {
      const double a = frames[i].occlusal_z;
      const double b = a + frames[i].dir * spec.teeth[i].height_mm;
      top = std::min({top, a, b});
      bottom = std::max({bottom, a, b});
    }
    top -= spec.tissue_margin_mm;
    bottom += spec.tissue_margin_mm;
    for (int z = 0; z < nz; ++z) {
      if (zc(z) < top || zc(z) > bottom) continue;
      for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) vol.at(x, y, z) = dl.soft_tissue;
      }
    }
    if (spec.gap_mm > 0) {
      const double lo = zp - 0.5 * spec.gap_mm;
      const double hi = zp + 0.5 * spec.gap_mm;
      for (const auto& t : spec.teeth) {
        const double r = t.crown_radius_mm + spec.pocket_margin_mm;
        const auto xr = detail::index_range(t.center_x_mm - r, t.center_x_mm + r, sx, nx);
        const auto yr = detail::index_range(t.center_y_mm - r, t.center_y_mm + r, sy, ny);
        const auto zr = detail::index_range(lo, hi, sz, nz);
        for (int z = zr.lo; z < zr.hi; ++z) {
          if (zc(z) <= lo || zc(z) >= hi) continue;
          for (int y = yr.lo; y < yr.hi; ++y) {
            for (int x = xr.lo; x < xr.hi; ++x) {
              if (std::hypot(xc(x) - t.center_x_mm, yc(y) - t.center_y_mm) <= r) {
                vol.at(x, y, z) = dl.background;
              }
            }
          }
        }
      }
    }
  }

  // Bone sockets around the root portion.
  for (std::size_t i = 0; i < spec.teeth.size(); ++i) {
    const auto& t = spec.teeth[i];
    const auto& f = frames[i];
    const double r = t.crown_radius_mm + spec.bone_margin_mm;
    const double z_neck = f.occlusal_z + f.dir * f.crown_len;
    const double z_apex = f.occlusal_z + f.dir * t.height_mm;
    const auto xr = detail::index_range(t.center_x_mm - r, t.center_x_mm + r, sx, nx);
    const auto yr = detail::index_range(t.center_y_mm - r, t.center_y_mm + r, sy, ny);
    const auto zr = detail::index_range(std::min(z_neck, z_apex), std::max(z_neck, z_apex), sz, nz);
    for (int z = zr.lo; z < zr.hi; ++z) {
      const double u = f.dir * (zc(z) - f.occlusal_z);
      if (u < f.crown_len || u > t.height_mm) continue;
      for (int y = yr.lo; y < yr.hi; ++y) {
        for (int x = xr.lo; x < xr.hi; ++x) {
          if (std::hypot(xc(x) - t.center_x_mm, yc(y) - t.center_y_mm) <= r) {
            vol.at(x, y, z) = dl.bone;
          }
        }
      }
    }
  }

  // Teeth. Interpenetrating counterparts are resolved by the occlusal plane.
  for (std::size_t i = 0; i < spec.teeth.size(); ++i) {
    const auto& t = spec.teeth[i];
    const auto& f = frames[i];
    const auto id = static_cast<std::int16_t>(i + 1);
    const double r = t.crown_radius_mm;
    const double z_apex = f.occlusal_z + f.dir * t.height_mm;
    const auto xr = detail::index_range(t.center_x_mm - r, t.center_x_mm + r, sx, nx);
    const auto yr = detail::index_range(t.center_y_mm - r, t.center_y_mm + r, sy, ny);
    const auto zr = detail::index_range(std::min(f.occlusal_z, z_apex), std::max(f.occlusal_z, z_apex), sz, nz);
    // The voxel holding the axis is always inside, so the thin apex still rasterizes.
    const int ax = std::clamp(static_cast<int>(std::floor(t.center_x_mm / sx)), 0, nx - 1);
    const int ay = std::clamp(static_cast<int>(std::floor(t.center_y_mm / sy)), 0, ny - 1);
    for (int z = zr.lo; z < zr.hi; ++z) {
      const double rad = detail::tooth_radius_at(t, f, f.dir * (zc(z) - f.occlusal_z));
      if (rad < 0) continue;
      const bool upper_side = zc(z) < zp;
      for (int y = yr.lo; y < yr.hi; ++y) {
        for (int x = xr.lo; x < xr.hi; ++x) {
          const bool axis = x == ax && y == ay;
          if (!axis && std::hypot(xc(x) - t.center_x_mm, yc(y) - t.center_y_mm) > rad) continue;
          std::int16_t& owner = labels.at(x, y, z);
          if (owner != 0) {
            const auto& other = spec.teeth[static_cast<std::size_t>(owner - 1)];
            const bool keep_other = (other.arch == Arch::upper) == upper_side || t.arch == other.arch;
            if (keep_other) continue;
          }
          owner = id;
          vol.at(x, y, z) = t.density;
        }
      }
    }
  }

  if (spec.noise_amplitude > 0) {
    std::mt19937_64 rng(spec.seed);
    const int amp = static_cast<int>(std::lround(spec.noise_amplitude));
    std::uniform_int_distribution<int> noise(-amp, amp);
    for (auto& v : vol.data()) {
      v = static_cast<std::int16_t>(std::clamp(static_cast<int>(v) + noise(rng), -32768, 32767));
    }
  }

  GroundTruth gt;
  gt.dims = spec.dims;
  gt.spacing = spec.spacing;
  gt.gap_mm = spec.gap_mm;
  gt.occlusal_plane_mm = zp;
  for (std::size_t i = 0; i < spec.teeth.size(); ++i) {
    const auto& t = spec.teeth[i];
    const auto& f = frames[i];
    const auto id = static_cast<std::int16_t>(i + 1);
    const double r = t.crown_radius_mm;
    const double z_apex = f.occlusal_z + f.dir * t.height_mm;
    const auto xr = detail::index_range(t.center_x_mm - r, t.center_x_mm + r, sx, nx);
    const auto yr = detail::index_range(t.center_y_mm - r, t.center_y_mm + r, sy, ny);
    const auto zr = detail::index_range(std::min(f.occlusal_z, z_apex), std::max(f.occlusal_z, z_apex), sz, nz);
    GroundTruthTooth g;
    g.id = id;
    g.label = Label(t.tooth_class);
    g.fdi = t.fdi;
    g.arch = t.arch;
    g.box.min = {nx, ny, nz};
    g.box.max = {0, 0, 0};
    for (int z = zr.lo; z < zr.hi; ++z) {
      Box2D sec{nx, ny, 0, 0};
      for (int y = yr.lo; y < yr.hi; ++y) {
        for (int x = xr.lo; x < xr.hi; ++x) {
          if (labels.at(x, y, z) != id) continue;
          ++g.voxel_count;
          sec.x_min = std::min(sec.x_min, x);
          sec.y_min = std::min(sec.y_min, y);
          sec.x_max = std::max(sec.x_max, x + 1);
          sec.y_max = std::max(sec.y_max, y + 1);
        }
      }
      if (!sec.valid()) continue;
      g.sections.push_back({z, sec});
      g.box.min = {std::min(g.box.min[0], sec.x_min), std::min(g.box.min[1], sec.y_min), std::min(g.box.min[2], z)};
      g.box.max = {std::max(g.box.max[0], sec.x_max), std::max(g.box.max[1], sec.y_max), std::max(g.box.max[2], z + 1)};
    }
    if (g.voxel_count == 0) {
      throw ValidationError("tooth " + std::to_string(i) + " renders no voxels at this spacing");
    }
    gt.teeth.push_back(std::move(g));
  }
  gt.labels = std::move(labels);
  return {std::move(vol), std::move(gt)};
}

// Parametric U-shaped arch layout used to build realistic test phantoms.
//
// Sixteen slots per arch, slot 0 = patient's right third molar, slot 7 =
// right first incisor, slot 8 = left first incisor, slot 15 = left third
// molar. Lower teeth sit overjet_mm inside the upper arch unless their slot
// is listed in edge_to_edge, where they sit directly under the upper tooth.
struct ArchParams {
  Dims dims{128, 128, 128};
  Spacing spacing{0.5f, 0.5f, 0.5f};
  int upper_count = 14;
  int lower_count = 14;
  double gap_mm = 3.0;
  double overjet_mm = 3.0;
  std::vector<int> edge_to_edge;
  double interproximal_mm = 2.0;
  double size_jitter = 0.03;
  double noise_amplitude = 20;
  std::uint64_t seed = 0;
};

inline int slot_class(int slot) { return slot < 8 ? 8 - slot : slot - 7; }

struct ClassShape {
  double crown_radius;
  double root_radius;
  double height;
};

inline ClassShape default_class_shape(int tooth_class) {
  static constexpr std::array<ClassShape, 8> shapes{{
      {2.4, 1.8, 21.5},
      {2.2, 1.6, 21.0},
      {2.6, 2.0, 23.0},
      {2.5, 1.9, 21.5},
      {2.4, 1.8, 21.0},
      {3.2, 2.5, 20.5},
      {3.0, 2.3, 20.0},
      {2.8, 2.2, 20.0},
  }};
  return shapes[static_cast<std::size_t>(tooth_class - 1)];
}

inline PhantomSpec make_arch_phantom(const ArchParams& p) {
  if (p.upper_count < 0 || p.upper_count > 16 || p.lower_count < 0 || p.lower_count > 16) {
    throw ValidationError("arch tooth counts must be in [0, 16]");
  }
  for (int s : p.edge_to_edge) {
    if (s < 0 || s > 15) throw ValidationError("edge_to_edge slot outside [0, 15]");
  }
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> jitter(-p.size_jitter, p.size_jitter);

  const double width = p.dims.nx * static_cast<double>(p.spacing.sx);
  const double depth = p.dims.ny * static_cast<double>(p.spacing.sy);
  const double cx = 0.5 * width;
  const double y0 = 0.11 * depth;
  const double a = 0.41 * width;
  const double b = 0.72 * depth;

  // Arc-length table over t in [-pi/2, pi/2]; x = cx + a sin t, y = y0 + b (1 - cos t).
  constexpr int kSamples = 4000;
  std::vector<double> ts(kSamples + 1);
  std::vector<double> arc(kSamples + 1, 0.0);
  for (int i = 0; i <= kSamples; ++i) {
    ts[i] = -std::numbers::pi / 2 + std::numbers::pi * i / kSamples;
    if (i > 0) {
      const double dx = a * (std::sin(ts[i]) - std::sin(ts[i - 1]));
      const double dy = b * (std::cos(ts[i - 1]) - std::cos(ts[i]));
      arc[i] = arc[i - 1] + std::hypot(dx, dy);
    }
  }
  const double mid_arc = arc[kSamples / 2];
  auto param_at = [&](double s) {
    const double target = std::clamp(mid_arc + s, 0.0, arc.back());
    const auto it = std::lower_bound(arc.begin(), arc.end(), target);
    const auto i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - arc.begin()));
    const double f = (target - arc[i - 1]) / std::max(1e-12, arc[i] - arc[i - 1]);
    return ts[i - 1] + f * (ts[i] - ts[i - 1]);
  };

  std::array<ClassShape, 16> upper_shape{};
  std::array<ClassShape, 16> lower_shape{};
  for (int s = 0; s < 16; ++s) {
    auto base = default_class_shape(slot_class(s));
    for (auto* dst : {&upper_shape[s], &lower_shape[s]}) {
      const double k = 1.0 + jitter(rng);
      const double kh = 1.0 + jitter(rng);
      *dst = {base.crown_radius * k, base.root_radius * k, base.height * kh};
    }
  }

  // Slot centers, walking outward from the midline on each side.
  std::array<std::array<double, 2>, 16> center{};
  std::array<std::array<double, 2>, 16> normal{};
  for (int side = 0; side < 2; ++side) {
    double s = 0.5 * p.interproximal_mm;
    for (int k = 0; k < 8; ++k) {
      const int slot = side == 0 ? 7 - k : 8 + k;
      const double r = upper_shape[slot].crown_radius;
      s += r;
      const double t = param_at(side == 0 ? -s : s);
      center[slot] = {cx + a * std::sin(t), y0 + b * (1 - std::cos(t))};
      double nxv = b * std::sin(t);
      double nyv = -a * std::cos(t);
      const double len = std::hypot(nxv, nyv);
      normal[slot] = {nxv / len, nyv / len};
      s += r + p.interproximal_mm;
    }
  }

  auto pick = [&](int count) {
    std::vector<int> slots(16);
    for (int i = 0; i < 16; ++i) slots[i] = i;
    std::vector<int> forced(p.edge_to_edge.begin(), p.edge_to_edge.end());
    std::vector<int> rest;
    for (int s : slots) {
      if (std::find(forced.begin(), forced.end(), s) == forced.end()) rest.push_back(s);
    }
    std::shuffle(rest.begin(), rest.end(), rng);
    std::vector<int> chosen = forced;
    for (int s : rest) {
      if (static_cast<int>(chosen.size()) >= count) break;
      chosen.push_back(s);
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  };

  PhantomSpec spec;
  spec.dims = p.dims;
  spec.spacing = p.spacing;
  spec.gap_mm = p.gap_mm;
  spec.noise_amplitude = p.noise_amplitude;
  spec.seed = p.seed;
  for (int arch = 0; arch < 2; ++arch) {
    const bool upper = arch == 0;
    for (int slot : pick(upper ? p.upper_count : p.lower_count)) {
      const auto& shape = upper ? upper_shape[slot] : lower_shape[slot];
      ToothSpec t;
      t.arch = upper ? Arch::upper : Arch::lower;
      t.tooth_class = slot_class(slot);
      t.center_x_mm = center[slot][0];
      t.center_y_mm = center[slot][1];
      const bool aligned = std::find(p.edge_to_edge.begin(), p.edge_to_edge.end(), slot) != p.edge_to_edge.end();
      if (!upper && !aligned) {
        t.center_x_mm -= p.overjet_mm * normal[slot][0];
        t.center_y_mm -= p.overjet_mm * normal[slot][1];
      }
      t.crown_radius_mm = shape.crown_radius;
      t.root_radius_mm = shape.root_radius;
      t.height_mm = shape.height;
      const bool patient_right = slot < 8;
      t.fdi = fdi_code(fdi_quadrant(upper, patient_right), Label(t.tooth_class));
      spec.teeth.push_back(t);
    }
  }
  return spec;
}

// ---------------------------------------------------------------- JSON ----

inline nlohmann::json to_json(const PhantomSpec& s) {
  nlohmann::json teeth = nlohmann::json::array();
  for (const auto& t : s.teeth) {
    nlohmann::json j{{"arch", arch_name(t.arch)},
                     {"class", t.tooth_class},
                     {"center_mm", {t.center_x_mm, t.center_y_mm}},
                     {"crown_radius_mm", t.crown_radius_mm},
                     {"root_radius_mm", t.root_radius_mm},
                     {"height_mm", t.height_mm},
                     {"density", t.density}};
    j["fdi"] = t.fdi ? nlohmann::json(*t.fdi) : nlohmann::json(nullptr);
    teeth.push_back(j);
  }
  nlohmann::json j{{"dims", {s.dims.nx, s.dims.ny, s.dims.nz}},
                   {"spacing", {s.spacing.sx, s.spacing.sy, s.spacing.sz}},
                   {"gap_mm", s.gap_mm},
                   {"crown_fraction", s.crown_fraction},
                   {"tip_fraction", s.tip_fraction},
                   {"density",
                    {{"background", s.density.background},
                     {"soft_tissue", s.density.soft_tissue},
                     {"bone", s.density.bone},
                     {"tooth", s.density.tooth}}},
                   {"tissue_margin_mm", s.tissue_margin_mm},
                   {"pocket_margin_mm", s.pocket_margin_mm},
                   {"bone_margin_mm", s.bone_margin_mm},
                   {"noise_amplitude", s.noise_amplitude},
                   {"seed", s.seed},
                   {"teeth", teeth}};
  j["occlusal_plane_mm"] = s.occlusal_plane_mm ? nlohmann::json(*s.occlusal_plane_mm) : nlohmann::json(nullptr);
  return j;
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  try {
    PhantomSpec s;
    if (j.contains("dims")) {
      const auto d = j.at("dims").get<std::array<std::int64_t, 3>>();
      for (auto v : d) {
        if (v < 1) throw ValidationError("phantom spec: dims must be >= 1");
      }
      s.dims = {static_cast<std::uint32_t>(d[0]), static_cast<std::uint32_t>(d[1]), static_cast<std::uint32_t>(d[2])};
    }
    if (j.contains("spacing")) {
      const auto sp = j.at("spacing").get<std::array<float, 3>>();
      s.spacing = {sp[0], sp[1], sp[2]};
    }
    s.gap_mm = j.value("gap_mm", s.gap_mm);
    if (j.contains("occlusal_plane_mm") && !j.at("occlusal_plane_mm").is_null()) {
      s.occlusal_plane_mm = j.at("occlusal_plane_mm").get<double>();
    }
    s.crown_fraction = j.value("crown_fraction", s.crown_fraction);
    s.tip_fraction = j.value("tip_fraction", s.tip_fraction);
    if (j.contains("density")) {
      const auto& d = j.at("density");
      s.density.background = d.value("background", s.density.background);
      s.density.soft_tissue = d.value("soft_tissue", s.density.soft_tissue);
      s.density.bone = d.value("bone", s.density.bone);
      s.density.tooth = d.value("tooth", s.density.tooth);
    }
    s.tissue_margin_mm = j.value("tissue_margin_mm", s.tissue_margin_mm);
    s.pocket_margin_mm = j.value("pocket_margin_mm", s.pocket_margin_mm);
    s.bone_margin_mm = j.value("bone_margin_mm", s.bone_margin_mm);
    s.noise_amplitude = j.value("noise_amplitude", s.noise_amplitude);
    s.seed = j.value("seed", s.seed);
    for (const auto& tj : j.value("teeth", nlohmann::json::array())) {
      ToothSpec t;
      t.arch = parse_arch(tj.at("arch").get<std::string>());
      t.tooth_class = tj.at("class").get<int>();
      const auto c = tj.at("center_mm").get<std::array<double, 2>>();
      t.center_x_mm = c[0];
      t.center_y_mm = c[1];
      t.crown_radius_mm = tj.at("crown_radius_mm").get<double>();
      t.root_radius_mm = tj.at("root_radius_mm").get<double>();
      t.height_mm = tj.at("height_mm").get<double>();
      t.density = tj.value("density", s.density.tooth);
      if (tj.contains("fdi") && !tj.at("fdi").is_null()) t.fdi = tj.at("fdi").get<int>();
      s.teeth.push_back(t);
    }
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("phantom spec: ") + e.what());
  }
}

inline nlohmann::json box_json(const VoxelBox& b) {
  return {{"min", b.min}, {"max", b.max}};
}

inline VoxelBox box_from_json(const nlohmann::json& j) {
  VoxelBox b;
  b.min = j.at("min").get<std::array<int, 3>>();
  b.max = j.at("max").get<std::array<int, 3>>();
  if (!b.valid()) throw ValidationError("box with min >= max");
  return b;
}

// Ground truth JSON. The label map, when present, is stored as a separate
// CBCTVOL1 file whose name is recorded under "labels" relative to the JSON.
inline nlohmann::json to_json(const GroundTruth& gt, const std::string& labels_ref = {}) {
  nlohmann::json teeth = nlohmann::json::array();
  for (const auto& t : gt.teeth) {
    nlohmann::json secs = nlohmann::json::array();
    for (const auto& s : t.sections) {
      secs.push_back({s.z, s.box.x_min, s.box.y_min, s.box.x_max, s.box.y_max});
    }
    nlohmann::json j{{"id", t.id},
                     {"label", t.label.value()},
                     {"arch", arch_name(t.arch)},
                     {"box", box_json(t.box)},
                     {"voxels", t.voxel_count},
                     {"sections", secs}};
    j["fdi"] = t.fdi ? nlohmann::json(*t.fdi) : nlohmann::json(nullptr);
    teeth.push_back(j);
  }
  nlohmann::json j{{"dims", {gt.dims.nx, gt.dims.ny, gt.dims.nz}},
                   {"spacing", {gt.spacing.sx, gt.spacing.sy, gt.spacing.sz}},
                   {"gap_mm", gt.gap_mm},
                   {"occlusal_plane_mm", gt.occlusal_plane_mm},
                   {"teeth", teeth}};
  j["labels"] = labels_ref.empty() ? nlohmann::json(nullptr) : nlohmann::json(labels_ref);
  return j;
}

inline GroundTruth ground_truth_from_json(const nlohmann::json& j) {
  try {
    GroundTruth gt;
    const auto d = j.at("dims").get<std::array<std::uint32_t, 3>>();
    const auto s = j.at("spacing").get<std::array<float, 3>>();
    gt.dims = {d[0], d[1], d[2]};
    gt.spacing = {s[0], s[1], s[2]};
    VoxelVolume::validate_header(gt.dims, gt.spacing);
    gt.gap_mm = j.value("gap_mm", 0.0);
    gt.occlusal_plane_mm = j.value("occlusal_plane_mm", 0.5 * gt.dims.nz * static_cast<double>(gt.spacing.sz));
    std::vector<int> seen;
    for (const auto& tj : j.at("teeth")) {
      GroundTruthTooth t;
      t.id = tj.at("id").get<int>();
      if (std::find(seen.begin(), seen.end(), t.id) != seen.end()) {
        throw ValidationError("ground truth: duplicate tooth id " + std::to_string(t.id));
      }
      seen.push_back(t.id);
      t.label = Label(tj.at("label").get<int>());
      t.arch = parse_arch(tj.at("arch").get<std::string>());
      t.box = box_from_json(tj.at("box"));
      if (t.box.min[0] < 0 || t.box.min[1] < 0 || t.box.min[2] < 0 ||
          t.box.max[0] > static_cast<int>(gt.dims.nx) || t.box.max[1] > static_cast<int>(gt.dims.ny) ||
          t.box.max[2] > static_cast<int>(gt.dims.nz)) {
        throw ValidationError("ground truth: box of tooth " + std::to_string(t.id) + " outside volume");
      }
      t.voxel_count = tj.value("voxels", 0LL);
      if (tj.contains("fdi") && !tj.at("fdi").is_null()) t.fdi = tj.at("fdi").get<int>();
      for (const auto& sj : tj.value("sections", nlohmann::json::array())) {
        const auto v = sj.get<std::array<int, 5>>();
        t.sections.push_back({v[0], Box2D{v[1], v[2], v[3], v[4]}});
      }
      gt.teeth.push_back(std::move(t));
    }
    return gt;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("ground truth: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

inline void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  std::string ref;
  if (gt.labels) {
    auto label_path = path;
    label_path.replace_extension(".labels.vol");
    save_volume(*gt.labels, label_path);
    ref = label_path.filename().string();
  }
  write_json_file(path, to_json(gt, ref));
}

inline GroundTruth load_ground_truth(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  auto gt = ground_truth_from_json(j);
  if (j.contains("labels") && j.at("labels").is_string()) {
    gt.labels = load_volume(path.parent_path() / j.at("labels").get<std::string>());
    if (gt.labels->dims() != gt.dims) throw ValidationError("label map dims differ from ground truth dims");
  }
  return gt;
}

}  // namespace toothbox
