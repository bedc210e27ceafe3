#pragma once

// Splitting fused upper/lower tooth volumes.
//
// Oversized volumes are flagged against the scan's size distribution. For a
// flagged box, an expected split height z0 comes from the valley of the
// box's vertical density profile (or the box midpoint when there is no
// clear valley). Each sagittal slice of the box is then treated as a voxel
// graph and the cheapest left-to-right path along y is found by dynamic
// programming, confined to a central band. Slices are processed in x order
// with the previous slice's seam as a prior, and the seams form a lattice
// z(x, y). Voxels with z < z(x, y) belong to the upper tooth.

#include <toothbox/error.hpp>
#include <toothbox/geometry.hpp>
#include <toothbox/reconstruction.hpp>
#include <toothbox/volume.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <future>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace toothbox {

struct DivisionConfig {
  double size_flag_factor = 1.6;
  double band_fraction = 0.6;
  double density_weight = 1.0;
  double midline_weight = 0.5;
  double smoothness_weight = 0.05;
  double inter_slice_weight = 0.05;
  int max_inter_slice_step = 2;
  // Radius in voxels of the axial box mean applied to densities before seam search; 0 disables.
  int smoothing_radius = 1;
  // Minimum valley depth, as a fraction of the profile range, to trust the valley.
  double valley_min_depth = 0.05;

  void validate() const {
    if (!(size_flag_factor > 1)) throw ValidationError("division.size_flag_factor must be > 1");
    if (!(band_fraction > 0 && band_fraction <= 1)) throw ValidationError("division.band_fraction must be in (0, 1]");
    if (!(density_weight >= 0 && midline_weight >= 0 && smoothness_weight >= 0 && inter_slice_weight >= 0)) {
      throw ValidationError("division weights must be >= 0");
    }
    if (max_inter_slice_step < 1) throw ValidationError("division.max_inter_slice_step must be >= 1");
    if (smoothing_radius < 0) throw ValidationError("division.smoothing_radius must be >= 0");
    if (!(valley_min_depth >= 0)) throw ValidationError("division.valley_min_depth must be >= 0");
  }
};

// ------------------------------------------------------------- flagging ----

/// Flags extents above factor x median. With fewer than three volumes the
/// median is meaningless and the rule becomes extent > 2 x min.
inline std::vector<bool> flag_double(const std::vector<double>& extents, const DivisionConfig& cfg) {
  std::vector<bool> flags(extents.size(), false);
  if (extents.empty()) return flags;
  double threshold = 0;
  if (extents.size() < 3) {
    threshold = 2.0 * *std::min_element(extents.begin(), extents.end());
  } else {
    std::vector<double> s = extents;
    std::sort(s.begin(), s.end());
    const std::size_t m = s.size() / 2;
    const double median = s.size() % 2 ? s[m] : 0.5 * (s[m - 1] + s[m]);
    threshold = cfg.size_flag_factor * median;
  }
  for (std::size_t i = 0; i < extents.size(); ++i) flags[i] = extents[i] > threshold;
  return flags;
}

inline std::vector<bool> flag_double(const std::vector<Box3D>& boxes, const DivisionConfig& cfg) {
  std::vector<double> extents;
  extents.reserve(boxes.size());
  for (const auto& b : boxes) extents.push_back(b.mm_max[2] - b.mm_min[2]);
  return flag_double(extents, cfg);
}

// -------------------------------------------------------------- profile ----

// Seam rows allowed for a box: the central band_fraction of its height,
// shrunk so both sides keep at least one row. Inclusive, absolute z.
struct Band {
  int lo = 0;
  int hi = -1;
  double halfwidth = 1;
  [[nodiscard]] bool empty() const { return lo > hi; }
};

inline Band central_band(const VoxelBox& box, const DivisionConfig& cfg) {
  const double extent = box.extent(2);
  const double center = box.min[2] + 0.5 * extent;
  const double hw = 0.5 * cfg.band_fraction * extent;
  Band b;
  b.lo = std::max(static_cast<int>(std::ceil(center - hw)), box.min[2] + 1);
  b.hi = std::min(static_cast<int>(std::floor(center + hw)), box.max[2] - 1);
  b.halfwidth = std::max(1.0, hw);
  return b;
}

struct DensityProfile {
  int z_begin = 0;             // absolute z of values[0]
  std::vector<double> values;  // mean density per axial slice over the box footprint
  int z0 = 0;                  // expected split row (absolute)
  bool from_valley = false;
};

inline DensityProfile vertical_density_profile(const VoxelVolume& vol, const VoxelBox& box,
                                               const DivisionConfig& cfg) {
  DensityProfile p;
  p.z_begin = box.min[2];
  const double area = static_cast<double>(box.extent(0)) * box.extent(1);
  for (int z = box.min[2]; z < box.max[2]; ++z) {
    long long sum = 0;
    for (int y = box.min[1]; y < box.max[1]; ++y) {
      for (int x = box.min[0]; x < box.max[0]; ++x) sum += vol.at(x, y, z);
    }
    p.values.push_back(static_cast<double>(sum) / area);
  }
  p.z0 = box.min[2] + box.extent(2) / 2;

  const Band band = central_band(box, cfg);
  if (band.empty()) return p;
  const auto& v = p.values;
  const int n = static_cast<int>(v.size());
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double range = *mx - *mn;
  if (range <= 0) return p;

  std::vector<double> left_max(static_cast<std::size_t>(n)), right_max(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) left_max[i] = std::max(v[i], i ? left_max[i - 1] : v[i]);
  for (int i = n - 1; i >= 0; --i) right_max[i] = std::max(v[i], i + 1 < n ? right_max[i + 1] : v[i]);

  double best = -1;
  int best_i = -1;
  for (int z = band.lo; z <= band.hi; ++z) {
    const int i = z - p.z_begin;
    const double depth = std::min(left_max[i], right_max[i]) - v[i];
    if (depth > best + 1e-9) {
      best = depth;
      best_i = i;
    }
  }
  if (best_i < 0 || best <= cfg.valley_min_depth * range) return p;
  // Center of the flat run of equally deep rows starting at best_i.
  int run_end = best_i;
  while (run_end + 1 < n && p.z_begin + run_end + 1 <= band.hi &&
         std::abs(v[run_end + 1] - v[best_i]) <= 1e-9) {
    ++run_end;
  }
  p.z0 = p.z_begin + best_i + (run_end - best_i + 1) / 2;
  p.from_valley = true;
  return p;
}

// ----------------------------------------------------------------- seam ----

struct SeamWeights {
  double density = 1.0;
  double midline = 0.5;
  double smoothness = 0.05;
  double inter_slice = 0.05;
};

inline SeamWeights seam_weights(const DivisionConfig& c) {
  return {c.density_weight, c.midline_weight, c.smoothness_weight, c.inter_slice_weight};
}

// One sagittal slice as a (y, z) grid of normalized densities in [0, 1].
// Row indices here are local: 0 .. nz - 1.
struct SeamProblem {
  int ny = 0;
  int nz = 0;
  std::vector<double> density;  // index y * nz + z
  int z0 = 0;
  int band_lo = 0;
  int band_hi = 0;
  double band_halfwidth = 1;
  std::vector<int> prior;  // previous slice's seam; empty for the first slice

  [[nodiscard]] double n(int y, int z) const { return density[static_cast<std::size_t>(y * nz + z)]; }
};

struct Seam {
  std::vector<int> z;
  double cost = 0;
};

inline double seam_node_cost(const SeamProblem& p, const SeamWeights& w, int y, int z) {
  const double dz = (z - p.z0) / p.band_halfwidth;
  double c = w.density * p.n(y, z) + w.midline * dz * dz;
  if (!p.prior.empty()) c += w.inter_slice * std::abs(z - p.prior[static_cast<std::size_t>(y)]);
  return c;
}

/// Exact minimum over paths z(y) confined to the band with |z(y) - z(y-1)| <= 1.
inline Seam seam_in_sagittal_slice(const SeamProblem& p, const SeamWeights& w) {
  if (p.band_lo > p.band_hi || p.band_lo < 0 || p.band_hi >= p.nz) {
    throw DivisionError("seam band is empty; box too thin to divide");
  }
  if (p.ny <= 0) throw DivisionError("sagittal slice has no columns");
  const int rows = p.band_hi - p.band_lo + 1;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(static_cast<std::size_t>(p.ny * rows), inf);
  std::vector<int> from(static_cast<std::size_t>(p.ny * rows), -1);
  auto idx = [rows](int y, int r) { return static_cast<std::size_t>(y * rows + r); };

  for (int r = 0; r < rows; ++r) acc[idx(0, r)] = seam_node_cost(p, w, 0, p.band_lo + r);
  for (int y = 1; y < p.ny; ++y) {
    for (int r = 0; r < rows; ++r) {
      const double node = seam_node_cost(p, w, y, p.band_lo + r);
      double best = inf;
      int arg = -1;
      // Candidates in order: straight, then up, then down, so ties keep the row.
      for (int d : {0, -1, 1}) {
        const int q = r + d;
        if (q < 0 || q >= rows) continue;
        const double c = acc[idx(y - 1, q)] + w.smoothness * std::abs(d);
        if (c < best) {
          best = c;
          arg = q;
        }
      }
      acc[idx(y, r)] = best + node;
      from[idx(y, r)] = arg;
    }
  }
  int end = 0;
  double best = inf;
  const int z0r = std::clamp(p.z0 - p.band_lo, 0, rows - 1);
  for (int r = 0; r < rows; ++r) {
    const double c = acc[idx(p.ny - 1, r)];
    if (c < best || (c == best && std::abs(r - z0r) < std::abs(end - z0r))) {
      best = c;
      end = r;
    }
  }
  Seam s;
  s.cost = best;
  s.z.resize(static_cast<std::size_t>(p.ny));
  for (int y = p.ny - 1; y >= 0; --y) {
    s.z[static_cast<std::size_t>(y)] = p.band_lo + end;
    if (y > 0) end = from[idx(y, end)];
  }
  return s;
}

// --------------------------------------------------------------- lattice ----

struct DivisionSurface {
  int parent_id = 0;
  VoxelBox box;
  int z0 = 0;
  bool z0_from_valley = false;
  Band band;
  // heights[(x - box.min[0]) * ny + (y - box.min[1])], absolute z of the
  // first lower row.
  std::vector<int> heights;
  int clamped = 0;

  [[nodiscard]] int nx() const { return box.extent(0); }
  [[nodiscard]] int ny() const { return box.extent(1); }
  [[nodiscard]] int at(int x, int y) const {
    return heights[static_cast<std::size_t>((x - box.min[0]) * ny() + (y - box.min[1]))];
  }
  [[nodiscard]] bool is_upper(int x, int y, int z) const { return z < at(x, y); }
};

/// Assembles per-slice seams (absolute z, x order) into a lattice, clamping
/// each column to within max_inter_slice_step of the previous slice and to
/// the band. Returns the number of clamped heights through `clamped`.
inline std::vector<int> build_lattice(const std::vector<std::vector<int>>& seams, const Band& band,
                                      const DivisionConfig& cfg, int& clamped) {
  if (seams.empty()) throw DivisionError("lattice needs at least one seam");
  clamped = 0;
  const std::size_t ny = seams.front().size();
  std::vector<int> out;
  out.reserve(seams.size() * ny);
  std::vector<int> prev;
  for (const auto& s : seams) {
    if (s.size() != ny) throw DivisionError("seams differ in length");
    std::vector<int> cur(s);
    for (std::size_t y = 0; y < ny; ++y) {
      int z = std::clamp(cur[y], band.lo, band.hi);
      if (!prev.empty()) {
        z = std::clamp(z, prev[y] - cfg.max_inter_slice_step, prev[y] + cfg.max_inter_slice_step);
      }
      if (z != cur[y]) ++clamped;
      cur[y] = z;
    }
    out.insert(out.end(), cur.begin(), cur.end());
    prev = std::move(cur);
  }
  return out;
}

namespace detail {

inline std::size_t box_index(const VoxelBox& b, int x, int y, int z) {
  return (static_cast<std::size_t>(z - b.min[2]) * b.extent(1) + (y - b.min[1])) * b.extent(0) + (x - b.min[0]);
}

// Densities inside `box`, each the mean over a (2r+1)^2 axial neighbourhood clipped to
// the volume. Rows are not mixed, so the split height keeps full resolution.
inline std::vector<double> smoothed_box(const VoxelVolume& vol, const VoxelBox& box, int r) {
  const std::array<int, 3> n{static_cast<int>(vol.dims().nx), static_cast<int>(vol.dims().ny), static_cast<int>(vol.dims().nz)};
  VoxelBox ext = box;
  for (int a = 0; a < 2; ++a) {
    ext.min[a] = std::max(0, box.min[a] - r);
    ext.max[a] = std::min(n[static_cast<std::size_t>(a)], box.max[a] + r);
  }
  std::vector<double> cur(static_cast<std::size_t>(ext.volume()));
  for (int z = ext.min[2]; z < ext.max[2]; ++z) {
    for (int y = ext.min[1]; y < ext.max[1]; ++y) {
      for (int x = ext.min[0]; x < ext.max[0]; ++x) cur[box_index(ext, x, y, z)] = vol.at(x, y, z);
    }
  }
  if (r > 0) {
    std::vector<double> next(cur.size());
    for (int a = 0; a < 2; ++a) {
      for (int z = ext.min[2]; z < ext.max[2]; ++z) {
        for (int y = ext.min[1]; y < ext.max[1]; ++y) {
          for (int x = ext.min[0]; x < ext.max[0]; ++x) {
            std::array<int, 3> c{x, y, z};
            const int lo = std::max(ext.min[a], c[a] - r), hi = std::min(ext.max[a] - 1, c[a] + r);
            double sum = 0;
            for (int k = lo; k <= hi; ++k) {
              c[a] = k;
              sum += cur[box_index(ext, c[0], c[1], c[2])];
            }
            next[box_index(ext, x, y, z)] = sum / (hi - lo + 1);
          }
        }
      }
      cur.swap(next);
    }
  }
  std::vector<double> out(static_cast<std::size_t>(box.volume()));
  for (int z = box.min[2]; z < box.max[2]; ++z) {
    for (int y = box.min[1]; y < box.max[1]; ++y) {
      for (int x = box.min[0]; x < box.max[0]; ++x) out[box_index(box, x, y, z)] = cur[box_index(ext, x, y, z)];
    }
  }
  return out;
}

}  // namespace detail

/// Full division surface for one box: profile -> z0 -> per-slice seams -> lattice.
inline DivisionSurface compute_division_surface(const VoxelVolume& vol, const Box3D& parent,
                                                const DivisionConfig& cfg) {
  cfg.validate();
  const VoxelBox& box = parent.vox;
  DivisionSurface surf;
  surf.parent_id = parent.id;
  surf.box = box;
  surf.band = central_band(box, cfg);
  if (surf.band.empty()) throw DivisionError("box " + std::to_string(parent.id) + " too thin to divide");
  const auto profile = vertical_density_profile(vol, box, cfg);
  surf.z0 = std::clamp(profile.z0, surf.band.lo, surf.band.hi);
  surf.z0_from_valley = profile.from_valley;

  const auto dens = detail::smoothed_box(vol, box, cfg.smoothing_radius);
  const auto [dmin, dmax] = std::minmax_element(dens.begin(), dens.end());
  const double vmin = *dmin;
  const double scale = *dmax > *dmin ? 1.0 / (*dmax - *dmin) : 0.0;

  const auto weights = seam_weights(cfg);
  const int ny = box.extent(1);
  const int nz = box.extent(2);
  std::vector<std::vector<int>> seams;
  std::vector<int> prior;
  for (int x = box.min[0]; x < box.max[0]; ++x) {
    SeamProblem p;
    p.ny = ny;
    p.nz = nz;
    p.density.resize(static_cast<std::size_t>(ny * nz));
    for (int y = 0; y < ny; ++y) {
      for (int z = 0; z < nz; ++z) {
        p.density[static_cast<std::size_t>(y * nz + z)] =
            (dens[detail::box_index(box, x, box.min[1] + y, box.min[2] + z)] - vmin) * scale;
      }
    }
    p.z0 = surf.z0 - box.min[2];
    p.band_lo = surf.band.lo - box.min[2];
    p.band_hi = surf.band.hi - box.min[2];
    p.band_halfwidth = surf.band.halfwidth;
    p.prior = prior;
    auto seam = seam_in_sagittal_slice(p, weights);
    prior = seam.z;
    for (auto& z : seam.z) z += box.min[2];
    seams.push_back(std::move(seam.z));
  }
  surf.heights = build_lattice(seams, surf.band, cfg, surf.clamped);
  return surf;
}

namespace detail {

// True when most of the footprint's cells lie above the surface.
inline bool footprint_is_upper(const SliceFootprint& f, const DivisionSurface& surf) {
  long long above = 0, total = 0;
  for (int x = std::max(f.box.x_min, surf.box.min[0]); x < std::min(f.box.x_max, surf.box.max[0]); ++x) {
    for (int y = std::max(f.box.y_min, surf.box.min[1]); y < std::min(f.box.y_max, surf.box.max[1]); ++y) {
      ++total;
      above += f.z < surf.at(x, y);
    }
  }
  if (total == 0) return false;
  return 2 * above >= total;
}

// Narrows the axial extent of `v` to the padded hull of `fs`, never past `parent`.
inline void fit_footprint(VoxelBox& v, const std::vector<SliceFootprint>& fs, const VoxelBox& parent,
                          const Spacing& sp, double margin_mm) {
  if (fs.empty()) return;
  Box2D h = fs.front().box;
  for (const auto& f : fs) {
    h.x_min = std::min(h.x_min, f.box.x_min);
    h.y_min = std::min(h.y_min, f.box.y_min);
    h.x_max = std::max(h.x_max, f.box.x_max);
    h.y_max = std::max(h.y_max, f.box.y_max);
  }
  const int mx = static_cast<int>(std::lround(margin_mm / sp.sx));
  const int my = static_cast<int>(std::lround(margin_mm / sp.sy));
  v.min[0] = std::clamp(h.x_min - mx, parent.min[0], parent.max[0] - 1);
  v.min[1] = std::clamp(h.y_min - my, parent.min[1], parent.max[1] - 1);
  v.max[0] = std::clamp(h.x_max + mx, v.min[0] + 1, parent.max[0]);
  v.max[1] = std::clamp(h.y_max + my, v.min[1] + 1, parent.max[1]);
}

// Lowest and highest surface rows over the unpadded hull of `fs`, or over the
// whole surface when `fs` is empty.
inline std::pair<int, int> height_range(const DivisionSurface& surf, const std::vector<SliceFootprint>& fs) {
  const VoxelBox& b = surf.box;
  int x0 = b.min[0], y0 = b.min[1], x1 = b.max[0], y1 = b.max[1];
  if (!fs.empty()) {
    x0 = y0 = std::numeric_limits<int>::max();
    x1 = y1 = std::numeric_limits<int>::min();
    for (const auto& f : fs) {
      x0 = std::min(x0, f.box.x_min);
      y0 = std::min(y0, f.box.y_min);
      x1 = std::max(x1, f.box.x_max);
      y1 = std::max(y1, f.box.y_max);
    }
    x0 = std::max(x0, b.min[0]);
    y0 = std::max(y0, b.min[1]);
    x1 = std::min(x1, b.max[0]);
    y1 = std::min(y1, b.max[1]);
    if (x0 >= x1 || y0 >= y1) return height_range(surf, {});
  }
  int lo = std::numeric_limits<int>::max(), hi = std::numeric_limits<int>::min();
  for (int x = x0; x < x1; ++x) {
    for (int y = y0; y < y1; ++y) {
      lo = std::min(lo, surf.at(x, y));
      hi = std::max(hi, surf.at(x, y));
    }
  }
  return {lo, hi};
}

}  // namespace detail

/// Splits a box along its division surface. Each half takes the hull of the
/// parent's slice footprints on its side of the surface. Vertically, the upper
/// box ends at the highest surface row under its hull and the lower box starts
/// at the lowest. Axially, the hull is padded by the context margin. A half
/// without footprints uses the whole surface and keeps the parent's extent. Both keep the parent label and record it in divided_from;
/// ids are left to the caller.
inline std::pair<Box3D, Box3D> split_volume(const Box3D& parent, const DivisionSurface& surf, const Spacing& sp,
                                            double context_margin_mm = 1.0) {
  const VoxelBox& b = parent.vox;
  if (!surf.box.contains(b) || !b.contains(surf.box)) {
    throw DivisionError("division surface does not cover box " + std::to_string(parent.id));
  }
  const auto [lo, hi] = std::minmax_element(surf.heights.begin(), surf.heights.end());
  if (*hi <= b.min[2] || *lo >= b.max[2]) {
    throw DivisionError("surface leaves one side of box " + std::to_string(parent.id) + " empty");
  }
  std::vector<SliceFootprint> upper_fp, lower_fp;
  for (const auto& f : parent.footprints) (detail::footprint_is_upper(f, surf) ? upper_fp : lower_fp).push_back(f);
  const int upper_end = std::clamp(detail::height_range(surf, upper_fp).second, b.min[2] + 1, b.max[2]);
  const int lower_begin = std::clamp(detail::height_range(surf, lower_fp).first, b.min[2], b.max[2] - 1);

  VoxelBox up = b;
  up.max[2] = upper_end;
  VoxelBox down = b;
  down.min[2] = lower_begin;
  detail::fit_footprint(up, upper_fp, b, sp, context_margin_mm);
  detail::fit_footprint(down, lower_fp, b, sp, context_margin_mm);
  Box3D u = make_box3d(parent.id, up, sp, parent.label);
  Box3D d = make_box3d(parent.id, down, sp, parent.label);
  u.detection_count = upper_fp.empty() ? parent.detection_count : static_cast<int>(upper_fp.size());
  d.detection_count = lower_fp.empty() ? parent.detection_count : static_cast<int>(lower_fp.size());
  u.footprints = std::move(upper_fp);
  d.footprints = std::move(lower_fp);
  u.divided_from = d.divided_from = parent.id;
  return {u, d};
}

struct DivisionOutcome {
  std::vector<Box3D> boxes;
  std::vector<DivisionSurface> surfaces;
  std::vector<int> flagged;      // parent ids
  std::vector<int> irreducible;  // flagged but refused
};

/// Flags oversized boxes and replaces each with its upper and lower halves.
/// Flagged boxes are divided concurrently, at most `threads` at a time.
inline DivisionOutcome divide_boxes(const VoxelVolume& vol, const std::vector<Box3D>& boxes,
                                    const DivisionConfig& cfg, unsigned threads = 1,
                                    double context_margin_mm = 1.0) {
  cfg.validate();
  DivisionOutcome out;
  const auto flags = flag_double(boxes, cfg);
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (flags[i]) todo.push_back(i);
  }

  std::vector<std::optional<DivisionSurface>> surfaces(boxes.size());
  auto work = [&](std::size_t i) {
    try {
      surfaces[i] = compute_division_surface(vol, boxes[i], cfg);
    } catch (const DivisionError&) {
      surfaces[i].reset();
    }
  };
  threads = std::max(1u, threads);
  for (std::size_t start = 0; start < todo.size(); start += threads) {
    std::vector<std::future<void>> batch;
    for (std::size_t k = start; k < std::min(todo.size(), start + threads); ++k) {
      batch.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred, work, todo[k]));
    }
    for (auto& f : batch) f.get();
  }

  int next_id = 0;
  for (const auto& b : boxes) next_id = std::max(next_id, b.id);
  ++next_id;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!flags[i]) {
      out.boxes.push_back(boxes[i]);
      continue;
    }
    out.flagged.push_back(boxes[i].id);
    if (!surfaces[i]) {
      out.irreducible.push_back(boxes[i].id);
      out.boxes.push_back(boxes[i]);
      continue;
    }
    try {
      auto [u, d] = split_volume(boxes[i], *surfaces[i], vol.spacing(), context_margin_mm);
      u.id = next_id++;
      d.id = next_id++;
      out.boxes.push_back(u);
      out.boxes.push_back(d);
      out.surfaces.push_back(std::move(*surfaces[i]));
    } catch (const DivisionError&) {
      out.irreducible.push_back(boxes[i].id);
      out.boxes.push_back(boxes[i]);
    }
  }
  return out;
}

}  // namespace toothbox
