#pragma once

// Slice-to-slice tooth tracking: 2D detections are chained top-down into
// tooth volumes with a weighted match cost and an optimal assignment per
// slice, then interpolated and turned into labeled 3D boxes.
//
// Match cost between an active volume t and a candidate box b with label l:
//
//   q = w1 * d * h(d) + w2 * (1 - IoU) + w3 * (1 - f_l)
//
//   d    vertical distance (mm) from b's slice to t's last matched slice
//   h    0 when d <= gamma, 1 otherwise
//   IoU  overlap of b with t's last matched box, both on the axial plane
//   f_l  fraction of t's matches labeled l
//
// A pair is admissible only when q <= beta.

#include <toothbox/assignment.hpp>
#include <toothbox/detections.hpp>
#include <toothbox/error.hpp>
#include <toothbox/geometry.hpp>
#include <toothbox/volume.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace toothbox {

// Slack on the overlap weight so a zero-overlap pair always exceeds beta.
inline constexpr double kOverlapWeightSlack = 1e-6;

struct MatchConfig {
  double beta = 1.0;
  double gamma_mm = 1.4;
  double w1 = 1.0 / (4 * 1.4);
  double w2 = 1.0 + kOverlapWeightSlack;
  double w3 = 0.2;
  // A volume closes after this many consecutive sampled slices without a
  // match, so a single skipped slice is tolerated and two are not.
  int max_skipped_slices = 2;
  int min_detections = 3;
  double min_height_mm = 2.8;
  double context_margin_mm = 1.0;

  // Calibrated weights for a given sampled-slice step: gamma = one step,
  // w1 = beta / (4 gamma), w2 = beta (1 + slack), w3 = 0.2 beta.
  static MatchConfig for_step(double step_mm, double beta = 1.0) {
    MatchConfig c;
    c.beta = beta;
    c.gamma_mm = step_mm;
    c.w1 = beta / (4.0 * step_mm);
    c.w2 = beta * (1.0 + kOverlapWeightSlack);
    c.w3 = 0.2 * beta;
    return c;
  }

  void validate() const {
    if (!(beta > 0)) throw ValidationError("match.beta must be > 0");
    if (!(gamma_mm > 0)) throw ValidationError("match.gamma_mm must be > 0");
    if (!(w1 >= 0 && w2 >= 0 && w3 >= 0)) throw ValidationError("match weights must be >= 0");
    if (max_skipped_slices < 1) throw ValidationError("match.max_skipped_slices must be >= 1");
    if (min_detections < 1) throw ValidationError("match.min_detections must be >= 1");
    if (!(min_height_mm >= 0)) throw ValidationError("match.min_height_mm must be >= 0");
    if (!(context_margin_mm >= 0)) throw ValidationError("match.context_margin_mm must be >= 0");
  }
};

enum class VolumeState { active, closed };

struct SliceMatch {
  int slice = 0;
  Box2D box;
  Label label;
  // Position of the consumed detection in its slice's input list.
  std::size_t source = 0;
};

struct ToothVolume {
  int id = 0;
  std::vector<SliceMatch> matches;
  std::array<int, Label::kCount> label_histogram{};
  VolumeState state = VolumeState::active;
  std::optional<Label> final_label;
  int slices_since_last_match = 0;

  [[nodiscard]] const SliceMatch& last() const { return matches.back(); }
  [[nodiscard]] int total() const { return static_cast<int>(matches.size()); }

  // f_l: share of matches carrying label l.
  [[nodiscard]] double label_fraction(Label l) const {
    if (matches.empty()) return 0.0;
    return static_cast<double>(label_histogram[static_cast<std::size_t>(l.value() - 1)]) / total();
  }

  void add(const Detection2D& d, std::size_t source) {
    matches.push_back({d.slice, d.box, d.label, source});
    ++label_histogram[static_cast<std::size_t>(d.label.value() - 1)];
    slices_since_last_match = 0;
  }
};

// The sampled axial slices the detector ran on, top (small z) first.
struct SliceGrid {
  std::vector<int> slices;
  double z_spacing_mm = 1.0;
  double step_mm = 1.4;
};

inline int step_gate(double d_mm, double gamma_mm) { return d_mm <= gamma_mm ? 0 : 1; }

inline double match_cost(const ToothVolume& t, const Detection2D& b, const MatchConfig& cfg,
                         double z_spacing_mm) {
  const SliceMatch& last = t.last();
  const double d = std::abs(b.slice - last.slice) * z_spacing_mm;
  return cfg.w1 * d * step_gate(d, cfg.gamma_mm) + cfg.w2 * (1.0 - iou(b.box, last.box)) +
         cfg.w3 * (1.0 - t.label_fraction(b.label));
}

// Cost if the pair is admissible, nullopt otherwise. A pair is admissible
// when the volume is still active and q <= beta.
inline std::optional<double> gated_match_cost(const ToothVolume& t, const Detection2D& b,
                                              const MatchConfig& cfg, double z_spacing_mm) {
  if (t.state != VolumeState::active) return std::nullopt;
  const double q = match_cost(t, b, cfg, z_spacing_mm);
  if (q > cfg.beta) return std::nullopt;
  return q;
}

/// Most frequent label; ties go to the label with the longest run of
/// consecutive matches, then to the lowest class.
inline Label finalize_label(const ToothVolume& t) {
  if (t.matches.empty()) throw ValidationError("cannot label an empty tooth volume");
  const int best = *std::max_element(t.label_histogram.begin(), t.label_histogram.end());
  std::array<int, Label::kCount> longest_run{};
  int run = 0;
  for (std::size_t i = 0; i < t.matches.size(); ++i) {
    run = (i > 0 && t.matches[i].label == t.matches[i - 1].label) ? run + 1 : 1;
    auto& slot = longest_run[static_cast<std::size_t>(t.matches[i].label.value() - 1)];
    slot = std::max(slot, run);
  }
  int pick = -1;
  for (int l = 0; l < Label::kCount; ++l) {
    if (t.label_histogram[static_cast<std::size_t>(l)] != best) continue;
    if (pick < 0 || longest_run[static_cast<std::size_t>(l)] > longest_run[static_cast<std::size_t>(pick)]) pick = l;
  }
  return Label(pick + 1);
}

inline double volume_height_mm(const ToothVolume& t, const SliceGrid& grid) {
  return (t.last().slice - t.matches.front().slice) * grid.z_spacing_mm + grid.step_mm;
}

namespace detail {

inline bool detection_order(const Detection2D& a, const Detection2D& b) {
  if (a.box != b.box) return a.box < b.box;
  return a.label < b.label;
}

}  // namespace detail

/// Chains detections into closed, labeled tooth volumes. Volumes shorter than
/// min_detections matches or min_height_mm are dropped. Output ids are
/// 1..n in creation order.
inline std::vector<ToothVolume> reconstruct(const DetectionMap& dets, const SliceGrid& grid,
                                            const MatchConfig& cfg) {
  cfg.validate();
  std::set<int> order(grid.slices.begin(), grid.slices.end());
  for (const auto& [z, v] : dets) {
    if (!v.empty()) order.insert(z);
  }
  auto first = order.begin();
  while (first != order.end()) {
    auto it = dets.find(*first);
    if (it != dets.end() && !it->second.empty()) break;
    ++first;
  }

  std::vector<ToothVolume> volumes;
  int next_id = 1;
  for (auto zit = first; zit != order.end(); ++zit) {
    const int z = *zit;
    std::vector<std::pair<Detection2D, std::size_t>> here;
    if (auto it = dets.find(z); it != dets.end()) {
      for (std::size_t i = 0; i < it->second.size(); ++i) here.emplace_back(it->second[i], i);
    }
    std::stable_sort(here.begin(), here.end(), [](const auto& a, const auto& b) {
      return detail::detection_order(a.first, b.first);
    });

    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
      if (volumes[i].state == VolumeState::active) active.push_back(i);
    }

    std::vector<char> row_matched(active.size(), 0);
    std::vector<char> col_matched(here.size(), 0);
    if (!active.empty() && !here.empty()) {
      CostMatrix costs(active.size(), here.size(), kForbidden);
      for (std::size_t r = 0; r < active.size(); ++r) {
        for (std::size_t c = 0; c < here.size(); ++c) {
          if (auto q = gated_match_cost(volumes[active[r]], here[c].first, cfg, grid.z_spacing_mm)) {
            costs(r, c) = *q;
          }
        }
      }
      for (const auto& p : solve_assignment(costs)) {
        volumes[active[p.row]].add(here[p.col].first, here[p.col].second);
        row_matched[p.row] = 1;
        col_matched[p.col] = 1;
      }
    }
    for (std::size_t r = 0; r < active.size(); ++r) {
      if (row_matched[r]) continue;
      auto& t = volumes[active[r]];
      if (++t.slices_since_last_match >= cfg.max_skipped_slices) t.state = VolumeState::closed;
    }
    for (std::size_t c = 0; c < here.size(); ++c) {
      if (col_matched[c]) continue;
      ToothVolume t;
      t.id = next_id++;
      t.add(here[c].first, here[c].second);
      volumes.push_back(std::move(t));
    }
  }

  std::vector<ToothVolume> out;
  for (auto& t : volumes) {
    t.state = VolumeState::closed;
    if (t.total() < cfg.min_detections) continue;
    if (volume_height_mm(t, grid) < cfg.min_height_mm) continue;
    t.final_label = finalize_label(t);
    out.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = static_cast<int>(i + 1);
  return out;
}

struct InterpolatedSlice {
  int slice = 0;
  BoxF box;
};

/// One box per slice index from the first to the last match; slices between
/// matches get edges linearly interpolated by slice index.
inline std::vector<InterpolatedSlice> interpolate_volume(const ToothVolume& t) {
  if (t.matches.empty()) throw ValidationError("cannot interpolate an empty tooth volume");
  auto to_f = [](const Box2D& b) {
    return BoxF{double(b.x_min), double(b.y_min), double(b.x_max), double(b.y_max)};
  };
  std::vector<InterpolatedSlice> out;
  out.push_back({t.matches.front().slice, to_f(t.matches.front().box)});
  for (std::size_t i = 1; i < t.matches.size(); ++i) {
    const auto& a = t.matches[i - 1];
    const auto& b = t.matches[i];
    const int span = b.slice - a.slice;
    for (int z = a.slice + 1; z < b.slice; ++z) {
      const double f = static_cast<double>(z - a.slice) / span;
      auto lerp = [f](int p, int q) { return p + (q - p) * f; };
      out.push_back({z, BoxF{lerp(a.box.x_min, b.box.x_min), lerp(a.box.y_min, b.box.y_min),
                             lerp(a.box.x_max, b.box.x_max), lerp(a.box.y_max, b.box.y_max)}});
    }
    out.push_back({b.slice, to_f(b.box)});
  }
  return out;
}

inline Box3D make_box3d(int id, const VoxelBox& vox, const Spacing& sp, Label label) {
  Box3D b;
  b.id = id;
  b.vox = vox;
  const std::array<double, 3> s{sp.sx, sp.sy, sp.sz};
  for (int a = 0; a < 3; ++a) {
    b.mm_min[a] = vox.min[a] * s[a];
    b.mm_max[a] = vox.max[a] * s[a];
  }
  b.label = label;
  return b;
}

inline int margin_voxels(double margin_mm, double spacing_mm) {
  return static_cast<int>(std::lround(margin_mm / spacing_mm));
}

/// Axis-aligned hull of the interpolated boxes, padded by the context margin
/// and clamped to the volume.
inline Box3D bounding_box_3d(const ToothVolume& t, const MatchConfig& cfg, const Dims& dims,
                             const Spacing& sp) {
  const auto slices = interpolate_volume(t);
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& s : slices) {
    x0 = std::min(x0, s.box.x_min);
    y0 = std::min(y0, s.box.y_min);
    x1 = std::max(x1, s.box.x_max);
    y1 = std::max(y1, s.box.y_max);
  }
  const int mx = margin_voxels(cfg.context_margin_mm, sp.sx);
  const int my = margin_voxels(cfg.context_margin_mm, sp.sy);
  const int mz = margin_voxels(cfg.context_margin_mm, sp.sz);
  VoxelBox v;
  v.min = {static_cast<int>(std::floor(x0)) - mx, static_cast<int>(std::floor(y0)) - my,
           slices.front().slice - mz};
  v.max = {static_cast<int>(std::ceil(x1)) + mx, static_cast<int>(std::ceil(y1)) + my,
           slices.back().slice + 1 + mz};
  const std::array<int, 3> n{static_cast<int>(dims.nx), static_cast<int>(dims.ny), static_cast<int>(dims.nz)};
  for (int a = 0; a < 3; ++a) {
    v.min[a] = std::clamp(v.min[a], 0, n[a] - 1);
    v.max[a] = std::clamp(v.max[a], v.min[a] + 1, n[a]);
  }
  Box3D b = make_box3d(t.id, v, sp, t.final_label.value_or(finalize_label(t)));
  b.detection_count = t.total();
  for (const auto& m : t.matches) b.footprints.push_back({m.slice, m.box});
  return b;
}

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Least squares y = c0 + c1 u^2 + c2 u^4 with u = (x - m) / scale. Returns
// the residual sum of squares, or infinity when the system is singular.
inline double even_fit(const std::vector<std::array<double, 2>>& pts, double m, double scale,
                       std::array<double, 3>& c) {
  std::array<std::array<double, 4>, 3> a{};
  for (const auto& p : pts) {
    const double u2 = ((p[0] - m) / scale) * ((p[0] - m) / scale);
    const std::array<double, 3> f{1.0, u2, u2 * u2};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) a[i][j] += f[i] * f[j];
      a[i][3] += f[i] * p[1];
    }
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (std::abs(a[piv][col]) < 1e-12) return std::numeric_limits<double>::infinity();
    std::swap(a[col], a[piv]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double k = a[r][col] / a[col][col];
      for (int j = col; j < 4; ++j) a[r][j] -= k * a[col][j];
    }
  }
  for (int i = 0; i < 3; ++i) c[i] = a[i][3] / a[i][i];
  double rss = 0;
  for (const auto& p : pts) {
    const double u2 = ((p[0] - m) / scale) * ((p[0] - m) / scale);
    const double e = c[0] + c[1] * u2 + c[2] * u2 * u2 - p[1];
    rss += e * e;
  }
  return rss;
}

}  // namespace detail

/// Mid-sagittal x (voxels): the symmetry axis of the dental arches, fitted as
/// even quartics y(x - m) through the axial box centroids of each arch with a
/// shared m. Falls back to the median centroid x when no arch has four boxes
/// or the fitted arches are flat.
inline double estimate_midline_x(const std::vector<Box3D>& boxes, double occlusal_z) {
  if (boxes.empty()) return 0.0;
  std::array<std::vector<std::array<double, 2>>, 2> arch;
  std::vector<double> xs;
  for (const auto& b : boxes) {
    const auto c = b.vox.centroid();
    xs.push_back(c[0]);
    arch[c[2] < occlusal_z ? 0 : 1].push_back({c[0], c[1]});
  }
  const double fallback = detail::median_of(xs);
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  const double scale = std::max(1.0, 0.5 * (*hi - *lo));
  if (arch[0].size() < 4 && arch[1].size() < 4) return fallback;

  double best_m = fallback;
  double best_rss = std::numeric_limits<double>::infinity();
  for (double m = *lo; m <= *hi + 1e-9; m += 0.25) {
    double rss = 0;
    for (const auto& pts : arch) {
      if (pts.size() < 4) continue;
      std::array<double, 3> c{};
      rss += detail::even_fit(pts, m, scale, c);
    }
    if (rss < best_rss - 1e-9 || (std::abs(rss - best_rss) <= 1e-9 && std::abs(m - fallback) < std::abs(best_m - fallback))) {
      best_rss = rss;
      best_m = m;
    }
  }
  if (!std::isfinite(best_rss)) return fallback;
  for (const auto& pts : arch) {
    if (pts.size() < 4) continue;
    std::array<double, 3> c{};
    detail::even_fit(pts, best_m, scale, c);
    double reach = 0;
    for (const auto& p : pts) reach = std::max(reach, std::abs(p[0] - best_m) / scale);
    const double u2 = reach * reach;
    if (std::abs(c[1] * u2 + c[2] * u2 * u2) < 1.0) return fallback;
  }
  return best_m;
}

/// Sets FDI codes from box centroids: upper when the centroid lies above
/// occlusal_z (voxel units), patient's right when left of the estimated
/// midline. Centroids exactly on a plane go lower / left.
inline std::vector<Box3D> assign_fdi(std::vector<Box3D> boxes, double occlusal_z) {
  if (boxes.empty()) return boxes;
  const double midline = estimate_midline_x(boxes, occlusal_z);
  for (auto& b : boxes) {
    const auto c = b.vox.centroid();
    const bool upper = c[2] < occlusal_z;
    const bool right = c[0] < midline;
    b.fdi = fdi_code(fdi_quadrant(upper, right), b.label);
  }
  return boxes;
}

inline std::vector<Box3D> boxes_from_volumes(const std::vector<ToothVolume>& volumes, const MatchConfig& cfg,
                                             const Dims& dims, const Spacing& sp) {
  std::vector<Box3D> out;
  out.reserve(volumes.size());
  for (const auto& t : volumes) out.push_back(bounding_box_3d(t, cfg, dims, sp));
  return out;
}

}  // namespace toothbox
