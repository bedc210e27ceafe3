#pragma once

// Vertical tooth-region selection and equispaced axial sampling.

#include <toothbox/error.hpp>
#include <toothbox/volume.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace toothbox {

// Mean density of each axial slice, indexed by z.
struct AxialProfile {
  std::vector<double> values;
};

struct Slab {
  int z_lo = 0;
  int z_hi = 0;  // inclusive
  friend bool operator==(const Slab&, const Slab&) = default;
};

inline AxialProfile axial_mean_profile(const VoxelVolume& vol) {
  AxialProfile p;
  p.values.resize(static_cast<std::size_t>(vol.nz()));
  const std::size_t plane = std::size_t{vol.dims().nx} * vol.dims().ny;
  const auto& d = vol.data();
  for (int z = 0; z < vol.nz(); ++z) {
    const std::size_t base = plane * static_cast<std::size_t>(z);
    long long sum = 0;
    for (std::size_t i = 0; i < plane; ++i) sum += d[base + i];
    p.values[static_cast<std::size_t>(z)] = static_cast<double>(sum) / static_cast<double>(plane);
  }
  return p;
}

/// Maximal contiguous window around the profile maximum whose slices all
/// reach v_min + (1 - fraction) * (v_max - v_min).
inline Slab select_tooth_slab(const AxialProfile& profile, double fraction = 0.9) {
  const auto& v = profile.values;
  if (v.empty()) throw ValidationError("axial profile is empty");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("slab fraction must be in (0, 1]");
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const int n = static_cast<int>(v.size());
  if (*mn == *mx) return {0, n - 1};
  const double threshold = *mn + (1.0 - fraction) * (*mx - *mn);
  const int peak = static_cast<int>(mx - v.begin());
  int lo = peak;
  int hi = peak;
  while (lo > 0 && v[static_cast<std::size_t>(lo - 1)] >= threshold) --lo;
  while (hi < n - 1 && v[static_cast<std::size_t>(hi + 1)] >= threshold) ++hi;
  return {lo, hi};
}

// Slice step in voxels for a physical interval: nearest integer, at least 1.
// Exact decimal ties (1.4 / 0.4) round up despite binary representation error.
inline int slice_step(double sz_mm, double interval_mm) {
  if (!(interval_mm > 0)) throw ValidationError("slice interval must be > 0");
  if (!(sz_mm > 0)) throw ValidationError("z spacing must be > 0");
  return std::max(1, static_cast<int>(std::lround(interval_mm / sz_mm + 1e-9)));
}

inline std::vector<int> sample_slices(const Slab& slab, double sz_mm, double interval_mm = 1.4) {
  const int step = slice_step(sz_mm, interval_mm);
  std::vector<int> out;
  for (int z = slab.z_lo; z <= slab.z_hi; z += step) out.push_back(z);
  return out;
}

}  // namespace toothbox
