#pragma once

// End-to-end pipeline: slab -> sampled slices -> detections -> tooth volumes
// -> 3D boxes -> flag/divide -> evaluation, plus the JSON documents and PGM
// previews the command-line tool reads and writes.

#include <toothbox/detections.hpp>
#include <toothbox/division.hpp>
#include <toothbox/error.hpp>
#include <toothbox/evaluation.hpp>
#include <toothbox/geometry.hpp>
#include <toothbox/phantom.hpp>
#include <toothbox/reconstruction.hpp>
#include <toothbox/slab.hpp>
#include <toothbox/volume.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace toothbox {

using ojson = nlohmann::ordered_json;

struct SlicingConfig {
  double interval_mm = 1.4;
  double fraction = 0.9;

  void validate() const {
    if (!(interval_mm > 0)) throw ValidationError("slicing.interval_mm must be > 0");
    if (!(fraction > 0 && fraction <= 1)) throw ValidationError("slicing.fraction must be in (0, 1]");
  }
};

// Matching parameters as configured. Weights left unset are derived from the
// sampled-slice step when the grid is known.
struct MatchSettings {
  double beta = 1.0;
  std::optional<double> gamma_mm, w1, w2, w3;
  int max_skipped_slices = 2;
  int min_detections = 3;
  double min_height_mm = 2.8;
  double context_margin_mm = 1.0;

  [[nodiscard]] MatchConfig resolve(double step_mm) const {
    MatchConfig c = MatchConfig::for_step(gamma_mm.value_or(step_mm), beta);
    if (w1) c.w1 = *w1;
    if (w2) c.w2 = *w2;
    if (w3) c.w3 = *w3;
    c.max_skipped_slices = max_skipped_slices;
    c.min_detections = min_detections;
    c.min_height_mm = min_height_mm;
    c.context_margin_mm = context_margin_mm;
    c.validate();
    return c;
  }

  void validate() const { (void)resolve(1.0); }
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  SlicingConfig slicing;
  MatchSettings match;
  DivisionConfig division;
  NoiseModel noise;  // seed is derived from the top-level seed
  EvaluationConfig evaluation;

  void validate() const {
    if (threads < 1) throw ValidationError("threads must be >= 1");
    slicing.validate();
    match.validate();
    division.validate();
    noise.validate();
    evaluation.validate();
  }
};

// Deterministic sub-seed for a pipeline stage (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stage + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kNoiseStage = 1;

// ------------------------------------------------------------ config JSON ----

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (j.contains(key)) {
    if (j.at(key).is_null()) out.reset();
    else out = j.at(key).get<T>();
  }
}

inline ojson opt_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

}  // namespace detail

inline ojson to_json(const SlicingConfig& c) { return {{"interval_mm", c.interval_mm}, {"fraction", c.fraction}}; }

inline ojson to_json(const MatchConfig& c) {
  return {{"beta", c.beta},
          {"gamma_mm", c.gamma_mm},
          {"w1", c.w1},
          {"w2", c.w2},
          {"w3", c.w3},
          {"max_skipped_slices", c.max_skipped_slices},
          {"min_detections", c.min_detections},
          {"min_height_mm", c.min_height_mm},
          {"context_margin_mm", c.context_margin_mm}};
}

inline ojson to_json(const MatchSettings& c) {
  return {{"beta", c.beta},
          {"gamma_mm", detail::opt_json(c.gamma_mm)},
          {"w1", detail::opt_json(c.w1)},
          {"w2", detail::opt_json(c.w2)},
          {"w3", detail::opt_json(c.w3)},
          {"max_skipped_slices", c.max_skipped_slices},
          {"min_detections", c.min_detections},
          {"min_height_mm", c.min_height_mm},
          {"context_margin_mm", c.context_margin_mm}};
}

inline ojson to_json(const DivisionConfig& c) {
  return {{"size_flag_factor", c.size_flag_factor},
          {"band_fraction", c.band_fraction},
          {"density_weight", c.density_weight},
          {"midline_weight", c.midline_weight},
          {"smoothness_weight", c.smoothness_weight},
          {"inter_slice_weight", c.inter_slice_weight},
          {"max_inter_slice_step", c.max_inter_slice_step},
          {"valley_min_depth", c.valley_min_depth},
          {"smoothing_radius", c.smoothing_radius}};
}

inline ojson to_json(const NoiseModel& c) {
  return {{"dropout", c.dropout},
          {"label_confusion", c.label_confusion},
          {"center_jitter", c.center_jitter},
          {"size_jitter", c.size_jitter},
          {"spurious_rate", c.spurious_rate}};
}

inline ojson to_json(const EvaluationConfig& c) {
  return {{"coverage_threshold", c.coverage_threshold},
          {"detect_threshold", c.detect_threshold},
          {"double_threshold", c.double_threshold},
          {"contamination_threshold", c.contamination_threshold}};
}

inline ojson to_json(const PipelineConfig& c) {
  return {{"seed", c.seed},
          {"threads", c.threads},
          {"slicing", to_json(c.slicing)},
          {"match", to_json(c.match)},
          {"division", to_json(c.division)},
          {"noise", to_json(c.noise)},
          {"evaluation", to_json(c.evaluation)}};
}

// Same document with the step-dependent matching weights filled in.
inline ojson resolved_config_json(const PipelineConfig& c, double step_mm) {
  ojson j = to_json(c);
  j["match"] = to_json(c.match.resolve(step_mm));
  return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  using detail::reject_unknown;
  PipelineConfig c;
  try {
    reject_unknown(j, {"seed", "threads", "slicing", "match", "division", "noise", "evaluation"}, "");
    read_opt(j, "seed", c.seed);
    if (j.contains("threads")) {
      const auto t = j.at("threads").get<long long>();
      if (t < 1) throw ValidationError("threads must be >= 1");
      c.threads = static_cast<unsigned>(t);
    }
    if (j.contains("slicing")) {
      const auto& s = j.at("slicing");
      reject_unknown(s, {"interval_mm", "fraction"}, "slicing");
      read_opt(s, "interval_mm", c.slicing.interval_mm);
      read_opt(s, "fraction", c.slicing.fraction);
    }
    if (j.contains("match")) {
      const auto& m = j.at("match");
      reject_unknown(m,
                     {"beta", "gamma_mm", "w1", "w2", "w3", "max_skipped_slices", "min_detections",
                      "min_height_mm", "context_margin_mm"},
                     "match");
      read_opt(m, "beta", c.match.beta);
      read_opt(m, "gamma_mm", c.match.gamma_mm);
      read_opt(m, "w1", c.match.w1);
      read_opt(m, "w2", c.match.w2);
      read_opt(m, "w3", c.match.w3);
      read_opt(m, "max_skipped_slices", c.match.max_skipped_slices);
      read_opt(m, "min_detections", c.match.min_detections);
      read_opt(m, "min_height_mm", c.match.min_height_mm);
      read_opt(m, "context_margin_mm", c.match.context_margin_mm);
    }
    if (j.contains("division")) {
      const auto& d = j.at("division");
      reject_unknown(d,
                     {"size_flag_factor", "band_fraction", "density_weight", "midline_weight",
                      "smoothness_weight", "inter_slice_weight", "max_inter_slice_step", "valley_min_depth",
                      "smoothing_radius"},
                     "division");
      read_opt(d, "size_flag_factor", c.division.size_flag_factor);
      read_opt(d, "band_fraction", c.division.band_fraction);
      read_opt(d, "density_weight", c.division.density_weight);
      read_opt(d, "midline_weight", c.division.midline_weight);
      read_opt(d, "smoothness_weight", c.division.smoothness_weight);
      read_opt(d, "inter_slice_weight", c.division.inter_slice_weight);
      read_opt(d, "max_inter_slice_step", c.division.max_inter_slice_step);
      read_opt(d, "valley_min_depth", c.division.valley_min_depth);
      read_opt(d, "smoothing_radius", c.division.smoothing_radius);
    }
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      reject_unknown(n, {"dropout", "label_confusion", "center_jitter", "size_jitter", "spurious_rate"}, "noise");
      read_opt(n, "dropout", c.noise.dropout);
      read_opt(n, "label_confusion", c.noise.label_confusion);
      read_opt(n, "center_jitter", c.noise.center_jitter);
      read_opt(n, "size_jitter", c.noise.size_jitter);
      read_opt(n, "spurious_rate", c.noise.spurious_rate);
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      reject_unknown(e, {"coverage_threshold", "detect_threshold", "double_threshold", "contamination_threshold"},
                     "evaluation");
      read_opt(e, "coverage_threshold", c.evaluation.coverage_threshold);
      read_opt(e, "detect_threshold", c.evaluation.detect_threshold);
      read_opt(e, "double_threshold", c.evaluation.double_threshold);
      read_opt(e, "contamination_threshold", c.evaluation.contamination_threshold);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.noise.seed = derive_seed(c.seed, kNoiseStage);
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  try {
    return pipeline_config_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------ boxes JSON ----

struct BoxesDocument {
  Dims dims;
  Spacing spacing;
  Slab slab;
  int step = 1;
  double occlusal_z = 0;  // voxel units, boundary between upper and lower arch
  std::vector<Box3D> boxes;

  friend bool operator==(const BoxesDocument&, const BoxesDocument&) = default;
};

inline ojson to_json(const Box3D& b) {
  ojson j;
  j["id"] = b.id;
  j["label"] = b.label.value();
  j["fdi"] = b.fdi ? ojson(*b.fdi) : ojson(nullptr);
  j["vox"] = {{"min", b.vox.min}, {"max", b.vox.max}};
  j["mm"] = {{"min", b.mm_min}, {"max", b.mm_max}};
  j["detections"] = b.detection_count;
  j["divided_from"] = b.divided_from ? ojson(*b.divided_from) : ojson(nullptr);
  ojson fp = ojson::array();
  for (const auto& f : b.footprints) fp.push_back({f.z, f.box.x_min, f.box.y_min, f.box.x_max, f.box.y_max});
  j["footprints"] = fp;
  return j;
}

inline Box3D box3d_from_json(const nlohmann::json& j) {
  Box3D b;
  b.id = j.at("id").get<int>();
  b.label = Label(j.at("label").get<int>());
  if (j.contains("fdi") && !j.at("fdi").is_null()) b.fdi = j.at("fdi").get<int>();
  b.vox = box_from_json(j.at("vox"));
  b.mm_min = j.at("mm").at("min").get<std::array<double, 3>>();
  b.mm_max = j.at("mm").at("max").get<std::array<double, 3>>();
  b.detection_count = j.value("detections", 0);
  if (j.contains("divided_from") && !j.at("divided_from").is_null()) b.divided_from = j.at("divided_from").get<int>();
  if (j.contains("footprints")) {
    for (const auto& f : j.at("footprints")) {
      const auto v = f.get<std::array<int, 5>>();
      SliceFootprint s{v[0], {v[1], v[2], v[3], v[4]}};
      if (s.z < 0 || !s.box.valid()) throw ValidationError("box " + std::to_string(b.id) + ": invalid footprint");
      b.footprints.push_back(s);
    }
  }
  return b;
}

inline ojson to_json(const BoxesDocument& d) {
  ojson boxes = ojson::array();
  for (const auto& b : d.boxes) boxes.push_back(to_json(b));
  return {{"volume", {{"dims", {d.dims.nx, d.dims.ny, d.dims.nz}}, {"spacing", {d.spacing.sx, d.spacing.sy, d.spacing.sz}}}},
          {"slab", {d.slab.z_lo, d.slab.z_hi}},
          {"step", d.step},
          {"occlusal_z", d.occlusal_z},
          {"boxes", boxes}};
}

inline BoxesDocument boxes_document_from_json(const nlohmann::json& j) {
  try {
    BoxesDocument d;
    const auto dims = j.at("volume").at("dims").get<std::array<std::uint32_t, 3>>();
    const auto sp = j.at("volume").at("spacing").get<std::array<float, 3>>();
    d.dims = {dims[0], dims[1], dims[2]};
    d.spacing = {sp[0], sp[1], sp[2]};
    VoxelVolume::validate_header(d.dims, d.spacing);
    const auto slab = j.at("slab").get<std::array<int, 2>>();
    d.slab = {slab[0], slab[1]};
    d.step = j.value("step", 1);
    d.occlusal_z = j.at("occlusal_z").get<double>();
    std::vector<int> seen;
    for (const auto& bj : j.at("boxes")) {
      auto b = box3d_from_json(bj);
      if (std::find(seen.begin(), seen.end(), b.id) != seen.end()) {
        throw ValidationError("boxes: duplicate id " + std::to_string(b.id));
      }
      seen.push_back(b.id);
      d.boxes.push_back(b);
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("boxes: ") + e.what());
  }
}

inline void save_boxes(const BoxesDocument& d, const std::filesystem::path& path) {
  write_json_file(path, to_json(d));
}

inline BoxesDocument load_boxes(const std::filesystem::path& path) {
  try {
    return boxes_document_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

inline ojson to_json(const DivisionSurface& s) {
  ojson rows = ojson::array();
  for (int x = s.box.min[0]; x < s.box.max[0]; ++x) {
    ojson row = ojson::array();
    for (int y = s.box.min[1]; y < s.box.max[1]; ++y) row.push_back(s.at(x, y));
    rows.push_back(row);
  }
  return {{"parent_id", s.parent_id},
          {"box", {{"min", s.box.min}, {"max", s.box.max}}},
          {"z0", s.z0},
          {"z0_from_valley", s.z0_from_valley},
          {"band", {{"lo", s.band.lo}, {"hi", s.band.hi}, {"halfwidth", s.band.halfwidth}}},
          {"clamped", s.clamped},
          {"heights", rows}};
}

inline ojson surfaces_json(const std::vector<DivisionSurface>& surfaces) {
  ojson arr = ojson::array();
  for (const auto& s : surfaces) arr.push_back(to_json(s));
  return {{"surfaces", arr}};
}

// -------------------------------------------------------------- stages ----

// Lowest axial mean in the middle half of the slab: the interocclusal level.
inline double estimate_occlusal_z(const AxialProfile& p, const Slab& s) {
  const int len = s.z_hi - s.z_lo + 1;
  const int lo = s.z_lo + len / 4;
  const int hi = std::max(lo, s.z_hi - len / 4);
  int best = lo;
  for (int z = lo; z <= hi; ++z) {
    if (p.values[static_cast<std::size_t>(z)] < p.values[static_cast<std::size_t>(best)]) best = z;
  }
  return best + 0.5;
}

struct SliceSelection {
  AxialProfile profile;
  Slab slab;
  int step = 1;
  std::vector<int> slices;
};

inline SliceSelection select_slices(const VoxelVolume& vol, const SlicingConfig& cfg) {
  cfg.validate();
  SliceSelection s;
  s.profile = axial_mean_profile(vol);
  s.slab = select_tooth_slab(s.profile, cfg.fraction);
  s.step = slice_step(vol.spacing().sz, cfg.interval_mm);
  s.slices = sample_slices(s.slab, vol.spacing().sz, cfg.interval_mm);
  return s;
}

inline SliceGrid make_grid(const VoxelVolume& vol, const SliceSelection& sel) {
  return {sel.slices, vol.spacing().sz, sel.step * static_cast<double>(vol.spacing().sz)};
}

namespace detail {

// Runs one stage, prefixing any error with the stage name.
template <class F>
auto run_stage(const char* name, F&& f) -> decltype(f()) {
  const std::string p = std::string(name) + ": ";
  try {
    return f();
  } catch (const FormatError& e) {
    throw FormatError(p + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(p + e.what());
  } catch (const IoError& e) {
    throw IoError(p + e.what());
  } catch (const DivisionError& e) {
    throw DivisionError(p + e.what());
  }
}

}  // namespace detail

struct PipelineResult {
  SliceSelection selection;
  MatchConfig match;
  DetectionMap detections;
  std::vector<ToothVolume> volumes;
  std::vector<Box3D> undivided;
  DivisionOutcome division;
  BoxesDocument boxes;
  std::optional<OutcomeReport> evaluation;
  ojson report;
};

/// With `detections` null the synthetic detector runs on `truth`. Evaluation
/// runs whenever `truth` is given.
inline PipelineResult run_pipeline(const VoxelVolume& vol, const DetectionMap* detections, const GroundTruth* truth,
                                   const PipelineConfig& cfg) {
  cfg.validate();
  if (!detections && !truth) throw ValidationError("synthetic detections need ground truth");
  if (truth && truth->dims != vol.dims()) throw ValidationError("ground truth dims differ from volume dims");
  PipelineResult r;
  r.selection = detail::run_stage("slice", [&] { return select_slices(vol, cfg.slicing); });
  const SliceGrid grid = make_grid(vol, r.selection);
  r.match = detail::run_stage("config", [&] { return cfg.match.resolve(grid.step_mm); });

  r.detections = detail::run_stage("detect", [&] {
    if (detections) return *detections;
    NoiseModel n = cfg.noise;
    n.seed = derive_seed(cfg.seed, kNoiseStage);
    return synth_detect(*truth, r.selection.slices, n);
  });

  r.volumes = detail::run_stage("reconstruct", [&] { return reconstruct(r.detections, grid, r.match); });
  r.undivided = boxes_from_volumes(r.volumes, r.match, vol.dims(), vol.spacing());
  const double occlusal_z = estimate_occlusal_z(r.selection.profile, r.selection.slab);

  r.division = detail::run_stage("divide", [&] { return divide_boxes(vol, r.undivided, cfg.division, cfg.threads, r.match.context_margin_mm);
  });

  r.boxes.dims = vol.dims();
  r.boxes.spacing = vol.spacing();
  r.boxes.slab = r.selection.slab;
  r.boxes.step = r.selection.step;
  r.boxes.occlusal_z = occlusal_z;
  r.boxes.boxes = assign_fdi(r.division.boxes, occlusal_z);

  if (truth) {
    r.evaluation = detail::run_stage("evaluate", [&] {
      return evaluate(r.undivided, r.boxes.boxes, *truth, cfg.evaluation);
    });
  }

  ojson rep;
  rep["config"] = resolved_config_json(cfg, grid.step_mm);
  rep["slab"] = {r.selection.slab.z_lo, r.selection.slab.z_hi};
  rep["step"] = r.selection.step;
  rep["sampled_slices"] = r.selection.slices.size();
  rep["detections"] = detection_count(r.detections);
  rep["volumes"] = r.volumes.size();
  rep["flagged"] = r.division.flagged;
  rep["irreducible"] = r.division.irreducible;
  rep["boxes"] = r.boxes.boxes.size();
  rep["evaluation"] = r.evaluation ? to_json(*r.evaluation) : ojson(nullptr);
  r.report = std::move(rep);
  return r;
}

// ------------------------------------------------------------ PGM export ----

// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y * width + x)]; }
};

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("write failure on '" + path.string() + "'");
}

namespace detail {

inline std::uint8_t gray(std::int16_t v, std::int16_t lo, std::int16_t hi) {
  if (hi <= lo) return 0;
  const double t = (static_cast<double>(v) - lo) / (static_cast<double>(hi) - lo);
  return static_cast<std::uint8_t>(std::clamp(std::lround(254.0 * t), 0L, 254L));
}

inline void outline(GrayImage& img, int x0, int y0, int x1, int y1) {
  x0 = std::clamp(x0, 0, img.width - 1);
  x1 = std::clamp(x1, 0, img.width - 1);
  y0 = std::clamp(y0, 0, img.height - 1);
  y1 = std::clamp(y1, 0, img.height - 1);
  for (int x = x0; x <= x1; ++x) img.at(x, y0) = img.at(x, y1) = 255;
  for (int y = y0; y <= y1; ++y) img.at(x0, y) = img.at(x1, y) = 255;
}

}  // namespace detail

/// Axial slice z with outlines of the boxes crossing it. Outlines use the
/// maximum value 255; data is mapped onto 0..254.
inline GrayImage render_axial(const VoxelVolume& vol, int z, const std::vector<Box3D>& boxes) {
  if (z < 0 || z >= vol.nz()) throw ValidationError("axial index " + std::to_string(z) + " outside volume");
  const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
  GrayImage img{vol.nx(), vol.ny(), std::vector<std::uint8_t>(static_cast<std::size_t>(vol.nx() * vol.ny()))};
  for (int y = 0; y < vol.ny(); ++y) {
    for (int x = 0; x < vol.nx(); ++x) img.at(x, y) = detail::gray(vol.at(x, y, z), *lo, *hi);
  }
  for (const auto& b : boxes) {
    if (z < b.vox.min[2] || z >= b.vox.max[2]) continue;
    detail::outline(img, b.vox.min[0], b.vox.min[1], b.vox.max[0] - 1, b.vox.max[1] - 1);
  }
  return img;
}

// Sagittal slice x: image columns are y, rows are z.
inline GrayImage render_sagittal(const VoxelVolume& vol, int x, const std::vector<Box3D>& boxes) {
  if (x < 0 || x >= vol.nx()) throw ValidationError("sagittal index " + std::to_string(x) + " outside volume");
  const auto [lo, hi] = std::minmax_element(vol.data().begin(), vol.data().end());
  GrayImage img{vol.ny(), vol.nz(), std::vector<std::uint8_t>(static_cast<std::size_t>(vol.ny() * vol.nz()))};
  for (int z = 0; z < vol.nz(); ++z) {
    for (int y = 0; y < vol.ny(); ++y) img.at(y, z) = detail::gray(vol.at(x, y, z), *lo, *hi);
  }
  for (const auto& b : boxes) {
    if (x < b.vox.min[0] || x >= b.vox.max[0]) continue;
    detail::outline(img, b.vox.min[1], b.vox.min[2], b.vox.max[1] - 1, b.vox.max[2] - 1);
  }
  return img;
}

}  // namespace toothbox
