// toothbox: command-line front end for phantom generation, slicing, synthetic
// detection, tooth volume reconstruction, division, evaluation and previews.

#include <toothbox/toothbox.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace toothbox;

namespace {

// Output files written by the current command; removed again unless the
// command finishes.
class Artifacts {
 public:
  Artifacts() = default;
  Artifacts(const Artifacts&) = delete;
  Artifacts& operator=(const Artifacts&) = delete;
  ~Artifacts() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : paths_) fs::remove(p, ec);
  }

  const fs::path& add(const fs::path& p) {
    paths_.push_back(p);
    return p;
  }
  void commit() { committed_ = true; }

 private:
  std::vector<fs::path> paths_;
  bool committed_ = false;
};

struct Common {
  std::string config_path;
  unsigned threads = 0;
};

PipelineConfig load_config(const Common& c) {
  std::string path = c.config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("TOOTHBOX_CONFIG"); env && *env) path = env;
  }
  PipelineConfig cfg = path.empty() ? pipeline_config_from_json(nlohmann::json::object()) : load_pipeline_config(path);
  if (c.threads > 0) cfg.threads = c.threads;
  return cfg;
}

// A ".raw" path is read with the JSON sidecar next to it ("<path>.json").
VoxelVolume open_volume(const std::string& path) {
  const fs::path p(path);
  if (p.extension() == ".raw") return load_raw_volume(p, fs::path(path + ".json"));
  return load_volume(p);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ValidationError("expected a comma-separated integer list, got '" + s + "'");
    }
  }
  return out;
}

// Pre-division boxes recovered from a divided set: halves sharing a parent
// are merged back into their joint hull under the parent id.
std::vector<Box3D> undivide(const std::vector<Box3D>& boxes, const Spacing& sp) {
  std::vector<Box3D> out;
  for (const auto& b : boxes) {
    if (!b.divided_from) {
      out.push_back(b);
      continue;
    }
    auto it = std::find_if(out.begin(), out.end(), [&](const Box3D& o) { return o.id == *b.divided_from; });
    if (it == out.end()) {
      Box3D p = b;
      p.id = *b.divided_from;
      p.divided_from.reset();
      p.fdi.reset();
      out.push_back(p);
      continue;
    }
    VoxelBox h = it->vox;
    for (int a = 0; a < 3; ++a) {
      h.min[a] = std::min(h.min[a], b.vox.min[a]);
      h.max[a] = std::max(h.max[a], b.vox.max[a]);
    }
    const int count = it->detection_count + b.detection_count;
    auto fp = it->footprints;
    fp.insert(fp.end(), b.footprints.begin(), b.footprints.end());
    std::stable_sort(fp.begin(), fp.end(), [](const SliceFootprint& x, const SliceFootprint& y) { return x.z < y.z; });
    *it = make_box3d(it->id, h, sp, it->label);
    it->detection_count = count;
    it->footprints = std::move(fp);
  }
  return out;
}

int cmd_phantom(const Common&, const std::string& spec_path, const ArchParams& ap, int dims,
                const std::string& out_volume, const std::string& out_truth, const std::string& out_spec) {
  PhantomSpec spec;
  if (!spec_path.empty()) {
    spec = phantom_spec_from_json(read_json_file(spec_path));
  } else {
    ArchParams p = ap;
    p.dims = {static_cast<std::uint32_t>(dims), static_cast<std::uint32_t>(dims), static_cast<std::uint32_t>(dims)};
    spec = make_arch_phantom(p);
  }
  const auto ph = generate_phantom(spec);
  Artifacts art;
  save_volume(ph.volume, art.add(out_volume));
  if (ph.truth.labels) {
    fs::path lp = out_truth;
    art.add(lp.replace_extension(".labels.vol"));
  }
  save_ground_truth(ph.truth, art.add(out_truth));
  if (!out_spec.empty()) write_json_file(art.add(out_spec), to_json(spec));
  art.commit();
  std::cout << "phantom: " << ph.truth.teeth.size() << " teeth, gap " << spec.gap_mm << " mm\n";
  return 0;
}

int cmd_slice(const Common& c, const std::string& volume, std::optional<double> interval, std::optional<double> fraction) {
  auto cfg = load_config(c);
  if (interval) cfg.slicing.interval_mm = *interval;
  if (fraction) cfg.slicing.fraction = *fraction;
  const auto vol = open_volume(volume);
  const auto sel = select_slices(vol, cfg.slicing);
  ojson j{{"slab", {sel.slab.z_lo, sel.slab.z_hi}}, {"step", sel.step}, {"slices", sel.slices}};
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_detect(const Common& c, const std::string& volume, const std::string& truth, const std::string& out,
               const NoiseModel& overrides, const std::vector<std::string>& set, std::optional<std::uint64_t> seed) {
  auto cfg = load_config(c);
  auto has = [&](const char* k) { return std::find(set.begin(), set.end(), k) != set.end(); };
  if (has("dropout")) cfg.noise.dropout = overrides.dropout;
  if (has("label_confusion")) cfg.noise.label_confusion = overrides.label_confusion;
  if (has("center_jitter")) cfg.noise.center_jitter = overrides.center_jitter;
  if (has("size_jitter")) cfg.noise.size_jitter = overrides.size_jitter;
  if (has("spurious_rate")) cfg.noise.spurious_rate = overrides.spurious_rate;
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const auto vol = open_volume(volume);
  const auto gt = load_ground_truth(truth);
  const auto sel = select_slices(vol, cfg.slicing);
  NoiseModel n = cfg.noise;
  n.seed = derive_seed(cfg.seed, kNoiseStage);
  const auto dets = synth_detect(gt, sel.slices, n);
  Artifacts art;
  save_detections(dets, art.add(out));
  art.commit();
  std::cout << "detect-synthetic: " << detection_count(dets) << " detections on " << sel.slices.size() << " slices\n";
  return 0;
}

int cmd_reconstruct(const Common& c, const std::string& volume, const std::string& detections, const std::string& out,
                    std::optional<double> beta, std::optional<double> interval, std::optional<double> fraction) {
  auto cfg = load_config(c);
  if (beta) cfg.match.beta = *beta;
  if (interval) cfg.slicing.interval_mm = *interval;
  if (fraction) cfg.slicing.fraction = *fraction;
  cfg.validate();
  const auto vol = open_volume(volume);
  const auto dets = load_detections(detections);
  const auto sel = select_slices(vol, cfg.slicing);
  const auto grid = make_grid(vol, sel);
  const auto match = cfg.match.resolve(grid.step_mm);
  const auto volumes = reconstruct(dets, grid, match);
  BoxesDocument doc;
  doc.dims = vol.dims();
  doc.spacing = vol.spacing();
  doc.slab = sel.slab;
  doc.step = sel.step;
  doc.occlusal_z = estimate_occlusal_z(sel.profile, sel.slab);
  doc.boxes = assign_fdi(boxes_from_volumes(volumes, match, vol.dims(), vol.spacing()), doc.occlusal_z);
  Artifacts art;
  save_boxes(doc, art.add(out));
  art.commit();
  std::cout << "reconstruct: " << doc.boxes.size() << " tooth volumes from " << detection_count(dets)
            << " detections\n";
  return 0;
}

int cmd_divide(const Common& c, const std::string& volume, const std::string& boxes, const std::string& out,
               std::optional<double> flag_factor, const std::string& emit_surface) {
  auto cfg = load_config(c);
  if (flag_factor) cfg.division.size_flag_factor = *flag_factor;
  cfg.validate();
  const auto vol = open_volume(volume);
  auto doc = load_boxes(boxes);
  if (doc.dims != vol.dims()) throw ValidationError("boxes were computed for a volume of different dims");
  const auto res = divide_boxes(vol, doc.boxes, cfg.division, cfg.threads, cfg.match.context_margin_mm);
  doc.boxes = assign_fdi(res.boxes, doc.occlusal_z);
  Artifacts art;
  save_boxes(doc, art.add(out));
  if (!emit_surface.empty()) write_json_file(art.add(emit_surface), surfaces_json(res.surfaces));
  art.commit();
  std::cout << "divide: " << res.flagged.size() << " flagged, " << res.irreducible.size() << " irreducible, "
            << doc.boxes.size() << " boxes\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& truth, const std::string& boxes, const std::string& undivided,
                 std::optional<double> coverage, const std::string& out) {
  auto cfg = load_config(c);
  if (coverage) cfg.evaluation.coverage_threshold = *coverage;
  cfg.validate();
  const auto gt = load_ground_truth(truth);
  const auto doc = load_boxes(boxes);
  const auto pre = undivided.empty() ? undivide(doc.boxes, doc.spacing) : load_boxes(undivided).boxes;
  const auto report = evaluate(pre, doc.boxes, gt, cfg.evaluation);
  ojson j = to_json(report);
  j["config"] = to_json(cfg.evaluation);
  Artifacts art;
  if (!out.empty()) write_json_file(art.add(out), j);
  art.commit();
  if (out.empty()) std::cout << j.dump(2) << '\n';
  std::cout << format_tables(report);
  return 0;
}

int cmd_run(const Common& c, const std::string& volume, const std::string& truth, const std::string& detections,
            bool synthetic, const std::string& out_dir, std::optional<std::uint64_t> seed, bool emit_surface) {
  auto cfg = load_config(c);
  if (seed) cfg.seed = *seed;
  cfg.noise.seed = derive_seed(cfg.seed, kNoiseStage);
  cfg.validate();
  if (synthetic == !detections.empty()) throw ValidationError("run needs exactly one of --detections or --synthetic");
  const auto vol = open_volume(volume);
  std::optional<GroundTruth> gt;
  if (!truth.empty()) gt = load_ground_truth(truth);
  std::optional<DetectionMap> dets;
  if (!detections.empty()) dets = load_detections(detections);
  const auto result = run_pipeline(vol, dets ? &*dets : nullptr, gt ? &*gt : nullptr, cfg);

  Artifacts art;
  const fs::path dir = out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  save_boxes(result.boxes, art.add(dir / "boxes.json"));
  write_json_file(art.add(dir / "report.json"), result.report);
  if (emit_surface) write_json_file(art.add(dir / "surfaces.json"), surfaces_json(result.division.surfaces));
  art.commit();
  std::cout << "run: " << result.boxes.boxes.size() << " boxes (" << result.division.flagged.size()
            << " flagged) -> " << (dir / "boxes.json").string() << '\n';
  if (result.evaluation) std::cout << format_tables(*result.evaluation);
  return 0;
}

int cmd_export(const std::string& volume, const std::string& boxes, const std::string& out_dir,
               const std::string& axial, const std::string& sagittal) {
  const auto vol = open_volume(volume);
  std::vector<Box3D> bx;
  if (!boxes.empty()) bx = load_boxes(boxes).boxes;
  std::vector<int> zs = parse_int_list(axial);
  std::vector<int> xs = parse_int_list(sagittal);
  if (zs.empty() && xs.empty()) {
    zs.push_back(vol.nz() / 2);
    xs.push_back(vol.nx() / 2);
  }
  Artifacts art;
  const fs::path dir = out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  for (int z : zs) write_pgm(render_axial(vol, z, bx), art.add(dir / ("axial_" + std::to_string(z) + ".pgm")));
  for (int x : xs) write_pgm(render_sagittal(vol, x, bx), art.add(dir / ("sagittal_" + std::to_string(x) + ".pgm")));
  art.commit();
  std::cout << "export-slices: " << zs.size() + xs.size() << " images in " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toothbox: 3D tooth bounding boxes from per-slice detections in CBCT volumes"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "Pipeline config JSON (falls back to $TOOTHBOX_CONFIG)");
  app.add_option("--threads", common.threads, "Worker thread cap")->check(CLI::PositiveNumber);

  // phantom
  auto* ph = app.add_subcommand("phantom", "Generate a synthetic dental phantom and its ground truth");
  std::string ph_spec, ph_vol, ph_truth, ph_out_spec, ph_e2e;
  ArchParams ap;
  int ph_dims = 128;
  ph->add_option("--spec", ph_spec, "PhantomSpec JSON (overrides the arch options)");
  ph->add_option("--out-volume", ph_vol, "Output volume (.vol)")->required();
  ph->add_option("--out-truth", ph_truth, "Output ground truth JSON")->required();
  ph->add_option("--out-spec", ph_out_spec, "Also write the resolved PhantomSpec JSON");
  ph->add_option("--dims", ph_dims, "Cubic volume size in voxels")->capture_default_str();
  ph->add_option("--upper", ap.upper_count, "Teeth in the upper arch")->capture_default_str();
  ph->add_option("--lower", ap.lower_count, "Teeth in the lower arch")->capture_default_str();
  ph->add_option("--gap-mm", ap.gap_mm, "Interocclusal gap (negative = interpenetrating)")->capture_default_str();
  ph->add_option("--overjet-mm", ap.overjet_mm, "Inward offset of the lower arch")->capture_default_str();
  ph->add_option("--edge-to-edge", ph_e2e, "Comma-separated slots (0-15) with aligned counterparts");
  ph->add_option("--noise", ap.noise_amplitude, "Uniform noise amplitude")->capture_default_str();
  ph->add_option("--seed", ap.seed, "Random seed")->capture_default_str();

  // slice
  auto* sl = app.add_subcommand("slice", "Print the tooth slab and sampled axial slice indices as JSON");
  std::string sl_vol;
  std::optional<double> sl_interval, sl_fraction;
  sl->add_option("--volume", sl_vol, "Input volume")->required();
  sl->add_option("--interval-mm", sl_interval, "Slice interval in mm (default 1.4)");
  sl->add_option("--fraction", sl_fraction, "Slab window fraction (default 0.9)");

  // detect-synthetic
  auto* ds = app.add_subcommand("detect-synthetic", "Synthesize per-slice detections from ground truth");
  std::string ds_vol, ds_truth, ds_out;
  NoiseModel ds_noise;
  std::optional<std::uint64_t> ds_seed;
  ds->add_option("--volume", ds_vol, "Input volume")->required();
  ds->add_option("--truth", ds_truth, "Ground truth JSON")->required();
  ds->add_option("--out", ds_out, "Output detections (JSON lines)")->required();
  auto* o_drop = ds->add_option("--dropout", ds_noise.dropout, "Probability a true box is missed");
  auto* o_conf = ds->add_option("--label-confusion", ds_noise.label_confusion, "Probability of a wrong class");
  auto* o_cj = ds->add_option("--center-jitter", ds_noise.center_jitter, "Box center std-dev (voxels)");
  auto* o_sj = ds->add_option("--size-jitter", ds_noise.size_jitter, "Box size std-dev (voxels)");
  auto* o_sp = ds->add_option("--spurious-rate", ds_noise.spurious_rate, "Expected spurious boxes per slice");
  ds->add_option("--seed", ds_seed, "Pipeline seed");

  // reconstruct
  auto* rc = app.add_subcommand("reconstruct", "Chain detections into tooth volumes and 3D boxes");
  std::string rc_vol, rc_dets, rc_out;
  std::optional<double> rc_beta, rc_interval, rc_fraction;
  rc->add_option("--volume", rc_vol, "Input volume")->required();
  rc->add_option("--detections", rc_dets, "Detections (JSON lines)")->required();
  rc->add_option("--out", rc_out, "Output boxes JSON")->required();
  rc->add_option("--beta", rc_beta, "Match acceptance threshold (default 1.0)");
  rc->add_option("--interval-mm", rc_interval, "Slice interval in mm (default 1.4)");
  rc->add_option("--fraction", rc_fraction, "Slab window fraction (default 0.9)");

  // divide
  auto* dv = app.add_subcommand("divide", "Flag fused volumes and split them along a division surface");
  std::string dv_vol, dv_boxes, dv_out, dv_surface;
  std::optional<double> dv_flag;
  dv->add_option("--volume", dv_vol, "Input volume")->required();
  dv->add_option("--boxes", dv_boxes, "Input boxes JSON")->required();
  dv->add_option("--out", dv_out, "Output boxes JSON")->required();
  dv->add_option("--flag-factor", dv_flag, "Flag extents above this multiple of the median (default 1.6)");
  dv->add_option("--emit-surface", dv_surface, "Write division surfaces as JSON");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score boxes against ground truth");
  std::string ev_truth, ev_boxes, ev_undivided, ev_out;
  std::optional<double> ev_cov;
  ev->add_option("--gt", ev_truth, "Ground truth JSON")->required();
  ev->add_option("--boxes", ev_boxes, "Boxes JSON after division")->required();
  ev->add_option("--undivided", ev_undivided, "Boxes JSON before division (default: merge divided halves)");
  ev->add_option("--coverage", ev_cov, "Coverage for a good reconstruction (default 0.95)");
  ev->add_option("--out", ev_out, "Write the report JSON here instead of stdout");

  // run
  auto* rn = app.add_subcommand("run", "Run the whole pipeline on one volume");
  std::string rn_vol, rn_truth, rn_dets, rn_out;
  bool rn_synth = false, rn_surface = false;
  std::optional<std::uint64_t> rn_seed;
  rn->add_option("--volume", rn_vol, "Input volume")->required();
  rn->add_option("--truth", rn_truth, "Ground truth JSON (enables evaluation)");
  rn->add_option("--detections", rn_dets, "Detections (JSON lines)");
  rn->add_flag("--synthetic", rn_synth, "Synthesize detections from --truth");
  rn->add_option("--out-dir", rn_out, "Directory for boxes.json and report.json")->required();
  rn->add_option("--seed", rn_seed, "Pipeline seed");
  rn->add_flag("--emit-surface", rn_surface, "Also write surfaces.json");

  // export-slices
  auto* ex = app.add_subcommand("export-slices", "Write axial/sagittal slices as PGM with box outlines");
  std::string ex_vol, ex_boxes, ex_out, ex_axial, ex_sagittal;
  ex->add_option("--volume", ex_vol, "Input volume")->required();
  ex->add_option("--boxes", ex_boxes, "Boxes JSON to overlay");
  ex->add_option("--out-dir", ex_out, "Output directory")->required();
  ex->add_option("--axial", ex_axial, "Comma-separated z indices");
  ex->add_option("--sagittal", ex_sagittal, "Comma-separated x indices");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*ph) {
      ap.edge_to_edge = parse_int_list(ph_e2e);
      return cmd_phantom(common, ph_spec, ap, ph_dims, ph_vol, ph_truth, ph_out_spec);
    }
    if (*sl) return cmd_slice(common, sl_vol, sl_interval, sl_fraction);
    if (*ds) {
      std::vector<std::string> set;
      if (o_drop->count()) set.emplace_back("dropout");
      if (o_conf->count()) set.emplace_back("label_confusion");
      if (o_cj->count()) set.emplace_back("center_jitter");
      if (o_sj->count()) set.emplace_back("size_jitter");
      if (o_sp->count()) set.emplace_back("spurious_rate");
      return cmd_detect(common, ds_vol, ds_truth, ds_out, ds_noise, set, ds_seed);
    }
    if (*rc) return cmd_reconstruct(common, rc_vol, rc_dets, rc_out, rc_beta, rc_interval, rc_fraction);
    if (*dv) return cmd_divide(common, dv_vol, dv_boxes, dv_out, dv_flag, dv_surface);
    if (*ev) return cmd_evaluate(common, ev_truth, ev_boxes, ev_undivided, ev_cov, ev_out);
    if (*rn) return cmd_run(common, rn_vol, rn_truth, rn_dets, rn_synth, rn_out, rn_seed, rn_surface);
    if (*ex) return cmd_export(ex_vol, ex_boxes, ex_out, ex_axial, ex_sagittal);
  } catch (const FormatError& e) {
    std::cerr << "toothbox: format error: " << e.what() << '\n';
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "toothbox: invalid input: " << e.what() << '\n';
    return 4;
  } catch (const IoError& e) {
    std::cerr << "toothbox: I/O error: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "toothbox: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
