#pragma once

// Scoring predicted tooth boxes against ground truth with the pre-division
// (single / double / not detected) and post-division (good / bad / double /
// not detected) outcome taxonomies.
//
// Coverage of a tooth by a box is the fraction of the tooth's voxels inside
// the box when the ground-truth label map is available, and the fraction of
// its ground-truth box volume otherwise.

#include <toothbox/assignment.hpp>
#include <toothbox/error.hpp>
#include <toothbox/geometry.hpp>
#include <toothbox/phantom.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace toothbox {

struct EvaluationConfig {
  double coverage_threshold = 0.95;  // good reconstruction
  double detect_threshold = 0.05;    // below this a box does not touch a tooth
  double double_threshold = 0.5;     // a box "contains" a tooth from this coverage
  double contamination_threshold = 0.05;

  void validate() const {
    for (double v : {coverage_threshold, detect_threshold, double_threshold, contamination_threshold}) {
      if (!(v >= 0 && v <= 1)) throw ValidationError("evaluation thresholds must be in [0, 1]");
    }
  }
};

enum class PreOutcome { single_tooth, double_tooth, not_detected };
enum class PostOutcome { good_reconstruction, bad_reconstruction, double_tooth, not_detected };

inline const char* outcome_name(PreOutcome o) {
  switch (o) {
    case PreOutcome::single_tooth: return "single_tooth";
    case PreOutcome::double_tooth: return "double_tooth";
    case PreOutcome::not_detected: return "not_detected";
  }
  return "?";
}

inline const char* outcome_name(PostOutcome o) {
  switch (o) {
    case PostOutcome::good_reconstruction: return "good_reconstruction";
    case PostOutcome::bad_reconstruction: return "bad_reconstruction";
    case PostOutcome::double_tooth: return "double_tooth";
    case PostOutcome::not_detected: return "not_detected";
  }
  return "?";
}

struct Correspondence {
  // coverage[g][p]: share of GT tooth g inside predicted box p.
  std::vector<std::vector<double>> coverage;
  // Chosen box per GT tooth (nullopt when not detected).
  std::vector<std::optional<std::size_t>> matched;
  std::vector<bool> detected;
  std::vector<bool> in_double;
  std::vector<std::size_t> false_positives;
};

inline std::vector<std::vector<double>> coverage_matrix(const std::vector<Box3D>& preds, const GroundTruth& gt) {
  std::vector<std::vector<double>> cov(gt.teeth.size(), std::vector<double>(preds.size(), 0.0));
  if (gt.labels && gt.labels->dims() == gt.dims) {
    const auto& lab = *gt.labels;
    int max_id = 0;
    for (const auto& t : gt.teeth) max_id = std::max(max_id, t.id);
    std::vector<int> slot(static_cast<std::size_t>(max_id + 1), -1);
    for (std::size_t g = 0; g < gt.teeth.size(); ++g) {
      if (gt.teeth[g].id >= 0) slot[static_cast<std::size_t>(gt.teeth[g].id)] = static_cast<int>(g);
    }
    std::vector<long long> totals(gt.teeth.size(), 0);
    for (auto v : lab.data()) {
      if (v > 0 && v <= max_id && slot[static_cast<std::size_t>(v)] >= 0) ++totals[static_cast<std::size_t>(slot[static_cast<std::size_t>(v)])];
    }
    for (std::size_t p = 0; p < preds.size(); ++p) {
      const auto& b = preds[p].vox;
      std::vector<long long> inside(gt.teeth.size(), 0);
      for (int z = std::max(0, b.min[2]); z < std::min(lab.nz(), b.max[2]); ++z) {
        for (int y = std::max(0, b.min[1]); y < std::min(lab.ny(), b.max[1]); ++y) {
          for (int x = std::max(0, b.min[0]); x < std::min(lab.nx(), b.max[0]); ++x) {
            const int v = lab.at(x, y, z);
            if (v > 0 && v <= max_id && slot[static_cast<std::size_t>(v)] >= 0) ++inside[static_cast<std::size_t>(slot[static_cast<std::size_t>(v)])];
          }
        }
      }
      for (std::size_t g = 0; g < gt.teeth.size(); ++g) {
        cov[g][p] = totals[g] > 0 ? static_cast<double>(inside[g]) / totals[g] : 0.0;
      }
    }
    return cov;
  }
  for (std::size_t g = 0; g < gt.teeth.size(); ++g) {
    const double vol = static_cast<double>(gt.teeth[g].box.volume());
    for (std::size_t p = 0; p < preds.size(); ++p) {
      cov[g][p] = vol > 0 ? intersection_volume(gt.teeth[g].box, preds[p].vox) / vol : 0.0;
    }
  }
  return cov;
}

/// Each GT tooth is first tied to the box holding most of it (3D IoU breaks
/// ties). Teeth whose box also holds another tooth beyond double_threshold
/// are doubles; the rest are paired one-to-one with boxes by minimum-cost
/// assignment on (1 - coverage).
inline Correspondence match_pred_to_gt(const std::vector<Box3D>& preds, const GroundTruth& gt,
                                       const EvaluationConfig& cfg) {
  cfg.validate();
  Correspondence c;
  const std::size_t ng = gt.teeth.size();
  const std::size_t np = preds.size();
  c.coverage = coverage_matrix(preds, gt);
  c.matched.assign(ng, std::nullopt);
  c.detected.assign(ng, false);
  c.in_double.assign(ng, false);

  std::vector<std::optional<std::size_t>> host(ng);
  for (std::size_t g = 0; g < ng; ++g) {
    for (std::size_t p = 0; p < np; ++p) {
      const double cv = c.coverage[g][p];
      if (cv < cfg.detect_threshold) continue;
      if (!host[g]) {
        host[g] = p;
        continue;
      }
      const double best = c.coverage[g][*host[g]];
      if (cv > best || (cv == best && iou3d(gt.teeth[g].box, preds[p].vox) >
                                          iou3d(gt.teeth[g].box, preds[*host[g]].vox))) {
        host[g] = p;
      }
    }
    c.detected[g] = host[g].has_value();
  }

  for (std::size_t g = 0; g < ng; ++g) {
    if (!host[g] || c.coverage[g][*host[g]] < cfg.double_threshold) continue;
    int held = 0;
    for (std::size_t k = 0; k < ng; ++k) {
      if (c.coverage[k][*host[g]] >= cfg.double_threshold) ++held;
    }
    if (held >= 2) {
      c.in_double[g] = true;
      c.matched[g] = host[g];
    }
  }

  CostMatrix costs(ng, np, kForbidden);
  for (std::size_t g = 0; g < ng; ++g) {
    if (!c.detected[g] || c.in_double[g]) continue;
    for (std::size_t p = 0; p < np; ++p) {
      if (c.coverage[g][p] >= cfg.detect_threshold) costs(g, p) = 1.0 - c.coverage[g][p];
    }
  }
  for (const auto& a : solve_assignment(costs)) c.matched[a.row] = a.col;
  for (std::size_t g = 0; g < ng; ++g) {
    if (c.detected[g] && !c.matched[g]) c.matched[g] = host[g];
  }

  for (std::size_t p = 0; p < np; ++p) {
    bool touches = false;
    for (std::size_t g = 0; g < ng; ++g) touches = touches || c.coverage[g][p] >= cfg.detect_threshold;
    if (!touches) c.false_positives.push_back(p);
  }
  return c;
}

struct PreDivisionCounts {
  int single_tooth = 0;
  int double_tooth = 0;
  int not_detected = 0;
  [[nodiscard]] int total() const { return single_tooth + double_tooth + not_detected; }
  friend bool operator==(const PreDivisionCounts&, const PreDivisionCounts&) = default;
};

struct PostDivisionCounts {
  int good_reconstruction = 0;
  int bad_reconstruction = 0;
  int double_tooth = 0;
  int not_detected = 0;
  [[nodiscard]] int total() const { return good_reconstruction + bad_reconstruction + double_tooth + not_detected; }
  friend bool operator==(const PostDivisionCounts&, const PostDivisionCounts&) = default;
};

struct ToothOutcome {
  int gt_id = 0;
  std::optional<int> pred_id;
  double coverage = 0;
  bool label_correct = false;
  PreOutcome pre = PreOutcome::not_detected;
  PostOutcome post = PostOutcome::not_detected;
};

inline std::vector<PreOutcome> classify_pre_division(const Correspondence& c) {
  std::vector<PreOutcome> out;
  for (std::size_t g = 0; g < c.detected.size(); ++g) {
    if (!c.detected[g]) out.push_back(PreOutcome::not_detected);
    else if (c.in_double[g]) out.push_back(PreOutcome::double_tooth);
    else out.push_back(PreOutcome::single_tooth);
  }
  return out;
}

inline std::vector<PostOutcome> classify_post_division(const Correspondence& c, const EvaluationConfig& cfg) {
  std::vector<PostOutcome> out;
  const std::size_t ng = c.detected.size();
  for (std::size_t g = 0; g < ng; ++g) {
    if (!c.detected[g]) {
      out.push_back(PostOutcome::not_detected);
      continue;
    }
    if (c.in_double[g]) {
      out.push_back(PostOutcome::double_tooth);
      continue;
    }
    const std::size_t p = *c.matched[g];
    bool clean = true;
    for (std::size_t k = 0; k < ng; ++k) {
      if (k != g && c.coverage[k][p] > cfg.contamination_threshold) clean = false;
    }
    out.push_back(c.coverage[g][p] >= cfg.coverage_threshold && clean ? PostOutcome::good_reconstruction
                                                                       : PostOutcome::bad_reconstruction);
  }
  return out;
}

inline PreDivisionCounts categorize_pre_division(const std::vector<Box3D>& preds, const GroundTruth& gt,
                                                 const EvaluationConfig& cfg = {}) {
  PreDivisionCounts n;
  for (auto o : classify_pre_division(match_pred_to_gt(preds, gt, cfg))) {
    if (o == PreOutcome::single_tooth) ++n.single_tooth;
    else if (o == PreOutcome::double_tooth) ++n.double_tooth;
    else ++n.not_detected;
  }
  return n;
}

inline PostDivisionCounts categorize_post_division(const std::vector<Box3D>& preds, const GroundTruth& gt,
                                                   const EvaluationConfig& cfg = {}) {
  PostDivisionCounts n;
  for (auto o : classify_post_division(match_pred_to_gt(preds, gt, cfg), cfg)) {
    switch (o) {
      case PostOutcome::good_reconstruction: ++n.good_reconstruction; break;
      case PostOutcome::bad_reconstruction: ++n.bad_reconstruction; break;
      case PostOutcome::double_tooth: ++n.double_tooth; break;
      case PostOutcome::not_detected: ++n.not_detected; break;
    }
  }
  return n;
}

// Share of teeth found at all; says nothing about reconstruction quality.
inline double detection_rate(int total_teeth, int not_detected) {
  if (total_teeth <= 0) throw ValidationError("detection rate undefined for zero teeth");
  if (not_detected < 0 || not_detected > total_teeth) throw ValidationError("missed count outside [0, total]");
  return static_cast<double>(total_teeth - not_detected) / total_teeth;
}

inline double detection_rate(const PreDivisionCounts& c) { return detection_rate(c.total(), c.not_detected); }

struct OutcomeReport {
  PreDivisionCounts pre;
  PostDivisionCounts post;
  double detection_rate = 0;
  int false_positives = 0;
  int total_teeth = 0;
  bool occlusal_clearance = true;
  std::vector<ToothOutcome> teeth;
};

inline OutcomeReport evaluate(const std::vector<Box3D>& undivided, const std::vector<Box3D>& divided,
                              const GroundTruth& gt, const EvaluationConfig& cfg = {}) {
  OutcomeReport r;
  r.total_teeth = static_cast<int>(gt.teeth.size());
  r.occlusal_clearance = gt.gap_mm > 0;
  const auto before = match_pred_to_gt(undivided, gt, cfg);
  const auto after = match_pred_to_gt(divided, gt, cfg);
  const auto pre = classify_pre_division(before);
  const auto post = classify_post_division(after, cfg);
  for (std::size_t g = 0; g < gt.teeth.size(); ++g) {
    ToothOutcome t;
    t.gt_id = gt.teeth[g].id;
    t.pre = pre[g];
    t.post = post[g];
    if (after.matched[g]) {
      const auto p = *after.matched[g];
      t.pred_id = divided[p].id;
      t.coverage = after.coverage[g][p];
      t.label_correct = divided[p].label == gt.teeth[g].label;
    }
    switch (t.pre) {
      case PreOutcome::single_tooth: ++r.pre.single_tooth; break;
      case PreOutcome::double_tooth: ++r.pre.double_tooth; break;
      case PreOutcome::not_detected: ++r.pre.not_detected; break;
    }
    switch (t.post) {
      case PostOutcome::good_reconstruction: ++r.post.good_reconstruction; break;
      case PostOutcome::bad_reconstruction: ++r.post.bad_reconstruction; break;
      case PostOutcome::double_tooth: ++r.post.double_tooth; break;
      case PostOutcome::not_detected: ++r.post.not_detected; break;
    }
    r.teeth.push_back(t);
  }
  r.false_positives = static_cast<int>(after.false_positives.size());
  r.detection_rate = r.total_teeth > 0 ? detection_rate(r.pre) : 0.0;
  return r;
}

inline nlohmann::ordered_json to_json(const OutcomeReport& r) {
  nlohmann::ordered_json teeth = nlohmann::ordered_json::array();
  for (const auto& t : r.teeth) {
    nlohmann::ordered_json j;
    j["gt_id"] = t.gt_id;
    j["pred_id"] = t.pred_id ? nlohmann::ordered_json(*t.pred_id) : nlohmann::ordered_json(nullptr);
    j["coverage"] = t.coverage;
    j["label_correct"] = t.label_correct;
    j["pre"] = outcome_name(t.pre);
    j["post"] = outcome_name(t.post);
    teeth.push_back(j);
  }
  nlohmann::ordered_json j;
  j["total_teeth"] = r.total_teeth;
  j["occlusal_clearance"] = r.occlusal_clearance;
  j["pre_division"] = {{"single_tooth", r.pre.single_tooth},
                       {"double_tooth", r.pre.double_tooth},
                       {"not_detected", r.pre.not_detected}};
  j["post_division"] = {{"good_reconstruction", r.post.good_reconstruction},
                        {"bad_reconstruction", r.post.bad_reconstruction},
                        {"double_tooth", r.post.double_tooth},
                        {"not_detected", r.post.not_detected}};
  j["detection_rate"] = r.detection_rate;
  j["false_positives"] = r.false_positives;
  j["teeth"] = teeth;
  return j;
}

// Two-column layout: with / without occlusal clearance.
inline std::string format_tables(const OutcomeReport& r) {
  auto cell = [&](int n, bool column_with) {
    if (column_with != r.occlusal_clearance) return std::string("-");
    char buf[64];
    const double pct = r.total_teeth ? 100.0 * n / r.total_teeth : 0.0;
    std::snprintf(buf, sizeof buf, "%d (%.2f%%)", n, pct);
    return std::string(buf);
  };
  auto row = [&](const char* name, int n) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-20s| %-20s %-20s\n", name, cell(n, true).c_str(), cell(n, false).c_str());
    return std::string(buf);
  };
  std::string s;
  char head[160];
  std::snprintf(head, sizeof head, "%-20s| %-20s %-20s\n", "", "With", "Without");
  s += "Results before applying the division algorithm.\n";
  s += head;
  std::snprintf(head, sizeof head, "%-20s| %-20s %-20s\n", "", "occlusal clearance", "occlusal clearance");
  s += head;
  s += row("Single tooth", r.pre.single_tooth);
  s += row("Double tooth", r.pre.double_tooth);
  s += row("Not detected", r.pre.not_detected);
  s += "\nReconstruction performance.\n";
  std::snprintf(head, sizeof head, "%-20s| %-20s %-20s\n", "", "With", "Without");
  s += head;
  std::snprintf(head, sizeof head, "%-20s| %-20s %-20s\n", "", "occlusal clearance", "occlusal clearance");
  s += head;
  s += row("Good reconstruction", r.post.good_reconstruction);
  s += row("Bad reconstruction", r.post.bad_reconstruction);
  s += row("Double tooth", r.post.double_tooth);
  s += row("Not detected", r.post.not_detected);
  char tail[96];
  std::snprintf(tail, sizeof tail, "\nDetection rate: %.4f  False positives: %d\n", r.detection_rate, r.false_positives);
  s += tail;
  return s;
}

}  // namespace toothbox
