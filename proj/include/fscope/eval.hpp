#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "fscope/regression.hpp"
#include "fscope/stimulus.hpp"

namespace fscope {

struct PRPoint {
  double recall = 0, precision = 0;
};

struct RecallFPPoint {
  int false_positives = 0;
  double recall = 0;
};

struct MatchResult {
  std::vector<bool> is_tp;          // per detection, in score order
  std::vector<int> matched_gt;      // per detection: GT index or -1
  std::vector<bool> gt_covered;     // per GT
  std::vector<std::size_t> order;   // detection indices in score order
};

struct EvalReport {
  std::string part_class;
  std::vector<int> filter_set;
  double ap = 0;
  double max_recall = 0;
  std::vector<PRPoint> pr_curve;
  std::vector<RecallFPPoint> recall_fp_curve;
  int n_detections = 0;
  int n_gt = 0;
};

// Greedy VOC-style matching: detections in descending score order (ties keep
// input order) each claim the unmatched same-image GT of highest IoU >= thr.
inline MatchResult match_detections(const std::vector<StimulusDetection>& dets,
                                    const std::vector<PartBox>& gts, double iou_thr) {
  MatchResult m;
  m.order.resize(dets.size());
  std::iota(m.order.begin(), m.order.end(), std::size_t{0});
  std::stable_sort(m.order.begin(), m.order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::map<int, std::vector<int>> gts_by_image;
  for (std::size_t g = 0; g < gts.size(); ++g)
    gts_by_image[gts[g].image_id].push_back(static_cast<int>(g));

  m.is_tp.assign(dets.size(), false);
  m.matched_gt.assign(dets.size(), -1);
  m.gt_covered.assign(gts.size(), false);
  for (std::size_t k = 0; k < m.order.size(); ++k) {
    const StimulusDetection& d = dets[m.order[k]];
    auto it = gts_by_image.find(d.image_id);
    if (it == gts_by_image.end()) continue;
    int best_g = -1;
    double best_iou = 0;
    for (int g : it->second) {
      if (m.gt_covered[g]) continue;
      double v = iou(d.box, gts[g].box());
      if (v >= iou_thr && v > best_iou) {
        best_iou = v;
        best_g = g;
      }
    }
    if (best_g >= 0) {
      m.is_tp[k] = true;
      m.matched_gt[k] = best_g;
      m.gt_covered[best_g] = true;
    }
  }
  return m;
}

// PASCAL VOC protocol with all-points (VOC 2010) average precision.
// Throws data_error when there is no ground truth: AP is undefined there,
// which is distinct from AP = 0.
inline EvalReport match_and_ap(const std::vector<StimulusDetection>& dets,
                               const std::vector<PartBox>& gts, double iou_thr = 0.4) {
  if (gts.empty()) throw data_error("AP undefined: no ground-truth boxes");

  EvalReport rep;
  rep.n_detections = static_cast<int>(dets.size());
  rep.n_gt = static_cast<int>(gts.size());
  if (!gts.empty()) rep.part_class = gts.front().part_class;
  std::set<int> filters;
  for (const auto& d : dets) filters.insert(d.filter);
  rep.filter_set.assign(filters.begin(), filters.end());

  MatchResult m = match_detections(dets, gts, iou_thr);

  int tp = 0, fp = 0;
  std::vector<double> precision(dets.size()), recall(dets.size());
  for (std::size_t k = 0; k < dets.size(); ++k) {
    (m.is_tp[k] ? tp : fp)++;
    precision[k] = static_cast<double>(tp) / static_cast<double>(tp + fp);
    recall[k] = static_cast<double>(tp) / rep.n_gt;
    rep.pr_curve.push_back({recall[k], precision[k]});
    rep.recall_fp_curve.push_back({fp, recall[k]});
  }
  rep.max_recall = dets.empty() ? 0.0 : recall.back();

  // Area under the exact PR curve: precision envelope from the right, summed
  // over recall increments.
  double ap = 0, env = 0, prev_recall = 0;
  std::vector<double> envelope(dets.size());
  for (std::size_t k = dets.size(); k-- > 0;) {
    env = std::max(env, precision[k]);
    envelope[k] = env;
  }
  for (std::size_t k = 0; k < dets.size(); ++k) {
    ap += (recall[k] - prev_recall) * envelope[k];
    prev_recall = recall[k];
  }
  rep.ap = ap;
  return rep;
}

struct Emergence {
  bool emerged_by_ap = false;  // AP > 0.30
  bool covered = false;        // max recall > 0.50
};

inline Emergence emergence(const EvalReport& rep) {
  return {rep.ap > 0.30, rep.max_recall > 0.50};
}

inline void write_pr_curve_csv(const std::string& path, const EvalReport& rep) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("cannot open PR curve csv for writing: " + path);
  f << "recall,precision\n";
  for (const auto& p : rep.pr_curve)
    f << format_double(p.recall) << ',' << format_double(p.precision) << '\n';
}

inline void write_recall_fp_csv(const std::string& path, const EvalReport& rep) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("cannot open recall-FP csv for writing: " + path);
  f << "false_positives,recall\n";
  for (const auto& p : rep.recall_fp_curve)
    f << p.false_positives << ',' << format_double(p.recall) << '\n';
}

}  // namespace fscope
