#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscope/corpus.hpp"
#include "fscope/discrim.hpp"
#include "fscope/eval.hpp"
#include "fscope/ga.hpp"
#include "fscope/net.hpp"
#include "fscope/regression.hpp"
#include "fscope/stimulus.hpp"

namespace fscope {

struct PipelineConfig {
  std::string corpus_dir;
  std::string network_json;
  std::string weights_path;
  std::vector<std::string> capture_layers;
  double nms_iou = 0.3;
  double match_iou = 0.4;
  float min_activation = 0.0f;
  int max_activations_per_map = 50;  // strongest maxima kept per (crop, filter)
  int max_dets_per_crop = 12;  // per (crop, filter), post-NMS, score-ordered
  std::size_t min_pairs = 20;
  double ridge = 1e-6;
  CropSpec crop;  // target size filled from the network input
  GAConfig ga;
  std::uint64_t seed = 0;
  int workers = 0;
  ScoreMode score_mode = ScoreMode::softmax;
  std::map<std::string, std::string> merge_map;
  int min_samples = 10;
  double min_mean_size = 15.0;
  int topk = 10;
};

// One preprocessed network input: an object crop with its GT parts mapped
// into crop coordinates. crop_id doubles as the evaluation image id.
struct CropRecord {
  int crop_id = 0;
  int source_image = 0;
  int object_index = 0;
  std::string object_class;
  Tensor input;
  AffineTransform tf;
  std::vector<int> part_indices;  // indices into the source image's parts
};

inline std::vector<CropRecord> build_crops(const std::vector<AnnotatedImage>& images,
                                           const std::string& object_class,
                                           const CropSpec& spec, int workers = 1) {
  struct Slot {
    int image;
    int object;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t o = 0; o < images[i].objects.size(); ++o)
      if (images[i].objects[o].object_class == object_class)
        slots.push_back({static_cast<int>(i), static_cast<int>(o)});

  std::vector<CropRecord> crops(slots.size());
  parallel_for(slots.size(), workers, [&](std::size_t k) {
    const AnnotatedImage& im = images[slots[k].image];
    CropRecord rec;
    rec.crop_id = static_cast<int>(k);
    rec.source_image = slots[k].image;
    rec.object_index = slots[k].object;
    rec.object_class = object_class;
    auto [crop, tf] = crop_and_warp(im, slots[k].object, spec);
    rec.input = std::move(crop);
    rec.tf = tf;
    for (std::size_t p = 0; p < im.parts.size(); ++p)
      if (im.parts[p].parent == slots[k].object)
        rec.part_indices.push_back(static_cast<int>(p));
    crops[k] = std::move(rec);
  });
  return crops;
}

// GT boxes of one part class over a crop set, in crop coordinates, clipped to
// the crop and keyed by crop_id.
inline std::vector<PartBox> gt_boxes_for_part(const std::vector<AnnotatedImage>& images,
                                              const std::vector<CropRecord>& crops,
                                              const std::string& part_class) {
  std::vector<PartBox> gts;
  for (const auto& rec : crops) {
    const AnnotatedImage& im = images[rec.source_image];
    for (int pi : rec.part_indices) {
      const PartAnnotation& p = im.parts[pi];
      if (p.part_class != part_class) continue;
      Box b = rec.tf.map_box(p.box).intersect(
          Box{0, 0, static_cast<double>(rec.input.width), static_cast<double>(rec.input.height)});
      if (b.w < 1 || b.h < 1) continue;
      gts.push_back(part_box_from_corner(b, rec.crop_id, part_class));
    }
  }
  return gts;
}

// Post-ReLU local maxima of every filter of `layer`, per crop.
// acts[crop_id][filter] are sorted by value descending.
inline std::vector<std::vector<std::vector<Activation>>> extract_activations(
    const NetworkSpec& net, const std::vector<CropRecord>& crops, const std::string& layer,
    float min_activation = 0.0f, int workers = 1, int max_per_map = 0) {
  int li = net.layer_index(layer);
  if (net.layers[li].kind != LayerKind::conv)
    throw config_error("activation extraction expects a conv layer: " + layer);
  const int n_filters = net.layers[li].out_channels;

  std::vector<std::vector<std::vector<Activation>>> acts(
      crops.size(), std::vector<std::vector<Activation>>(n_filters));
  parallel_for(crops.size(), workers, [&](std::size_t k) {
    auto res = forward(net, crops[k].input, {}, {layer});
    const Tensor& map = res.captured.at(layer);
    for (int j = 0; j < n_filters; ++j) {
      acts[k][j] = local_maxima(map, j, min_activation, layer, j);
      if (max_per_map > 0 && static_cast<int>(acts[k][j].size()) > max_per_map)
        acts[k][j].resize(max_per_map);  // sorted by value; keep the strongest
    }
  });
  return acts;
}

// Detections of one filter over all crops: regressed when a regressor is
// given, raw RF boxes otherwise; per-crop NMS; optional per-crop cap.
inline std::vector<StimulusDetection> filter_detections(
    const NetworkSpec& net, const std::string& layer, int filter,
    const std::vector<std::vector<std::vector<Activation>>>& acts,
    const PartRegressor* reg, double nms_iou, int max_per_crop) {
  std::vector<StimulusDetection> dets;
  for (std::size_t k = 0; k < acts.size(); ++k) {
    std::vector<StimulusDetection> crop_dets;
    for (const auto& act : acts[k][filter]) {
      if (reg) {
        ReceptiveField rf = receptive_field(net, layer, act.c, act.r);
        crop_dets.push_back(apply(*reg, act, rf, net, static_cast<int>(k)));
      } else {
        crop_dets.push_back(raw_detection(act, net, layer, static_cast<int>(k)));
      }
    }
    crop_dets = nms(std::move(crop_dets), nms_iou);
    if (max_per_crop > 0 && static_cast<int>(crop_dets.size()) > max_per_crop)
      crop_dets.resize(max_per_crop);  // already in score order
    dets.insert(dets.end(), crop_dets.begin(), crop_dets.end());
  }
  return dets;
}

// Highest-activation crops per filter, for the top-k annotation sheets.
struct TopkEntry {
  std::size_t crop = 0;
  float peak = 0;
  int c = 0, r = 0;  // argmax feature-map position
};

// Post-ReLU maps of `layer` for every crop.
inline std::vector<Tensor> compute_layer_maps(const NetworkSpec& net,
                                              const std::vector<CropRecord>& crops,
                                              const std::string& layer, int workers = 1) {
  int li = net.layer_index(layer);
  if (net.layers[li].kind != LayerKind::conv)
    throw config_error("map extraction expects a conv layer: " + layer);
  std::vector<Tensor> maps(crops.size());
  parallel_for(crops.size(), workers, [&](std::size_t i) {
    auto res = forward(net, crops[i].input, {}, {layer});
    maps[i] = std::move(res.captured.at(layer));
  });
  return maps;
}

inline std::vector<std::vector<TopkEntry>> topk_from_maps(const std::vector<Tensor>& maps,
                                                          int n_filters, int k) {
  std::vector<std::vector<TopkEntry>> out(n_filters);
  for (int j = 0; j < n_filters; ++j) {
    std::vector<TopkEntry> entries(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
      TopkEntry e;
      e.crop = i;
      const Tensor& m = maps[i];
      for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
          if (m.at(j, r, c) > e.peak) {
            e.peak = m.at(j, r, c);
            e.c = c;
            e.r = r;
          }
      entries[i] = e;
    }
    std::stable_sort(entries.begin(), entries.end(),
                     [](const TopkEntry& a, const TopkEntry& b) { return a.peak > b.peak; });
    if (k >= 0 && static_cast<int>(entries.size()) > k) entries.resize(k);
    out[j] = std::move(entries);
  }
  return out;
}

struct PartLayerResult {
  std::string object_class;
  std::string part_class;
  std::string layer;
  int n_gt = 0;
  std::vector<double> per_filter_ap;
  std::vector<double> per_filter_recall;
  int best_filter = -1;
  EvalReport best_report;
  GAResult ga;
  EvalReport ga_report;
  double topfilters_ap = 0;
  std::vector<PartRegressor> regressors;  // one per filter that had enough pairs
};

// Full per-(object class, part class, layer) evaluation: per-filter regressed
// APs, the best filter, the GA combination and the TopFilters baseline at the
// same combination size.
inline PartLayerResult evaluate_part_layer(
    const NetworkSpec& net, const std::vector<AnnotatedImage>& images,
    const std::vector<CropRecord>& crops,
    const std::vector<std::vector<std::vector<Activation>>>& acts, const std::string& layer,
    const std::string& part_class, const PipelineConfig& cfg, std::uint64_t ga_seed,
    int workers = 1) {
  PartLayerResult res;
  res.object_class = crops.empty() ? std::string{} : crops.front().object_class;
  res.part_class = part_class;
  res.layer = layer;

  std::vector<PartBox> gts = gt_boxes_for_part(images, crops, part_class);
  res.n_gt = static_cast<int>(gts.size());
  if (gts.empty()) throw data_error("no ground truth for part " + part_class);

  // Per-crop GT lookup for pair collection.
  std::map<int, std::vector<PartBox>> gts_by_crop;
  for (const auto& g : gts) gts_by_crop[g.image_id].push_back(g);

  const int n_filters = static_cast<int>(acts.empty() ? 0 : acts.front().size());
  std::vector<std::vector<StimulusDetection>> per_filter_dets(n_filters);
  std::vector<std::optional<PartRegressor>> regs(n_filters);

  parallel_for(static_cast<std::size_t>(n_filters), workers, [&](std::size_t jf) {
    int j = static_cast<int>(jf);
    std::vector<TrainingPair> pairs;
    for (std::size_t k = 0; k < crops.size(); ++k) {
      auto it = gts_by_crop.find(static_cast<int>(k));
      if (it == gts_by_crop.end()) continue;
      auto add = collect_pairs(acts[k][j], net, layer, it->second);
      pairs.insert(pairs.end(), add.begin(), add.end());
    }
    if (pairs.size() >= cfg.min_pairs) {
      PartRegressor r = fit(pairs, cfg.min_pairs, cfg.ridge);
      r.part_class = part_class;
      r.layer = layer;
      r.filter = j;
      regs[jf] = std::move(r);
    }
    per_filter_dets[jf] = filter_detections(net, layer, j, acts,
                                            regs[jf] ? &*regs[jf] : nullptr, cfg.nms_iou,
                                            cfg.max_dets_per_crop);
  });

  res.per_filter_ap.resize(n_filters);
  res.per_filter_recall.resize(n_filters);
  std::vector<EvalReport> reports(n_filters);
  parallel_for(static_cast<std::size_t>(n_filters), workers, [&](std::size_t j) {
    reports[j] = match_and_ap(per_filter_dets[j], gts, cfg.match_iou);
    res.per_filter_ap[j] = reports[j].ap;
    res.per_filter_recall[j] = reports[j].max_recall;
  });
  res.best_filter = static_cast<int>(std::max_element(res.per_filter_ap.begin(),
                                                      res.per_filter_ap.end()) -
                                     res.per_filter_ap.begin());
  res.best_report = reports[res.best_filter];

  GAConfig ga_cfg = cfg.ga;
  ga_cfg.rng_seed = ga_seed;
  ga_cfg.workers = workers;
  res.ga = run_ga(ga_cfg, per_filter_dets, gts, cfg.nms_iou, cfg.match_iou);

  std::vector<StimulusDetection> ga_pool;
  for (int j : res.ga.best.selected())
    ga_pool.insert(ga_pool.end(), per_filter_dets[j].begin(), per_filter_dets[j].end());
  if (!ga_pool.empty()) {
    ga_pool = nms(std::move(ga_pool), cfg.nms_iou);
    res.ga_report = match_and_ap(ga_pool, gts, cfg.match_iou);
  } else {
    res.ga_report = EvalReport{};
    res.ga_report.part_class = part_class;
    res.ga_report.n_gt = res.n_gt;
  }

  Chromosome top = top_filters(res.per_filter_ap, res.ga.best.count_set());
  res.topfilters_ap =
      combination_fitness(top, per_filter_dets, gts, cfg.nms_iou, cfg.match_iou);

  for (auto& r : regs)
    if (r) res.regressors.push_back(std::move(*r));
  return res;
}

}  // namespace fscope
