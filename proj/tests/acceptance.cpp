// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. argv[1] = path to the fscope CLI binary, argv[2] = scratch
// directory (both used by the determinism criterion).

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fscope/corpus.hpp"
#include "fscope/discrim.hpp"
#include "fscope/eval.hpp"
#include "fscope/ga.hpp"
#include "fscope/geometry.hpp"
#include "fscope/net.hpp"
#include "fscope/pipeline.hpp"
#include "fscope/regression.hpp"
#include "fscope/stimulus.hpp"

#include "test_util.hpp"

using namespace fscope;
namespace fs = std::filesystem;

namespace {

std::string g_cli_path;
std::string g_scratch;

struct Criterion {
  int id;
  std::string name;
  std::function<void()> body;  // throws on failure
};

struct failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& what) {
  if (!ok) throw failure(what);
}

// ---- 1: receptive-field oracle ---------------------------------------------

void criterion_rf_oracle() {
  std::mt19937 rng(20260810);
  test::RandomNetOptions opt;
  opt.positive_weights = true;
  opt.min_side = 10;
  opt.max_side = 24;
  opt.max_channels = 4;
  int workers = resolve_workers(0);
  for (int trial = 0; trial < 50; ++trial) {
    NetworkSpec net = test::random_small_net(rng, opt);
    auto shapes = net.layer_shapes();
    int li = static_cast<int>(unit_uniform(rng) * net.layers.size());
    const Shape& s = shapes[li];
    int c = static_cast<int>(unit_uniform(rng) * s.w);
    int r = static_cast<int>(unit_uniform(rng) * s.h);
    const std::string& layer = net.layers[li].name;

    ReceptiveField rf = receptive_field(net, layer, c, r);
    auto support = test::perturbation_support(net, layer, c, r, workers);
    std::set<std::pair<int, int>> analytic;
    for (int y = 0; y < net.input_shape.h; ++y)
      for (int x = 0; x < net.input_shape.w; ++x)
        if (rf.clipped_box.contains(x, y)) analytic.insert({x, y});
    check(analytic == support,
          "net " + std::to_string(trial) + ": analytic RF != perturbation support at " +
              layer + "(" + std::to_string(c) + "," + std::to_string(r) + ")");
  }
}

// ---- 2: AP oracle ------------------------------------------------------------

double ap_prefix_oracle(const std::vector<StimulusDetection>& dets,
                        const std::vector<PartBox>& gts, double thr) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<double> prec, rec;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    std::vector<bool> taken(gts.size(), false);
    int tp = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const auto& d = dets[order[i]];
      int best = -1;
      double best_iou = 0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g] || gts[g].image_id != d.image_id) continue;
        double v = iou(d.box, gts[g].box());
        if (v >= thr && v > best_iou) {
          best_iou = v;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        taken[best] = true;
        ++tp;
      }
    }
    prec.push_back(static_cast<double>(tp) / k);
    rec.push_back(static_cast<double>(tp) / gts.size());
  }
  double ap = 0, prev = 0;
  for (std::size_t k = 0; k < prec.size(); ++k) {
    double env = 0;
    for (std::size_t j = k; j < prec.size(); ++j) env = std::max(env, prec[j]);
    ap += (rec[k] - prev) * env;
    prev = rec[k];
  }
  return ap;
}

void criterion_ap_oracle() {
  std::mt19937 rng(7100);
  for (int trial = 0; trial < 200; ++trial) {
    int n_img = 1 + static_cast<int>(unit_uniform(rng) * 6);
    std::vector<PartBox> gts;
    for (int im = 0; im < n_img; ++im) {
      int n = 1 + static_cast<int>(unit_uniform(rng) * 3);
      for (int g = 0; g < n; ++g)
        gts.push_back(part_box_from_corner({unit_uniform(rng) * 40, unit_uniform(rng) * 40,
                                            4 + unit_uniform(rng) * 14,
                                            4 + unit_uniform(rng) * 14},
                                           im, "p"));
    }
    int n_det = static_cast<int>(unit_uniform(rng) * 100);
    std::vector<StimulusDetection> dets;
    for (int i = 0; i < n_det; ++i) {
      StimulusDetection d;
      d.image_id = static_cast<int>(unit_uniform(rng) * n_img);
      if (unit_uniform(rng) < 0.55) {
        const PartBox& g = gts[static_cast<std::size_t>(unit_uniform(rng) * gts.size())];
        Box b = g.box();
        d.image_id = g.image_id;
        d.box = {b.x + unit_uniform(rng) * 4 - 2, b.y + unit_uniform(rng) * 4 - 2, b.w, b.h};
      } else {
        d.box = {unit_uniform(rng) * 40, unit_uniform(rng) * 40,
                 3 + unit_uniform(rng) * 10, 3 + unit_uniform(rng) * 10};
      }
      d.score = static_cast<float>(unit_uniform(rng));
      dets.push_back(d);
    }
    if (dets.size() > 4) {
      dets[2].score = dets[0].score;  // exercise tie handling
      dets[4].score = dets[3].score;
    }
    double got = match_and_ap(dets, gts, 0.4).ap;
    double want = ap_prefix_oracle(dets, gts, 0.4);
    check(std::abs(got - want) < 1e-9,
          "AP mismatch on instance " + std::to_string(trial) + ": " + format_double(got) +
              " vs oracle " + format_double(want));
  }
}

// ---- 3: regression recovery ---------------------------------------------------

void criterion_regression_recovery() {
  std::mt19937 rng(5301);
  NetworkSpec net;
  net.input_shape = {1, 48, 48};
  LayerSpec conv;
  conv.name = "c";
  conv.kind = LayerKind::conv;
  conv.out_channels = 1;
  conv.kernel = 3;
  conv.stride = 1;
  conv.pad = 1;
  net.layers.push_back(conv);

  for (int trial = 0; trial < 10; ++trial) {
    std::array<double, 12> wx{}, wy{}, ww{}, wh{};
    for (int i = 0; i < 12; ++i) {
      wx[i] = (unit_uniform(rng) - 0.5) * 0.4;
      wy[i] = (unit_uniform(rng) - 0.5) * 0.4;
      ww[i] = (unit_uniform(rng) - 0.5) * 0.4;
      wh[i] = (unit_uniform(rng) - 0.5) * 0.4;
    }
    wx[11] = unit_uniform(rng) * 2;
    wy[11] = unit_uniform(rng) * 2;
    ww[11] = 8 + unit_uniform(rng) * 4;  // sensible positive extents
    wh[11] = 8 + unit_uniform(rng) * 4;

    std::vector<TrainingPair> pairs;
    std::vector<Activation> acts;
    std::vector<PartBox> gts;
    for (int i = 0; i < 60; ++i) {
      Activation a;
      a.layer = "c";
      a.filter = 0;
      a.c = 14 + static_cast<int>(unit_uniform(rng) * 20);
      a.r = 14 + static_cast<int>(unit_uniform(rng) * 20);
      a.value = 0.3f + static_cast<float>(unit_uniform(rng));
      for (auto& nb : a.neighborhood) nb = static_cast<float>(unit_uniform(rng));
      a.neighborhood[4] = a.value;
      ReceptiveField rf = receptive_field(net, "c", a.c, a.r);
      RegressionFeatures f = regression_features(a, rf);
      auto dot = [&](const std::array<double, 12>& w) {
        double s = 0;
        for (int k = 0; k < 12; ++k) s += w[k] * f[k];
        return s;
      };
      PartBox g;
      g.image_id = i;
      g.part_class = "p";
      g.cx = rf.center_x + dot(wx);
      g.cy = rf.center_y + dot(wy);
      g.w = dot(ww);
      g.h = dot(wh);
      TrainingPair p;
      p.features = f;
      p.targets = {g.cx - rf.center_x, g.cy - rf.center_y, g.w, g.h};
      p.weight = a.value;
      pairs.push_back(p);
      acts.push_back(a);
      gts.push_back(g);
    }
    PartRegressor reg = fit(pairs);
    reg.layer = "c";
    for (int i = 0; i < 12; ++i) {
      check(std::abs(reg.wx[i] - wx[i]) < 1e-6, "w_x not recovered within 1e-6");
      check(std::abs(reg.wy[i] - wy[i]) < 1e-6, "w_y not recovered within 1e-6");
      check(std::abs(reg.ww[i] - ww[i]) < 1e-6, "w_w not recovered within 1e-6");
      check(std::abs(reg.wh[i] - wh[i]) < 1e-6, "w_h not recovered within 1e-6");
    }
    double iou_sum = 0;
    for (std::size_t i = 0; i < acts.size(); ++i) {
      ReceptiveField rf = receptive_field(net, "c", acts[i].c, acts[i].r);
      StimulusDetection d = apply(reg, acts[i], rf, net, static_cast<int>(i));
      iou_sum += iou(d.box, gts[i].box());
    }
    check(iou_sum / acts.size() >= 0.99, "fit->apply mean IoU below 0.99");
  }
}

// ---- 4: GA vs exhaustive -------------------------------------------------------

void criterion_ga_vs_exhaustive() {
  std::mt19937 rng(8400);
  int hits = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const int N = 10, n_images = 20;
    std::vector<PartBox> gts;
    for (int im = 0; im < n_images; ++im)
      gts.push_back(part_box_from_corner(
          {5 + unit_uniform(rng) * 20, 5 + unit_uniform(rng) * 20, 8, 8}, im, "p"));
    std::vector<std::vector<StimulusDetection>> per_filter(N);
    for (int f = 0; f < N; ++f) {
      double quality = unit_uniform(rng);
      double coverage = 0.2 + 0.6 * unit_uniform(rng);
      for (int im = 0; im < n_images; ++im) {
        if (unit_uniform(rng) > coverage) continue;
        StimulusDetection d;
        d.image_id = im;
        d.filter = f;
        d.score = static_cast<float>(0.2 + 0.8 * unit_uniform(rng));
        Box b = gts[im].box();
        if (unit_uniform(rng) < quality)
          d.box = {b.x + unit_uniform(rng) - 0.5, b.y + unit_uniform(rng) - 0.5, b.w, b.h};
        else
          d.box = {unit_uniform(rng) * 28, unit_uniform(rng) * 28, 7, 7};
        per_filter[f].push_back(d);
      }
    }
    double opt = 0;
    for (int mask = 1; mask < (1 << N); ++mask) {
      Chromosome z;
      z.bits.assign(N, 0);
      for (int b = 0; b < N; ++b) z.bits[b] = (mask >> b) & 1;
      opt = std::max(opt, combination_fitness(z, per_filter, gts));
    }
    GAConfig cfg;
    cfg.population = 60;
    cfg.generations = 40;
    cfg.init_p = 0.1;
    cfg.rng_seed = 4000 + inst;
    GAResult res = run_ga(cfg, per_filter, gts);
    for (std::size_t g = 1; g < res.best_history.size(); ++g)
      check(res.best_history[g] >= res.best_history[g - 1], "GA history not monotone");
    if (*res.best.fitness >= 0.95 * opt) ++hits;
  }
  check(hits >= 19, "GA reached 0.95x exhaustive optimum in only " + std::to_string(hits) +
                        "/20 instances");
}

// ---- 5: GA initialization statistic ---------------------------------------------

void criterion_ga_init_stat() {
  GAConfig cfg;
  cfg.population = 200;
  cfg.init_p = 0.02;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(seed);
    auto pop = ga_initial_population(cfg, 256, rng);
    double bits = 0;
    for (const auto& c : pop) bits += c.count_set();
    double mean = bits / pop.size();
    check(std::abs(mean - 5.12) <= 0.5, "initial mean bits-set " + format_double(mean) +
                                            " outside 5.12 +- 0.5 (seed " +
                                            std::to_string(seed) + ")");
  }
}

// ---- 6: ablation equivalence ------------------------------------------------------

void criterion_ablation_equivalence() {
  std::mt19937 rng(6600);
  test::RandomNetOptions opt;
  opt.with_head = true;
  opt.allow_lrn = true;
  for (int trial = 0; trial < 100; ++trial) {
    NetworkSpec net = test::random_small_net(rng, opt);
    int conv_idx = -1;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
      if (net.layers[i].kind == LayerKind::conv) conv_idx = static_cast<int>(i);
    const LayerSpec& conv = net.layers[conv_idx];
    int j = static_cast<int>(unit_uniform(rng) * conv.out_channels);
    Tensor in = test::random_tensor(net.input_shape.c, net.input_shape.h,
                                    net.input_shape.w, rng, -1.0, 1.0);

    AblationSpec ab;
    ab.zero_filters.emplace_back(conv.name, j);
    auto a = forward(net, in, ab);
    NetworkSpec zeroed = net;
    LayerSpec& zl = zeroed.layers[conv_idx];
    std::size_t per_filter = zl.weights.size() / zl.out_channels;
    std::fill_n(zl.weights.begin() + j * per_filter, per_filter, 0.0f);
    zl.bias[j] = 0.0f;
    auto b = forward(zeroed, in);
    check(a.class_scores == b.class_scores, "zero-ablation mismatch on triple " +
                                                std::to_string(trial));

    std::vector<std::uint8_t> mask(static_cast<std::size_t>(net.input_shape.h) *
                                   net.input_shape.w);
    for (auto& m : mask) m = unit_uniform(rng) < 0.4 ? 1 : 0;
    AblationSpec blk;
    blk.blackout_mask = mask;
    auto c = forward(net, in, blk);
    Tensor pre = in;
    for (int ch = 0; ch < pre.channels; ++ch)
      for (int y = 0; y < pre.height; ++y)
        for (int x = 0; x < pre.width; ++x)
          if (mask[static_cast<std::size_t>(y) * pre.width + x]) pre.at(ch, y, x) = 0.0f;
    auto d = forward(net, pre);
    check(c.class_scores == d.class_scores, "blackout mismatch on triple " +
                                                std::to_string(trial));
  }
}

// ---- 7: end-to-end synthetic emergence ----------------------------------------------

void criterion_synthetic_emergence() {
  SynthLayout layout = default_synth_layout();  // 3 classes, 2-4 parts each
  auto images = generate_synthetic(1234, 600, layout);
  NetworkSpec net = make_matched_filter_network(layout, 17, 2, 8, 4321);
  int workers = resolve_workers(0);

  PipelineConfig cfg;
  cfg.crop.target_h = net.input_shape.h;
  cfg.crop.target_w = net.input_shape.w;
  cfg.ga.population = 100;
  cfg.ga.generations = 40;
  cfg.ga.init_p = 0.02;

  auto crops = build_crops(images, "rover", cfg.crop, workers);
  check(crops.size() >= 150, "expected at least 150 rover crops");
  auto acts = extract_activations(net, crops, "conv1", cfg.min_activation, workers,
                                  cfg.max_activations_per_map);
  PartLayerResult r = evaluate_part_layer(net, images, crops, acts, "conv1", "wheel", cfg,
                                          2026, workers);

  int injected = matched_filter_index(layout, "rover", "wheel");
  int n_parts = 0;
  for (const auto& cls : layout.classes) n_parts += static_cast<int>(cls.parts.size());
  int control = n_parts;  // first random extra filter

  check(r.per_filter_ap[injected] > 0.30,
        "injected filter AP " + format_double(r.per_filter_ap[injected]) + " <= 0.30");
  check(r.per_filter_recall[injected] > 0.50,
        "injected filter recall " + format_double(r.per_filter_recall[injected]) +
            " <= 0.50");
  check(r.ga.best.bits[injected] == 1, "GA did not select the injected filter");
  check(r.per_filter_ap[control] < 0.10,
        "control filter AP " + format_double(r.per_filter_ap[control]) + " >= 0.10");
}

// ---- 8: part discriminativeness sanity ------------------------------------------------

SynthLayout small_discrim_layout() {
  SynthLayout layout;
  layout.image_size = 48;
  layout.classes = {
      {"alpha",
       {{"engine", "disk", 12, 0.32, 0.62, 0.10, 0.9f, {1.0f, 0.9f, 0.3f}, 1.0},
        {"decal", "checker", 9, 0.68, 0.30, 0.10, 0.55f, {0.4f, 0.8f, 1.0f}, 0.0}}},
      {"beta",
       {{"rotor", "cross", 11, 0.60, 0.58, 0.10, 0.8f, {1.0f, 0.5f, 0.9f}, 1.0},
        {"window", "ring", 9, 0.32, 0.34, 0.10, 0.5f, {0.6f, 1.0f, 0.6f}, 0.0}}},
      {"gamma",
       {{"hull", "hbar", 12, 0.50, 0.36, 0.10, 0.85f, {1.0f, 0.75f, 0.4f}, 1.0},
        {"vent", "vbar", 9, 0.34, 0.68, 0.10, 0.5f, {0.7f, 1.0f, 1.0f}, 0.0}}},
  };
  return layout;
}

void criterion_part_discrim() {
  int workers = resolve_workers(0);
  // (a) blacking out the wired part beats blacking out the decoy
  SynthLayout layout = small_discrim_layout();
  int wins = 0;
  const int runs = 20;
  for (int run = 0; run < runs; ++run) {
    auto images = generate_synthetic(900 + run, 45, layout);
    NetworkSpec net = make_matched_filter_network(layout, 13, 2, 2, 100 + run);
    CropSpec crop;
    crop.target_h = net.input_shape.h;
    crop.target_w = net.input_shape.w;
    auto crops = build_crops(images, "alpha", crop, workers);
    std::vector<std::pair<std::string, std::vector<MaskedImage>>> parts;
    for (const std::string part : {"engine", "decal"}) {
      std::vector<MaskedImage> mis;
      for (const auto& cr : crops) {
        MaskedImage mi;
        mi.image = cr.input;
        mi.mask.assign(static_cast<std::size_t>(cr.input.height) * cr.input.width, 0);
        const AnnotatedImage& im = images[cr.source_image];
        for (int pi : cr.part_indices)
          if (im.parts[pi].part_class == part) {
            auto m = part_mask_in_crop(im, pi, cr.tf, cr.input.height, cr.input.width);
            for (std::size_t k = 0; k < m.size(); ++k) mi.mask[k] |= m[k];
          }
        mis.push_back(std::move(mi));
      }
      parts.emplace_back(part, std::move(mis));
    }
    auto scores = part_discrim_table(net, parts, 0, ScoreMode::softmax, workers);
    if (scores[0].delta > scores[1].delta) ++wins;
  }
  check(wins >= 19, "wired part beat the decoy in only " + std::to_string(wins) + "/" +
                        std::to_string(runs) + " runs");

  // (b) the three correlations are positive on a monotone corpus
  SynthLayout mono;
  mono.image_size = 48;
  mono.classes = {
      {"m1",
       {{"p_big", "disk", 16, 0.34, 0.60, 0.06, 0.95f, {1.0f, 0.95f, 0.4f}, 1.2},
        {"p_tiny", "ring", 7, 0.70, 0.30, 0.06, 0.30f, {0.5f, 0.8f, 1.0f}, 0.05}}},
      {"m2",
       {{"p_mid", "cross", 12, 0.62, 0.58, 0.06, 0.70f, {1.0f, 0.5f, 0.9f}, 0.6},
        {"p_small", "checker", 9, 0.32, 0.34, 0.06, 0.45f, {0.6f, 1.0f, 0.6f}, 0.2}}},
      {"m3",
       {{"p_large", "hbar", 14, 0.50, 0.38, 0.06, 0.85f, {1.0f, 0.75f, 0.4f}, 0.9},
        {"p_less", "vbar", 8, 0.36, 0.70, 0.06, 0.40f, {0.7f, 1.0f, 1.0f}, 0.1}}},
  };
  auto images = generate_synthetic(777, 240, mono);
  NetworkSpec net = make_matched_filter_network(mono, 17, 2, 2, 778);
  PartCatalog cat = filter_catalog(images, {}, 10, 2.0);

  std::map<std::string, double> ap, size, delta;
  PipelineConfig cfg;
  cfg.crop.target_h = net.input_shape.h;
  cfg.crop.target_w = net.input_shape.w;
  for (std::size_t ci = 0; ci < mono.classes.size(); ++ci) {
    const auto& cls = mono.classes[ci];
    auto crops = build_crops(images, cls.name, cfg.crop, workers);
    auto acts = extract_activations(net, crops, "conv1", 0.0f, workers,
                                    cfg.max_activations_per_map);
    std::vector<std::pair<std::string, std::vector<MaskedImage>>> part_images;
    for (const auto& part : cls.parts) {
      // best-filter AP without the GA (enough for the correlation)
      auto gts = gt_boxes_for_part(images, crops, part.name);
      double best = 0;
      for (int j = 0; j < net.layers[0].out_channels; ++j) {
        std::vector<TrainingPair> pairs;
        std::map<int, std::vector<PartBox>> by_crop;
        for (const auto& g : gts) by_crop[g.image_id].push_back(g);
        for (std::size_t k = 0; k < crops.size(); ++k) {
          auto it = by_crop.find(static_cast<int>(k));
          if (it == by_crop.end()) continue;
          auto add = collect_pairs(acts[k][j], net, "conv1", it->second);
          pairs.insert(pairs.end(), add.begin(), add.end());
        }
        std::optional<PartRegressor> reg;
        if (pairs.size() >= cfg.min_pairs) {
          reg = fit(pairs, cfg.min_pairs, cfg.ridge);
          reg->layer = "conv1";
          reg->filter = j;
        }
        auto dets = filter_detections(net, "conv1", j, acts, reg ? &*reg : nullptr,
                                      cfg.nms_iou, cfg.max_dets_per_crop);
        best = std::max(best, match_and_ap(dets, gts, cfg.match_iou).ap);
      }
      ap[part.name] = best;

      std::vector<MaskedImage> mis;
      for (const auto& cr : crops) {
        MaskedImage mi;
        mi.image = cr.input;
        mi.mask.assign(static_cast<std::size_t>(cr.input.height) * cr.input.width, 0);
        const AnnotatedImage& im = images[cr.source_image];
        for (int pi : cr.part_indices)
          if (im.parts[pi].part_class == part.name) {
            auto m = part_mask_in_crop(im, pi, cr.tf, cr.input.height, cr.input.width);
            for (std::size_t k = 0; k < m.size(); ++k) mi.mask[k] |= m[k];
          }
        mis.push_back(std::move(mi));
      }
      part_images.emplace_back(part.name, std::move(mis));
      const PartCatalogEntry* e = cat.find(cls.name, part.name);
      check(e != nullptr, "catalog entry missing for " + part.name);
      size[part.name] = e->mean_norm_size;
    }
    auto scores = part_discrim_table(net, part_images, static_cast<int>(ci),
                                     ScoreMode::softmax, workers);
    for (const auto& sc : scores) delta[sc.target] = sc.delta;
  }
  auto reps = correlate_emergence(ap, size, delta);
  for (const auto& rep : reps)
    check(rep.value > 0, "PPMCC(" + rep.series_a + "," + rep.series_b +
                             ") = " + format_double(rep.value) + " not positive");
}

// ---- 9: CLI determinism under FS_WORKERS -----------------------------------------------

int run_cli(const std::string& args, const std::string& env = {}) {
  std::string cmd = env + " " + g_cli_path + " " + args + " >/dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void criterion_determinism() {
  fs::remove_all(g_scratch);
  fs::create_directories(g_scratch);
  std::string corpus = g_scratch + "/corpus";
  check(run_cli("gen-synth --out " + corpus + " --images 120 --seed 3 --emit-net") == 0,
        "gen-synth failed");

  std::string common = "pipeline --corpus " + corpus + " --net " + corpus +
                       "/net.json --weights " + corpus +
                       "/net.fsw --layers conv1 --seed 5 --ga-population 40 "
                       "--ga-generations 15";
  check(run_cli(common + " --out " + g_scratch + "/runA", "FS_WORKERS=1") == 0,
        "pipeline run A failed");
  check(run_cli(common + " --out " + g_scratch + "/runB", "FS_WORKERS=4") == 0,
        "pipeline run B failed");

  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(g_scratch + "/runA")) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), g_scratch + "/runA");
    fs::path other = fs::path(g_scratch + "/runB") / rel;
    check(fs::exists(other), "missing output in run B: " + rel.string());
    check(slurp(entry.path()) == slurp(other), "output differs: " + rel.string());
    ++compared;
  }
  check(compared >= 8, "expected at least 8 output files, compared " +
                           std::to_string(compared));

  // rerunning with the identical manifest reproduces identical bytes
  check(run_cli(common + " --out " + g_scratch + "/runC", "FS_WORKERS=3") == 0,
        "pipeline run C failed");
  check(slurp(g_scratch + "/runA/manifest.json") == slurp(g_scratch + "/runC/manifest.json"),
        "manifests differ between reruns");
  check(slurp(g_scratch + "/runA/summary.csv") == slurp(g_scratch + "/runC/summary.csv"),
        "summary differs between identical-manifest reruns");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc >= 2) g_cli_path = argv[1];
  if (argc >= 3) g_scratch = argv[2];
  if (g_scratch.empty()) g_scratch = (fs::temp_directory_path() / "fscope_acceptance").string();

  std::vector<Criterion> criteria = {
      {1, "receptive-field-oracle", criterion_rf_oracle},
      {2, "ap-oracle", criterion_ap_oracle},
      {3, "regression-recovery", criterion_regression_recovery},
      {4, "ga-vs-exhaustive", criterion_ga_vs_exhaustive},
      {5, "ga-init-statistic", criterion_ga_init_stat},
      {6, "ablation-equivalence", criterion_ablation_equivalence},
      {7, "synthetic-emergence", criterion_synthetic_emergence},
      {8, "part-discriminativeness", criterion_part_discrim},
      {9, "determinism-under-workers", criterion_determinism},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (c.id == 9 && g_cli_path.empty()) {
      std::cout << "FAIL  " << c.id << "  " << c.name << "  (no CLI path given)\n";
      ++failed;
      continue;
    }
    auto t0 = std::chrono::steady_clock::now();
    try {
      c.body();
      auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("PASS  %d  %-28s  (%.1fs)\n", c.id, c.name.c_str(), dt);
    } catch (const std::exception& e) {
      auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("FAIL  %d  %-28s  (%.1fs)  %s\n", c.id, c.name.c_str(), dt, e.what());
      ++failed;
    }
    std::fflush(stdout);
  }
  if (failed) {
    std::printf("%d/%zu criteria failed\n", failed, criteria.size());
    return 1;
  }
  std::printf("all %zu criteria passed\n", criteria.size());
  return 0;
}
