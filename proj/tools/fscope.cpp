// fscope: toolkit for probing whether convolutional filters act as semantic
// part detectors. Subcommands: gen-synth, pipeline, ga, topfilters, discrim,
// export-topk, report.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fscope/common.hpp"
#include "fscope/corpus.hpp"
#include "fscope/discrim.hpp"
#include "fscope/eval.hpp"
#include "fscope/ga.hpp"
#include "fscope/net.hpp"
#include "fscope/pipeline.hpp"
#include "fscope/regression.hpp"
#include "fscope/render.hpp"
#include "fscope/stimulus.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fscope;

namespace {

struct Settings {
  std::string config_path;
  std::string corpus;
  std::string network;
  std::string weights;
  std::string out;
  std::vector<std::string> layers;
  std::uint64_t seed = 0;
  int workers = 0;
  double nms_iou = 0.3;
  double match_iou = 0.4;
  double min_activation = 0.0;
  int max_activations_per_map = 50;
  int max_dets_per_crop = 12;
  int min_pairs = 20;
  double ridge = 1e-6;
  double context_pad = 0.10;
  double absolute_pad = -1.0;  // <0: use fractional pad
  int min_samples = 10;
  double min_mean_size = 15.0;
  std::string score_mode = "softmax";
  int topk = 10;
  std::map<std::string, std::string> merge_map;
  // ga
  int ga_population = 200;
  int ga_generations = 100;
  double ga_crossover_p = 0.7;
  double ga_mutation_p = 0.3;
  double ga_init_p = 0.02;
  int ga_elitism = 1;
  std::string ga_crossover = "single_point";
  // gen-synth
  int synth_images = 600;
  std::string synth_layout_path;
  bool emit_net = false;
  int net_kernel = 17;
  int net_stride = 2;
  int net_extra_filters = 8;
  // command-specific selectors
  std::string object_class;
  std::string part_class;
  std::string sel_layer;
  int top_n = 3;
  std::string pipeline_out;
  std::string run_dir;
};

json settings_to_json(const Settings& s) {
  json g = {{"population", s.ga_population},   {"generations", s.ga_generations},
            {"crossover_p", s.ga_crossover_p}, {"mutation_p", s.ga_mutation_p},
            {"init_p", s.ga_init_p},           {"elitism", s.ga_elitism},
            {"crossover", s.ga_crossover}};
  json j = {{"corpus", s.corpus},
            {"network", s.network},
            {"weights", s.weights},
            {"out", s.out},
            {"layers", s.layers},
            {"seed", s.seed},
            {"nms_iou", s.nms_iou},
            {"match_iou", s.match_iou},
            {"min_activation", s.min_activation},
            {"max_activations_per_map", s.max_activations_per_map},
            {"max_dets_per_crop", s.max_dets_per_crop},
            {"min_pairs", s.min_pairs},
            {"ridge", s.ridge},
            {"context_pad", s.context_pad},
            {"absolute_pad", s.absolute_pad},
            {"min_samples", s.min_samples},
            {"min_mean_size", s.min_mean_size},
            {"score_mode", s.score_mode},
            {"topk", s.topk},
            {"merge_map", s.merge_map},
            {"ga", g},
            {"synth_images", s.synth_images},
            {"synth_layout", s.synth_layout_path},
            {"net_kernel", s.net_kernel},
            {"net_stride", s.net_stride},
            {"net_extra_filters", s.net_extra_filters}};
  return j;
}

void settings_from_json(Settings& s, const json& j) {
  try {
    s.corpus = j.value("corpus", s.corpus);
    s.network = j.value("network", s.network);
    s.weights = j.value("weights", s.weights);
    s.out = j.value("out", s.out);
    if (j.contains("layers")) s.layers = j.at("layers").get<std::vector<std::string>>();
    s.seed = j.value("seed", s.seed);
    s.workers = j.value("workers", s.workers);
    s.nms_iou = j.value("nms_iou", s.nms_iou);
    s.match_iou = j.value("match_iou", s.match_iou);
    s.min_activation = j.value("min_activation", s.min_activation);
    s.max_activations_per_map = j.value("max_activations_per_map", s.max_activations_per_map);
    s.max_dets_per_crop = j.value("max_dets_per_crop", s.max_dets_per_crop);
    s.min_pairs = j.value("min_pairs", s.min_pairs);
    s.ridge = j.value("ridge", s.ridge);
    s.context_pad = j.value("context_pad", s.context_pad);
    s.absolute_pad = j.value("absolute_pad", s.absolute_pad);
    s.min_samples = j.value("min_samples", s.min_samples);
    s.min_mean_size = j.value("min_mean_size", s.min_mean_size);
    s.score_mode = j.value("score_mode", s.score_mode);
    s.topk = j.value("topk", s.topk);
    if (j.contains("merge_map"))
      s.merge_map = j.at("merge_map").get<std::map<std::string, std::string>>();
    if (j.contains("ga")) {
      const json& g = j.at("ga");
      s.ga_population = g.value("population", s.ga_population);
      s.ga_generations = g.value("generations", s.ga_generations);
      s.ga_crossover_p = g.value("crossover_p", s.ga_crossover_p);
      s.ga_mutation_p = g.value("mutation_p", s.ga_mutation_p);
      s.ga_init_p = g.value("init_p", s.ga_init_p);
      s.ga_elitism = g.value("elitism", s.ga_elitism);
      s.ga_crossover = g.value("crossover", s.ga_crossover);
    }
    s.synth_images = j.value("synth_images", s.synth_images);
    s.synth_layout_path = j.value("synth_layout", s.synth_layout_path);
    s.net_kernel = j.value("net_kernel", s.net_kernel);
    s.net_stride = j.value("net_stride", s.net_stride);
    s.net_extra_filters = j.value("net_extra_filters", s.net_extra_filters);
  } catch (const json::exception& e) {
    throw config_error(std::string("bad config file: ") + e.what());
  }
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "softmax") return ScoreMode::softmax;
  if (s == "presoftmax") return ScoreMode::presoftmax;
  throw config_error("score_mode must be softmax or presoftmax: " + s);
}

CrossoverKind parse_crossover(const std::string& s) {
  if (s == "single_point") return CrossoverKind::single_point;
  if (s == "two_point") return CrossoverKind::two_point;
  if (s == "uniform") return CrossoverKind::uniform;
  throw config_error("unknown crossover kind: " + s);
}

GAConfig ga_config(const Settings& s) {
  GAConfig g;
  g.population = s.ga_population;
  g.generations = s.ga_generations;
  g.crossover_p = s.ga_crossover_p;
  g.mutation_p = s.ga_mutation_p;
  g.init_p = s.ga_init_p;
  g.elitism = s.ga_elitism;
  g.crossover = parse_crossover(s.ga_crossover);
  g.validate();
  return g;
}

PipelineConfig pipeline_config(const Settings& s, const NetworkSpec& net) {
  PipelineConfig c;
  c.corpus_dir = s.corpus;
  c.network_json = s.network;
  c.weights_path = s.weights;
  c.capture_layers = s.layers;
  c.nms_iou = s.nms_iou;
  c.match_iou = s.match_iou;
  c.min_activation = static_cast<float>(s.min_activation);
  c.max_activations_per_map = s.max_activations_per_map;
  c.max_dets_per_crop = s.max_dets_per_crop;
  c.min_pairs = static_cast<std::size_t>(s.min_pairs);
  c.ridge = s.ridge;
  c.crop.context_pad = s.context_pad;
  if (s.absolute_pad >= 0) c.crop.absolute_pad = s.absolute_pad;
  c.crop.target_h = net.input_shape.h;
  c.crop.target_w = net.input_shape.w;
  c.ga = ga_config(s);
  c.seed = s.seed;
  c.workers = s.workers;
  c.score_mode = parse_score_mode(s.score_mode);
  c.merge_map = s.merge_map;
  c.min_samples = s.min_samples;
  c.min_mean_size = s.min_mean_size;
  c.topk = s.topk;
  return c;
}

// Manifest first, before any other output: it pins everything a rerun needs.
// the effective worker count is deliberately not recorded (outputs are
// worker-independent by construction).
void write_manifest(const Settings& s, const std::string& command,
                    const std::vector<std::string>& outputs) {
  if (s.out.empty()) throw config_error("missing output directory (--out)");
  fs::create_directories(s.out);
  json cfg = settings_to_json(s);
  json m;
  m["command"] = command;
  m["toolkit_version"] = kVersion;
  m["config"] = cfg;
  m["config_hash"] = hex64(fnv1a64(cfg.dump()));
  m["corpus"] = s.corpus;
  m["network"] = s.network;
  m["weights"] = s.weights;
  m["seed"] = s.seed;
  m["outputs"] = outputs;
  std::ofstream f(fs::path(s.out) / "manifest.json", std::ios::trunc);
  if (!f) throw data_error("cannot write manifest in " + s.out);
  f << m.dump(2) << "\n";
}

std::string sanitize(const std::string& name) {
  std::string out = name;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return out;
}

std::string combo_stem(const std::string& oc, const std::string& part,
                       const std::string& layer) {
  return sanitize(oc) + "__" + sanitize(part) + "__" + sanitize(layer);
}

struct LoadedRun {
  std::vector<AnnotatedImage> images;
  PartCatalog catalog;
  NetworkSpec net;
  int workers = 1;
  // retained parts per object class, in deterministic (sorted) order
  std::map<std::string, std::vector<std::string>> parts_by_object;
};

LoadedRun load_run(const Settings& s, bool need_net = true) {
  LoadedRun r;
  if (s.corpus.empty()) throw config_error("missing corpus directory (--corpus)");
  r.images = load_corpus(s.corpus);
  merge_part_labels(r.images, s.merge_map);
  r.catalog = filter_catalog(r.images, {}, s.min_samples, s.min_mean_size);
  for (const auto& e : r.catalog.entries)
    r.parts_by_object[e.object_class].push_back(e.part_class);
  if (need_net) {
    if (s.network.empty()) throw config_error("missing network spec (--net)");
    r.net = load_network_json(s.network);
    if (s.weights.empty()) throw config_error("missing weights file (--weights)");
    r.net = load_weights(r.net, s.weights);
  }
  r.workers = resolve_workers(s.workers);
  return r;
}

std::vector<std::string> capture_layers_or_default(const Settings& s,
                                                   const NetworkSpec& net) {
  if (!s.layers.empty()) {
    for (const auto& l : s.layers) net.layer_index(l);
    return s.layers;
  }
  // default: every conv layer
  std::vector<std::string> out;
  for (const auto& l : net.layers)
    if (l.kind == LayerKind::conv) out.push_back(l.name);
  if (out.empty()) throw config_error("network has no conv layers to analyze");
  return out;
}

// ---- gen-synth -----------------------------------------------------------

int cmd_gen_synth(const Settings& s) {
  SynthLayout layout;
  if (!s.synth_layout_path.empty()) {
    std::ifstream f(s.synth_layout_path);
    if (!f) throw data_error("cannot open layout file: " + s.synth_layout_path);
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw data_error(std::string("layout file is not valid JSON: ") + e.what());
    }
    layout = synth_layout_from_json(j);
  } else {
    layout = default_synth_layout();
  }

  std::vector<std::string> outputs = {"manifest.json", "layout.json", "*.ppm", "*.json"};
  if (s.emit_net) {
    outputs.push_back("net.json");
    outputs.push_back("net.fsw");
  }
  write_manifest(s, "gen-synth", outputs);

  {
    std::ofstream f(fs::path(s.out) / "layout.json", std::ios::trunc);
    f << synth_layout_to_json(layout).dump(2) << "\n";
  }
  auto images = generate_synthetic(s.seed, s.synth_images, layout);
  save_corpus(s.out, images);
  if (s.emit_net) {
    NetworkSpec net = make_matched_filter_network(layout, s.net_kernel, s.net_stride,
                                                  s.net_extra_filters, mix_seed(s.seed, 77));
    save_network_json(net, (fs::path(s.out) / "net.json").string());
    save_weights(net, (fs::path(s.out) / "net.fsw").string());
  }
  std::cout << "gen-synth: wrote " << images.size() << " images to " << s.out << "\n";
  return 0;
}

// ---- pipeline --------------------------------------------------------------

struct ComboOutcome {
  PartLayerResult result;
  Emergence em;
};

void write_combo_outputs(const Settings& s, const PartLayerResult& r) {
  fs::path ga_dir = fs::path(s.out) / "ga";
  fs::path curve_dir = fs::path(s.out) / "curves";
  fs::create_directories(ga_dir);
  fs::create_directories(curve_dir);
  std::string stem = combo_stem(r.object_class, r.part_class, r.layer);
  write_ga_log_csv((ga_dir / (stem + ".log.csv")).string(), r.ga);
  {
    std::ofstream f(ga_dir / (stem + ".best.json"), std::ios::trunc);
    f << chromosome_to_json(r.ga.best).dump(2) << "\n";
  }
  write_pr_curve_csv((curve_dir / (stem + ".ga.pr.csv")).string(), r.ga_report);
  write_recall_fp_csv((curve_dir / (stem + ".ga.recallfp.csv")).string(), r.ga_report);
  write_pr_curve_csv((curve_dir / (stem + ".best.pr.csv")).string(), r.best_report);
  write_recall_fp_csv((curve_dir / (stem + ".best.recallfp.csv")).string(), r.best_report);
}

int cmd_pipeline(const Settings& s) {
  LoadedRun run = load_run(s);
  auto layers = capture_layers_or_default(s, run.net);
  PipelineConfig pcfg = pipeline_config(s, run.net);

  write_manifest(s, "pipeline",
                 {"manifest.json", "catalog.json", "summary.csv", "per_filter_ap.csv",
                  "layer_summary.csv", "regressors.json", "ga/", "curves/"});
  {
    std::ofstream f(fs::path(s.out) / "catalog.json", std::ios::trunc);
    f << catalog_to_json(run.catalog).dump(2) << "\n";
  }

  if (run.catalog.entries.empty()) {
    std::cerr << "warning: part catalog is empty after filtering; nothing to evaluate\n";
    std::ofstream sum(fs::path(s.out) / "summary.csv", std::ios::trunc);
    sum << "object_class,part_class,layer,n_gt,best_filter,best_ap,best_recall,ga_ap,"
           "ga_nfilters,ga_gain,topfilters_ap,emerged,covered\n";
    std::ofstream pf(fs::path(s.out) / "per_filter_ap.csv", std::ios::trunc);
    pf << "object_class,part_class,layer,filter,ap,max_recall,n_detections,regressed\n";
    std::ofstream ls(fs::path(s.out) / "layer_summary.csv", std::ios::trunc);
    ls << "layer,n_parts,mean_best_ap,mean_ga_ap,mean_ga_gain,mean_nfilters,emerged,"
          "covered\n";
    std::ofstream rg(fs::path(s.out) / "regressors.json", std::ios::trunc);
    rg << "[]\n";
    return 0;
  }

  std::ofstream sum(fs::path(s.out) / "summary.csv", std::ios::trunc);
  sum << "object_class,part_class,layer,n_gt,best_filter,best_ap,best_recall,ga_ap,"
         "ga_nfilters,ga_gain,topfilters_ap,emerged,covered\n";
  std::ofstream pf(fs::path(s.out) / "per_filter_ap.csv", std::ios::trunc);
  pf << "object_class,part_class,layer,filter,ap,max_recall,n_detections,regressed\n";

  struct LayerAgg {
    int n = 0, emerged = 0, covered = 0;
    double best = 0, ga = 0, gain = 0, nfilters = 0;
  };
  std::map<std::string, LayerAgg> layer_agg;
  std::vector<PartRegressor> bank;
  std::uint64_t combo_counter = 0;

  for (const auto& [oc, parts] : run.parts_by_object) {
    auto crops = build_crops(run.images, oc, pcfg.crop, run.workers);
    if (crops.empty()) continue;
    for (const auto& layer : layers) {
      auto acts = extract_activations(run.net, crops, layer, pcfg.min_activation,
                                      run.workers, pcfg.max_activations_per_map);
      for (const auto& part : parts) {
        std::uint64_t ga_seed = mix_seed(s.seed, ++combo_counter);
        PartLayerResult r = evaluate_part_layer(run.net, run.images, crops, acts, layer,
                                                part, pcfg, ga_seed, run.workers);
        Emergence em = emergence(r.ga_report);
        double gain = r.ga_report.ap - r.per_filter_ap[r.best_filter];

        sum << oc << ',' << part << ',' << layer << ',' << r.n_gt << ',' << r.best_filter
            << ',' << format_double(r.per_filter_ap[r.best_filter]) << ','
            << format_double(r.per_filter_recall[r.best_filter]) << ','
            << format_double(r.ga_report.ap) << ',' << r.ga.best.count_set() << ','
            << format_double(gain) << ',' << format_double(r.topfilters_ap) << ','
            << (em.emerged_by_ap ? 1 : 0) << ',' << (em.covered ? 1 : 0) << '\n';

        std::set<int> with_reg;
        for (const auto& reg : r.regressors) with_reg.insert(reg.filter);
        for (std::size_t j = 0; j < r.per_filter_ap.size(); ++j)
          pf << oc << ',' << part << ',' << layer << ',' << j << ','
             << format_double(r.per_filter_ap[j]) << ','
             << format_double(r.per_filter_recall[j]) << ',' << r.ga_report.n_gt << ','
             << (with_reg.count(static_cast<int>(j)) ? 1 : 0) << '\n';

        LayerAgg& agg = layer_agg[layer];
        agg.n++;
        agg.emerged += em.emerged_by_ap;
        agg.covered += em.covered;
        agg.best += r.per_filter_ap[r.best_filter];
        agg.ga += r.ga_report.ap;
        agg.gain += gain;
        agg.nfilters += r.ga.best.count_set();

        write_combo_outputs(s, r);
        for (auto& reg : r.regressors) bank.push_back(std::move(reg));
        std::cout << oc << "/" << part << " @" << layer << ": best "
                  << format_double(r.per_filter_ap[r.best_filter]) << " (+"
                  << format_double(gain) << " GA, " << r.ga.best.count_set()
                  << " filters)\n";
      }
    }
  }

  std::ofstream ls(fs::path(s.out) / "layer_summary.csv", std::ios::trunc);
  ls << "layer,n_parts,mean_best_ap,mean_ga_ap,mean_ga_gain,mean_nfilters,emerged,"
        "covered\n";
  for (const auto& layer : layers) {
    auto it = layer_agg.find(layer);
    if (it == layer_agg.end()) continue;
    const LayerAgg& a = it->second;
    ls << layer << ',' << a.n << ',' << format_double(a.best / a.n) << ','
       << format_double(a.ga / a.n) << ',' << format_double(a.gain / a.n) << ','
       << format_double(a.nfilters / a.n) << ',' << a.emerged << ',' << a.covered << '\n';
  }
  save_regressor_bank((fs::path(s.out) / "regressors.json").string(), bank);
  return 0;
}

// ---- ga / topfilters -------------------------------------------------------

PartLayerResult run_single_combo(const Settings& s, LoadedRun& run) {
  if (s.object_class.empty() || s.part_class.empty() || s.sel_layer.empty())
    throw config_error("--object, --part and --layer are required");
  PipelineConfig pcfg = pipeline_config(s, run.net);
  run.net.layer_index(s.sel_layer);
  auto crops = build_crops(run.images, s.object_class, pcfg.crop, run.workers);
  if (crops.empty()) throw data_error("no objects of class " + s.object_class);
  auto acts = extract_activations(run.net, crops, s.sel_layer, pcfg.min_activation,
                                  run.workers, pcfg.max_activations_per_map);
  return evaluate_part_layer(run.net, run.images, crops, acts, s.sel_layer, s.part_class,
                             pcfg, mix_seed(s.seed, 1), run.workers);
}

int cmd_ga(const Settings& s) {
  LoadedRun run = load_run(s);
  write_manifest(s, "ga", {"manifest.json", "ga_log.csv", "ga_best.json", "ga_eval.csv"});
  PartLayerResult r = run_single_combo(s, run);
  write_ga_log_csv((fs::path(s.out) / "ga_log.csv").string(), r.ga);
  {
    std::ofstream f(fs::path(s.out) / "ga_best.json", std::ios::trunc);
    f << chromosome_to_json(r.ga.best).dump(2) << "\n";
  }
  std::ofstream f(fs::path(s.out) / "ga_eval.csv", std::ios::trunc);
  f << "object_class,part_class,layer,ga_ap,ga_nfilters,best_filter_ap,max_recall\n";
  f << s.object_class << ',' << s.part_class << ',' << s.sel_layer << ','
    << format_double(r.ga_report.ap) << ',' << r.ga.best.count_set() << ','
    << format_double(r.per_filter_ap[r.best_filter]) << ','
    << format_double(r.ga_report.max_recall) << '\n';
  std::cout << "GA best AP " << format_double(r.ga_report.ap) << " with "
            << r.ga.best.count_set() << " filters\n";
  return 0;
}

int cmd_topfilters(const Settings& s) {
  LoadedRun run = load_run(s);
  write_manifest(s, "topfilters",
                 {"manifest.json", "topfilters.json", "topfilters_eval.csv"});
  PartLayerResult r = run_single_combo(s, run);

  // per-filter detections must match the pipeline's (regressed + capped)
  PipelineConfig pcfg = pipeline_config(s, run.net);
  auto crops = build_crops(run.images, s.object_class, pcfg.crop, run.workers);
  auto acts = extract_activations(run.net, crops, s.sel_layer, pcfg.min_activation,
                                  run.workers, pcfg.max_activations_per_map);
  auto gts = gt_boxes_for_part(run.images, crops, s.part_class);
  std::map<int, const PartRegressor*> regs;
  for (const auto& reg : r.regressors) regs[reg.filter] = &reg;
  std::vector<std::vector<StimulusDetection>> per_filter(r.per_filter_ap.size());
  for (std::size_t j = 0; j < per_filter.size(); ++j) {
    auto it = regs.find(static_cast<int>(j));
    per_filter[j] =
        filter_detections(run.net, s.sel_layer, static_cast<int>(j), acts,
                          it == regs.end() ? nullptr : it->second, pcfg.nms_iou,
                          pcfg.max_dets_per_crop);
  }
  Chromosome top = top_filters(r.per_filter_ap, s.top_n);
  double ap = combination_fitness(top, per_filter, gts, pcfg.nms_iou, pcfg.match_iou);
  top.fitness = ap;
  {
    std::ofstream f(fs::path(s.out) / "topfilters.json", std::ios::trunc);
    f << chromosome_to_json(top).dump(2) << "\n";
  }
  std::ofstream f(fs::path(s.out) / "topfilters_eval.csv", std::ios::trunc);
  f << "object_class,part_class,layer,n,topfilters_ap,ga_ap\n";
  f << s.object_class << ',' << s.part_class << ',' << s.sel_layer << ',' << s.top_n << ','
    << format_double(ap) << ',' << format_double(r.ga_report.ap) << '\n';
  std::cout << "TopFilters(" << s.top_n << ") AP " << format_double(ap) << " vs GA "
            << format_double(r.ga_report.ap) << "\n";
  return 0;
}

// ---- discrim ----------------------------------------------------------------

std::map<std::pair<std::string, std::string>, double> read_summary_ap(
    const std::string& pipeline_out, const std::string& layer) {
  fs::path p = fs::path(pipeline_out) / "summary.csv";
  std::ifstream f(p);
  if (!f) throw data_error("missing eval reports: cannot open " + p.string());
  std::map<std::pair<std::string, std::string>, double> ap;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::vector<std::string> cols;
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() < 8) continue;
    if (cols[2] != layer) continue;
    ap[{cols[0], cols[1]}] = std::stod(cols[7]);  // ga_ap
  }
  return ap;
}

int cmd_discrim(const Settings& s) {
  LoadedRun run = load_run(s);
  auto layers = capture_layers_or_default(s, run.net);
  PipelineConfig pcfg = pipeline_config(s, run.net);
  if (run.parts_by_object.empty()) throw data_error("no parts present after filtering");

  write_manifest(s, "discrim",
                 {"manifest.json", "filter_discrim.csv", "part_discrim.csv",
                  "correlations.json", "emergence_scatter.csv"});

  std::ofstream ff(fs::path(s.out) / "filter_discrim.csv", std::ios::trunc);
  ff << "object_class,layer,filter,delta,sigma,is_discriminative,n_images\n";
  std::ofstream pfcsv(fs::path(s.out) / "part_discrim.csv", std::ios::trunc);
  pfcsv << "object_class,part_class,delta,sigma,is_discriminative,n_images\n";

  std::map<std::string, double> part_delta;  // key: object/part
  ScoreMode mode = parse_score_mode(s.score_mode);

  for (const auto& [oc, parts] : run.parts_by_object) {
    int class_index = -1;
    for (std::size_t i = 0; i < run.net.class_names.size(); ++i)
      if (run.net.class_names[i] == oc) class_index = static_cast<int>(i);
    if (class_index < 0)
      throw config_error("object class not among network class names: " + oc);

    auto crops = build_crops(run.images, oc, pcfg.crop, run.workers);
    if (crops.empty()) continue;
    std::vector<Tensor> inputs;
    inputs.reserve(crops.size());
    for (const auto& c : crops) inputs.push_back(c.input);

    for (const auto& layer : layers) {
      auto scores =
          layer_filter_discrim(run.net, inputs, class_index, layer, mode, run.workers);
      for (std::size_t j = 0; j < scores.size(); ++j)
        ff << oc << ',' << layer << ',' << j << ',' << format_double(scores[j].delta)
           << ',' << format_double(scores[j].sigma) << ','
           << (scores[j].is_discriminative ? 1 : 0) << ','
           << scores[j].per_image_deltas.size() << '\n';
    }

    std::vector<std::pair<std::string, std::vector<MaskedImage>>> part_images;
    for (const auto& part : parts) {
      std::vector<MaskedImage> mis;
      for (const auto& crop : crops) {
        MaskedImage mi;
        mi.image = crop.input;
        mi.mask.assign(static_cast<std::size_t>(crop.input.height) * crop.input.width, 0);
        const AnnotatedImage& im = run.images[crop.source_image];
        for (int pi : crop.part_indices) {
          if (im.parts[pi].part_class != part) continue;
          auto m = part_mask_in_crop(im, pi, crop.tf, crop.input.height, crop.input.width);
          for (std::size_t k = 0; k < m.size(); ++k) mi.mask[k] |= m[k];
        }
        mis.push_back(std::move(mi));
      }
      part_images.emplace_back(part, std::move(mis));
    }
    auto pscores = part_discrim_table(run.net, part_images, class_index, mode, run.workers);
    for (const auto& sc : pscores) {
      pfcsv << oc << ',' << sc.target << ',' << format_double(sc.delta) << ','
            << format_double(sc.sigma) << ',' << (sc.is_discriminative ? 1 : 0) << ','
            << sc.per_image_deltas.size() << '\n';
      part_delta[oc + "/" + sc.target] = sc.delta;
    }
  }

  // correlations need the detection APs from a pipeline run
  if (s.pipeline_out.empty())
    throw data_error("missing eval reports: --pipeline-out is required for correlations");
  const std::string& corr_layer = layers.back();
  auto ap_by_part = read_summary_ap(s.pipeline_out, corr_layer);
  std::map<std::string, double> ap, norm_size, delta;
  for (const auto& e : run.catalog.entries) {
    std::string key = e.object_class + "/" + e.part_class;
    auto it = ap_by_part.find({e.object_class, e.part_class});
    auto dit = part_delta.find(key);
    if (it == ap_by_part.end())
      throw data_error("missing eval report for part " + key + " at layer " + corr_layer);
    if (dit == part_delta.end()) continue;
    ap[key] = it->second;
    norm_size[key] = e.mean_norm_size;
    delta[key] = dit->second;
  }
  auto reps = correlate_emergence(ap, norm_size, delta);
  {
    std::ofstream f(fs::path(s.out) / "correlations.json", std::ios::trunc);
    f << correlations_to_json(reps).dump(2) << "\n";
  }
  std::ofstream sc(fs::path(s.out) / "emergence_scatter.csv", std::ios::trunc);
  sc << "part,ap,norm_size,delta\n";
  for (const auto& [key, v] : ap)
    sc << key << ',' << format_double(v) << ',' << format_double(norm_size[key]) << ','
       << format_double(delta[key]) << '\n';
  for (const auto& r : reps)
    std::cout << "PPMCC(" << r.series_a << ", " << r.series_b
              << ") = " << format_double(r.value) << (r.low_sample_warning ? "  [n<3]" : "")
              << "\n";
  return 0;
}

// ---- export-topk -------------------------------------------------------------

int cmd_export_topk(const Settings& s) {
  LoadedRun run = load_run(s);
  auto layers = capture_layers_or_default(s, run.net);
  PipelineConfig pcfg = pipeline_config(s, run.net);
  write_manifest(s, "export-topk", {"manifest.json", "sheets/", "sheet_index.csv"});
  fs::path sheets = fs::path(s.out) / "sheets";
  fs::create_directories(sheets);
  std::ofstream idx(fs::path(s.out) / "sheet_index.csv", std::ios::trunc);
  idx << "sheet,object_class,layer,filter,rank,crop_id,activation\n";

  std::vector<std::string> object_classes;
  for (const auto& im : run.images)
    for (const auto& o : im.objects)
      if (std::find(object_classes.begin(), object_classes.end(), o.object_class) ==
          object_classes.end())
        object_classes.push_back(o.object_class);
  std::sort(object_classes.begin(), object_classes.end());

  for (const auto& oc : object_classes) {
    auto crops = build_crops(run.images, oc, pcfg.crop, run.workers);
    if (crops.empty()) continue;
    for (const auto& layer : layers) {
      int li = run.net.layer_index(layer);
      if (run.net.layers[li].kind != LayerKind::conv) continue;
      int n_filters = run.net.layers[li].out_channels;

      auto maps = compute_layer_maps(run.net, crops, layer, run.workers);
      auto ranked = topk_from_maps(maps, n_filters, s.topk);

      for (int j = 0; j < n_filters; ++j) {
        int k_eff = static_cast<int>(ranked[j].size());
        if (k_eff < s.topk)
          std::cerr << "warning: only " << k_eff << " crops available for " << oc << "/"
                    << layer << "/f" << j << " (asked " << s.topk << ")\n";

        std::vector<Tensor> panels;
        std::string sheet_name =
            sanitize(oc) + "__" + sanitize(layer) + "__f" + std::to_string(j) + ".ppm";
        for (int rank = 0; rank < k_eff; ++rank) {
          const TopkEntry& e = ranked[j][rank];
          Tensor panel = render_activation_overlay(crops[e.crop].input, maps[e.crop], j);
          ReceptiveField rf = receptive_field(run.net, layer, e.c, e.r);
          draw_square(panel, static_cast<int>(std::lround(rf.center_x)),
                      static_cast<int>(std::lround(rf.center_y)), 4, 0.0f, 1.0f, 0.0f);
          panels.push_back(std::move(panel));
          idx << sheet_name << ',' << oc << ',' << layer << ',' << j << ',' << rank << ','
              << crops[e.crop].crop_id << ',' << format_double(e.peak) << '\n';
        }
        if (!panels.empty()) write_ppm((sheets / sheet_name).string(), hconcat_panels(panels));
      }
    }
  }
  return 0;
}

// ---- report -------------------------------------------------------------------

int cmd_report(const Settings& s) {
  fs::path dir = s.run_dir.empty() ? fs::path(s.out) : fs::path(s.run_dir);
  std::ifstream sum(dir / "summary.csv");
  if (!sum) throw data_error("no summary.csv under " + dir.string());
  std::ostringstream text;

  std::string line;
  std::getline(sum, line);
  text << "object/part                      layer      Best     GA   nFilters  emerged covered\n";
  int emerged = 0, covered = 0, n = 0;
  double mean_best = 0, mean_ga = 0;
  while (std::getline(sum, line)) {
    std::stringstream ss(line);
    std::vector<std::string> c;
    std::string col;
    while (std::getline(ss, col, ',')) c.push_back(col);
    if (c.size() < 13) continue;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-32s %-8s %6.3f %6.3f   %4s       %s       %s\n",
                  (c[0] + "/" + c[1]).c_str(), c[2].c_str(), std::stod(c[5]),
                  std::stod(c[7]), c[8].c_str(), c[11].c_str(), c[12].c_str());
    text << buf;
    emerged += c[11] == "1";
    covered += c[12] == "1";
    mean_best += std::stod(c[5]);
    mean_ga += std::stod(c[7]);
    ++n;
  }
  if (n > 0) {
    text << "\nmean (" << n << " part rows): best " << format_double(mean_best / n)
         << ", GA " << format_double(mean_ga / n) << "\n";
    text << "emerged by AP (>0.30): " << emerged << " / " << n << "\n";
    text << "covered (recall>0.50): " << covered << " / " << n << "\n";
  } else {
    text << "(no evaluated parts)\n";
  }

  if (!s.out.empty() && s.out != dir.string()) {
    write_manifest(s, "report", {"manifest.json", "report.txt"});
    std::ofstream f(fs::path(s.out) / "report.txt", std::ios::trunc);
    f << text.str();
  }
  std::cout << text.str();
  return 0;
}

void add_common_options(CLI::App* cmd, Settings& s) {
  cmd->add_option("--config", s.config_path, "JSON config file; flags override its keys");
  cmd->add_option("--corpus", s.corpus, "corpus directory");
  cmd->add_option("--net", s.network, "network spec JSON");
  cmd->add_option("--weights", s.weights, "FSW1 weight file");
  cmd->add_option("--out", s.out, "output directory");
  cmd->add_option("--layers", s.layers, "conv layers to analyze");
  cmd->add_option("--seed", s.seed, "master RNG seed");
  cmd->add_option("--workers", s.workers, "worker threads (FS_WORKERS overrides)");
  cmd->add_option("--nms-iou", s.nms_iou, "NMS IoU threshold");
  cmd->add_option("--match-iou", s.match_iou, "matching IoU threshold");
  cmd->add_option("--min-pairs", s.min_pairs, "min regression pairs");
  cmd->add_option("--topk", s.topk, "activations per export sheet");
  cmd->add_option("--score-mode", s.score_mode, "softmax | presoftmax");
  cmd->add_option("--ga-population", s.ga_population, "GA population size");
  cmd->add_option("--ga-generations", s.ga_generations, "GA generations");
}

// Config file fills anything the command line did not explicitly set.
void resolve_config(CLI::App* cmd, Settings& s) {
  if (s.config_path.empty()) return;
  std::ifstream f(s.config_path);
  if (!f) throw config_error("cannot open config file: " + s.config_path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw config_error(std::string("config file is not valid JSON: ") + e.what());
  }
  Settings from_cfg = s;
  settings_from_json(from_cfg, j);
  // every option the user passed explicitly wins over the config file
  Settings flags = s;
  s = from_cfg;
  auto keep = [&](const std::string& name, auto member) {
    if (cmd->count(name) > 0) s.*member = flags.*member;
  };
  keep("--corpus", &Settings::corpus);
  keep("--net", &Settings::network);
  keep("--weights", &Settings::weights);
  keep("--out", &Settings::out);
  keep("--layers", &Settings::layers);
  keep("--seed", &Settings::seed);
  keep("--workers", &Settings::workers);
  keep("--nms-iou", &Settings::nms_iou);
  keep("--match-iou", &Settings::match_iou);
  keep("--min-pairs", &Settings::min_pairs);
  keep("--topk", &Settings::topk);
  keep("--score-mode", &Settings::score_mode);
  keep("--ga-population", &Settings::ga_population);
  keep("--ga-generations", &Settings::ga_generations);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fscope: do convolutional filters act as part detectors?"};
  app.require_subcommand(1);

  Settings s;
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic planted-part corpus");
  add_common_options(gen, s);
  gen->add_option("--images", s.synth_images, "number of images");
  gen->add_option("--layout", s.synth_layout_path, "synthetic layout JSON");
  gen->add_flag("--emit-net", s.emit_net, "also write a matched-filter network");
  gen->add_option("--net-kernel", s.net_kernel, "conv kernel of the emitted network");
  gen->add_option("--net-stride", s.net_stride, "conv stride of the emitted network");
  gen->add_option("--net-extra-filters", s.net_extra_filters,
                  "random control filters in the emitted network");

  auto* pipe = app.add_subcommand("pipeline", "per-filter AP, GA combinations, baselines");
  add_common_options(pipe, s);

  auto* ga = app.add_subcommand("ga", "GA filter selection for one (object, part, layer)");
  add_common_options(ga, s);
  ga->add_option("--object", s.object_class, "object class");
  ga->add_option("--part", s.part_class, "part class");
  ga->add_option("--layer", s.sel_layer, "conv layer");

  auto* top = app.add_subcommand("topfilters", "TopFilters baseline for one combo");
  add_common_options(top, s);
  top->add_option("--object", s.object_class, "object class");
  top->add_option("--part", s.part_class, "part class");
  top->add_option("--layer", s.sel_layer, "conv layer");
  top->add_option("--n", s.top_n, "number of filters to select");

  auto* dis = app.add_subcommand("discrim", "filter/part ablation discriminativeness");
  add_common_options(dis, s);
  dis->add_option("--pipeline-out", s.pipeline_out, "pipeline output dir (for AP correlations)");

  auto* exp = app.add_subcommand("export-topk", "top-k activation sheets for annotation");
  add_common_options(exp, s);

  auto* rep = app.add_subcommand("report", "print the summary of a pipeline run");
  add_common_options(rep, s);
  rep->add_option("--run", s.run_dir, "pipeline output directory to summarize");

  CLI11_PARSE(app, argc, argv);

  try {
    for (auto* cmd : {gen, pipe, ga, top, dis, exp, rep})
      if (cmd->parsed()) resolve_config(cmd, s);
    if (gen->parsed()) return cmd_gen_synth(s);
    if (pipe->parsed()) return cmd_pipeline(s);
    if (ga->parsed()) return cmd_ga(s);
    if (top->parsed()) return cmd_topfilters(s);
    if (dis->parsed()) return cmd_discrim(s);
    if (exp->parsed()) return cmd_export_topk(s);
    if (rep->parsed()) return cmd_report(s);
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::domain_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
