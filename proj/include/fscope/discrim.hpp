#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscope/common.hpp"
#include "fscope/net.hpp"

namespace fscope {

enum class ScoreMode { softmax, presoftmax };

// delta = mean over images of (score - ablated score); sigma is the
// population stddev of delta over the batch the target was scored against
// (all filters of a layer, or all parts of an object class).
struct DiscrimScore {
  std::string target;
  double delta = 0;
  std::vector<double> per_image_deltas;
  double sigma = 0;
  bool is_discriminative = false;
};

// Class score of one input; presoftmax mode reads the layer feeding the
// trailing softmax.
inline double class_score(const NetworkSpec& net, const Tensor& input, int class_index,
                          ScoreMode mode = ScoreMode::softmax,
                          const AblationSpec& ablation = {}) {
  if (class_index < 0) throw config_error("negative class index");
  if (mode == ScoreMode::presoftmax && !net.layers.empty() &&
      net.layers.back().kind == LayerKind::softmax) {
    const std::string& prev = net.layers[net.layers.size() - 2].name;
    auto res = forward(net, input, ablation, {prev});
    const Tensor& t = res.captured.at(prev);
    if (class_index >= static_cast<int>(t.size()))
      throw config_error("class index out of range");
    return t.data[class_index];
  }
  auto res = forward(net, input, ablation);
  if (class_index >= static_cast<int>(res.class_scores.size()))
    throw config_error("class index out of range");
  return res.class_scores[class_index];
}

namespace detail {

inline DiscrimScore score_from_deltas(std::string target, std::vector<double> deltas) {
  DiscrimScore s;
  s.target = std::move(target);
  s.per_image_deltas = std::move(deltas);
  s.delta = mean_of(s.per_image_deltas);
  s.sigma = 0;
  s.is_discriminative = s.delta > 0;
  return s;
}

inline void apply_sigma(std::vector<DiscrimScore>& scores) {
  std::vector<double> deltas(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) deltas[i] = scores[i].delta;
  // sorted before summation: sigma is exactly invariant to filter/part order
  std::sort(deltas.begin(), deltas.end());
  double sigma = stddev_of(deltas);
  for (auto& s : scores) {
    s.sigma = sigma;
    s.is_discriminative = s.delta > 2.0 * sigma;
  }
}

}  // namespace detail

// Discriminativeness of every filter in `layer` for one object class:
// delta_j = mean_i (s_i - s_i^j) with s_i^j from zeroing filter j's map.
// sigma is taken over the layer's filters.
inline std::vector<DiscrimScore> layer_filter_discrim(const NetworkSpec& net,
                                                      const std::vector<Tensor>& images,
                                                      int class_index,
                                                      const std::string& layer,
                                                      ScoreMode mode = ScoreMode::softmax,
                                                      int workers = 1) {
  if (images.empty()) throw data_error("filter discrimination needs at least one image");
  int li = net.layer_index(layer);
  if (net.layers[li].kind != LayerKind::conv)
    throw config_error("filter discrimination target must be a conv layer: " + layer);
  const int n_filters = net.layers[li].out_channels;

  std::vector<double> base(images.size());
  parallel_for(images.size(), workers, [&](std::size_t i) {
    base[i] = class_score(net, images[i], class_index, mode);
  });

  std::vector<DiscrimScore> scores(n_filters);
  // (image, filter) grid evaluated in one flat parallel loop.
  std::vector<std::vector<double>> deltas(n_filters,
                                          std::vector<double>(images.size(), 0.0));
  parallel_for(static_cast<std::size_t>(n_filters) * images.size(), workers,
               [&](std::size_t task) {
                 int j = static_cast<int>(task / images.size());
                 std::size_t i = task % images.size();
                 AblationSpec ab;
                 ab.zero_filters.emplace_back(layer, j);
                 double s = class_score(net, images[i], class_index, mode, ab);
                 deltas[j][i] = base[i] - s;
               });
  for (int j = 0; j < n_filters; ++j)
    scores[j] = detail::score_from_deltas(layer + ":" + std::to_string(j),
                                          std::move(deltas[j]));
  detail::apply_sigma(scores);
  return scores;
}

inline DiscrimScore filter_discrim(const NetworkSpec& net, const std::vector<Tensor>& images,
                                   int class_index, const std::string& layer, int filter,
                                   ScoreMode mode = ScoreMode::softmax, int workers = 1) {
  auto all = layer_filter_discrim(net, images, class_index, layer, mode, workers);
  if (filter < 0 || filter >= static_cast<int>(all.size()))
    throw config_error("filter index out of range for layer " + layer);
  return all[filter];
}

// One image plus the pixel mask of a part (row-major h*w, nonzero = part).
struct MaskedImage {
  Tensor image;
  std::vector<std::uint8_t> mask;

  bool mask_empty() const {
    for (auto v : mask)
      if (v) return false;
    return true;
  }
};

// Discriminativeness of one part: delta via blacking out the part's pixels.
// Images with an empty mask are skipped. The standalone call reports sigma=0;
// part_discrim_table computes sigma across the class' parts.
inline DiscrimScore part_discrim(const NetworkSpec& net,
                                 const std::vector<MaskedImage>& images_with_masks,
                                 int class_index, const std::string& part_class,
                                 ScoreMode mode = ScoreMode::softmax, int workers = 1) {
  std::vector<const MaskedImage*> used;
  for (const auto& im : images_with_masks)
    if (!im.mask_empty()) used.push_back(&im);
  if (used.empty())
    throw data_error("no image contains part " + part_class);

  std::vector<double> deltas(used.size());
  parallel_for(used.size(), workers, [&](std::size_t i) {
    double s = class_score(net, used[i]->image, class_index, mode);
    AblationSpec ab;
    ab.blackout_mask = used[i]->mask;
    double sj = class_score(net, used[i]->image, class_index, mode, ab);
    deltas[i] = s - sj;
  });
  return detail::score_from_deltas(part_class, std::move(deltas));
}

// All parts of one object class scored together so sigma and the 2-sigma
// rule are computed over the class' part population.
inline std::vector<DiscrimScore> part_discrim_table(
    const NetworkSpec& net,
    const std::vector<std::pair<std::string, std::vector<MaskedImage>>>& parts,
    int class_index, ScoreMode mode = ScoreMode::softmax, int workers = 1) {
  if (parts.empty()) throw data_error("no parts to score");
  std::vector<DiscrimScore> scores;
  scores.reserve(parts.size());
  for (const auto& [part_class, images] : parts)
    scores.push_back(part_discrim(net, images, class_index, part_class, mode, workers));
  detail::apply_sigma(scores);
  return scores;
}

// Pearson product-moment correlation coefficient.
inline double ppmcc(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw config_error("ppmcc series length mismatch");
  if (xs.size() < 2) throw std::domain_error("ppmcc needs at least two points");
  double mx = mean_of(xs), my = mean_of(ys);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0)
    throw std::domain_error("ppmcc undefined for zero-variance series");
  return sxy / std::sqrt(sxx * syy);
}

struct CorrelationReport {
  std::string series_a, series_b;
  double value = 0;
  int n = 0;
  bool low_sample_warning = false;
};

// The three pairwise correlations among per-part {AP, normalized size,
// discrimination delta}, aligned by part-class key.
inline std::vector<CorrelationReport> correlate_emergence(
    const std::map<std::string, double>& part_ap,
    const std::map<std::string, double>& part_norm_size,
    const std::map<std::string, double>& part_delta) {
  if (part_ap.size() != part_norm_size.size() || part_ap.size() != part_delta.size())
    throw data_error("correlation inputs have mismatched part-class keys");
  std::vector<double> ap, size, delta;
  for (const auto& [k, v] : part_ap) {
    auto is = part_norm_size.find(k);
    auto id = part_delta.find(k);
    if (is == part_norm_size.end() || id == part_delta.end())
      throw data_error("correlation inputs missing part class: " + k);
    ap.push_back(v);
    size.push_back(is->second);
    delta.push_back(id->second);
  }
  int n = static_cast<int>(ap.size());
  bool warn = n < 3;
  return {
      {"ap", "norm_size", ppmcc(ap, size), n, warn},
      {"delta", "norm_size", ppmcc(delta, size), n, warn},
      {"delta", "ap", ppmcc(delta, ap), n, warn},
  };
}

inline void write_discrim_csv(const std::string& path,
                              const std::vector<DiscrimScore>& scores) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("cannot open discrimination csv for writing: " + path);
  f << "target,delta,sigma,is_discriminative,n_images\n";
  for (const auto& s : scores)
    f << s.target << ',' << format_double(s.delta) << ',' << format_double(s.sigma) << ','
      << (s.is_discriminative ? 1 : 0) << ',' << s.per_image_deltas.size() << '\n';
}

inline nlohmann::json correlations_to_json(const std::vector<CorrelationReport>& reps) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reps)
    j.push_back({{"series_a", r.series_a},
                 {"series_b", r.series_b},
                 {"ppmcc", r.value},
                 {"n", r.n},
                 {"low_sample_warning", r.low_sample_warning}});
  return j;
}

}  // namespace fscope
