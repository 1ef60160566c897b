#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscope/geometry.hpp"
#include "fscope/stimulus.hpp"

namespace fscope {

// Part instance ground truth, stored center + extent.
struct PartBox {
  int image_id = 0;
  std::string part_class;
  double cx = 0, cy = 0, w = 0, h = 0;

  Box box() const { return box_from_center(cx, cy, w, h); }
};

inline PartBox part_box_from_corner(const Box& b, int image_id = 0,
                                    const std::string& part_class = {}) {
  return {image_id, part_class, b.center_x(), b.center_y(), b.w, b.h};
}

inline constexpr int kRegressionDim = 12;

// gamma(activation) = (c_x, c_y, 3x3 neighborhood, 1). The trailing constant
// lets the linear form carry absolute widths/heights.
using RegressionFeatures = std::array<double, kRegressionDim>;

struct RegressionTargets {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

struct TrainingPair {
  RegressionFeatures features;
  RegressionTargets targets;
  double weight = 0;  // the activation value a_{c,r}
};

inline RegressionFeatures regression_features(const Activation& act,
                                              const ReceptiveField& rf) {
  RegressionFeatures f;
  f[0] = rf.center_x;
  f[1] = rf.center_y;
  for (int i = 0; i < 9; ++i) f[2 + i] = act.neighborhood[i];
  f[11] = 1.0;
  return f;
}

// Pairs activations of one image with the part instances whose box contains
// the activation's RF center; an activation inside several boxes pairs with
// the smallest-area one. Targets are (G_x - c_x, G_y - c_y, G_w, G_h).
inline std::vector<TrainingPair> collect_pairs(const std::vector<Activation>& acts,
                                               const NetworkSpec& net,
                                               const std::string& layer,
                                               const std::vector<PartBox>& gt_parts) {
  std::vector<TrainingPair> pairs;
  for (const auto& act : acts) {
    ReceptiveField rf = receptive_field(net, layer, act.c, act.r);
    const PartBox* chosen = nullptr;
    for (const auto& g : gt_parts) {
      if (!g.box().contains(rf.center_x, rf.center_y)) continue;
      if (!chosen || g.w * g.h < chosen->w * chosen->h) chosen = &g;
    }
    if (!chosen) continue;
    TrainingPair p;
    p.features = regression_features(act, rf);
    p.targets = {chosen->cx - rf.center_x, chosen->cy - rf.center_y, chosen->w, chosen->h};
    p.weight = act.value;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// Per-(filter, part-class) 4-target linear model.
struct PartRegressor {
  std::string part_class;
  std::string layer;
  int filter = -1;
  std::array<double, kRegressionDim> wx{}, wy{}, ww{}, wh{};
  std::size_t pairs = 0;

  double predict(const std::array<double, kRegressionDim>& w,
                 const RegressionFeatures& f) const {
    double s = 0;
    for (int i = 0; i < kRegressionDim; ++i) s += w[i] * f[i];
    return s;
  }
};

namespace detail {

// Cholesky solve of the SPD system A x = b (A is n x n, row-major).
inline std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b,
                                          int n) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (int k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (s <= 0) throw numeric_error("regression normal matrix not positive definite");
        a[i * n + i] = std::sqrt(s);
      } else {
        a[i * n + j] = s / a[j * n + j];
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (int k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
    b[i] = s / a[i * n + i];
  }
  return b;
}

}  // namespace detail

// Weighted least squares, minimizing per target
//   sum_k a_k (t_k - w . gamma_k)^2 + lambda * mean(a) * |w_{0..10}|^2.
// The ridge is scaled by the mean pair weight (so rescaling all weights
// leaves the solution unchanged) and skips the constant-bias coordinate
// (so constant targets are absorbed exactly); it still guards
// rank-deficient neighborhoods.
inline PartRegressor fit(const std::vector<TrainingPair>& pairs, std::size_t min_pairs = 20,
                         double ridge = 1e-6) {
  if (pairs.size() < min_pairs)
    throw insufficient_data("regression needs at least " + std::to_string(min_pairs) +
                                " pairs, got " + std::to_string(pairs.size()),
                            pairs.size());
  const int n = kRegressionDim;
  std::vector<double> ata(n * n, 0.0);
  std::array<std::vector<double>, 4> atb;
  for (auto& v : atb) v.assign(n, 0.0);

  double weight_sum = 0;
  for (const auto& p : pairs) {
    const double a = p.weight;
    weight_sum += a;
    const double t[4] = {p.targets.tx, p.targets.ty, p.targets.tw, p.targets.th};
    for (int i = 0; i < n; ++i) {
      const double fi = a * p.features[i];
      for (int j = 0; j <= i; ++j) ata[i * n + j] += fi * p.features[j];
      for (int m = 0; m < 4; ++m) atb[m][i] += fi * t[m];
    }
  }
  const double lambda = ridge * weight_sum / static_cast<double>(pairs.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) ata[i * n + j] = ata[j * n + i];
    if (i != n - 1) ata[i * n + i] += lambda;
  }

  PartRegressor reg;
  reg.pairs = pairs.size();
  std::array<std::array<double, kRegressionDim>*, 4> ws = {&reg.wx, &reg.wy, &reg.ww,
                                                           &reg.wh};
  for (int m = 0; m < 4; ++m) {
    auto sol = detail::cholesky_solve(ata, atb[m], n);
    std::copy(sol.begin(), sol.end(), ws[m]->begin());
  }
  return reg;
}

// The full weighted objective (including ridge), for the optimality checks.
inline double wls_objective(const std::vector<TrainingPair>& pairs,
                            const std::array<double, kRegressionDim>& w, int target,
                            double ridge = 1e-6) {
  double obj = 0, weight_sum = 0;
  for (const auto& p : pairs) {
    weight_sum += p.weight;
    const double t[4] = {p.targets.tx, p.targets.ty, p.targets.tw, p.targets.th};
    double pred = 0;
    for (int i = 0; i < kRegressionDim; ++i) pred += w[i] * p.features[i];
    double r = t[target] - pred;
    obj += p.weight * r * r;
  }
  const double lambda =
      pairs.empty() ? 0.0 : ridge * weight_sum / static_cast<double>(pairs.size());
  for (int i = 0; i + 1 < kRegressionDim; ++i) obj += lambda * w[i] * w[i];
  return obj;
}

// Applies the 4D transform: box center = RF center + (d_x, d_y),
// extent = (d_w, d_h) clamped at one pixel, clipped to the image.
inline StimulusDetection apply(const PartRegressor& reg, const Activation& act,
                               const ReceptiveField& rf, const NetworkSpec& net,
                               int image_id = 0) {
  if (!reg.layer.empty() && !act.layer.empty() && reg.layer != act.layer)
    throw config_error("regressor for layer " + reg.layer +
                       " applied to activation from layer " + act.layer);
  RegressionFeatures f = regression_features(act, rf);
  const double W = net.input_shape.w, H = net.input_shape.h;
  double cx = std::clamp(rf.center_x + reg.predict(reg.wx, f), 0.0, W - 1);
  double cy = std::clamp(rf.center_y + reg.predict(reg.wy, f), 0.0, H - 1);
  double w = std::max(1.0, reg.predict(reg.ww, f));
  double h = std::max(1.0, reg.predict(reg.wh, f));

  Box b = box_from_center(cx, cy, w, h).intersect(Box{0, 0, W, H});
  if (b.w < 1) {
    b.x = std::clamp(b.x, 0.0, W - 1);
    b.w = 1;
  }
  if (b.h < 1) {
    b.y = std::clamp(b.y, 0.0, H - 1);
    b.h = 1;
  }

  StimulusDetection d;
  d.image_id = image_id;
  d.layer = act.layer;
  d.filter = act.filter;
  d.box = b;
  d.score = act.value;
  d.regressed = true;
  return d;
}

// ---- regressor bank JSON ----------------------------------------------

inline nlohmann::json regressor_to_json(const PartRegressor& r) {
  return {{"part_class", r.part_class}, {"layer", r.layer},   {"filter", r.filter},
          {"w_x", r.wx},                {"w_y", r.wy},         {"w_w", r.ww},
          {"w_h", r.wh},                {"K", r.pairs}};
}

inline PartRegressor regressor_from_json(const nlohmann::json& j) {
  PartRegressor r;
  try {
    r.part_class = j.at("part_class").get<std::string>();
    r.layer = j.at("layer").get<std::string>();
    r.filter = j.at("filter").get<int>();
    r.wx = j.at("w_x").get<std::array<double, kRegressionDim>>();
    r.wy = j.at("w_y").get<std::array<double, kRegressionDim>>();
    r.ww = j.at("w_w").get<std::array<double, kRegressionDim>>();
    r.wh = j.at("w_h").get<std::array<double, kRegressionDim>>();
    r.pairs = j.at("K").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed regressor entry: ") + e.what());
  }
  return r;
}

inline void save_regressor_bank(const std::string& path,
                                const std::vector<PartRegressor>& bank) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : bank) j.push_back(regressor_to_json(r));
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("cannot open regressor bank for writing: " + path);
  f << j.dump(2) << "\n";
}

inline std::vector<PartRegressor> load_regressor_bank(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("cannot open regressor bank: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("regressor bank is not valid JSON: ") + e.what());
  }
  std::vector<PartRegressor> bank;
  for (const auto& e : j) bank.push_back(regressor_from_json(e));
  return bank;
}

}  // namespace fscope
