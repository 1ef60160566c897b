#pragma once

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include "fscope/geometry.hpp"
#include "fscope/net.hpp"
#include "fscope/tensor.hpp"

namespace fscope {

// One feature-map local maximum. (c, r) is (column, row); neighborhood holds
// the 3x3 values around it in column-major order (a[c-1][r-1], a[c-1][r], ...,
// a[c+1][r+1]), zero-padded at map borders.
struct Activation {
  std::string layer;
  int filter = -1;
  int c = 0, r = 0;
  float value = 0;
  std::array<float, 9> neighborhood{};
};

struct StimulusDetection {
  int image_id = 0;
  std::string layer;
  int filter = -1;
  Box box;
  float score = 0;
  bool regressed = false;
};

// Strict local maxima of one feature-map channel: positions greater than all
// 8 in-bounds neighbors and > min_value. Plateaus yield nothing. Sorted by
// value descending; ties in row-major position order.
inline std::vector<Activation> local_maxima(const Tensor& map, int channel,
                                            float min_value = 0.0f,
                                            const std::string& layer_name = {},
                                            int filter = -1) {
  std::vector<Activation> out;
  const int H = map.height, W = map.width;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      float v = map.at(channel, r, c);
      if (!(v > min_value)) continue;
      bool is_max = true;
      for (int dr = -1; dr <= 1 && is_max; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc == 0) continue;
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
          if (!(v > map.at(channel, rr, cc))) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      Activation a;
      a.layer = layer_name;
      a.filter = filter >= 0 ? filter : channel;
      a.c = c;
      a.r = r;
      a.value = v;
      int k = 0;
      for (int dc = -1; dc <= 1; ++dc)
        for (int dr = -1; dr <= 1; ++dr, ++k) {
          int cc = c + dc, rr = r + dr;
          a.neighborhood[k] = (rr < 0 || rr >= H || cc < 0 || cc >= W)
                                  ? 0.0f
                                  : map.at(channel, rr, cc);
        }
      out.push_back(std::move(a));
    }
  }
  std::stable_sort(out.begin(), out.end(), [W](const Activation& a, const Activation& b) {
    if (a.value != b.value) return a.value > b.value;
    return a.r * W + a.c < b.r * W + b.c;
  });
  return out;
}

// Detection from the activation's clipped receptive field; no regression.
inline StimulusDetection raw_detection(const Activation& act, const NetworkSpec& net,
                                       const std::string& layer, int image_id = 0) {
  ReceptiveField rf = receptive_field(net, layer, act.c, act.r);
  StimulusDetection d;
  d.image_id = image_id;
  d.layer = layer;
  d.filter = act.filter;
  d.box = rf.clipped_box;
  if (d.box.w < 1 || d.box.h < 1) {
    // RF entirely inside padding; fall back to one pixel at the clamped center.
    d.box = {std::clamp(rf.center_x, 0.0, net.input_shape.w - 1.0),
             std::clamp(rf.center_y, 0.0, net.input_shape.h - 1.0), 1, 1};
  }
  d.score = act.value;
  d.regressed = false;
  return d;
}

// Greedy NMS by descending score; a detection is dropped when its IoU with an
// already-kept detection of the same image exceeds the threshold. Output is
// in kept (score) order; equal scores keep input order.
inline std::vector<StimulusDetection> nms(std::vector<StimulusDetection> dets,
                                          double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw config_error("nms threshold must be in (0, 1)");
  std::stable_sort(dets.begin(), dets.end(),
                   [](const StimulusDetection& a, const StimulusDetection& b) {
                     return a.score > b.score;
                   });
  std::vector<StimulusDetection> kept;
  kept.reserve(dets.size());
  for (auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.image_id != d.image_id) continue;
      if (iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

inline void write_detections_csv(const std::string& path,
                                 const std::vector<StimulusDetection>& dets) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("cannot open detections csv for writing: " + path);
  f << "image_id,layer,filter,x,y,w,h,score,regressed\n";
  for (const auto& d : dets)
    f << d.image_id << ',' << d.layer << ',' << d.filter << ',' << format_double(d.box.x)
      << ',' << format_double(d.box.y) << ',' << format_double(d.box.w) << ','
      << format_double(d.box.h) << ',' << format_double(d.score) << ','
      << (d.regressed ? 1 : 0) << '\n';
}

}  // namespace fscope
