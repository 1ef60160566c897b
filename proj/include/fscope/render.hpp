#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "fscope/tensor.hpp"

namespace fscope {

// Shades the image and lifts the shading proportionally to the activation:
// strongly activated pixels show through, the rest stay dark. `map` is one
// feature-map channel, bilinearly upsampled to the image size.
inline Tensor render_activation_overlay(const Tensor& img, const Tensor& map, int channel,
                                        float shade_floor = 0.25f) {
  Tensor out(img.channels, img.height, img.width);
  float peak = 0.0f;
  for (int r = 0; r < map.height; ++r)
    for (int c = 0; c < map.width; ++c) peak = std::max(peak, map.at(channel, r, c));

  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float a = 0.0f;
      if (peak > 0.0f) {
        double mx = (x + 0.5) * map.width / img.width - 0.5;
        double my = (y + 0.5) * map.height / img.height - 0.5;
        mx = std::clamp(mx, 0.0, map.width - 1.0);
        my = std::clamp(my, 0.0, map.height - 1.0);
        int x0 = static_cast<int>(std::floor(mx));
        int y0 = static_cast<int>(std::floor(my));
        int x1 = std::min(x0 + 1, map.width - 1);
        int y1 = std::min(y0 + 1, map.height - 1);
        double fx = mx - x0, fy = my - y0;
        double v = map.at(channel, y0, x0) * (1 - fx) * (1 - fy) +
                   map.at(channel, y0, x1) * fx * (1 - fy) +
                   map.at(channel, y1, x0) * (1 - fx) * fy +
                   map.at(channel, y1, x1) * fx * fy;
        a = static_cast<float>(std::clamp(v / peak, 0.0, 1.0));
      }
      float gain = shade_floor + (1.0f - shade_floor) * a;
      for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = img.at(c, y, x) * gain;
    }
  return out;
}

// Square outline marking the strongest activation.
inline void draw_square(Tensor& img, int cx, int cy, int half, float r, float g, float b) {
  auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.at(0, y, x) = r;
    if (img.channels > 1) img.at(1, y, x) = g;
    if (img.channels > 2) img.at(2, y, x) = b;
  };
  for (int d = -half; d <= half; ++d) {
    put(cx + d, cy - half);
    put(cx + d, cy + half);
    put(cx - half, cy + d);
    put(cx + half, cy + d);
  }
}

// Horizontal concatenation with a light separator column between panels.
inline Tensor hconcat_panels(const std::vector<Tensor>& panels, int gap = 2) {
  if (panels.empty()) return {};
  int h = panels.front().height, c = panels.front().channels;
  int w = 0;
  for (const auto& p : panels) w += p.width;
  w += gap * (static_cast<int>(panels.size()) - 1);
  Tensor sheet(c, h, w);
  for (auto& v : sheet.data) v = 1.0f;
  int xoff = 0;
  for (const auto& p : panels) {
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < p.width; ++x) sheet.at(ch, y, xoff + x) = p.at(ch, y, x);
    xoff += p.width + gap;
  }
  return sheet;
}

}  // namespace fscope
