#pragma once

#include <algorithm>
#include <string>

#include "fscope/common.hpp"
#include "fscope/net.hpp"

namespace fscope {

// Input-image region that can influence one feature-map activation.
// center is the midpoint of the unclipped region, clamped into image bounds
// so downstream pairing always works with in-image coordinates; size_w/size_h
// are the unclipped extent (square for pure conv/pool chains).
struct ReceptiveField {
  double center_x = 0, center_y = 0;
  double size_w = 0, size_h = 0;
  Box clipped_box;
};

// Back-projects feature-map coordinate (c, r) = (column, row) of `layer`
// through the stack: size_in = (size_out - 1) * stride + kernel,
// offset_in = offset_out * stride - pad; elementwise layers are identity.
// center and size come from the pure composition rule; clipped_box clamps
// the walked interval to every intermediate extent, so positions that fall
// into a layer's padding contribute no input pixels and the box is the
// exact support.
inline ReceptiveField receptive_field(const NetworkSpec& net, const std::string& layer,
                                      int c, int r) {
  auto shapes = net.layer_shapes();
  int li = net.layer_index(layer);
  const Shape& s = shapes[li];
  if (c < 0 || r < 0 || c >= s.w || r >= s.h)
    throw config_error("feature-map coordinate out of bounds for layer " + layer);

  double ox = c, oy = r;
  double sx = 1, sy = 1;
  // clamped half-open interval [lo, hi) of live positions
  double lx = c, hx = c + 1, ly = r, hy = r + 1;
  for (int i = li; i >= 0; --i) {
    const LayerSpec& l = net.layers[i];
    Shape in = i == 0 ? net.input_shape : shapes[i - 1];
    switch (l.kind) {
      case LayerKind::conv:
      case LayerKind::maxpool: {
        int pad = l.kind == LayerKind::conv ? l.pad : 0;
        sx = (sx - 1) * l.stride + l.kernel;
        sy = (sy - 1) * l.stride + l.kernel;
        ox = ox * l.stride - pad;
        oy = oy * l.stride - pad;
        if (lx < hx) {
          lx = lx * l.stride - pad;
          hx = (hx - 1) * l.stride - pad + l.kernel;
          ly = ly * l.stride - pad;
          hy = (hy - 1) * l.stride - pad + l.kernel;
        }
        break;
      }
      case LayerKind::fc:
      case LayerKind::softmax:
        // Fully connected: the whole input plane is support.
        ox = 0;
        oy = 0;
        sx = in.w;
        sy = in.h;
        lx = 0;
        hx = in.w;
        ly = 0;
        hy = in.h;
        break;
      case LayerKind::relu:
      case LayerKind::lrn:
        break;  // spatially elementwise
    }
    lx = std::max(lx, 0.0);
    ly = std::max(ly, 0.0);
    hx = std::min(hx, static_cast<double>(in.w));
    hy = std::min(hy, static_cast<double>(in.h));
  }

  ReceptiveField rf;
  rf.size_w = sx;
  rf.size_h = sy;
  const double W = net.input_shape.w, H = net.input_shape.h;
  rf.center_x = std::clamp(ox + sx / 2.0, 0.0, W - 1);
  rf.center_y = std::clamp(oy + sy / 2.0, 0.0, H - 1);
  rf.clipped_box = Box{lx, ly, std::max(0.0, hx - lx), std::max(0.0, hy - ly)};
  return rf;
}

// Product of strides from the input up to and including `layer`: how far the
// RF moves in input pixels when (c, r) moves by one.
inline int cumulative_stride(const NetworkSpec& net, const std::string& layer) {
  int li = net.layer_index(layer);
  int s = 1;
  for (int i = 0; i <= li; ++i) {
    const LayerSpec& l = net.layers[i];
    if (l.kind == LayerKind::conv || l.kind == LayerKind::maxpool) s *= l.stride;
  }
  return s;
}

}  // namespace fscope
