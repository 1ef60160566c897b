#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace fscope {

// Dense CHW float32 tensor, row-major within each channel.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int c, int h, int w)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, 0.0f) {}

  std::size_t size() const { return data.size(); }

  std::size_t index(int c, int y, int x) const {
    assert(c >= 0 && c < channels && y >= 0 && y < height && x >= 0 && x < width);
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }

  float& at(int c, int y, int x) { return data[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data[index(c, y, x)]; }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

}  // namespace fscope
