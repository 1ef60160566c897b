#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fscope/common.hpp"
#include "fscope/tensor.hpp"

namespace fscope {

enum class LayerKind { conv, relu, maxpool, lrn, fc, softmax };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::lrn: return "lrn";
    case LayerKind::fc: return "fc";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;

  // conv: out_channels, kernel, stride, pad; maxpool: kernel, stride.
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  // lrn (across-channel, AlexNet form)
  int lrn_size = 5;
  double lrn_alpha = 1e-4;
  double lrn_beta = 0.75;
  double lrn_k = 2.0;

  // fc
  int out_units = 0;

  // conv: out*in*k*k weights + out biases; fc: out*flat_in weights + out biases.
  std::vector<float> weights;
  std::vector<float> bias;

  bool has_params() const {
    return kind == LayerKind::conv || kind == LayerKind::fc;
  }
};

struct Shape {
  int c = 0, h = 0, w = 0;
  std::size_t flat() const { return static_cast<std::size_t>(c) * h * w; }
  bool operator==(const Shape&) const = default;
};

struct NetworkSpec {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::vector<std::string> class_names;

  int layer_index(const std::string& name) const {
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].name == name) return static_cast<int>(i);
    throw config_error("unknown layer name: " + name);
  }

  bool has_layer(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return true;
    return false;
  }

  // Shape after each layer; validates the structural invariants and throws
  // config_error naming the offending layer.
  std::vector<Shape> layer_shapes() const;

  // Expected (weights, bias) element counts per layer.
  std::pair<std::size_t, std::size_t> param_counts(std::size_t layer_idx) const;
};

inline std::vector<Shape> NetworkSpec::layer_shapes() const {
  if (input_shape.c <= 0 || input_shape.h <= 0 || input_shape.w <= 0)
    throw config_error("network input shape must be positive");
  std::set<std::string> names;
  std::vector<Shape> out;
  Shape cur = input_shape;
  for (const auto& l : layers) {
    if (l.name.empty() || !names.insert(l.name).second)
      throw config_error("layer names must be unique and non-empty: '" + l.name + "'");
    switch (l.kind) {
      case LayerKind::conv: {
        if (l.kernel < 1 || l.stride < 1 || l.pad < 0 || l.out_channels < 1)
          throw config_error("bad conv geometry in layer " + l.name);
        int oh = (cur.h + 2 * l.pad - l.kernel) / l.stride + 1;
        int ow = (cur.w + 2 * l.pad - l.kernel) / l.stride + 1;
        if (cur.h + 2 * l.pad < l.kernel || cur.w + 2 * l.pad < l.kernel || oh < 1 || ow < 1)
          throw config_error("conv kernel exceeds padded input in layer " + l.name);
        cur = {l.out_channels, oh, ow};
        break;
      }
      case LayerKind::maxpool: {
        if (l.kernel < 1 || l.stride < 1)
          throw config_error("bad pool geometry in layer " + l.name);
        if (cur.h < l.kernel || cur.w < l.kernel)
          throw config_error("pool kernel exceeds input in layer " + l.name);
        cur = {cur.c, (cur.h - l.kernel) / l.stride + 1, (cur.w - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::lrn:
        if (l.lrn_size < 1) throw config_error("bad lrn size in layer " + l.name);
        break;
      case LayerKind::relu:
        break;
      case LayerKind::fc:
        if (l.out_units < 1) throw config_error("bad fc out_units in layer " + l.name);
        cur = {l.out_units, 1, 1};
        break;
      case LayerKind::softmax:
        break;
    }
    out.push_back(cur);
  }
  if (!layers.empty() && layers.back().kind == LayerKind::softmax && !class_names.empty() &&
      out.back().flat() != class_names.size())
    throw config_error("softmax output size does not match class_names count");
  return out;
}

inline std::pair<std::size_t, std::size_t> NetworkSpec::param_counts(std::size_t layer_idx) const {
  auto shapes = layer_shapes();
  const LayerSpec& l = layers.at(layer_idx);
  Shape in = layer_idx == 0 ? input_shape : shapes[layer_idx - 1];
  if (l.kind == LayerKind::conv)
    return {static_cast<std::size_t>(l.out_channels) * in.c * l.kernel * l.kernel,
            static_cast<std::size_t>(l.out_channels)};
  if (l.kind == LayerKind::fc)
    return {static_cast<std::size_t>(l.out_units) * in.flat(),
            static_cast<std::size_t>(l.out_units)};
  return {0, 0};
}

// Zero-ablation of conv filters plus optional input-pixel blackout.
struct AblationSpec {
  std::vector<std::pair<std::string, int>> zero_filters;
  // Row-major h*w over the input plane; nonzero entries are set to 0 across
  // all input channels.
  std::optional<std::vector<std::uint8_t>> blackout_mask;

  bool empty() const { return zero_filters.empty() && !blackout_mask; }
};

struct ForwardResult {
  std::vector<float> class_scores;
  std::map<std::string, Tensor> captured;
};

namespace detail {

inline void check_finite(const Tensor& t, const std::string& layer_name) {
  for (float v : t.data)
    if (!std::isfinite(v))
      throw numeric_error("non-finite value produced by layer " + layer_name);
}

inline Tensor conv_forward(const Tensor& in, const LayerSpec& l) {
  int oh = (in.height + 2 * l.pad - l.kernel) / l.stride + 1;
  int ow = (in.width + 2 * l.pad - l.kernel) / l.stride + 1;
  Tensor out(l.out_channels, oh, ow);
  const int k = l.kernel;
  const std::size_t per_filter = static_cast<std::size_t>(in.channels) * k * k;
  for (int o = 0; o < l.out_channels; ++o) {
    const float* wbase = l.weights.data() + o * per_filter;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double acc = l.bias[o];
        int iy0 = y * l.stride - l.pad;
        int ix0 = x * l.stride - l.pad;
        for (int ic = 0; ic < in.channels; ++ic) {
          const float* wch = wbase + static_cast<std::size_t>(ic) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= in.height) continue;
            const float* row = in.data.data() + (static_cast<std::size_t>(ic) * in.height + iy) * in.width;
            const float* wrow = wch + ky * k;
            int kx_lo = std::max(0, -ix0);
            int kx_hi = std::min(k, in.width - ix0);
            for (int kx = kx_lo; kx < kx_hi; ++kx)
              acc += static_cast<double>(wrow[kx]) * row[ix0 + kx];
          }
        }
        out.at(o, y, x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

inline Tensor maxpool_forward(const Tensor& in, const LayerSpec& l) {
  int oh = (in.height - l.kernel) / l.stride + 1;
  int ow = (in.width - l.kernel) / l.stride + 1;
  Tensor out(in.channels, oh, ow);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        float m = in.at(c, y * l.stride, x * l.stride);
        for (int ky = 0; ky < l.kernel; ++ky)
          for (int kx = 0; kx < l.kernel; ++kx)
            m = std::max(m, in.at(c, y * l.stride + ky, x * l.stride + kx));
        out.at(c, y, x) = m;
      }
  return out;
}

inline Tensor lrn_forward(const Tensor& in, const LayerSpec& l) {
  Tensor out(in.channels, in.height, in.width);
  int half = l.lrn_size / 2;
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < in.channels; ++c) {
        double sum = 0;
        int lo = std::max(0, c - half);
        int hi = std::min(in.channels - 1, c + half);
        for (int cc = lo; cc <= hi; ++cc) {
          double v = in.at(cc, y, x);
          sum += v * v;
        }
        double denom = std::pow(l.lrn_k + l.lrn_alpha * sum, l.lrn_beta);
        out.at(c, y, x) = static_cast<float>(in.at(c, y, x) / denom);
      }
  return out;
}

inline Tensor fc_forward(const Tensor& in, const LayerSpec& l) {
  Tensor out(l.out_units, 1, 1);
  const std::size_t n = in.size();
  for (int o = 0; o < l.out_units; ++o) {
    double acc = l.bias[o];
    const float* w = l.weights.data() + static_cast<std::size_t>(o) * n;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(w[i]) * in.data[i];
    out.data[o] = static_cast<float>(acc);
  }
  return out;
}

inline Tensor softmax_forward(const Tensor& in) {
  Tensor out(in.channels, in.height, in.width);
  double m = in.data[0];
  for (float v : in.data) m = std::max(m, static_cast<double>(v));
  double sum = 0;
  std::vector<double> e(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    e[i] = std::exp(static_cast<double>(in.data[i]) - m);
    sum += e[i];
  }
  for (std::size_t i = 0; i < in.size(); ++i)
    out.data[i] = static_cast<float>(e[i] / sum);
  return out;
}

}  // namespace detail

// Feed-forward pass. Captured entries for conv layers are post-ReLU feature
// maps; other requested layers capture their raw output. Pure function of
// (net, input, ablation): safe to call concurrently.
inline ForwardResult forward(const NetworkSpec& net, const Tensor& input,
                             const AblationSpec& ablation = {},
                             const std::set<std::string>& capture = {}) {
  auto shapes = net.layer_shapes();
  if (input.channels != net.input_shape.c || input.height != net.input_shape.h ||
      input.width != net.input_shape.w)
    throw config_error("input tensor shape does not match network input shape");

  for (const auto& name : capture)
    if (!net.has_layer(name)) throw config_error("capture layer not in network: " + name);

  // filters to zero per layer index
  std::map<int, std::vector<int>> zeroed;
  for (const auto& [lname, j] : ablation.zero_filters) {
    int li = net.layer_index(lname);
    const LayerSpec& l = net.layers[li];
    if (l.kind != LayerKind::conv)
      throw config_error("zero_filters target must be a conv layer: " + lname);
    if (j < 0 || j >= l.out_channels)
      throw config_error("filter index out of range for layer " + lname);
    zeroed[li].push_back(j);
  }

  Tensor cur = input;
  if (ablation.blackout_mask) {
    const auto& mask = *ablation.blackout_mask;
    if (mask.size() != static_cast<std::size_t>(input.height) * input.width)
      throw config_error("blackout mask shape does not match input spatial shape");
    for (int c = 0; c < cur.channels; ++c)
      for (int y = 0; y < cur.height; ++y)
        for (int x = 0; x < cur.width; ++x)
          if (mask[static_cast<std::size_t>(y) * cur.width + x]) cur.at(c, y, x) = 0.0f;
  }

  ForwardResult result;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    switch (l.kind) {
      case LayerKind::conv: {
        auto [nw, nb] = net.param_counts(i);
        if (l.weights.size() != nw || l.bias.size() != nb)
          throw config_error("layer " + l.name + " is missing parameters");
        cur = detail::conv_forward(cur, l);
        break;
      }
      case LayerKind::relu:
        for (float& v : cur.data) v = std::max(0.0f, v);
        break;
      case LayerKind::maxpool:
        cur = detail::maxpool_forward(cur, l);
        break;
      case LayerKind::lrn:
        cur = detail::lrn_forward(cur, l);
        break;
      case LayerKind::fc: {
        auto [nw, nb] = net.param_counts(i);
        if (l.weights.size() != nw || l.bias.size() != nb)
          throw config_error("layer " + l.name + " is missing parameters");
        cur = detail::fc_forward(cur, l);
        break;
      }
      case LayerKind::softmax:
        cur = detail::softmax_forward(cur);
        break;
    }
    if (auto it = zeroed.find(static_cast<int>(i)); it != zeroed.end())
      for (int j : it->second)
        std::fill_n(cur.data.begin() + static_cast<std::size_t>(j) * cur.height * cur.width,
                    static_cast<std::size_t>(cur.height) * cur.width, 0.0f);
    detail::check_finite(cur, l.name);
    if (capture.count(l.name)) {
      Tensor snap = cur;
      if (l.kind == LayerKind::conv)
        for (float& v : snap.data) v = std::max(0.0f, v);
      result.captured.emplace(l.name, std::move(snap));
    }
  }
  result.class_scores.assign(cur.data.begin(), cur.data.end());
  return result;
}

// Deterministic init: weights uniform in [-s, s] with s = 1/sqrt(fan_in),
// biases zero.
inline NetworkSpec random_init(const NetworkSpec& net, std::uint64_t seed) {
  NetworkSpec out = net;
  auto shapes = out.layer_shapes();
  std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    LayerSpec& l = out.layers[i];
    if (!l.has_params()) continue;
    auto [nw, nb] = out.param_counts(i);
    Shape in = i == 0 ? out.input_shape : shapes[i - 1];
    std::size_t fan_in = l.kind == LayerKind::conv
                             ? static_cast<std::size_t>(in.c) * l.kernel * l.kernel
                             : in.flat();
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    l.weights.resize(nw);
    l.bias.assign(nb, 0.0f);
    for (auto& w : l.weights)
      w = static_cast<float>((2.0 * unit_uniform(rng) - 1.0) * s);
  }
  return out;
}

// ---- weight file I/O --------------------------------------------------
//
// Format: 4-byte magic "FSW1", then for every layer in spec order a 32-bit
// little-endian element count followed by that many 32-bit little-endian
// IEEE-754 floats (weights first, then biases). Layers without parameters
// write a zero count.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw data_error("weight file truncated");
  auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])); };
  std::uint32_t v = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
  pos += 4;
  return v;
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

inline float get_f32(const std::string& buf, std::size_t& pos) {
  std::uint32_t v = get_u32(buf, pos);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace detail

inline void save_weights(const NetworkSpec& net, const std::string& path) {
  std::string buf = "FSW1";
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    auto [nw, nb] = net.param_counts(i);
    if (l.has_params() && (l.weights.size() != nw || l.bias.size() != nb))
      throw config_error("layer " + l.name + " is not fully parameterized");
    detail::put_u32(buf, static_cast<std::uint32_t>(nw + nb));
    for (float w : l.weights) detail::put_f32(buf, w);
    for (float b : l.bias) detail::put_f32(buf, b);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data_error("cannot open weight file for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw data_error("failed writing weight file: " + path);
}

inline NetworkSpec load_weights(const NetworkSpec& net, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open weight file: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || buf.compare(0, 4, "FSW1") != 0)
    throw data_error("bad weight file magic (expected FSW1): " + path);

  NetworkSpec out = net;
  std::size_t pos = 4;
  for (std::size_t i = 0; i < out.layers.size(); ++i) {
    LayerSpec& l = out.layers[i];
    auto [nw, nb] = out.param_counts(i);
    std::uint32_t count = detail::get_u32(buf, pos);
    if (count != nw + nb)
      throw data_error("weight count mismatch in layer " + l.name + ": expected " +
                       std::to_string(nw + nb) + ", file has " + std::to_string(count));
    if (pos + 4ull * count > buf.size()) throw data_error("weight file truncated");
    l.weights.resize(nw);
    l.bias.resize(nb);
    for (std::size_t k = 0; k < nw; ++k) l.weights[k] = detail::get_f32(buf, pos);
    for (std::size_t k = 0; k < nb; ++k) l.bias[k] = detail::get_f32(buf, pos);
  }
  if (pos != buf.size()) throw data_error("trailing bytes in weight file: " + path);
  return out;
}

// ---- network spec JSON ------------------------------------------------
//
// Schema (see docs/formats.md):
//   {"input_shape":[c,h,w], "class_names":[...], "layers":[{...}]}

inline NetworkSpec network_from_json(const nlohmann::json& j) {
  NetworkSpec net;
  try {
    auto shape = j.at("input_shape");
    net.input_shape = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
    if (j.contains("class_names"))
      net.class_names = j.at("class_names").get<std::vector<std::string>>();
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.name = lj.at("name").get<std::string>();
      std::string kind = lj.at("kind").get<std::string>();
      if (kind == "conv") {
        l.kind = LayerKind::conv;
        l.out_channels = lj.at("out_channels").get<int>();
        l.kernel = lj.at("kernel").get<int>();
        l.stride = lj.value("stride", 1);
        l.pad = lj.value("pad", 0);
      } else if (kind == "relu") {
        l.kind = LayerKind::relu;
      } else if (kind == "maxpool") {
        l.kind = LayerKind::maxpool;
        l.kernel = lj.at("kernel").get<int>();
        l.stride = lj.value("stride", l.kernel);
      } else if (kind == "lrn") {
        l.kind = LayerKind::lrn;
        l.lrn_size = lj.value("size", 5);
        l.lrn_alpha = lj.value("alpha", 1e-4);
        l.lrn_beta = lj.value("beta", 0.75);
        l.lrn_k = lj.value("k", 2.0);
      } else if (kind == "fc") {
        l.kind = LayerKind::fc;
        l.out_units = lj.at("out_units").get<int>();
      } else if (kind == "softmax") {
        l.kind = LayerKind::softmax;
      } else {
        throw config_error("unknown layer kind: " + kind);
      }
      net.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("malformed network spec: ") + e.what());
  }
  net.layer_shapes();  // validate
  return net;
}

inline nlohmann::json network_to_json(const NetworkSpec& net) {
  nlohmann::json j;
  j["input_shape"] = {net.input_shape.c, net.input_shape.h, net.input_shape.w};
  j["class_names"] = net.class_names;
  j["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers) {
    nlohmann::json lj;
    lj["name"] = l.name;
    lj["kind"] = layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::conv:
        lj["out_channels"] = l.out_channels;
        lj["kernel"] = l.kernel;
        lj["stride"] = l.stride;
        lj["pad"] = l.pad;
        break;
      case LayerKind::maxpool:
        lj["kernel"] = l.kernel;
        lj["stride"] = l.stride;
        break;
      case LayerKind::lrn:
        lj["size"] = l.lrn_size;
        lj["alpha"] = l.lrn_alpha;
        lj["beta"] = l.lrn_beta;
        lj["k"] = l.lrn_k;
        break;
      case LayerKind::fc:
        lj["out_units"] = l.out_units;
        break;
      default:
        break;
    }
    j["layers"].push_back(std::move(lj));
  }
  return j;
}

inline NetworkSpec load_network_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw data_error("cannot open network spec: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("network spec is not valid JSON: ") + e.what());
  }
  return network_from_json(j);
}

inline void save_network_json(const NetworkSpec& net, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw data_error("cannot open network spec for writing: " + path);
  f << network_to_json(net).dump(2) << "\n";
}

}  // namespace fscope
