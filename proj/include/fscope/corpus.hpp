#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscope/common.hpp"
#include "fscope/net.hpp"
#include "fscope/tensor.hpp"

namespace fscope {

struct ObjectAnnotation {
  std::string object_class;
  Box box;
};

// Part mask is box-local, row-major round(w) x round(h), nonzero = part pixel.
struct PartAnnotation {
  std::string part_class;
  int parent = 0;
  Box box;
  std::vector<std::uint8_t> mask;

  int mask_w() const { return static_cast<int>(std::lround(box.w)); }
  int mask_h() const { return static_cast<int>(std::lround(box.h)); }
};

struct AnnotatedImage {
  int id = 0;
  Tensor image;  // 3 x H x W, values in [0, 1]
  std::vector<ObjectAnnotation> objects;
  std::vector<PartAnnotation> parts;
};

// ---- PPM (P6, maxval 255) ----------------------------------------------

inline void write_ppm(const std::string& path, const Tensor& img) {
  if (img.channels != 3) throw data_error("PPM writer expects a 3-channel tensor");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data_error("cannot open PPM for writing: " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::string raster;
  raster.reserve(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        raster.push_back(static_cast<char>(std::lround(v * 255.0f)));
      }
  f.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!f) throw data_error("failed writing PPM: " + path);
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open PPM: " + path);
  auto next_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = f.get()) != EOF) {
      if (ch == '#') {
        while ((ch = f.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  };
  if (next_token() != "P6") throw data_error("not a P6 PPM: " + path);
  int w = std::stoi(next_token());
  int h = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  if (w <= 0 || h <= 0 || maxval != 255)
    throw data_error("unsupported PPM geometry in " + path);
  std::vector<char> raster(static_cast<std::size_t>(w) * h * 3);
  f.read(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (f.gcount() != static_cast<std::streamsize>(raster.size()))
    throw data_error("PPM raster truncated: " + path);
  Tensor img(3, h, w);
  std::size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c, ++i)
        img.at(c, y, x) = static_cast<unsigned char>(raster[i]) / 255.0f;
  return img;
}

// ---- run-length mask encoding -------------------------------------------
// Alternating run counts over the row-major box-local grid, zeros first.

inline std::vector<int> rle_encode(const std::vector<std::uint8_t>& mask) {
  std::vector<int> runs;
  std::uint8_t cur = 0;
  int count = 0;
  for (auto v : mask) {
    std::uint8_t bit = v ? 1 : 0;
    if (bit == cur) {
      ++count;
    } else {
      runs.push_back(count);
      cur = bit;
      count = 1;
    }
  }
  runs.push_back(count);
  return runs;
}

inline std::vector<std::uint8_t> rle_decode(const std::vector<int>& runs,
                                            std::size_t expected) {
  std::vector<std::uint8_t> mask;
  mask.reserve(expected);
  std::uint8_t cur = 0;
  for (int run : runs) {
    if (run < 0) throw data_error("negative RLE run");
    mask.insert(mask.end(), static_cast<std::size_t>(run), cur);
    cur ^= 1;
  }
  if (mask.size() != expected) throw data_error("RLE length does not match mask size");
  return mask;
}

// ---- annotation JSON -----------------------------------------------------

inline nlohmann::json annotation_to_json(const AnnotatedImage& im) {
  nlohmann::json j;
  j["id"] = im.id;
  j["width"] = im.image.width;
  j["height"] = im.image.height;
  j["objects"] = nlohmann::json::array();
  for (const auto& o : im.objects)
    j["objects"].push_back(
        {{"class", o.object_class}, {"box", {o.box.x, o.box.y, o.box.w, o.box.h}}});
  j["parts"] = nlohmann::json::array();
  for (const auto& p : im.parts)
    j["parts"].push_back({{"part_class", p.part_class},
                          {"parent", p.parent},
                          {"box", {p.box.x, p.box.y, p.box.w, p.box.h}},
                          {"mask_rle", rle_encode(p.mask)}});
  return j;
}

inline void annotation_from_json(const nlohmann::json& j, AnnotatedImage& im) {
  try {
    im.id = j.at("id").get<int>();
    for (const auto& oj : j.at("objects")) {
      ObjectAnnotation o;
      o.object_class = oj.at("class").get<std::string>();
      auto b = oj.at("box");
      o.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
               b.at(3).get<double>()};
      im.objects.push_back(std::move(o));
    }
    for (const auto& pj : j.at("parts")) {
      PartAnnotation p;
      p.part_class = pj.at("part_class").get<std::string>();
      p.parent = pj.at("parent").get<int>();
      auto b = pj.at("box");
      p.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
               b.at(3).get<double>()};
      if (p.parent < 0 || p.parent >= static_cast<int>(im.objects.size()))
        throw data_error("part references missing parent object");
      p.mask = rle_decode(pj.at("mask_rle").get<std::vector<int>>(),
                          static_cast<std::size_t>(p.mask_w()) * p.mask_h());
      im.parts.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed annotation: ") + e.what());
  }
}

// ---- corpus directory I/O -------------------------------------------------
// Flat layout: NNNNNN.ppm + NNNNNN.json per image.

inline std::string image_stem(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", id);
  return buf;
}

inline void save_corpus(const std::string& dir, const std::vector<AnnotatedImage>& images) {
  std::filesystem::create_directories(dir);
  for (const auto& im : images) {
    std::string stem = (std::filesystem::path(dir) / image_stem(im.id)).string();
    write_ppm(stem + ".ppm", im.image);
    std::ofstream f(stem + ".json", std::ios::trunc);
    if (!f) throw data_error("cannot write annotation: " + stem + ".json");
    f << annotation_to_json(im).dump(2) << "\n";
  }
}

inline std::vector<AnnotatedImage> load_corpus(const std::string& dir) {
  if (!std::filesystem::is_directory(dir))
    throw data_error("corpus directory not found: " + dir);
  std::vector<std::filesystem::path> ppms;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".ppm") ppms.push_back(e.path());
  std::sort(ppms.begin(), ppms.end());
  std::vector<AnnotatedImage> out;
  for (const auto& p : ppms) {
    AnnotatedImage im;
    im.image = read_ppm(p.string());
    std::filesystem::path ann = p;
    ann.replace_extension(".json");
    std::ifstream f(ann);
    if (!f) throw data_error("missing annotation for " + p.string());
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw data_error(std::string("annotation is not valid JSON: ") + e.what());
    }
    annotation_from_json(j, im);
    out.push_back(std::move(im));
  }
  return out;
}

// ---- part catalog ----------------------------------------------------------

struct PartCatalogEntry {
  std::string object_class;
  std::string part_class;
  int count = 0;
  double mean_size = 0;       // mean of (w+h)/2 at source scale
  double mean_norm_size = 0;  // mean_size / mean object size of the class
};

struct PartCatalog {
  std::vector<PartCatalogEntry> entries;

  const PartCatalogEntry* find(const std::string& object_class,
                               const std::string& part_class) const {
    for (const auto& e : entries)
      if (e.object_class == object_class && e.part_class == part_class) return &e;
    return nullptr;
  }
};

inline std::string merged_name(const std::map<std::string, std::string>& merge_map,
                               const std::string& name) {
  auto it = merge_map.find(name);
  return it == merge_map.end() ? name : it->second;
}

// Applies the label merge table, then the PASCAL-Part-style retention rules:
// parts with <= min_samples instances or mean (w+h)/2 <= min_mean_size are
// discarded. Deterministic and idempotent.
inline PartCatalog filter_catalog(const std::vector<AnnotatedImage>& images,
                                  const std::map<std::string, std::string>& merge_map = {},
                                  int min_samples = 10, double min_mean_size = 15.0) {
  struct Agg {
    int count = 0;
    double size_sum = 0;
  };
  std::map<std::pair<std::string, std::string>, Agg> parts;
  std::map<std::string, Agg> objects;
  for (const auto& im : images) {
    for (const auto& o : im.objects) {
      Agg& a = objects[o.object_class];
      a.count++;
      a.size_sum += (o.box.w + o.box.h) / 2.0;
    }
    for (const auto& p : im.parts) {
      const auto& oc = im.objects[p.parent].object_class;
      Agg& a = parts[{oc, merged_name(merge_map, p.part_class)}];
      a.count++;
      a.size_sum += (p.box.w + p.box.h) / 2.0;
    }
  }
  PartCatalog cat;
  for (const auto& [key, agg] : parts) {
    if (agg.count <= min_samples) continue;
    double mean_size = agg.size_sum / agg.count;
    if (mean_size <= min_mean_size) continue;
    const Agg& obj = objects.at(key.first);
    double mean_obj = obj.size_sum / obj.count;
    cat.entries.push_back({key.first, key.second, agg.count, mean_size,
                           mean_obj > 0 ? mean_size / mean_obj : 0.0});
  }
  return cat;
}

inline nlohmann::json catalog_to_json(const PartCatalog& cat) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : cat.entries)
    j.push_back({{"object_class", e.object_class},
                 {"part_class", e.part_class},
                 {"count", e.count},
                 {"mean_size", e.mean_size},
                 {"mean_norm_size", e.mean_norm_size}});
  return j;
}

// Renames part labels in place per the merge table.
inline void merge_part_labels(std::vector<AnnotatedImage>& images,
                              const std::map<std::string, std::string>& merge_map) {
  if (merge_map.empty()) return;
  for (auto& im : images)
    for (auto& p : im.parts) p.part_class = merged_name(merge_map, p.part_class);
}

// ---- R-CNN-style crop preprocessing ----------------------------------------

struct CropSpec {
  double context_pad = 0.10;               // fraction of box extent per side
  std::optional<double> absolute_pad;      // source pixels per side, overrides
  int target_h = 0, target_w = 0;          // usually the network input size
};

// crop = src * scale + offset
struct AffineTransform {
  double sx = 1, sy = 1, tx = 0, ty = 0;

  void map_point(double x, double y, double& ox, double& oy) const {
    ox = x * sx + tx;
    oy = y * sy + ty;
  }
  void unmap_point(double x, double y, double& ox, double& oy) const {
    ox = (x - tx) / sx;
    oy = (y - ty) / sy;
  }
  Box map_box(const Box& b) const {
    double x0, y0, x1, y1;
    map_point(b.x, b.y, x0, y0);
    map_point(b.x + b.w, b.y + b.h, x1, y1);
    return {x0, y0, x1 - x0, y1 - y0};
  }
  Box unmap_box(const Box& b) const {
    double x0, y0, x1, y1;
    unmap_point(b.x, b.y, x0, y0);
    unmap_point(b.x + b.w, b.y + b.h, x1, y1);
    return {x0, y0, x1 - x0, y1 - y0};
  }
};

namespace detail {

inline float bilinear_sample(const Tensor& img, int c, double x, double y) {
  x = std::clamp(x, 0.0, img.width - 1.0);
  y = std::clamp(y, 0.0, img.height - 1.0);
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  int x1 = std::min(x0 + 1, img.width - 1);
  int y1 = std::min(y0 + 1, img.height - 1);
  double fx = x - x0, fy = y - y0;
  double v = img.at(c, y0, x0) * (1 - fx) * (1 - fy) + img.at(c, y0, x1) * fx * (1 - fy) +
             img.at(c, y1, x0) * (1 - fx) * fy + img.at(c, y1, x1) * fx * fy;
  return static_cast<float>(v);
}

}  // namespace detail

// Warps the context-padded object box to the target size with bilinear
// sampling (border pixels replicate outside the image). Returns the crop and
// the source->crop transform so annotations can follow.
inline std::pair<Tensor, AffineTransform> crop_and_warp(const AnnotatedImage& im,
                                                        int object_index,
                                                        const CropSpec& spec) {
  if (object_index < 0 || object_index >= static_cast<int>(im.objects.size()))
    throw data_error("object index out of range");
  Box b = im.objects[object_index].box;
  if (b.w <= 0 || b.h <= 0) throw data_error("degenerate object box");
  if (spec.target_h < 1 || spec.target_w < 1)
    throw config_error("crop target size must be positive");

  double pad_x = spec.absolute_pad ? *spec.absolute_pad : spec.context_pad * b.w;
  double pad_y = spec.absolute_pad ? *spec.absolute_pad : spec.context_pad * b.h;
  Box padded = {b.x - pad_x, b.y - pad_y, b.w + 2 * pad_x, b.h + 2 * pad_y};

  AffineTransform tf;
  tf.sx = spec.target_w / padded.w;
  tf.sy = spec.target_h / padded.h;
  tf.tx = -padded.x * tf.sx;
  tf.ty = -padded.y * tf.sy;

  Tensor crop(im.image.channels, spec.target_h, spec.target_w);
  for (int c = 0; c < crop.channels; ++c)
    for (int y = 0; y < crop.height; ++y)
      for (int x = 0; x < crop.width; ++x) {
        // pixel centers: crop (x+0.5, y+0.5) samples the source point that
        // maps onto it
        double sx_pos = (x + 0.5 - tf.tx) / tf.sx - 0.5;
        double sy_pos = (y + 0.5 - tf.ty) / tf.sy - 0.5;
        crop.at(c, y, x) = detail::bilinear_sample(im.image, c, sx_pos, sy_pos);
      }
  return {std::move(crop), tf};
}

// Part mask resampled into the crop frame (nearest neighbor, binary in/out).
inline std::vector<std::uint8_t> part_mask_in_crop(const AnnotatedImage& im, int part_index,
                                                   const AffineTransform& tf, int crop_h,
                                                   int crop_w) {
  const PartAnnotation& p = im.parts.at(part_index);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(crop_h) * crop_w, 0);
  const int mw = p.mask_w(), mh = p.mask_h();
  for (int y = 0; y < crop_h; ++y)
    for (int x = 0; x < crop_w; ++x) {
      double sx_pos, sy_pos;
      tf.unmap_point(x + 0.5, y + 0.5, sx_pos, sy_pos);
      int mx = static_cast<int>(std::floor(sx_pos - p.box.x));
      int my = static_cast<int>(std::floor(sy_pos - p.box.y));
      if (mx < 0 || my < 0 || mx >= mw || my >= mh) continue;
      if (p.mask[static_cast<std::size_t>(my) * mw + mx])
        out[static_cast<std::size_t>(y) * crop_w + x] = 1;
    }
  return out;
}

// ---- synthetic planted-part corpus ------------------------------------------

struct SynthPartSpec {
  std::string name;
  std::string pattern = "disk";  // disk | ring | checker | cross | vbar | hbar
  int size = 12;                 // patch extent in pixels
  double rel_x = 0.5, rel_y = 0.5;  // center, relative to the object box
  double jitter = 0.05;          // positional jitter, relative to object box
  float amplitude = 0.9f;        // pattern contrast
  std::array<float, 3> color = {1.0f, 1.0f, 1.0f};
  double fc_gain = 0.0;          // weight of this part in its class logit
};

struct SynthClassSpec {
  std::string name;
  std::vector<SynthPartSpec> parts;
};

struct SynthLayout {
  int image_size = 64;
  float background_noise = 0.08f;
  double object_margin = 0.04;  // object box inset, relative to image
  double object_jitter = 0.02;
  std::vector<SynthClassSpec> classes;
};

namespace detail {

// Support mask of a pattern on a size x size grid.
inline std::vector<std::uint8_t> pattern_support(const std::string& pattern, int size) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(size) * size, 0);
  double c = (size - 1) / 2.0;
  double r = size / 2.0;
  auto set = [&](int x, int y) { m[static_cast<std::size_t>(y) * size + x] = 1; };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double dx = x - c, dy = y - c;
      double d = std::sqrt(dx * dx + dy * dy);
      if (pattern == "disk") {
        if (d <= r - 0.5) set(x, y);
      } else if (pattern == "ring") {
        if (d <= r - 0.5 && d >= r - 2.5) set(x, y);
      } else if (pattern == "checker") {
        if (((x / 2) + (y / 2)) % 2 == 0) set(x, y);
      } else if (pattern == "cross") {
        int arm = std::max(1, size / 5);
        if (std::abs(x - c) <= arm / 2.0 || std::abs(y - c) <= arm / 2.0) set(x, y);
      } else if (pattern == "vbar") {
        if ((x / 2) % 2 == 0) set(x, y);
      } else if (pattern == "hbar") {
        if ((y / 2) % 2 == 0) set(x, y);
      } else {
        throw config_error("unknown synthetic pattern: " + pattern);
      }
    }
  return m;
}

}  // namespace detail

// 3 x size x size template of the part pattern (amplitude * color on zero
// background); the matched-filter builders use this raster.
inline Tensor render_part_template(const SynthPartSpec& part) {
  auto support = detail::pattern_support(part.pattern, part.size);
  Tensor t(3, part.size, part.size);
  for (int y = 0; y < part.size; ++y)
    for (int x = 0; x < part.size; ++x)
      if (support[static_cast<std::size_t>(y) * part.size + x])
        for (int c = 0; c < 3; ++c)
          t.at(c, y, x) = part.amplitude * part.color[c];
  return t;
}

// Deterministic per seed; byte-identical corpora for identical inputs.
// Classes cycle round-robin so every part keeps a healthy sample count.
inline std::vector<AnnotatedImage> generate_synthetic(std::uint64_t seed, int n_images,
                                                      const SynthLayout& layout) {
  if (layout.classes.empty()) throw config_error("synthetic layout has no classes");
  const int S = layout.image_size;
  std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(seed, 0)));
  std::vector<AnnotatedImage> out;
  out.reserve(n_images);
  for (int i = 0; i < n_images; ++i) {
    const SynthClassSpec& cls = layout.classes[i % layout.classes.size()];
    AnnotatedImage im;
    im.id = i;
    im.image = Tensor(3, S, S);
    for (auto& v : im.image.data)
      v = static_cast<float>(unit_uniform(rng)) * layout.background_noise;

    double margin = layout.object_margin * S;
    double jx = (unit_uniform(rng) * 2 - 1) * layout.object_jitter * S;
    double jy = (unit_uniform(rng) * 2 - 1) * layout.object_jitter * S;
    double ox = std::clamp(margin + jx, 0.0, S / 4.0);
    double oy = std::clamp(margin + jy, 0.0, S / 4.0);
    Box obox = {std::floor(ox), std::floor(oy), 0, 0};
    obox.w = std::floor(S - 2 * margin);
    obox.h = std::floor(S - 2 * margin);
    if (obox.x + obox.w > S) obox.x = S - obox.w;
    if (obox.y + obox.h > S) obox.y = S - obox.h;
    im.objects.push_back({cls.name, obox});

    for (const auto& part : cls.parts) {
      double pcx = obox.x + part.rel_x * obox.w +
                   (unit_uniform(rng) * 2 - 1) * part.jitter * obox.w;
      double pcy = obox.y + part.rel_y * obox.h +
                   (unit_uniform(rng) * 2 - 1) * part.jitter * obox.h;
      int x0 = static_cast<int>(std::lround(pcx - part.size / 2.0));
      int y0 = static_cast<int>(std::lround(pcy - part.size / 2.0));
      if (x0 < obox.x || y0 < obox.y || x0 + part.size > obox.x + obox.w ||
          y0 + part.size > obox.y + obox.h)
        throw data_error("synthetic layout overflows object bounds for part " + part.name);

      auto support = detail::pattern_support(part.pattern, part.size);
      // tight bounding box of the drawn support
      int bx0 = part.size, by0 = part.size, bx1 = -1, by1 = -1;
      for (int y = 0; y < part.size; ++y)
        for (int x = 0; x < part.size; ++x)
          if (support[static_cast<std::size_t>(y) * part.size + x]) {
            bx0 = std::min(bx0, x);
            by0 = std::min(by0, y);
            bx1 = std::max(bx1, x);
            by1 = std::max(by1, y);
          }
      if (bx1 < 0) throw data_error("empty pattern support for part " + part.name);

      for (int y = 0; y < part.size; ++y)
        for (int x = 0; x < part.size; ++x)
          if (support[static_cast<std::size_t>(y) * part.size + x])
            for (int c = 0; c < 3; ++c) {
              float& px = im.image.at(c, y0 + y, x0 + x);
              px = std::clamp(px + part.amplitude * part.color[c], 0.0f, 1.0f);
            }

      PartAnnotation pa;
      pa.part_class = part.name;
      pa.parent = 0;
      pa.box = {static_cast<double>(x0 + bx0), static_cast<double>(y0 + by0),
                static_cast<double>(bx1 - bx0 + 1), static_cast<double>(by1 - by0 + 1)};
      pa.mask.assign(static_cast<std::size_t>(pa.mask_w()) * pa.mask_h(), 0);
      for (int y = by0; y <= by1; ++y)
        for (int x = bx0; x <= bx1; ++x)
          if (support[static_cast<std::size_t>(y) * part.size + x])
            pa.mask[static_cast<std::size_t>(y - by0) * pa.mask_w() + (x - bx0)] = 1;
      im.parts.push_back(std::move(pa));
    }
    out.push_back(std::move(im));
  }
  return out;
}

// ---- synthetic layout JSON ---------------------------------------------

inline SynthLayout synth_layout_from_json(const nlohmann::json& j) {
  SynthLayout layout;
  try {
    layout.image_size = j.value("image_size", 64);
    layout.background_noise = j.value("background_noise", 0.08f);
    layout.object_margin = j.value("object_margin", 0.04);
    layout.object_jitter = j.value("object_jitter", 0.02);
    for (const auto& cj : j.at("classes")) {
      SynthClassSpec cls;
      cls.name = cj.at("name").get<std::string>();
      for (const auto& pj : cj.at("parts")) {
        SynthPartSpec p;
        p.name = pj.at("name").get<std::string>();
        p.pattern = pj.value("pattern", "disk");
        p.size = pj.value("size", 12);
        p.rel_x = pj.value("rel_x", 0.5);
        p.rel_y = pj.value("rel_y", 0.5);
        p.jitter = pj.value("jitter", 0.05);
        p.amplitude = pj.value("amplitude", 0.9f);
        if (pj.contains("color")) p.color = pj.at("color").get<std::array<float, 3>>();
        p.fc_gain = pj.value("fc_gain", 0.0);
        cls.parts.push_back(std::move(p));
      }
      layout.classes.push_back(std::move(cls));
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("malformed synthetic layout: ") + e.what());
  }
  return layout;
}

inline nlohmann::json synth_layout_to_json(const SynthLayout& layout) {
  nlohmann::json j;
  j["image_size"] = layout.image_size;
  j["background_noise"] = layout.background_noise;
  j["object_margin"] = layout.object_margin;
  j["object_jitter"] = layout.object_jitter;
  j["classes"] = nlohmann::json::array();
  for (const auto& cls : layout.classes) {
    nlohmann::json cj;
    cj["name"] = cls.name;
    cj["parts"] = nlohmann::json::array();
    for (const auto& p : cls.parts)
      cj["parts"].push_back({{"name", p.name},
                             {"pattern", p.pattern},
                             {"size", p.size},
                             {"rel_x", p.rel_x},
                             {"rel_y", p.rel_y},
                             {"jitter", p.jitter},
                             {"amplitude", p.amplitude},
                             {"color", p.color},
                             {"fc_gain", p.fc_gain}});
    j["classes"].push_back(std::move(cj));
  }
  return j;
}

// A layout exercising three object classes with distinct planted parts of
// graded size/contrast; used by gen-synth when no layout file is given.
inline SynthLayout default_synth_layout() {
  SynthLayout layout;
  layout.classes = {
      {"rover",
       {{"wheel", "disk", 16, 0.30, 0.68, 0.12, 0.85f, {1.0f, 0.95f, 0.3f}, 1.0},
        {"hatch", "checker", 10, 0.70, 0.30, 0.12, 0.55f, {0.4f, 0.8f, 1.0f}, 0.0}}},
      {"glider",
       {{"fin", "cross", 14, 0.65, 0.60, 0.12, 0.75f, {1.0f, 0.5f, 0.9f}, 1.0},
        {"canopy", "ring", 12, 0.32, 0.35, 0.12, 0.65f, {0.6f, 1.0f, 0.6f}, 0.0}}},
      {"barge",
       {{"deck", "hbar", 15, 0.50, 0.35, 0.12, 0.80f, {1.0f, 0.75f, 0.4f}, 1.0},
        {"porthole", "ring", 9, 0.30, 0.70, 0.10, 0.50f, {0.8f, 0.8f, 1.0f}, 0.0},
        {"mast", "vbar", 11, 0.72, 0.70, 0.10, 0.60f, {0.7f, 1.0f, 1.0f}, 0.0}}},
  };
  return layout;
}

// Network whose first conv layer carries one zero-mean matched filter per
// part class (plus `extra_filters` random controls) and whose fc layer wires
// each class logit to the mean activation of its parts' filters, weighted by
// fc_gain.
inline NetworkSpec make_matched_filter_network(const SynthLayout& layout, int kernel,
                                               int stride, int extra_filters,
                                               std::uint64_t seed) {
  std::vector<std::pair<const SynthPartSpec*, int>> part_filters;  // part -> filter idx
  int n_parts = 0;
  for (const auto& cls : layout.classes) n_parts += static_cast<int>(cls.parts.size());
  const int n_filters = n_parts + extra_filters;
  const int S = layout.image_size;
  const int pad = kernel / 2;

  NetworkSpec net;
  net.input_shape = {3, S, S};
  for (const auto& cls : layout.classes) net.class_names.push_back(cls.name);

  LayerSpec conv;
  conv.name = "conv1";
  conv.kind = LayerKind::conv;
  conv.out_channels = n_filters;
  conv.kernel = kernel;
  conv.stride = stride;
  conv.pad = pad;
  net.layers.push_back(conv);
  net.layers.push_back({.name = "relu1", .kind = LayerKind::relu});

  LayerSpec fc;
  fc.name = "fc1";
  fc.kind = LayerKind::fc;
  fc.out_units = static_cast<int>(layout.classes.size());
  net.layers.push_back(fc);
  net.layers.push_back({.name = "prob", .kind = LayerKind::softmax});

  net = random_init(net, seed);  // fills shapes/params; conv filters overwritten below

  // Matched filters: the part template centered in the kernel window, made
  // zero-mean so flat background scores ~0.
  LayerSpec& c1 = net.layers[0];
  int f = 0;
  for (const auto& cls : layout.classes) {
    for (const auto& part : cls.parts) {
      Tensor tmpl = render_part_template(part);
      double sum = 0;
      for (float v : tmpl.data) sum += v;
      double mean = sum / tmpl.data.size();
      double norm = 0;
      for (float v : tmpl.data) norm += (v - mean) * (v - mean);
      norm = std::sqrt(std::max(norm, 1e-12));
      std::size_t base = static_cast<std::size_t>(f) * 3 * kernel * kernel;
      std::fill_n(c1.weights.begin() + base, static_cast<std::size_t>(3) * kernel * kernel,
                  0.0f);
      int off = (kernel - part.size) / 2;
      if (off < 0) throw config_error("matched filter kernel smaller than part template");
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < part.size; ++y)
          for (int x = 0; x < part.size; ++x)
            c1.weights[base + (static_cast<std::size_t>(ch) * kernel + y + off) * kernel +
                       x + off] =
                static_cast<float>((tmpl.at(ch, y, x) - mean) / norm);
      c1.bias[f] = 0.0f;
      part_filters.emplace_back(&part, f);
      ++f;
    }
  }
  // Control filters keep their random init but scaled down to the matched
  // filters' magnitude scale.
  for (; f < n_filters; ++f) c1.bias[f] = 0.0f;

  // fc: class logit = sum over its parts of fc_gain * mean activation of the
  // part's filter map.
  auto shapes = net.layer_shapes();
  Shape conv_out = shapes[1];  // after relu
  LayerSpec& fcl = net.layers[2];
  std::fill(fcl.weights.begin(), fcl.weights.end(), 0.0f);
  std::fill(fcl.bias.begin(), fcl.bias.end(), 0.0f);
  const std::size_t plane = static_cast<std::size_t>(conv_out.h) * conv_out.w;
  int part_idx = 0;
  for (std::size_t ci = 0; ci < layout.classes.size(); ++ci) {
    for (const auto& part : layout.classes[ci].parts) {
      int filter = part_filters[part_idx].second;
      float w = static_cast<float>(part.fc_gain / static_cast<double>(plane));
      if (w != 0.0f)
        for (std::size_t k = 0; k < plane; ++k)
          fcl.weights[ci * conv_out.flat() + static_cast<std::size_t>(filter) * plane + k] =
              w;
      ++part_idx;
    }
  }
  return net;
}

// Filter index of a part's matched filter in make_matched_filter_network's
// conv1 (parts enumerate class-major, in layout order).
inline int matched_filter_index(const SynthLayout& layout, const std::string& class_name,
                                const std::string& part_name) {
  int f = 0;
  for (const auto& cls : layout.classes) {
    for (const auto& part : cls.parts) {
      if (cls.name == class_name && part.name == part_name) return f;
      ++f;
    }
  }
  throw config_error("part not found in layout: " + class_name + "/" + part_name);
}

}  // namespace fscope
