#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "fscope/corpus.hpp"
#include "fscope/eval.hpp"
#include "test_util.hpp"

using namespace fscope;
namespace fs = std::filesystem;

namespace {

AnnotatedImage flat_image(int side, const std::string& cls, Box obox) {
  AnnotatedImage im;
  im.image = Tensor(3, side, side);
  for (std::size_t i = 0; i < im.image.size(); ++i)
    im.image.data[i] = static_cast<float>(i % 7) / 7.0f;
  im.objects.push_back({cls, obox});
  return im;
}

bool images_equal(const AnnotatedImage& a, const AnnotatedImage& b) {
  if (a.image.data != b.image.data) return false;
  if (a.objects.size() != b.objects.size() || a.parts.size() != b.parts.size())
    return false;
  for (std::size_t i = 0; i < a.parts.size(); ++i) {
    const auto& pa = a.parts[i];
    const auto& pb = b.parts[i];
    if (pa.part_class != pb.part_class || pa.mask != pb.mask) return false;
    if (pa.box.x != pb.box.x || pa.box.w != pb.box.w) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("crop_and_warp identity when the box is the full image") {
  AnnotatedImage im = flat_image(16, "c", {0, 0, 16, 16});
  CropSpec spec;
  spec.context_pad = 0.0;
  spec.target_h = 16;
  spec.target_w = 16;
  auto [crop, tf] = crop_and_warp(im, 0, spec);
  REQUIRE(crop.data == im.image.data);
  double x, y;
  tf.map_point(3.0, 5.0, x, y);
  REQUIRE(x == 3.0);
  REQUIRE(y == 5.0);
}

TEST_CASE("2x upscale doubles edge coordinates") {
  AnnotatedImage im = flat_image(16, "c", {2, 2, 8, 8});
  CropSpec spec;
  spec.context_pad = 0.0;
  spec.target_h = 16;
  spec.target_w = 16;
  auto [crop, tf] = crop_and_warp(im, 0, spec);
  (void)crop;
  double x, y;
  tf.map_point(2.0, 2.0, x, y);  // box origin lands on crop origin
  REQUIRE(x == 0.0);
  REQUIRE(y == 0.0);
  tf.map_point(3.0, 2.0, x, y);  // one source pixel spans two crop pixels
  REQUIRE(x == 2.0);
  Box b = tf.map_box({4, 4, 1, 2});
  REQUIRE(b.w == 2.0);
  REQUIRE(b.h == 4.0);
}

TEST_CASE("box mapping round-trips within half a pixel") {
  std::mt19937 rng(401);
  for (int trial = 0; trial < 30; ++trial) {
    AnnotatedImage im = flat_image(
        40, "c",
        {unit_uniform(rng) * 10, unit_uniform(rng) * 10, 8 + unit_uniform(rng) * 20,
         8 + unit_uniform(rng) * 20});
    CropSpec spec;
    spec.context_pad = 0.1 * unit_uniform(rng);
    spec.target_h = 24;
    spec.target_w = 24;
    auto [crop, tf] = crop_and_warp(im, 0, spec);
    (void)crop;
    Box part = {unit_uniform(rng) * 30, unit_uniform(rng) * 30, 1 + unit_uniform(rng) * 8,
                1 + unit_uniform(rng) * 8};
    Box back = tf.unmap_box(tf.map_box(part));
    REQUIRE(std::abs(back.x - part.x) < 0.5);
    REQUIRE(std::abs(back.y - part.y) < 0.5);
    REQUIRE(std::abs(back.w - part.w) < 0.5);
    REQUIRE(std::abs(back.h - part.h) < 0.5);

    // transforms compose associatively with box mapping
    Box twice = tf.map_box(tf.unmap_box(tf.map_box(part)));
    Box direct = tf.map_box(part);
    REQUIRE(std::abs(twice.x - direct.x) < 0.5);
  }
}

TEST_CASE("crop_and_warp rejects degenerate boxes") {
  AnnotatedImage im = flat_image(16, "c", {4, 4, 0, 8});
  CropSpec spec;
  spec.target_h = 8;
  spec.target_w = 8;
  REQUIRE_THROWS_AS(crop_and_warp(im, 0, spec), data_error);
  REQUIRE_THROWS_AS(crop_and_warp(im, 3, spec), data_error);
}

TEST_CASE("filter_catalog applies the retention rules") {
  std::vector<AnnotatedImage> images;
  // 12 images of class "c": part "big" on all, "rare" on 10, "tiny" on all
  for (int i = 0; i < 12; ++i) {
    AnnotatedImage im = flat_image(64, "c", {0, 0, 60, 60});
    im.id = i;
    PartAnnotation big;
    big.part_class = "big";
    big.parent = 0;
    big.box = {5, 5, 20, 20};
    big.mask.assign(400, 1);
    im.parts.push_back(big);
    if (i < 10) {
      PartAnnotation rare = big;
      rare.part_class = "rare";
      im.parts.push_back(rare);
    }
    PartAnnotation tiny;
    tiny.part_class = "tiny";
    tiny.parent = 0;
    tiny.box = {30, 30, 15, 15};  // mean (w+h)/2 = 15 -> discarded
    tiny.mask.assign(225, 1);
    im.parts.push_back(tiny);
    images.push_back(std::move(im));
  }
  PartCatalog cat = filter_catalog(images);
  REQUIRE(cat.entries.size() == 1);
  REQUIRE(cat.entries[0].part_class == "big");
  REQUIRE(cat.entries[0].count == 12);
  REQUIRE(cat.entries[0].mean_size == 20.0);
  REQUIRE(cat.entries[0].mean_norm_size == 20.0 / 60.0);

  // exactly 10 samples is discarded ("<= 10" reading), 11 retained
  for (int i = 0; i < 11; ++i) {
    PartAnnotation rare = images[0].parts[0];
    rare.part_class = "rare11";
    images[i].parts.push_back(rare);
  }
  PartCatalog cat2 = filter_catalog(images);
  REQUIRE(cat2.find("c", "rare11") != nullptr);
  REQUIRE(cat2.find("c", "rare") == nullptr);
}

TEST_CASE("filter_catalog honors the merge map and is idempotent") {
  std::vector<AnnotatedImage> images;
  for (int i = 0; i < 12; ++i) {
    AnnotatedImage im = flat_image(64, "c", {0, 0, 60, 60});
    PartAnnotation p;
    p.parent = 0;
    p.box = {5, 5, 20, 20};
    p.mask.assign(400, 1);
    p.part_class = i % 2 ? "upper arm" : "lower arm";
    im.parts.push_back(p);
    images.push_back(std::move(im));
  }
  std::map<std::string, std::string> merge = {{"upper arm", "arm"}, {"lower arm", "arm"}};
  PartCatalog cat = filter_catalog(images, merge);
  REQUIRE(cat.entries.size() == 1);
  REQUIRE(cat.entries[0].part_class == "arm");
  REQUIRE(cat.entries[0].count == 12);

  merge_part_labels(images, merge);
  PartCatalog again = filter_catalog(images, merge);
  REQUIRE(again.entries.size() == 1);
  REQUIRE(again.entries[0].count == cat.entries[0].count);
  REQUIRE(again.entries[0].mean_size == cat.entries[0].mean_size);
}

TEST_CASE("synthetic corpus: all-large layout keeps everything") {
  auto images = generate_synthetic(7, 40, default_synth_layout());
  PartCatalog cat = filter_catalog(images, {}, 10, 5.0);
  std::set<std::string> parts;
  for (const auto& e : cat.entries) parts.insert(e.part_class);
  REQUIRE(parts.count("wheel") == 1);
  REQUIRE(parts.count("deck") == 1);
}

TEST_CASE("synthetic generation is seed-deterministic") {
  SynthLayout layout = default_synth_layout();
  auto a = generate_synthetic(42, 12, layout);
  auto b = generate_synthetic(42, 12, layout);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(images_equal(a[i], b[i]));

  auto c = generate_synthetic(43, 12, layout);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size() && !any_diff; ++i)
    any_diff = !images_equal(a[i], c[i]);
  REQUIRE(any_diff);

  REQUIRE(generate_synthetic(1, 0, layout).empty());
}

TEST_CASE("part masks are tight and inside the parent object") {
  auto images = generate_synthetic(11, 30, default_synth_layout());
  for (const auto& im : images) {
    for (const auto& p : im.parts) {
      const Box& ob = im.objects[p.parent].box;
      REQUIRE(p.box.x >= ob.x);
      REQUIRE(p.box.y >= ob.y);
      REQUIRE(p.box.x + p.box.w <= ob.x + ob.w);
      REQUIRE(p.box.y + p.box.h <= ob.y + ob.h);
      // tight: every border row/column of the mask contains a set pixel
      int mw = p.mask_w(), mh = p.mask_h();
      auto row_any = [&](int y) {
        for (int x = 0; x < mw; ++x)
          if (p.mask[static_cast<std::size_t>(y) * mw + x]) return true;
        return false;
      };
      auto col_any = [&](int x) {
        for (int y = 0; y < mh; ++y)
          if (p.mask[static_cast<std::size_t>(y) * mw + x]) return true;
        return false;
      };
      REQUIRE(row_any(0));
      REQUIRE(row_any(mh - 1));
      REQUIRE(col_any(0));
      REQUIRE(col_any(mw - 1));
    }
  }
}

TEST_CASE("corpus round-trips through PPM + JSON") {
  auto images = generate_synthetic(3, 6, default_synth_layout());
  std::string dir = (fs::temp_directory_path() / "fscope_corpus_test").string();
  fs::remove_all(dir);
  save_corpus(dir, images);
  auto loaded = load_corpus(dir);
  REQUIRE(loaded.size() == images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    REQUIRE(loaded[i].parts.size() == images[i].parts.size());
    for (std::size_t p = 0; p < images[i].parts.size(); ++p)
      REQUIRE(loaded[i].parts[p].mask == images[i].parts[p].mask);
    // pixel values quantized to 8 bits
    for (std::size_t k = 0; k < images[i].image.size(); ++k)
      REQUIRE(std::abs(loaded[i].image.data[k] - images[i].image.data[k]) <= 0.5f / 255.0f);
  }
  fs::remove_all(dir);
}

TEST_CASE("rle encoding round-trips") {
  std::mt19937 rng(419);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::uint8_t> mask(50 + static_cast<std::size_t>(unit_uniform(rng) * 100));
    for (auto& m : mask) m = unit_uniform(rng) < 0.4 ? 1 : 0;
    REQUIRE(rle_decode(rle_encode(mask), mask.size()) == mask);
  }
  REQUIRE_THROWS_AS(rle_decode({3, 4}, 100), data_error);
}

TEST_CASE("matched-filter baseline detects the planted wheel") {
  SynthLayout layout = default_synth_layout();
  auto images = generate_synthetic(23, 60, layout);
  const SynthPartSpec& wheel = layout.classes[0].parts[0];
  Tensor tmpl = render_part_template(wheel);
  double tmean = 0;
  for (float v : tmpl.data) tmean += v;
  tmean /= tmpl.data.size();

  // cross-correlation detector, written directly against the image arrays
  std::vector<StimulusDetection> dets;
  std::vector<PartBox> gts;
  for (const auto& im : images) {
    if (im.objects[0].object_class != layout.classes[0].name) continue;
    for (const auto& p : im.parts)
      if (p.part_class == wheel.name)
        gts.push_back(part_box_from_corner(p.box, im.id, wheel.name));

    int S = im.image.width, K = wheel.size;
    Tensor resp(1, S - K + 1, S - K + 1);
    for (int y = 0; y + K <= S; ++y)
      for (int x = 0; x + K <= S; ++x) {
        double acc = 0;
        for (int c = 0; c < 3; ++c)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx)
              acc += (tmpl.at(c, ky, kx) - tmean) * im.image.at(c, y + ky, x + kx);
        resp.at(0, y, x) = static_cast<float>(acc);
      }
    for (int y = 0; y + K <= S; ++y)
      for (int x = 0; x + K <= S; ++x) {
        float v = resp.at(0, y, x);
        if (v <= 0) continue;
        bool is_max = true;
        for (int dy = -1; dy <= 1 && is_max; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= resp.height || xx >= resp.width) continue;
            if (resp.at(0, yy, xx) >= v) {
              is_max = false;
              break;
            }
          }
        if (is_max) {
          StimulusDetection d;
          d.image_id = im.id;
          d.box = {static_cast<double>(x), static_cast<double>(y),
                   static_cast<double>(K), static_cast<double>(K)};
          d.score = v;
          dets.push_back(d);
        }
      }
  }
  EvalReport rep = match_and_ap(nms(dets, 0.3), gts, 0.4);
  REQUIRE(rep.ap >= 0.9);
}

TEST_CASE("layout overflow is rejected") {
  SynthLayout layout = default_synth_layout();
  layout.classes[0].parts[0].rel_x = 0.99;  // pushes the patch outside
  REQUIRE_THROWS_AS(generate_synthetic(1, 10, layout), data_error);
}
