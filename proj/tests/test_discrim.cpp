#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fscope/discrim.hpp"
#include "test_util.hpp"

using namespace fscope;

namespace {

// 1x1-conv two-filter net on a 1x2x2 input; class logits are the sums of the
// two feature maps. Small enough to recompute by hand.
NetworkSpec toy_net(float w0 = 1.0f, float w1 = 0.5f, bool wire_second = true) {
  NetworkSpec net;
  net.input_shape = {1, 2, 2};
  net.class_names = {"a", "b"};
  LayerSpec conv;
  conv.name = "conv";
  conv.kind = LayerKind::conv;
  conv.out_channels = 2;
  conv.kernel = 1;
  conv.stride = 1;
  conv.pad = 0;
  conv.weights = {w0, w1};
  conv.bias = {0.0f, 0.0f};
  net.layers.push_back(std::move(conv));
  net.layers.push_back({.name = "relu", .kind = LayerKind::relu});
  LayerSpec fc;
  fc.name = "fc";
  fc.kind = LayerKind::fc;
  fc.out_units = 2;
  fc.weights.assign(16, 0.0f);
  for (int i = 0; i < 4; ++i) {
    fc.weights[i] = 1.0f;  // class a <- map 0
    if (wire_second) fc.weights[8 + 4 + i] = 1.0f;  // class b <- map 1
  }
  fc.bias = {0.0f, 0.0f};
  net.layers.push_back(std::move(fc));
  net.layers.push_back({.name = "prob", .kind = LayerKind::softmax});
  return net;
}

std::vector<Tensor> toy_images(std::mt19937& rng, int n) {
  std::vector<Tensor> out;
  for (int i = 0; i < n; ++i) out.push_back(test::random_tensor(1, 2, 2, rng, 0.1, 1.0));
  return out;
}

double softmax0(double a, double b) {
  double m = std::max(a, b);
  double ea = std::exp(a - m), eb = std::exp(b - m);
  return ea / (ea + eb);
}

}  // namespace

TEST_CASE("a filter with zero outgoing influence has delta exactly zero") {
  // class logits never read map 1
  NetworkSpec net = toy_net(1.0f, 0.5f, /*wire_second=*/false);
  std::mt19937 rng(301);
  auto images = toy_images(rng, 6);
  DiscrimScore s = filter_discrim(net, images, 0, "conv", 1);
  REQUIRE(s.delta == 0.0);
  for (double d : s.per_image_deltas) REQUIRE(d == 0.0);
}

TEST_CASE("toy-net deltas match a hand recomputation") {
  NetworkSpec net = toy_net();
  std::mt19937 rng(307);
  auto images = toy_images(rng, 5);

  auto scores = layer_filter_discrim(net, images, 0, "conv");
  REQUIRE(scores.size() == 2);

  std::vector<double> want0, want1;
  for (const auto& im : images) {
    double sum = 0;
    for (float v : im.data) sum += v;
    double s = softmax0(sum, 0.5 * sum);
    want0.push_back(s - softmax0(0.0, 0.5 * sum));  // filter 0 zeroed
    want1.push_back(s - softmax0(sum, 0.0));        // filter 1 zeroed
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    REQUIRE(std::abs(scores[0].per_image_deltas[i] - want0[i]) < 1e-6);
    REQUIRE(std::abs(scores[1].per_image_deltas[i] - want1[i]) < 1e-6);
  }
  REQUIRE(scores[0].delta > 0.0);   // removing the class-a filter hurts class a
  REQUIRE(scores[1].delta < 0.0);   // removing the rival filter helps it
}

TEST_CASE("delta via ablation equals delta via a weight-zeroed network") {
  std::mt19937 rng(311);
  test::RandomNetOptions opt;
  opt.with_head = true;
  for (int trial = 0; trial < 6; ++trial) {
    NetworkSpec net = test::random_small_net(rng, opt);
    int conv_idx = -1;
    for (std::size_t i = 0; i < net.layers.size(); ++i)
      if (net.layers[i].kind == LayerKind::conv) conv_idx = static_cast<int>(i);
    const LayerSpec& conv = net.layers[conv_idx];
    int j = static_cast<int>(unit_uniform(rng) * conv.out_channels);
    std::vector<Tensor> images;
    for (int i = 0; i < 4; ++i)
      images.push_back(test::random_tensor(net.input_shape.c, net.input_shape.h,
                                           net.input_shape.w, rng));

    DiscrimScore via_flag = filter_discrim(net, images, 0, conv.name, j);

    NetworkSpec zeroed = net;
    LayerSpec& zl = zeroed.layers[conv_idx];
    std::size_t per_filter = zl.weights.size() / zl.out_channels;
    std::fill_n(zl.weights.begin() + j * per_filter, per_filter, 0.0f);
    zl.bias[j] = 0.0f;
    for (std::size_t i = 0; i < images.size(); ++i) {
      double s = class_score(net, images[i], 0);
      double sj = class_score(zeroed, images[i], 0);
      REQUIRE(via_flag.per_image_deltas[i] == s - sj);
    }
  }
}

TEST_CASE("sigma is invariant to filter ordering") {
  NetworkSpec net = toy_net(1.0f, 0.5f);
  // same net with the two filters swapped everywhere
  NetworkSpec swapped = net;
  std::swap(swapped.layers[0].weights[0], swapped.layers[0].weights[1]);
  // each fc row reads the other feature map now
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 4; ++i)
      std::swap(swapped.layers[2].weights[o * 8 + i], swapped.layers[2].weights[o * 8 + 4 + i]);

  std::mt19937 rng(313);
  auto images = toy_images(rng, 6);
  auto a = layer_filter_discrim(net, images, 0, "conv");
  auto b = layer_filter_discrim(swapped, images, 0, "conv");
  REQUIRE(a[0].sigma == b[0].sigma);
  REQUIRE(a[0].delta == b[1].delta);
  REQUIRE(a[1].delta == b[0].delta);
}

TEST_CASE("presoftmax mode reads the raw logit") {
  NetworkSpec net = toy_net();
  Tensor im(1, 2, 2);
  im.data = {0.25f, 0.5f, 0.75f, 1.0f};
  double logit = class_score(net, im, 0, ScoreMode::presoftmax);
  REQUIRE(std::abs(logit - 2.5) < 1e-6);
  double prob = class_score(net, im, 0, ScoreMode::softmax);
  REQUIRE(std::abs(prob - softmax0(2.5, 1.25)) < 1e-6);
}

TEST_CASE("part blackout uses the engine's blackout semantics") {
  NetworkSpec net = toy_net();
  std::mt19937 rng(317);
  auto images = toy_images(rng, 4);

  SECTION("full mask equals the all-zero input score") {
    std::vector<MaskedImage> mis;
    for (const auto& im : images) mis.push_back({im, std::vector<std::uint8_t>(4, 1)});
    DiscrimScore s = part_discrim(net, mis, 0, "whole");
    Tensor zeros(1, 2, 2);
    double zero_score = class_score(net, zeros, 0);
    for (std::size_t i = 0; i < images.size(); ++i) {
      double base = class_score(net, images[i], 0);
      REQUIRE(s.per_image_deltas[i] == base - zero_score);
    }
  }

  SECTION("images with empty masks are skipped; all-empty is an error") {
    std::vector<MaskedImage> mis;
    for (const auto& im : images) mis.push_back({im, std::vector<std::uint8_t>(4, 0)});
    REQUIRE_THROWS_AS(part_discrim(net, mis, 0, "ghost"), data_error);

    mis[2].mask[1] = 1;  // exactly one image carries the part
    DiscrimScore s = part_discrim(net, mis, 0, "rare");
    REQUIRE(s.per_image_deltas.size() == 1);
  }
}

TEST_CASE("part table computes sigma across the class' parts") {
  NetworkSpec net = toy_net();
  std::mt19937 rng(331);
  auto images = toy_images(rng, 5);
  std::vector<std::pair<std::string, std::vector<MaskedImage>>> parts;
  std::vector<std::uint8_t> m1 = {1, 0, 0, 0}, m2 = {1, 1, 1, 0};
  std::vector<MaskedImage> a, b;
  for (const auto& im : images) {
    a.push_back({im, m1});
    b.push_back({im, m2});
  }
  parts.emplace_back("small", a);
  parts.emplace_back("large", b);
  auto scores = part_discrim_table(net, parts, 0);
  REQUIRE(scores.size() == 2);
  REQUIRE(scores[0].sigma == scores[1].sigma);
  REQUIRE(scores[0].sigma > 0.0);
  for (const auto& s : scores)
    REQUIRE(s.is_discriminative == (s.delta > 2.0 * s.sigma));
  // blacking out more of the class-a signal hurts more
  REQUIRE(scores[1].delta > scores[0].delta);
}

TEST_CASE("ppmcc") {
  std::vector<double> xs = {1, 2, 3, 4};
  std::vector<double> lin(4), neg(4);
  for (int i = 0; i < 4; ++i) {
    lin[i] = 2 * xs[i] + 3;
    neg[i] = -xs[i];
  }
  REQUIRE(std::abs(ppmcc(xs, lin) - 1.0) < 1e-12);
  REQUIRE(std::abs(ppmcc(xs, neg) + 1.0) < 1e-12);

  std::vector<double> ys = {1, 2, 2, 4};
  // direct covariance / stddev oracle
  double mx = 2.5, my = 2.25;
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  REQUIRE(std::abs(ppmcc(xs, ys) - sxy / std::sqrt(sxx * syy)) < 1e-12);

  std::vector<double> flat = {5, 5, 5, 5};
  REQUIRE_THROWS_AS(ppmcc(xs, flat), std::domain_error);
  std::vector<double> one = {1};
  REQUIRE_THROWS_AS(ppmcc(one, one), std::domain_error);
}

TEST_CASE("ppmcc is invariant to positive affine transforms") {
  std::mt19937 rng(337);
  std::vector<double> xs, ys;
  for (int i = 0; i < 30; ++i) {
    xs.push_back(unit_uniform(rng));
    ys.push_back(0.7 * xs.back() + 0.3 * unit_uniform(rng));
  }
  double base = ppmcc(xs, ys);
  std::vector<double> tx = xs;
  for (auto& v : tx) v = 4.5 * v + 11.0;
  REQUIRE(std::abs(ppmcc(tx, ys) - base) < 1e-12);
}

TEST_CASE("correlate_emergence aligns keys and warns on tiny samples") {
  std::map<std::string, double> ap = {{"a", 0.5}, {"b", 0.2}};
  std::map<std::string, double> size = {{"a", 0.4}, {"b", 0.1}};
  std::map<std::string, double> delta = {{"a", 0.3}, {"b", 0.05}};
  auto reps = correlate_emergence(ap, size, delta);
  REQUIRE(reps.size() == 3);
  for (const auto& r : reps) {
    REQUIRE(r.n == 2);
    REQUIRE(r.low_sample_warning);
  }

  std::map<std::string, double> bad = {{"a", 0.4}, {"c", 0.1}};
  REQUIRE_THROWS_AS(correlate_emergence(ap, bad, delta), data_error);
}
