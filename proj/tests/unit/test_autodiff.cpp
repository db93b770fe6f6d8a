#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "../support/gradcheck.hpp"
#include "rrwnet/adam.hpp"
#include "rrwnet/checkpoint.hpp"
#include "rrwnet/ops.hpp"

using namespace rrwnet;
using ad::Tensor;
using testing::gradcheck;
using testing::random_tensor;

TEST_CASE("conv2d with a centred unit impulse is the identity") {
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;
  Tensor<double> in({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto out = ad::conv2d(in, Tensor<double>({1, 1, 3, 3}, k), Tensor<double>::zeros({1}));
  CHECK(out.shape() == ad::Shape{1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.values()[i] == in.values()[i]);
}

TEST_CASE("conv2d averaging kernel reproduces a constant at interior pixels") {
  const double c = 0.37;
  auto in = Tensor<double>::full({1, 5, 5}, c);
  auto out = ad::conv2d(in, Tensor<double>::full({1, 1, 3, 3}, 1.0 / 9.0), Tensor<double>::zeros({1}));
  for (std::size_t y = 1; y < 4; ++y) {
    for (std::size_t x = 1; x < 4; ++x) CHECK(out.values()[y * 5 + x] == doctest::Approx(c).epsilon(1e-12));
  }
}

TEST_CASE("conv2d matches a nested-loop sliding window") {
  std::mt19937_64 rng(11);
  for (std::size_t k : {1u, 3u}) {
    auto in = random_tensor({2, 5, 5}, rng, -1, 1, false);
    auto ker = random_tensor({3, 2, k, k}, rng, -1, 1, false);
    auto bias = random_tensor({3}, rng, -1, 1, false);
    auto out = ad::conv2d(in, ker, bias);
    auto ref = testing::naive_conv2d({in.values().begin(), in.values().end()}, 2, 5, 5,
                                     {ker.values().begin(), ker.values().end()}, 3, k,
                                     {bias.values().begin(), bias.values().end()});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(out.values()[i] - ref[i]) < 1e-6);
  }
}

TEST_CASE("conv2d rejects channel mismatch with a shape diagnostic") {
  auto in = Tensor<double>::zeros({2, 4, 4});
  auto ker = Tensor<double>::zeros({1, 3, 3, 3});
  try {
    ad::conv2d(in, ker, Tensor<double>::zeros({1}));
    FAIL("expected ShapeError");
  } catch (const ad::ShapeError& e) {
    CHECK(std::string(e.what()).find("[1,3,3,3]") != std::string::npos);
  }
}

TEST_CASE("conv2d in float handles images wider than one im2col chunk") {
  std::mt19937_64 rng(3);
  auto ind = random_tensor({4, 40, 600}, rng, -1, 1, false);
  auto kd = random_tensor({2, 4, 3, 3}, rng, -1, 1, false);
  auto bd = random_tensor({2}, rng, -1, 1, false);
  auto ref = ad::conv2d(ind, kd, bd);
  Tensor<float> inf(ind.shape(), {ind.values().begin(), ind.values().end()});
  Tensor<float> kf(kd.shape(), {kd.values().begin(), kd.values().end()});
  Tensor<float> bf(bd.shape(), {bd.values().begin(), bd.values().end()});
  auto out = ad::conv2d(inf, kf, bf);
  double worst = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    worst = std::max(worst, std::abs(out.values()[i] - ref.values()[i]));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("max_pool2 examples") {
  Tensor<double> a({1, 2, 2}, {1, 2, 3, 4});
  CHECK(ad::max_pool2(a).values()[0] == 4);

  auto c = Tensor<double>::full({2, 4, 6}, 1.5);
  auto p = ad::max_pool2(c);
  CHECK(p.shape() == ad::Shape{2, 2, 3});
  for (double v : p.values()) CHECK(v == 1.5);

  CHECK_THROWS_AS(ad::max_pool2(Tensor<double>::zeros({1, 3, 4})), ad::ShapeError);
}

TEST_CASE("max_pool2 matches exhaustive window scan") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({1, 4, 4}, rng, -1, 1, false);
  auto p = ad::max_pool2(x);
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t xx = 0; xx < 2; ++xx) {
      double m = -1e9;
      for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, x.values()[(2 * y + dy) * 4 + 2 * xx + dx]);
      }
      CHECK(p.values()[y * 2 + xx] == m);
    }
  }
}

TEST_CASE("max_pool2 sends tied gradients to the first scan position") {
  auto x = Tensor<double>::full({1, 2, 2}, 3.0, true);
  ad::sum(ad::max_pool2(x)).backward();
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("upsample2 examples") {
  auto u = ad::upsample2(Tensor<double>({1, 1, 1}, {5}));
  CHECK(u.shape() == ad::Shape{1, 2, 2});
  for (double v : u.values()) CHECK(v == 5);

  auto cb = ad::upsample2(Tensor<double>({1, 2, 2}, {1, 0, 0, 1}));
  const std::vector<double> expect = {1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1};
  for (std::size_t i = 0; i < 16; ++i) CHECK(cb.values()[i] == expect[i]);

  std::mt19937_64 rng(9);
  auto x = random_tensor({3, 4, 5}, rng, -1, 1, false);
  auto up = ad::upsample2(x);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 4; ++y) {
      for (std::size_t xx = 0; xx < 5; ++xx) {
        const auto at = [&](std::size_t yy, std::size_t xc) { return up.values()[(c * 8 + yy) * 10 + xc]; };
        const double avg = (at(2 * y, 2 * xx) + at(2 * y, 2 * xx + 1) + at(2 * y + 1, 2 * xx) +
                            at(2 * y + 1, 2 * xx + 1)) / 4;
        CHECK(avg == x.values()[(c * 4 + y) * 5 + xx]);
      }
    }
  }
}

TEST_CASE("concat_channels and slice_channels") {
  std::mt19937_64 rng(2);
  auto a = random_tensor({1, 3, 3}, rng, -1, 1, false);
  auto b = random_tensor({2, 3, 3}, rng, -1, 1, false);
  auto empty = Tensor<double>::zeros({0, 3, 3});

  auto same = ad::concat_channels(a, empty);
  CHECK(same.shape() == a.shape());
  CHECK(std::equal(same.values().begin(), same.values().end(), a.values().begin()));

  auto ab = ad::concat_channels(a, b);
  CHECK(ab.shape() == ad::Shape{3, 3, 3});
  auto a2 = ad::slice_channels(ab, 0, 1);
  auto b2 = ad::slice_channels(ab, 1, 2);
  CHECK(std::equal(a2.values().begin(), a2.values().end(), a.values().begin()));
  CHECK(std::equal(b2.values().begin(), b2.values().end(), b.values().begin()));

  CHECK_THROWS_AS(ad::concat_channels(a, Tensor<double>::zeros({1, 3, 4})), ad::ShapeError);
  CHECK_THROWS_AS(ad::slice_channels(ab, 2, 2), ad::ShapeError);
}

TEST_CASE("sigmoid is stable and has derivative 1/4 at zero") {
  auto x = Tensor<double>({3}, {0.0, -100.0, 100.0}, true);
  auto s = ad::sigmoid(x);
  CHECK(s.values()[0] == 0.5);
  CHECK(s.values()[1] > 0.0);
  CHECK(s.values()[2] <= 1.0);
  auto xf = ad::sigmoid(Tensor<float>({2}, {-100.0f, -80.0f}));
  CHECK(xf.values()[0] > 0.0f);
  CHECK(std::isfinite(xf.values()[1]));

  auto z = Tensor<double>({1}, {0.0}, true);
  ad::sum(ad::sigmoid(z)).backward();
  CHECK(z.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("bce closed forms") {
  auto ones = Tensor<double>::full({4}, 1.0);
  CHECK(ad::bce(ones, ones).item() < 1e-6);

  std::mt19937_64 rng(4);
  auto target = random_tensor({10}, rng, 0, 1, false);
  CHECK(ad::bce(Tensor<double>::full({10}, 0.5), target).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  auto p = Tensor<double>({2}, {0.9, 0.1});
  auto t = Tensor<double>({2}, {1.0, 0.0});
  CHECK(ad::bce(p, t).item() == doctest::Approx(-std::log(0.9)).epsilon(1e-12));
  CHECK(ad::bce(p, t).item() == doctest::Approx(0.105361).epsilon(1e-5));

  CHECK_THROWS_AS(ad::bce(p, Tensor<double>::zeros({3})), ad::ShapeError);
}

TEST_CASE("bce stays finite at the clamp boundary") {
  for (double edge : {1e-12, 1.0 - 1e-12, 0.0, 1.0}) {
    auto p = Tensor<double>({2}, {edge, edge}, true);
    auto t = Tensor<double>({2}, {0.0, 1.0});
    auto l = ad::bce(p, t);
    l.backward();
    CHECK(std::isfinite(l.item()));
    CHECK(std::isfinite(p.grad()[0]));
    CHECK(std::isfinite(p.grad()[1]));
  }
  auto pf = Tensor<float>({1}, {1.0f}, true);
  auto lf = ad::bce(pf, Tensor<float>({1}, {0.0f}));
  CHECK(std::isfinite(lf.item()));
}

TEST_CASE("bce mask restricts the mean to selected pixels") {
  auto pred = Tensor<double>({2, 1, 2}, {0.9, 0.2, 0.8, 0.3});
  auto target = Tensor<double>({2, 1, 2}, {1, 0, 1, 0});
  auto mask = Tensor<double>({1, 2}, {1, 0});
  const double expect = -(std::log(0.9) + std::log(0.8)) / 2;
  CHECK(ad::bce(pred, target, mask).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS(ad::bce(pred, target, Tensor<double>::zeros({1, 2})));
}

TEST_CASE("backward on simple reductions") {
  std::mt19937_64 rng(8);
  auto x = random_tensor({2, 3, 4}, rng);
  ad::sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  ad::scale(ad::sum(ad::mul(x, x)), 0.5).backward();
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(x.values()[i]));

  // Accumulation without reset.
  x.zero_grad();
  auto loss = ad::sum(x);
  loss.backward();
  loss.backward();
  for (double g : x.grad()) CHECK(g == 2.0);

  CHECK_THROWS_AS(x.backward(), ad::ShapeError);
}

TEST_CASE("every differentiable op passes finite differences in double") {
  std::mt19937_64 rng(21);
  auto in = random_tensor({2, 4, 6}, rng);
  auto ker = random_tensor({3, 2, 3, 3}, rng);
  auto bias = random_tensor({3}, rng);
  auto ker1 = random_tensor({2, 3, 1, 1}, rng);
  auto bias1 = random_tensor({2}, rng);
  auto other = random_tensor({3, 4, 6}, rng);
  auto weights = random_tensor({2, 8, 12}, rng, -1, 1, false);
  auto target = random_tensor({2, 8, 12}, rng, 0, 1, false);
  auto mask = Tensor<double>({8, 12}, std::vector<double>(96, 1.0));
  mask.mutable_values()[5] = 0.0;

  auto loss_fn = [&] {
    auto h = ad::conv2d(in, ker, bias);
    h = ad::add(ad::relu(h), ad::mul(h, other));
    auto cat = ad::concat_channels(ad::slice_channels(h, 1, 2), ad::slice_channels(h, 0, 1));
    auto pooled = ad::max_pool2(cat);
    auto up = ad::upsample2(ad::upsample2(pooled));
    auto head = ad::conv2d(up, ker1, bias1);
    auto p = ad::sigmoid(head);
    auto l1 = ad::bce(p, target, mask);
    auto l2 = ad::scale(ad::sum(ad::mul(head, weights)), 0.01);
    return ad::add(l1, l2);
  };
  auto res = gradcheck(loss_fn, {in, ker, bias, ker1, bias1, other});
  CHECK(res.checked > 100);
  CHECK(res.failed == 0);
  CHECK(res.worst < 1e-4);
}

TEST_CASE("shape algebra holds over random shapes") {
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<std::size_t> d(1, 6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = d(rng), co = d(rng), h = 2 * d(rng), w = 2 * d(rng), c2 = d(rng);
    auto x = random_tensor({c, h, w}, rng, -1, 1, false);
    auto conv = ad::conv2d(x, random_tensor({co, c, 3, 3}, rng, -1, 1, false),
                           random_tensor({co}, rng, -1, 1, false));
    CHECK(conv.shape() == ad::Shape{co, h, w});
    CHECK(ad::max_pool2(x).shape() == ad::Shape{c, h / 2, w / 2});
    CHECK(ad::upsample2(x).shape() == ad::Shape{c, 2 * h, 2 * w});
    CHECK(ad::concat_channels(x, random_tensor({c2, h, w}, rng, -1, 1, false)).shape() ==
          ad::Shape{c + c2, h, w});
  }
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [] {
    std::mt19937_64 rng(77);
    auto x = random_tensor({2, 8, 8}, rng);
    auto k = random_tensor({2, 2, 3, 3}, rng);
    auto b = random_tensor({2}, rng);
    auto y = ad::sigmoid(ad::conv2d(ad::upsample2(ad::max_pool2(x)), k, b));
    auto l = ad::sum(y);
    l.backward();
    std::vector<double> out(y.values().begin(), y.values().end());
    out.insert(out.end(), k.grad().begin(), k.grad().end());
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("no-grad mode records no history") {
  auto x = Tensor<double>::full({2}, 1.0, true);
  ad::NoGradGuard guard;
  auto y = ad::sum(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  std::vector<Tensor<double>> params{Tensor<double>({3}, {1, 2, 3}, true)};
  auto state = ad::make_adam_state(params, {});
  ad::scale(ad::sum(params[0]), 0.0).backward();
  ad::adam_step(params, state);
  CHECK(params[0].values()[0] == 1);
  CHECK(params[0].values()[2] == 3);
  CHECK(state.step_count == 1);
}

TEST_CASE("adam: first step moves by about the learning rate") {
  std::vector<Tensor<double>> params{Tensor<double>({1}, {0.5}, true)};
  auto state = ad::make_adam_state(params, {});
  ad::sum(params[0]).backward();
  ad::adam_step(params, state);
  CHECK(0.5 - params[0].values()[0] == doctest::Approx(1e-4).epsilon(1e-3));
}

TEST_CASE("adam: missing gradients are rejected") {
  std::vector<Tensor<double>> params{Tensor<double>({1}, {0.5}, true)};
  auto state = ad::make_adam_state(params, {});
  CHECK_THROWS_AS(ad::adam_step(params, state), std::logic_error);
}

TEST_CASE("adam: ten steps on w^2 follow a hand-rolled trace") {
  const double lr = 1e-4, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double w = 1.0, m = 0.0, v = 0.0;
  std::vector<double> trace;
  for (int t = 1; t <= 10; ++t) {
    const double g = 2 * w;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
    trace.push_back(w);
  }

  std::vector<Tensor<double>> params{Tensor<double>({1}, {1.0}, true)};
  auto state = ad::make_adam_state(params, {lr, b1, b2, eps});
  for (int t = 0; t < 10; ++t) {
    params[0].zero_grad();
    ad::sum(ad::mul(params[0], params[0])).backward();
    ad::adam_step(params, state);
    CHECK(std::abs(params[0].values()[0] - trace[t]) < 1e-10);
  }
  CHECK(state.step_count == 10);
}

TEST_CASE("checkpoint container round-trips bit-exactly and rejects garbage") {
  ad::CheckpointFile f;
  f.metadata["a"] = "1";
  f.metadata["name"] = "x y";
  f.tensors.push_back({"w", {2, 2}, {1.5f, -0.0f, 3e-38f, std::nextafter(1.0f, 2.0f)}});
  f.tensors.push_back({"b", {0}, {}});
  const auto bytes = ad::encode_checkpoint(f);
  CHECK(bytes.substr(0, 4) == "RRWN");
  auto g = ad::decode_checkpoint(bytes);
  CHECK(g.metadata == f.metadata);
  REQUIRE(g.tensors.size() == 2);
  CHECK(std::memcmp(g.tensors[0].values.data(), f.tensors[0].values.data(), 16) == 0);
  CHECK(ad::encode_checkpoint(g) == bytes);

  CHECK_THROWS_AS(ad::decode_checkpoint("NOPE0000"), ad::CheckpointError);
  CHECK_THROWS_AS(ad::decode_checkpoint(bytes.substr(0, bytes.size() - 1)), ad::CheckpointError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(ad::decode_checkpoint(bad_version), ad::CheckpointError);
}
