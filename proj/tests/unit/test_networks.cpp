#include "doctest.h"

#include <cstring>
#include <filesystem>

#include "../support/gradcheck.hpp"
#include "rrwnet/networks.hpp"
#include "rrwnet/ops.hpp"

using namespace rrwnet;
using ad::Tensor;

namespace {

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
void zero_all(nn::ParameterSet<T>& p) {
  for (auto& e : p.entries()) {
    for (auto& v : e.tensor.mutable_values()) v = 0;
  }
}

nn::RRWNetConfig tiny(nn::Variant v, std::size_t K = 2) { return nn::RRWNetConfig::make(v, 4, 3, K); }

}  // namespace

TEST_CASE("unet output is same-size and strictly inside (0,1)") {
  nn::UNetConfig cfg{3, 3, 4, 3};
  std::mt19937_64 rng(1);
  nn::ParameterSet<float> p;
  nn::init_unet(p, cfg, "u.", rng);
  auto x = testing::random_tensor<float>({3, 16, 16}, 2);
  auto y = nn::unet_forward(x, p, cfg, "u.");
  CHECK(y.shape() == ad::Shape{3, 16, 16});
  for (float v : y.values()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}

TEST_CASE("zero parameters give exactly one half") {
  nn::UNetConfig cfg{3, 3, 4, 3};
  std::mt19937_64 rng(1);
  nn::ParameterSet<float> p;
  nn::init_unet(p, cfg, "u.", rng);
  zero_all(p);
  auto y = nn::unet_forward(testing::random_tensor<float>({3, 8, 8}, 5), p, cfg, "u.");
  for (float v : y.values()) CHECK(v == 0.5f);
}

TEST_CASE("parameter count matches the layer-by-layer enumeration") {
  nn::UNetConfig cfg{3, 3, 64, 5};
  CHECK(nn::unet_parameter_count(cfg) == 34513475u);

  // Independent enumeration for a range of shapes.
  for (std::size_t n : {1u, 4u, 8u}) {
    for (std::size_t depth : {1u, 2u, 3u, 4u}) {
      nn::UNetConfig c{2, 5, n, depth};
      std::size_t total = 9 * 2 * n + n + 9 * n * n + n;
      for (std::size_t l = 1; l < depth; ++l) {
        const std::size_t a = n << (l - 1), b = n << l;
        total += 9 * a * b + b + 9 * b * b + b;
      }
      for (std::size_t l = depth - 1; l-- > 0;) {
        const std::size_t a = n << (l + 1), b = n << l;
        total += 9 * a * b + b + 9 * 2 * b * b + b + 9 * b * b + b;
      }
      total += n * 5 + 5;
      CHECK(nn::unet_parameter_count(c) == total);
      std::mt19937_64 rng(0);
      nn::ParameterSet<float> p;
      nn::init_unet(p, c, "", rng);
      CHECK(p.element_count() == total);
    }
  }
}

TEST_CASE("indivisible spatial size names the required padding") {
  nn::UNetConfig cfg{3, 3, 4, 3};
  std::mt19937_64 rng(1);
  nn::ParameterSet<float> p;
  nn::init_unet(p, cfg, "u.", rng);
  try {
    nn::unet_forward(Tensor<float>::zeros({3, 10, 12}), p, cfg, "u.");
    FAIL("expected ShapeError");
  } catch (const ad::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("multiple of 4") != std::string::npos);
    CHECK(msg.find("pad by 2 rows and 0 columns") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(nn::UNetConfig({3, 3, 0, 3}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(nn::UNetConfig({3, 3, 4, 0}).validate(), std::invalid_argument);
  CHECK_THROWS_AS(nn::parse_variant("vnet"), std::invalid_argument);
  for (auto v : nn::all_variants()) CHECK(nn::parse_variant(nn::variant_name(v)) == v);
  CHECK(nn::RRWNetConfig::make(nn::Variant::wnet, 4, 3, 6).K == 1);
  CHECK(nn::RRWNetConfig::make(nn::Variant::unet_only, 4, 3, 6).K == 0);
  CHECK(nn::RRWNetConfig::make(nn::Variant::rrunet, 4, 3, 6).base.in_channels == 6);
  const auto all = nn::RRWNetConfig::make(nn::Variant::rrwnet_all, 4, 3, 2);
  CHECK(all.refiner.in_channels == 3);
  CHECK(all.refiner.out_channels == 3);
  const auto rr = nn::RRWNetConfig::make(nn::Variant::rrwnet, 4, 3, 2);
  CHECK(rr.refiner.in_channels == 2);
  CHECK(rr.refiner.out_channels == 2);
}

TEST_CASE("base forward is the base unet and deterministic") {
  const auto cfg = tiny(nn::Variant::rrwnet);
  auto p = nn::init_parameters<float>(cfg, 3);
  auto x = testing::random_tensor<float>({3, 16, 16}, 4);
  auto a = nn::base_forward(x, p, cfg);
  CHECK(a.dim(0) == 3);
  CHECK(bit_equal(a, nn::unet_forward(x, p, cfg.base, "base.")));
  CHECK(bit_equal(a, nn::base_forward(x, p, cfg)));
}

TEST_CASE("refiner sees maps only") {
  const auto cfg = tiny(nn::Variant::rrwnet);
  auto p = nn::init_parameters<float>(cfg, 3);
  auto maps = nn::base_forward(testing::random_tensor<float>({3, 32, 32}, 1), p, cfg);
  auto av = ad::slice_channels(maps, 0, 2);
  auto r = nn::rr_forward(av, p, cfg);
  CHECK(r.shape() == ad::Shape{2, 32, 32});
  for (float v : r.values()) CHECK((v > 0.0f && v < 1.0f));
  // Rerunning after other forwards on a different image changes nothing.
  (void)nn::base_forward(testing::random_tensor<float>({3, 32, 32}, 9), p, cfg);
  CHECK(bit_equal(r, nn::rr_forward(Tensor<float>(av.shape(), {av.values().begin(), av.values().end()}), p, cfg)));
  CHECK_THROWS_AS(nn::rr_forward(maps, p, cfg), ad::ShapeError);

  auto z = p;
  z = nn::cast_parameters<float>(p);
  zero_all(z);
  for (float v : nn::rr_forward(av, z, cfg).values()) CHECK(v == 0.5f);
}

TEST_CASE("rrwnet stages: count, BV fixity, manual composition") {
  for (std::size_t K : {0u, 1u, 2u, 4u}) {
    const auto cfg = tiny(nn::Variant::rrwnet, K);
    auto p = nn::init_parameters<float>(cfg, 10 + K);
    auto x = testing::random_tensor<float>({3, 16, 16}, 20 + K);
    auto stages = nn::rrwnet_forward(x, p, cfg);
    REQUIRE(stages.size() == K + 1);
    CHECK(bit_equal(stages[0], nn::base_forward(x, p, cfg)));
    const auto bv0 = ad::slice_channels(stages[0], 2, 1);
    for (const auto& s : stages) CHECK(bit_equal(ad::slice_channels(s, 2, 1), bv0));
    if (K == 2) {
      auto y1 = nn::rr_forward(ad::slice_channels(stages[0], 0, 2), p, cfg);
      auto y2 = nn::rr_forward(y1, p, cfg);
      CHECK(bit_equal(stages[2], ad::concat_channels(y2, bv0)));
    }
  }
}

TEST_CASE("parameter count is independent of K") {
  auto a = nn::init_parameters<float>(tiny(nn::Variant::rrwnet, 1), 0);
  auto b = nn::init_parameters<float>(tiny(nn::Variant::rrwnet, 7), 0);
  CHECK(a.element_count() == b.element_count());
}

TEST_CASE("variants") {
  auto x = testing::random_tensor<float>({3, 16, 16}, 8);
  {
    const auto cfg = tiny(nn::Variant::wnet, 5);
    CHECK(nn::variant_forward(x, nn::init_parameters<float>(cfg, 1), cfg).size() == 2);
  }
  {
    const auto cfg = tiny(nn::Variant::unet_only, 5);
    auto p = nn::init_parameters<float>(cfg, 1);
    auto s = nn::variant_forward(x, p, cfg);
    CHECK(s.size() == 1);
    CHECK(!p.contains("refiner.head.weight"));
  }
  {
    const auto cfg = tiny(nn::Variant::rrunet, 3);
    auto p = nn::init_parameters<float>(cfg, 1);
    CHECK(p.at("base.enc0.conv1.weight").dim(1) == 6);
    auto s = nn::variant_forward(x, p, cfg);
    CHECK(s.size() == 4);
    auto first = nn::unet_forward(ad::concat_channels(x, Tensor<float>::zeros({3, 16, 16})), p, cfg.base,
                                  "base.");
    CHECK(bit_equal(s[0], first));
    auto second = nn::unet_forward(ad::concat_channels(x, s[0]), p, cfg.base, "base.");
    CHECK(bit_equal(s[1], second));
  }
  {
    const auto cfg = tiny(nn::Variant::rrwnet_all, 2);
    auto p = nn::init_parameters<float>(cfg, 1);
    auto s = nn::variant_forward(x, p, cfg);
    REQUIRE(s.size() == 3);
    CHECK(!bit_equal(ad::slice_channels(s[2], 2, 1), ad::slice_channels(s[0], 2, 1)));
  }
}

TEST_CASE("gradients reach base and refiner through the recursion") {
  const auto cfg = tiny(nn::Variant::rrwnet, 2);
  auto p = nn::init_parameters<double>(cfg, 6);
  auto x = testing::random_tensor<double>({3, 8, 8}, 7);
  auto stages = nn::rrwnet_forward(x, p, cfg);
  Tensor<double> loss = ad::sum(stages[2]);
  loss.backward();
  double base_norm = 0, refiner_norm = 0;
  for (const auto& e : p.entries()) {
    REQUIRE(e.tensor.grad().size() == e.tensor.size());
    double s = 0;
    for (double g : e.tensor.grad()) s += g * g;
    (e.name.rfind("base.", 0) == 0 ? base_norm : refiner_norm) += s;
  }
  CHECK(base_norm > 0);
  CHECK(refiner_norm > 0);
}

TEST_CASE("small rrwnet passes a finite-difference check") {
  const auto cfg = nn::RRWNetConfig::make(nn::Variant::rrwnet, 2, 2, 2);
  auto p = nn::init_parameters<double>(cfg, 12);
  auto x = testing::random_tensor<double>({3, 4, 4}, 13);
  auto target = testing::random_tensor<double>({3, 4, 4}, 14);
  for (auto& v : target.mutable_values()) v = v > 0 ? 1.0 : 0.0;
  auto leaves = p.tensors();
  auto res = testing::gradcheck(
      [&] {
        auto s = nn::rrwnet_forward(x, p, cfg);
        Tensor<double> l = ad::bce(s[0], target);
        for (std::size_t k = 1; k < s.size(); ++k) l = ad::add(l, ad::bce(s[k], target));
        return l;
      },
      leaves, 1e-6, 1e-5, 6);
  CHECK(res.checked > 0);
  CHECK(res.failed == 0);
}

TEST_CASE("model checkpoint round trip") {
  const auto cfg = tiny(nn::Variant::rrwnet_all, 3);
  nn::ModelCheckpoint m;
  m.config = cfg;
  m.params = nn::init_parameters<float>(cfg, 99);
  m.provenance = {99, 17, 2, 0.125};
  m.optimizer = ad::make_adam_state(m.params.tensors(), ad::AdamHyper{});
  m.optimizer->step_count = 5;
  m.optimizer->first_moment[0][0] = 0.25f;

  const auto path = std::filesystem::temp_directory_path() / "rrwnet_test_model.ckpt";
  nn::save_model(path, m);
  auto r = nn::load_model(path);
  std::filesystem::remove(path);

  CHECK(r.config == cfg);
  CHECK(r.provenance.seed == 99u);
  CHECK(r.provenance.epoch == 17);
  CHECK(r.provenance.fold == 2);
  CHECK(r.provenance.val_loss == 0.125);
  REQUIRE(r.params.entries().size() == m.params.entries().size());
  for (std::size_t i = 0; i < r.params.entries().size(); ++i) {
    CHECK(r.params.entries()[i].name == m.params.entries()[i].name);
    CHECK(bit_equal(r.params.entries()[i].tensor, m.params.entries()[i].tensor));
  }
  REQUIRE(r.optimizer.has_value());
  CHECK(r.optimizer->step_count == 5u);
  CHECK(r.optimizer->first_moment[0][0] == 0.25f);

  auto x = testing::random_tensor<float>({3, 16, 16}, 3);
  auto a = nn::variant_forward(x, m.params, cfg);
  auto b = nn::variant_forward(x, r.params, r.config);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(bit_equal(a[k], b[k]));
}

TEST_CASE("checkpoint with mismatched tensor shape is rejected") {
  const auto cfg = tiny(nn::Variant::rrwnet, 1);
  nn::ModelCheckpoint m;
  m.config = cfg;
  m.params = nn::init_parameters<float>(cfg, 1);
  auto file = nn::to_checkpoint_file(m);
  file.tensors[0].shape[0] += 1;
  file.tensors[0].values.resize(ad::numel(file.tensors[0].shape));
  CHECK_THROWS_AS(nn::from_checkpoint_file(file), ad::CheckpointError);
}
