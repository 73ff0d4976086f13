#include <doctest.h>

#include "ddunet/attention.hpp"
#include "grad_check.hpp"
#include "oracle_ref.hpp"
#include "test_helpers.hpp"

using namespace ddunet;
using testutil::fill_random;
using testutil::fill_zero;
using testutil::random_var;

namespace {

void zero_all(CbamBlock& block) {
  fill_zero(block.fc1.weight);
  fill_zero(block.fc1.bias);
  fill_zero(block.fc2.weight);
  fill_zero(block.fc2.bias);
  fill_zero(block.spatial_conv.weight);
  fill_zero(block.spatial_conv.bias);
}

oracle::CbamWeights weights_of(const CbamBlock& block) {
  oracle::CbamWeights w;
  w.w1 = block.fc1.weight->value;
  w.b1 = block.fc1.bias->value;
  w.w2 = block.fc2.weight->value;
  w.b2 = block.fc2.bias->value;
  w.spatial_kernel = block.spatial_conv.weight->value;
  w.spatial_bias = block.spatial_conv.bias->value[0];
  return w;
}

}  // namespace

TEST_CASE("channel attention with zero parameters gates everything at 0.5") {
  Rng rng(1);
  CbamBlock block(rng, 4);
  zero_all(block);
  Var f = random_var(rng, {2, 4, 5, 5});
  Var gate = block.channel_attention(f);
  REQUIRE(gate->value.shape() == Shape{2, 4});
  for (int64_t i = 0; i < gate->value.numel(); ++i) {
    CHECK(gate->value[i] == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("reduction ratio shapes the shared MLP") {
  Rng rng(2);
  CbamConfig cfg;
  cfg.reduction = 4;
  CbamBlock block(rng, 8, cfg);
  CHECK(block.hidden_width() == 2);
  Var f = random_var(rng, {3, 8, 4, 4});
  CHECK(block.channel_attention(f)->value.shape() == Shape{3, 8});

  // reduction larger than the channel count still leaves one hidden unit
  CbamConfig tight;
  tight.reduction = 64;
  CbamBlock small(rng, 8, tight);
  CHECK(small.hidden_width() == 1);
}

TEST_CASE("channel attention matches the scalar reference") {
  Rng rng(3);
  CbamConfig cfg;
  cfg.reduction = 2;
  CbamBlock block(rng, 2, cfg);
  Var f = random_var(rng, {1, 2, 2, 2}, false, -2.0, 2.0);
  const Tensor gate = block.channel_attention(f)->value;
  const auto w = weights_of(block);
  const Tensor ref = oracle::channel_attention_ref(f->value, w.w1, w.b1, w.w2, w.b2);
  CHECK(oracle::max_abs_diff(gate, ref) < 1e-12);
}

TEST_CASE("spatial attention with zero kernel is 0.5 everywhere and keeps dims") {
  Rng rng(4);
  CbamBlock block(rng, 4);
  zero_all(block);
  Var f = random_var(rng, {1, 4, 16, 16});
  Var map = block.spatial_attention(f);
  REQUIRE(map->value.shape() == Shape{1, 1, 16, 16});
  for (int64_t i = 0; i < map->value.numel(); ++i) {
    CHECK(map->value[i] == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("spatial attention matches the scalar reference") {
  Rng rng(5);
  CbamBlock block(rng, 2);
  Var f = random_var(rng, {1, 2, 8, 8}, false, -2.0, 2.0);
  const Tensor map = block.spatial_attention(f)->value;
  const auto w = weights_of(block);
  const Tensor ref = oracle::spatial_attention_ref(f->value, w.spatial_kernel, w.spatial_bias);
  REQUIRE(map.shape() == ref.shape());
  CHECK(oracle::max_abs_diff(map, ref) < 1e-12);
}

TEST_CASE("cbam with zero parameters scales the input by 0.25") {
  Rng rng(6);
  CbamBlock block(rng, 3);
  zero_all(block);
  Var f = random_var(rng, {2, 3, 4, 4}, false, -3.0, 3.0);
  Var out = block.forward(f);
  for (int64_t i = 0; i < f->value.numel(); ++i) {
    CHECK(out->value[i] == doctest::Approx(0.25 * f->value[i]).epsilon(1e-14));
  }

  // gates are input-independent here, so scaling commutes: cbam(a*F) = 0.25*a*F
  const double alpha = -1.7;
  Var scaled = block.forward(mul_scalar(f, alpha));
  for (int64_t i = 0; i < f->value.numel(); ++i) {
    CHECK(scaled->value[i] == doctest::Approx(0.25 * alpha * f->value[i]).epsilon(1e-14));
  }
}

TEST_CASE("cbam preserves shape and stays strictly inside (0,1)") {
  Rng rng(7);
  CbamBlock block(rng, 16);
  Var f = random_var(rng, {2, 16, 16, 16});
  Var out = block.forward(f);
  CHECK(out->value.shape() == f->value.shape());

  // random geometries as well
  for (int trial = 0; trial < 6; ++trial) {
    Var g = random_var(rng, {rng.uniform_int(1, 3), 16, rng.uniform_int(1, 12),
                             rng.uniform_int(1, 12)});
    CHECK(block.forward(g)->value.shape() == g->value.shape());
  }

  Var gate = block.channel_attention(f);
  Var map = block.spatial_attention(f);
  for (int64_t i = 0; i < gate->value.numel(); ++i) {
    CHECK(gate->value[i] > 0.0);
    CHECK(gate->value[i] < 1.0);
  }
  for (int64_t i = 0; i < map->value.numel(); ++i) {
    CHECK(map->value[i] > 0.0);
    CHECK(map->value[i] < 1.0);
  }
}

TEST_CASE("cbam matches the composed scalar oracle") {
  Rng rng(8);
  CbamConfig cfg;
  cfg.reduction = 2;
  CbamBlock block(rng, 3, cfg);
  Var f = random_var(rng, {2, 3, 6, 5}, false, -1.5, 1.5);
  const Tensor out = block.forward(f)->value;
  const Tensor ref = oracle::cbam_ref(f->value, weights_of(block));
  CHECK(oracle::max_abs_diff(out, ref) < 1e-12);
}

TEST_CASE("cbam gradients match finite differences") {
  Rng rng(9);
  Rng pick(10);
  CbamConfig cfg;
  cfg.reduction = 2;
  CbamBlock block(rng, 4, cfg);
  Var f = random_var(rng, {1, 4, 6, 6}, true);
  std::vector<Var> params = {f,
                             block.fc1.weight,
                             block.fc1.bias,
                             block.fc2.weight,
                             block.fc2.bias,
                             block.spatial_conv.weight,
                             block.spatial_conv.bias};
  auto loss = [&] {
    Var y = block.forward(f);
    return mean_all(mul(y, y));
  };
  const auto r = gradcheck::check_gradients(loss, params, 8, 1e-5, pick);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("cbam validates its inputs") {
  Rng rng(11);
  CbamBlock block(rng, 4);
  Var wrong_channels = random_var(rng, {1, 3, 4, 4});
  CHECK_THROWS_AS(block.channel_attention(wrong_channels), ConfigError);
  CHECK_THROWS_AS(block.forward(wrong_channels), ConfigError);

  Var nan_input = random_var(rng, {1, 4, 4, 4});
  nan_input->value[3] = std::nan("");
  CHECK_THROWS_AS(block.forward(nan_input), ShapeError);

  Var degenerate = make_var(Tensor({1, 4, 0, 4}));
  CHECK_THROWS_AS(block.spatial_attention(degenerate), std::invalid_argument);
}

TEST_CASE("reflect padding mode keeps the spatial contract") {
  Rng rng(12);
  CbamConfig cfg;
  cfg.spatial_padding = PadMode::Reflect;
  CbamBlock block(rng, 2, cfg);
  Var f = random_var(rng, {1, 2, 8, 8});
  CHECK(block.spatial_attention(f)->value.shape() == Shape{1, 1, 8, 8});
  CHECK(block.forward(f)->value.shape() == f->value.shape());
}
