#include <doctest.h>

#include "ddunet/ops.hpp"
#include "grad_check.hpp"
#include "oracle_ref.hpp"
#include "test_helpers.hpp"

using namespace ddunet;
using testutil::random_tensor;
using testutil::random_var;

TEST_CASE("conv2d matches the loop reference across geometries") {
  Rng rng(7);
  struct Geometry {
    int64_t ci, co, k, stride, pad, dilation, h, w;
  };
  const Geometry cases[] = {
      {2, 3, 3, 1, 1, 1, 6, 5},  {3, 2, 3, 2, 1, 1, 9, 8},  {2, 2, 3, 1, 2, 2, 7, 7},
      {2, 4, 3, 1, 4, 4, 5, 5},  {1, 1, 7, 1, 3, 1, 8, 8},  {3, 5, 1, 1, 0, 1, 4, 6},
      {2, 2, 3, 1, 1, 1, 1, 1},
  };
  for (const auto& g : cases) {
    CAPTURE(g.k);
    CAPTURE(g.dilation);
    Var x = random_var(rng, {2, g.ci, g.h, g.w});
    Var w = random_var(rng, {g.co, g.ci, g.k, g.k});
    Var b = random_var(rng, {g.co});
    Var y = conv2d(x, w, b, g.stride, g.pad, g.dilation);
    const Tensor ref = oracle::conv2d_ref(x->value, w->value, b->value.vec(), g.stride, g.pad,
                                          g.dilation);
    REQUIRE(y->value.shape() == ref.shape());
    CHECK(oracle::max_abs_diff(y->value, ref) < 1e-12);
  }
}

TEST_CASE("conv2d rejects channel mismatch and invalid geometry") {
  Rng rng(3);
  Var x = random_var(rng, {1, 3, 8, 8});
  Var w = random_var(rng, {4, 2, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, nullptr, 1, 1, 1), ConfigError);
  Var w_ok = random_var(rng, {4, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w_ok, nullptr, 0, 1, 1), std::invalid_argument);
}

TEST_CASE("conv_transpose2d matches the loop reference") {
  Rng rng(11);
  struct Geometry {
    int64_t ci, co, k, stride, pad, h, w;
  };
  const Geometry cases[] = {
      {3, 2, 2, 2, 0, 5, 4},
      {2, 3, 4, 2, 1, 6, 6},
      {1, 1, 3, 1, 1, 5, 5},
      {4, 2, 2, 2, 0, 1, 1},
  };
  for (const auto& g : cases) {
    Var x = random_var(rng, {2, g.ci, g.h, g.w});
    Var w = random_var(rng, {g.ci, g.co, g.k, g.k});
    Var b = random_var(rng, {g.co});
    Var y = conv_transpose2d(x, w, b, g.stride, g.pad);
    const Tensor ref =
        oracle::conv_transpose2d_ref(x->value, w->value, b->value.vec(), g.stride, g.pad);
    REQUIRE(y->value.shape() == ref.shape());
    CHECK(oracle::max_abs_diff(y->value, ref) < 1e-12);
  }
}

TEST_CASE("linear matches explicit loops") {
  Rng rng(5);
  Var x = random_var(rng, {3, 4});
  Var w = random_var(rng, {2, 4});
  Var b = random_var(rng, {2});
  Var y = linear(x, w, b);
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t o = 0; o < 2; ++o) {
      double acc = b->value[o];
      for (int64_t i = 0; i < 4; ++i) acc += x->value.at(n, i) * w->value.at(o, i);
      CHECK(std::abs(y->value.at(n, o) - acc) < 1e-12);
    }
}

TEST_CASE("gradients of every op agree with finite differences") {
  Rng rng(23);
  Rng pick(29);
  auto check = [&](const char* name, const std::function<Var()>& loss,
                   const std::vector<Var>& params) {
    CAPTURE(name);
    const auto r = gradcheck::check_gradients(loss, params, 6, 1e-5, pick);
    CHECK(r.max_rel_err < 1e-6);
  };

  {
    Var x = random_var(rng, {1, 2, 6, 5}, true);
    Var w = random_var(rng, {3, 2, 3, 3}, true);
    Var b = random_var(rng, {3}, true);
    check("conv2d", [&] { return mean_all(mul(conv2d(x, w, b, 2, 1, 1),
                                              conv2d(x, w, b, 2, 1, 1))); },
          {x, w, b});
  }
  {
    Var x = random_var(rng, {1, 2, 5, 5}, true);
    Var w = random_var(rng, {2, 2, 3, 3}, true);
    check("dilated conv2d", [&] { return mean_all(mul(conv2d(x, w, nullptr, 1, 2, 2),
                                                      conv2d(x, w, nullptr, 1, 2, 2))); },
          {x, w});
  }
  {
    Var x = random_var(rng, {1, 3, 4, 4}, true);
    Var w = random_var(rng, {3, 2, 2, 2}, true);
    Var b = random_var(rng, {2}, true);
    check("conv_transpose2d",
          [&] {
            Var y = conv_transpose2d(x, w, b, 2, 0);
            return mean_all(mul(y, y));
          },
          {x, w, b});
  }
  {
    Var x = random_var(rng, {3, 4}, true);
    Var w = random_var(rng, {2, 4}, true);
    Var b = random_var(rng, {2}, true);
    check("linear",
          [&] {
            Var y = linear(x, w, b);
            return mean_all(mul(y, y));
          },
          {x, w, b});
  }
  {
    Var x = random_var(rng, {2, 3, 4, 4}, true);
    check("relu+sigmoid", [&] { return mean_all(sigmoid(relu(x))); }, {x});
  }
  {
    Var x = random_var(rng, {1, 2, 6, 6}, true);
    check("max_pool2d",
          [&] {
            Var y = max_pool2d(x, 3, 2, 1);
            return mean_all(mul(y, y));
          },
          {x});
  }
  {
    Var x = random_var(rng, {1, 3, 4, 4}, true);
    check("global pools", [&] {
      Var a = global_avg_pool(x);
      Var m = global_max_pool(x);
      return mean_all(mul(add(a, m), add(a, m)));
    }, {x});
  }
  {
    Var x = random_var(rng, {1, 3, 4, 4}, true);
    check("channel mean/max", [&] {
      Var y = concat_channels({channel_mean(x), channel_max(x)});
      return mean_all(mul(y, y));
    }, {x});
  }
  {
    Var x = random_var(rng, {2, 3, 3, 3}, true);
    Var s = random_var(rng, {2, 3}, true);
    check("scale_by_channel", [&] { return mean_all(mul(scale_by_channel(x, s),
                                                        scale_by_channel(x, s))); },
          {x, s});
  }
  {
    Var x = random_var(rng, {2, 3, 3, 3}, true);
    Var s = random_var(rng, {2, 1, 3, 3}, true);
    check("scale_by_spatial", [&] { return mean_all(mul(scale_by_spatial(x, s),
                                                        scale_by_spatial(x, s))); },
          {x, s});
  }
  {
    Var v = random_var(rng, {2, 3}, true);
    check("broadcast_spatial", [&] {
      Var y = broadcast_spatial(v, 4, 5);
      return mean_all(mul(y, y));
    }, {v});
  }
  {
    Var x = random_var(rng, {1, 2, 5, 5}, true);
    check("reflect_pad2d",
          [&] {
            Var y = reflect_pad2d(x, 3);
            return mean_all(mul(y, y));
          },
          {x});
  }
  {
    Var x = random_var(rng, {1, 2, 4, 5}, true);
    check("bilinear_upsample2x",
          [&] {
            Var y = bilinear_upsample2x(x);
            return mean_all(mul(y, y));
          },
          {x});
  }
  {
    Var x = random_var(rng, {2, 2, 3, 3}, true);
    check("reshape", [&] {
      Var y = reshape(x, {2, 18});
      return mean_all(mul(y, y));
    }, {x});
  }
}

TEST_CASE("concat_channels splits gradients back to its inputs") {
  Rng rng(31);
  Var a = random_var(rng, {1, 2, 3, 3}, true);
  Var b = random_var(rng, {1, 3, 3, 3}, true);
  Var y = concat_channels({a, b});
  REQUIRE(y->value.shape() == Shape{1, 5, 3, 3});
  backward(mean_all(mul(y, y)));
  // d mean(y^2) / dy = 2y/N, sliced back per input
  const double n = 45.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) {
    CHECK(std::abs(a->grad[i] - 2.0 * a->value[i] / n) < 1e-12);
  }
  for (int64_t i = 0; i < b->value.numel(); ++i) {
    CHECK(std::abs(b->grad[i] - 2.0 * b->value[i] / n) < 1e-12);
  }
}

TEST_CASE("reflect_pad2d mirrors without repeating the edge") {
  Tensor t({1, 1, 1, 3});
  t[0] = 1.0;
  t[1] = 2.0;
  t[2] = 3.0;
  Var y = reflect_pad2d(make_var(std::move(t)), 0);
  CHECK(y->value.numel() == 3);
  Tensor t2({1, 1, 3, 3});
  for (int64_t i = 0; i < 9; ++i) t2[i] = static_cast<double>(i);
  Var p = reflect_pad2d(make_var(std::move(t2)), 1);
  // row -1 mirrors row 1, column -1 mirrors column 1
  CHECK(p->value.at(0, 0, 0, 0) == doctest::Approx(4.0));
  CHECK(p->value.at(0, 0, 1, 0) == doctest::Approx(1.0));
  CHECK(p->value.at(0, 0, 4, 4) == doctest::Approx(4.0));
}

TEST_CASE("backward accumulates through shared subgraphs") {
  // y = x*x + x*x reuses the same node twice: dy/dx = 4x
  Rng rng(37);
  Var x = random_var(rng, {1, 1, 2, 2}, true);
  Var sq = mul(x, x);
  Var y = mean_all(add(sq, sq));
  backward(y);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(x->grad[i] == doctest::Approx(4.0 * x->value[i] / 4.0).epsilon(1e-12));
  }
}

TEST_CASE("NoGradGuard suppresses tape recording") {
  Rng rng(41);
  Var x = random_var(rng, {1, 1, 2, 2}, true);
  NoGradGuard guard;
  Var y = mul(x, x);
  CHECK(y->parents.empty());
  CHECK_FALSE(y->backward_fn);
}
