#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "cq/checkpoint.hpp"
#include "cq/error.hpp"
#include "cq/gradcheck.hpp"
#include "cq/graph.hpp"
#include "cq/rng.hpp"
#include "cq/tensor.hpp"
#include "doctest.h"

using cq::ConvSpec;
using cq::Graph;
using cq::Padding;
using cq::Rng;
using cq::Shape;
using cq::TensorD;

namespace {

// Independent reference: direct nested-loop cross-correlation, one output
// element at a time. Shares no code with the im2col/GEMM implementation.
TensorD oracle_conv(const TensorD& x, const TensorD& w, const TensorD& b,
                    const std::vector<std::size_t>& stride,
                    const std::vector<std::size_t>& dilation, Padding padding) {
  const std::size_t rank = x.rank() - 2;
  const std::size_t batch = x.shape[0], cin = x.shape[1], cout = w.shape[0];
  std::vector<std::size_t> in(x.shape.begin() + 2, x.shape.end());
  std::vector<std::size_t> kernel(w.shape.begin() + 2, w.shape.end());
  std::vector<std::size_t> out(rank);
  std::vector<std::ptrdiff_t> pad(rank, 0);
  for (std::size_t a = 0; a < rank; ++a) {
    out[a] = cq::conv_output_extent(in[a], kernel[a], stride[a], dilation[a], padding);
    if (padding == Padding::kSame) {
      const std::size_t eff = dilation[a] * (kernel[a] - 1) + 1;
      const std::size_t span = (out[a] - 1) * stride[a] + eff;
      pad[a] = static_cast<std::ptrdiff_t>((span > in[a] ? span - in[a] : 0) / 2);
    }
  }
  Shape out_shape{batch, cout};
  out_shape.insert(out_shape.end(), out.begin(), out.end());
  TensorD y(out_shape);

  std::vector<std::size_t> oc(rank, 0), kc(rank, 0);
  std::size_t prod_out = 1, prod_k = 1;
  for (std::size_t a = 0; a < rank; ++a) {
    prod_out *= out[a];
    prod_k *= kernel[a];
  }
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t f = 0; f < cout; ++f) {
      std::fill(oc.begin(), oc.end(), 0);
      for (std::size_t p = 0; p < prod_out; ++p) {
        double acc = b.data[f];
        for (std::size_t c = 0; c < cin; ++c) {
          std::fill(kc.begin(), kc.end(), 0);
          for (std::size_t q = 0; q < prod_k; ++q) {
            bool inside = true;
            std::size_t x_flat = (n * cin + c);
            for (std::size_t a = 0; a < rank; ++a) {
              const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(oc[a] * stride[a]) - pad[a] +
                                       static_cast<std::ptrdiff_t>(kc[a] * dilation[a]);
              if (i < 0 || i >= static_cast<std::ptrdiff_t>(in[a])) {
                inside = false;
                break;
              }
              x_flat = x_flat * in[a] + static_cast<std::size_t>(i);
            }
            if (inside) {
              std::size_t w_flat = (f * cin + c);
              for (std::size_t a = 0; a < rank; ++a) w_flat = w_flat * kernel[a] + kc[a];
              acc += x.data[x_flat] * w.data[w_flat];
            }
            for (std::size_t a = rank; a-- > 0;) {
              if (++kc[a] < kernel[a]) break;
              kc[a] = 0;
            }
          }
        }
        std::size_t y_flat = (n * cout + f);
        for (std::size_t a = 0; a < rank; ++a) y_flat = y_flat * out[a] + oc[a];
        y.data[y_flat] = acc;
        for (std::size_t a = rank; a-- > 0;) {
          if (++oc[a] < out[a]) break;
          oc[a] = 0;
        }
      }
    }
  }
  return y;
}

// Brute-force window scan for max pooling, independent of the graph op.
TensorD oracle_maxpool2d(const TensorD& x, std::size_t wh, std::size_t ww, std::size_t sh,
                         std::size_t sw) {
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const std::size_t oh = (h - wh) / sh + 1, ow = (w - ww) / sw + 1;
  TensorD y({n, c, oh, ow});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double best = -1e300;
          for (std::size_t a = 0; a < wh; ++a) {
            for (std::size_t bb = 0; bb < ww; ++bb) {
              best = std::max(best, x.at({b, ch, i * sh + a, j * sw + bb}));
            }
          }
          y.at({b, ch, i, j}) = best;
        }
      }
    }
  }
  return y;
}

TensorD random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(shape);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Pushes every value at least `margin` away from zero so relu/maxpool kinks
// cannot flip between the two sides of a finite-difference probe.
TensorD away_from_zero(TensorD t, double margin = 0.2) {
  for (double& v : t.data) v += v >= 0.0 ? margin : -margin;
  return t;
}

ConvSpec spec2d(std::size_t k, Padding pad, std::size_t stride = 1, std::size_t dilation = 1) {
  ConvSpec s;
  s.kernel = {k, k};
  s.stride = {stride, stride};
  s.dilation = {dilation, dilation};
  s.padding = pad;
  return s;
}

}  // namespace

TEST_SUITE("tensor-core") {

TEST_CASE("conv 1x1 scalar product") {
  Graph<double> g;
  auto x = g.input(TensorD({1, 1, 1, 1}, {2.0}));
  auto w = g.input(TensorD({1, 1, 1, 1}, {3.0}));
  auto b = g.input(TensorD({1}, {0.0}));
  auto y = g.conv_nd(x, w, b, spec2d(1, Padding::kNone));
  CHECK(g.value(y).data[0] == doctest::Approx(6.0));
}

TEST_CASE("conv 3x3 all ones valid") {
  Graph<double> g;
  auto x = g.input(TensorD({1, 1, 3, 3}, std::vector<double>(9, 1.0)));
  auto w = g.input(TensorD({1, 1, 3, 3}, std::vector<double>(9, 1.0)));
  auto b = g.input(TensorD({1}, {0.0}));
  auto y = g.conv_nd(x, w, b, spec2d(3, Padding::kNone));
  REQUIRE(g.value(y).shape == Shape{1, 1, 1, 1});
  CHECK(g.value(y).data[0] == doctest::Approx(9.0));
}

TEST_CASE("conv 1-d dilated against hand result and oracle") {
  Graph<double> g;
  auto x = g.input(TensorD({1, 1, 5}, {1, 2, 3, 4, 5}));
  auto w = g.input(TensorD({1, 1, 2}, {1, 1}));
  auto b = g.input(TensorD({1}, {0.0}));
  ConvSpec spec;
  spec.kernel = {2};
  spec.stride = {1};
  spec.dilation = {2};
  spec.padding = Padding::kNone;
  auto y = g.conv_nd(x, w, b, spec);
  REQUIRE(g.value(y).shape == Shape{1, 1, 3});
  CHECK(g.value(y).data[0] == doctest::Approx(4.0));
  CHECK(g.value(y).data[1] == doctest::Approx(6.0));
  CHECK(g.value(y).data[2] == doctest::Approx(8.0));

  const TensorD ref = oracle_conv(TensorD({1, 1, 5}, {1, 2, 3, 4, 5}), TensorD({1, 1, 2}, {1, 1}),
                                  TensorD({1}, {0.0}), {1}, {2}, Padding::kNone);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g.value(y).data[i] == doctest::Approx(ref.data[i]));
}

TEST_CASE("conv matches nested-loop oracle on random shapes") {
  Rng rng(7);
  struct Case {
    Shape x, w;
    std::vector<std::size_t> stride, dilation;
    Padding pad;
  };
  const std::vector<Case> cases = {
      {{2, 3, 9, 8}, {4, 3, 3, 3}, {1, 1}, {1, 1}, Padding::kSame},
      {{1, 2, 10, 10}, {3, 2, 3, 3}, {2, 2}, {1, 1}, Padding::kSame},
      {{1, 2, 11, 11}, {2, 2, 3, 3}, {1, 1}, {4, 4}, Padding::kSame},
      {{2, 1, 8, 9}, {2, 1, 2, 3}, {2, 1}, {1, 2}, Padding::kNone},
      {{1, 2, 4, 6, 6}, {3, 2, 3, 1, 1}, {1, 1, 1}, {1, 1, 1}, Padding::kSame},
      {{1, 3, 4, 5, 5}, {2, 3, 1, 3, 3}, {1, 2, 2}, {1, 1, 1}, Padding::kSame},
      {{1, 1, 6, 7}, {1, 1, 1, 1}, {1, 1}, {1, 1}, Padding::kNone},
  };
  for (const Case& c : cases) {
    CAPTURE(cq::shape_to_string(c.x));
    CAPTURE(cq::shape_to_string(c.w));
    const TensorD x = random_tensor(c.x, rng);
    const TensorD w = random_tensor(c.w, rng);
    const TensorD b = random_tensor({c.w[0]}, rng);
    ConvSpec spec;
    spec.kernel.assign(c.w.begin() + 2, c.w.end());
    spec.stride = c.stride;
    spec.dilation = c.dilation;
    spec.padding = c.pad;
    Graph<double> g;
    auto y = g.conv_nd(g.input(x), g.input(w), g.input(b), spec);
    const TensorD ref = oracle_conv(x, w, b, c.stride, c.dilation, c.pad);
    REQUIRE(g.value(y).shape == ref.shape);
    for (std::size_t i = 0; i < ref.numel(); ++i) {
      CHECK(g.value(y).data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv linearity in the input") {
  Rng rng(11);
  const TensorD x = random_tensor({1, 2, 6, 6}, rng);
  const TensorD y = random_tensor({1, 2, 6, 6}, rng);
  const TensorD w = random_tensor({3, 2, 3, 3}, rng);
  const TensorD zero_bias({3});
  const double a = 2.0, b = -3.0;
  TensorD mix({1, 2, 6, 6});
  for (std::size_t i = 0; i < mix.numel(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];

  auto run = [&](const TensorD& in) {
    Graph<double> g;
    return g.value(g.conv_nd(g.input(in), g.input(w), g.input(zero_bias), spec2d(3, Padding::kSame)));
  };
  const TensorD fx = run(x), fy = run(y), fmix = run(mix);
  for (std::size_t i = 0; i < fmix.numel(); ++i) {
    CHECK(fmix.data[i] == doctest::Approx(a * fx.data[i] + b * fy.data[i]).epsilon(1e-5));
  }
}

TEST_CASE("conv rejects bad shapes") {
  Graph<double> g;
  auto x = g.input(TensorD({1, 2, 4, 4}, std::vector<double>(32, 0.0)));
  auto w = g.input(TensorD({1, 3, 3, 3}, std::vector<double>(27, 0.0)));
  auto b = g.input(TensorD({1}, {0.0}));
  CHECK_THROWS_AS(g.conv_nd(x, w, b, spec2d(3, Padding::kSame)), cq::Error);

  Graph<double> g2;
  auto x2 = g2.input(TensorD({1, 1, 2, 2}, std::vector<double>(4, 0.0)));
  auto w2 = g2.input(TensorD({1, 1, 3, 3}, std::vector<double>(9, 0.0)));
  auto b2 = g2.input(TensorD({1}, {0.0}));
  CHECK_THROWS_AS(g2.conv_nd(x2, w2, b2, spec2d(3, Padding::kNone)), cq::Error);
}

TEST_CASE("maxpool hand examples") {
  Graph<double> g;
  auto x = g.input(TensorD({1, 1, 4}, {1, 3, 2, 5}));
  auto y = g.maxpool_nd(x, {2}, {2});
  REQUIRE(g.value(y).shape == Shape{1, 1, 2});
  CHECK(g.value(y).data[0] == doctest::Approx(3.0));
  CHECK(g.value(y).data[1] == doctest::Approx(5.0));

  Graph<double> g2;
  auto c = g2.input(TensorD({1, 1, 4, 4}, 7.5));
  auto yc = g2.maxpool_nd(c, {2, 2}, {2, 2});
  REQUIRE(g2.value(yc).shape == Shape{1, 1, 2, 2});
  for (double v : g2.value(yc).data) CHECK(v == doctest::Approx(7.5));

  Graph<double> g3;
  std::vector<double> ramp(16);
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i);
  auto r = g3.input(TensorD({1, 1, 4, 4}, ramp));
  auto yr = g3.maxpool_nd(r, {2, 2}, {2, 2});
  CHECK(g3.value(yr).data == std::vector<double>{5, 7, 13, 15});
}

TEST_CASE("maxpool matches brute-force oracle") {
  Rng rng(13);
  const TensorD x = random_tensor({2, 3, 9, 7}, rng);
  Graph<double> g;
  auto y = g.maxpool_nd(g.input(x), {3, 3}, {2, 2});
  const TensorD ref = oracle_maxpool2d(x, 3, 3, 2, 2);
  REQUIRE(g.value(y).shape == ref.shape);
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    CHECK(g.value(y).data[i] == doctest::Approx(ref.data[i]));
  }
}

TEST_CASE("maxpool rejects oversized windows") {
  Graph<double> g;
  auto x = g.input(TensorD({1, 1, 2, 2}, 0.0));
  CHECK_THROWS_AS(g.maxpool_nd(x, {3, 3}, {1, 1}), cq::Error);
}

TEST_CASE("activation hand examples") {
  Graph<double> g;
  auto r = g.relu(g.input(TensorD({3}, {-1, 0, 2})));
  CHECK(g.value(r).data == std::vector<double>{0, 0, 2});

  auto s = g.sigmoid(g.input(TensorD({1}, {0.0})));
  CHECK(g.value(s).data[0] == doctest::Approx(0.5));

  auto sm = g.softmax_channels(g.input(TensorD({1, 3}, {0, 0, 0})));
  for (double v : g.value(sm).data) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto via_kind = g.activation(g.input(TensorD({3}, {-1, 0, 2})), cq::ActivationKind::kRelu);
  CHECK(g.value(via_kind).data == std::vector<double>{0, 0, 2});
}

TEST_CASE("softmax normalizes every spatial location") {
  Rng rng(17);
  const TensorD x = random_tensor({2, 5, 4, 3}, rng, -4.0, 4.0);
  Graph<double> g;
  const TensorD& y = g.value(g.softmax_channels(g.input(x)));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t h = 0; h < 4; ++h) {
      for (std::size_t w = 0; w < 3; ++w) {
        double s = 0.0;
        for (std::size_t c = 0; c < 5; ++c) s += y.at({n, c, h, w});
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("batchnorm hand examples") {
  cq::BatchNormStateT<double> state{TensorD({1}), TensorD({1}, {1.0})};

  SUBCASE("batch [1,3] gamma 2 beta 1") {
    Graph<double> g;
    auto x = g.input(TensorD({2, 1}, {1.0, 3.0}));
    auto gamma = g.input(TensorD({1}, {2.0}));
    auto beta = g.input(TensorD({1}, {1.0}));
    auto y = g.batchnorm(x, gamma, beta, state, cq::BatchNormMode::kTrain);
    CHECK(g.value(y).data[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(g.value(y).data[1] == doctest::Approx(3.0).epsilon(1e-4));
    // Running statistics move toward the batch statistics.
    CHECK(state.running_mean.data[0] == doctest::Approx(0.01 * 2.0));
    CHECK(state.running_var.data[0] == doctest::Approx(0.99 + 0.01 * 1.0));
  }

  SUBCASE("already standardized input is unchanged") {
    Graph<double> g;
    auto x = g.input(TensorD({2, 1}, {-1.0, 1.0}));
    auto gamma = g.input(TensorD({1}, {1.0}));
    auto beta = g.input(TensorD({1}, {0.0}));
    auto y = g.batchnorm(x, gamma, beta, state, cq::BatchNormMode::kTrain);
    CHECK(g.value(y).data[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(g.value(y).data[1] == doctest::Approx(1.0).epsilon(1e-4));
  }

  SUBCASE("constant channel collapses to beta") {
    Graph<double> g;
    auto x = g.input(TensorD({3, 1}, {4.0, 4.0, 4.0}));
    auto gamma = g.input(TensorD({1}, {2.5}));
    auto beta = g.input(TensorD({1}, {-0.5}));
    auto y = g.batchnorm(x, gamma, beta, state, cq::BatchNormMode::kTrain);
    for (double v : g.value(y).data) CHECK(v == doctest::Approx(-0.5));
  }

  SUBCASE("infer mode uses running statistics") {
    cq::BatchNormStateT<double> frozen{TensorD({1}, {2.0}), TensorD({1}, {4.0})};
    Graph<double> g;
    auto x = g.input(TensorD({1, 1}, {4.0}));
    auto gamma = g.input(TensorD({1}, {1.0}));
    auto beta = g.input(TensorD({1}, {0.0}));
    auto y = g.batchnorm(x, gamma, beta, frozen, cq::BatchNormMode::kInfer);
    CHECK(g.value(y).data[0] == doctest::Approx((4.0 - 2.0) / std::sqrt(4.0 + 1e-5)));
    // Infer mode must not touch the running statistics.
    CHECK(frozen.running_mean.data[0] == doctest::Approx(2.0));
    CHECK(frozen.running_var.data[0] == doctest::Approx(4.0));
  }
}

TEST_CASE("dense hand examples") {
  Graph<double> g;
  auto x = g.input(TensorD({1, 2}, {1.0, 2.0}));
  auto w = g.input(TensorD({2, 2}, {1.0, 1.0, 1.0, -1.0}));
  auto b = g.input(TensorD({2}, {0.0, 0.0}));
  auto y = g.dense(x, w, b);
  CHECK(g.value(y).data == std::vector<double>{3.0, -1.0});

  auto id = g.dense(g.input(TensorD({1, 2}, {5.0, -2.0})),
                    g.input(TensorD({2, 2}, {1.0, 0.0, 0.0, 1.0})), g.input(TensorD({2})));
  CHECK(g.value(id).data == std::vector<double>{5.0, -2.0});

  auto zero = g.dense(g.input(TensorD({1, 2})), g.input(TensorD({2, 2}, {1, 2, 3, 4})),
                      g.input(TensorD({2}, {0.7, -0.3})));
  CHECK(g.value(zero).data == std::vector<double>{0.7, -0.3});
}

TEST_CASE("backward hand examples") {
  SUBCASE("sum gives all-ones gradient") {
    Graph<double> g;
    TensorD x({2, 3}, {1, 2, 3, 4, 5, 6});
    x.requires_grad = true;
    auto xi = g.input(x);
    auto loss = g.sum(xi);
    g.backward(loss);
    for (double v : g.grad(xi).data) CHECK(v == doctest::Approx(1.0));
  }

  SUBCASE("sum of squares doubles the input") {
    Graph<double> g;
    TensorD x({2}, {1.0, 2.0});
    x.requires_grad = true;
    auto xi = g.input(x);
    auto loss = g.sum(g.mul(xi, xi));
    g.backward(loss);
    CHECK(g.grad(xi).data[0] == doctest::Approx(2.0));
    CHECK(g.grad(xi).data[1] == doctest::Approx(4.0));
  }

  SUBCASE("parameters off the loss path get zero gradients") {
    Graph<double> g;
    cq::ParameterD used{"used", TensorD({2}, {1.0, 2.0})};
    cq::ParameterD unused{"unused", TensorD({3}, {1.0, 1.0, 1.0})};
    auto u = g.param(used);
    g.param(unused);
    g.backward(g.sum(u));
    CHECK(g.grad_of(used).data == std::vector<double>{1.0, 1.0});
    CHECK(g.grad_of(unused).data == std::vector<double>{0.0, 0.0, 0.0});
  }

  SUBCASE("non-scalar seed is rejected") {
    Graph<double> g;
    auto x = g.input(TensorD({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(g.backward(x), cq::Error);
  }
}

TEST_CASE("he_init statistics and determinism") {
  {
    Rng rng(42);
    const TensorD t = cq::he_init<double>({4, 2}, 8, rng);
    Rng rng2(42);
    const TensorD t2 = cq::he_init<double>({4, 2}, 8, rng2);
    CHECK(t.data == t2.data);  // bit-identical under a fixed seed
  }
  {
    Rng rng(1234);
    const TensorD t = cq::he_init<double>({100000}, 2, rng);
    double mean = 0.0;
    for (double v : t.data) mean += v;
    mean /= static_cast<double>(t.numel());
    double var = 0.0;
    for (double v : t.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(t.numel());
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));
    CHECK(std::abs(mean) < 0.02);
  }
}

TEST_CASE("finite differences confirm every op gradient") {
  Rng rng(19);
  using G = Graph<double>;
  using Ids = std::vector<G::NodeId>;
  auto check = [](const char* name, std::vector<TensorD> inputs, const cq::GraphBuilderD& build) {
    const cq::GradCheckResult r = cq::check_gradients(name, std::move(inputs), build);
    CAPTURE(r.name);
    CAPTURE(r.max_rel_err);
    CHECK(r.pass);
  };

  check("conv2d_same",
        {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
         random_tensor({3}, rng)},
        [](G& g, const Ids& in) {
          ConvSpec s;
          s.kernel = {3, 3};
          s.padding = Padding::kSame;
          return g.sum(g.conv_nd(in[0], in[1], in[2], s));
        });
  check("conv2d_strided_dilated",
        {random_tensor({2, 1, 7, 7}, rng), random_tensor({2, 1, 3, 3}, rng),
         random_tensor({2}, rng)},
        [](G& g, const Ids& in) {
          ConvSpec s;
          s.kernel = {3, 3};
          s.stride = {2, 2};
          s.dilation = {2, 2};
          s.padding = Padding::kSame;
          return g.sum(g.conv_nd(in[0], in[1], in[2], s));
        });
  check("conv3d_factorized",
        {random_tensor({1, 2, 4, 4, 4}, rng), random_tensor({2, 2, 3, 1, 1}, rng),
         random_tensor({2}, rng)},
        [](G& g, const Ids& in) {
          ConvSpec s;
          s.kernel = {3, 1, 1};
          s.padding = Padding::kSame;
          return g.sum(g.conv_nd(in[0], in[1], in[2], s));
        });
  check("dense", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)},
        [](G& g, const Ids& in) { return g.sum(g.dense(in[0], in[1], in[2])); });
  check("maxpool", {away_from_zero(random_tensor({1, 2, 6, 6}, rng))},
        [](G& g, const Ids& in) { return g.sum(g.maxpool_nd(in[0], {2, 2}, {2, 2})); });
  check("relu", {away_from_zero(random_tensor({2, 3, 4}, rng))},
        [](G& g, const Ids& in) { return g.sum(g.relu(in[0])); });
  check("sigmoid", {random_tensor({2, 5}, rng, -3.0, 3.0)},
        [](G& g, const Ids& in) { return g.sum(g.mul(in[0], g.sigmoid(in[0]))); });
  check("softmax_channels", {random_tensor({2, 4, 3}, rng, -2.0, 2.0)},
        [](G& g, const Ids& in) {
          auto sm = g.softmax_channels(in[0]);
          return g.sum(g.mul(sm, sm));  // non-uniform seed exercises the Jacobian
        });
  check("batchnorm_train",
        {random_tensor({3, 2, 4}, rng), random_tensor({2}, rng, 0.5, 1.5),
         random_tensor({2}, rng)},
        [](G& g, const Ids& in) {
          cq::BatchNormStateT<double> state{TensorD({2}), TensorD({2}, 1.0)};
          auto y = g.batchnorm(in[0], in[1], in[2], state, cq::BatchNormMode::kTrain);
          return g.sum(g.mul(y, y));
        });
  check("batchnorm_infer",
        {random_tensor({3, 2, 4}, rng), random_tensor({2}, rng, 0.5, 1.5),
         random_tensor({2}, rng)},
        [](G& g, const Ids& in) {
          cq::BatchNormStateT<double> state{TensorD({2}, {0.2, -0.1}), TensorD({2}, {1.3, 0.8})};
          auto y = g.batchnorm(in[0], in[1], in[2], state, cq::BatchNormMode::kInfer);
          return g.sum(g.mul(y, y));
        });
  check("add_sub_mul_div",
        {random_tensor({3, 3}, rng), away_from_zero(random_tensor({3, 3}, rng), 0.5)},
        [](G& g, const Ids& in) {
          auto s = g.add(in[0], in[1]);
          auto d = g.div(g.mul(s, g.sub(in[0], in[1])), in[1]);
          return g.sum(d);
        });
  check("scale_add_scalar_log_clamp", {random_tensor({4}, rng, 0.3, 0.7)},
        [](G& g, const Ids& in) {
          auto c = g.clamp(in[0], 1e-7, 1.0 - 1e-7);
          return g.sum(g.scale(g.log(c), -0.5));
        });
  check("mean", {random_tensor({2, 6}, rng)},
        [](G& g, const Ids& in) { return g.mean(g.mul(in[0], in[0])); });
  check("concat_select",
        {random_tensor({2, 2, 3}, rng), random_tensor({2, 3, 3}, rng)},
        [](G& g, const Ids& in) {
          auto cat = g.concat_channels(in[0], in[1]);
          auto sel = g.select_channels(cat, {0, 4, 2});
          return g.sum(g.mul(sel, sel));
        });
  check("upsample_nearest", {random_tensor({1, 2, 3, 2}, rng)},
        [](G& g, const Ids& in) {
          auto up = g.upsample_nearest(in[0], {2, 3});
          return g.sum(g.mul(up, up));
        });
  check("permute_reshape", {random_tensor({2, 3, 4}, rng)},
        [](G& g, const Ids& in) {
          auto p = g.permute(in[0], {2, 0, 1});
          auto r = g.reshape(p, {4, 6});
          return g.sum(g.mul(r, r));
        });
  check("frame_spatial_mean", {random_tensor({1, 3, 2, 4, 4}, rng)},
        [](G& g, const Ids& in) {
          auto m = g.frame_spatial_mean(in[0]);
          return g.sum(g.mul(m, m));
        });
}

TEST_CASE("forward and backward are deterministic") {
  auto run = [](std::vector<double>& grad_out) {
    Rng rng(23);
    Graph<float> g;
    cq::Parameter w{"w", cq::he_init<float>({3, 2, 3, 3}, 18, rng)};
    cq::Parameter b{"b", cq::Tensor({3})};
    cq::Tensor x({1, 2, 6, 6});
    for (float& v : x.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    auto y = g.conv_nd(g.input(x), g.param(w), g.param(b), spec2d(3, Padding::kSame));
    auto loss = g.sum(g.mul(y, y));
    g.backward(loss);
    const cq::Tensor gw = g.grad_of(w);
    grad_out.assign(gw.data.begin(), gw.data.end());
    return g.value(loss).data[0];
  };
  std::vector<double> g1, g2;
  const float l1 = run(g1);
  const float l2 = run(g2);
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("checkpoint container round-trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "cq_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "weights.cqt").string();

  cq::TensorMap saved;
  Rng rng(29);
  cq::Tensor a({2, 3, 4});
  for (float& v : a.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  saved["layer1/weight"] = a;
  saved["layer1/bias"] = cq::Tensor({3}, {0.5f, -0.25f, 0.125f});
  cq::save_checkpoint(path, saved);

  const cq::TensorMap loaded = cq::load_checkpoint(path);
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded.count("layer1/weight") == 1);
  CHECK(loaded.at("layer1/weight").shape == Shape{2, 3, 4});
  CHECK(loaded.at("layer1/weight").data == a.data);
  CHECK(loaded.at("layer1/bias").data == std::vector<float>{0.5f, -0.25f, 0.125f});

  SUBCASE("bad magic is rejected") {
    const std::string bad = (dir / "bad.cqt").string();
    std::FILE* f = std::fopen(bad.c_str(), "wb");
    std::fputs("NOPE1234", f);
    std::fclose(f);
    CHECK_THROWS_AS(cq::load_checkpoint(bad), cq::Error);
  }
  SUBCASE("truncated file is rejected") {
    const std::string cut = (dir / "cut.cqt").string();
    std::FILE* src = std::fopen(path.c_str(), "rb");
    char buf[64];
    const std::size_t n = std::fread(buf, 1, sizeof buf, src);
    std::fclose(src);
    std::FILE* dst = std::fopen(cut.c_str(), "wb");
    std::fwrite(buf, 1, n / 2, dst);
    std::fclose(dst);
    CHECK_THROWS_AS(cq::load_checkpoint(cut), cq::Error);
  }
  SUBCASE("missing file is an io error") {
    try {
      cq::load_checkpoint((dir / "absent.cqt").string());
      FAIL("expected an error");
    } catch (const cq::Error& e) {
      CHECK(e.code() == cq::ErrorCode::kIo);
    }
  }
}

TEST_CASE("tensor shape validation") {
  CHECK_THROWS_AS(TensorD({2, 0, 3}), cq::Error);
  CHECK_THROWS_AS(TensorD({2}, {1.0, 2.0, 3.0}), cq::Error);
  CHECK_THROWS_AS(TensorD({2, 2}, {1, 2, 3, 4}).reshaped({3}), cq::Error);
  const TensorD t({2, 2}, {1, 2, 3, 4});
  CHECK(t.at({1, 0}) == doctest::Approx(3.0));
  CHECK(cq::shape_to_string({2, 2}) == "[2, 2]");
}

}  // TEST_SUITE
