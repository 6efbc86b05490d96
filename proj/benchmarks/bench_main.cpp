// Microbenchmarks for the numerical hot paths: convolution, pooling, the
// Dice objective, preprocessing, quantification and a full training step.

#include <benchmark/benchmark.h>

#include <cstddef>
#include <vector>

#include "cq/geometry.hpp"
#include "cq/graph.hpp"
#include "cq/imaging.hpp"
#include "cq/losses.hpp"
#include "cq/metrics.hpp"
#include "cq/networks.hpp"
#include "cq/optimizer.hpp"
#include "cq/rng.hpp"
#include "cq/tensor.hpp"
#include "cq/train.hpp"

namespace {

cq::Tensor random_tensor(const cq::Shape& shape, cq::Rng& rng, float lo = 0.0f,
                         float hi = 1.0f) {
  cq::Tensor t(shape);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

cq::ConvSpec spec3x3(std::size_t channels) {
  cq::ConvSpec spec;
  spec.kernel = {3, 3};
  spec.dilation = {1, 1};
  spec.in_channels = channels;
  spec.out_channels = channels;
  return spec;
}

void BM_Conv2dForward(benchmark::State& state) {
  cq::Rng rng(1);
  const cq::Tensor x = random_tensor({1, 16, 80, 80}, rng);
  cq::Parameter w{"w", random_tensor({16, 16, 3, 3}, rng, -0.1f, 0.1f)};
  cq::Parameter b{"b", random_tensor({16}, rng, -0.1f, 0.1f)};
  const cq::ConvSpec spec = spec3x3(16);
  for (auto _ : state) {
    cq::Graph<float> g;
    const auto y = g.conv_nd(g.input(x), g.param(w), g.param(b), spec);
    benchmark::DoNotOptimize(g.value(y).data.data());
  }
}
BENCHMARK(BM_Conv2dForward)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  cq::Rng rng(2);
  const cq::Tensor x = random_tensor({1, 16, 80, 80}, rng);
  cq::Parameter w{"w", random_tensor({16, 16, 3, 3}, rng, -0.1f, 0.1f)};
  cq::Parameter b{"b", random_tensor({16}, rng, -0.1f, 0.1f)};
  const cq::ConvSpec spec = spec3x3(16);
  for (auto _ : state) {
    cq::Graph<float> g;
    const auto y = g.conv_nd(g.input(x), g.param(w), g.param(b), spec);
    g.backward(g.mean(y));
    benchmark::DoNotOptimize(g.grad_of(w).data.data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMillisecond);

void BM_MaxPool2d(benchmark::State& state) {
  cq::Rng rng(3);
  const cq::Tensor x = random_tensor({1, 16, 80, 80}, rng);
  for (auto _ : state) {
    cq::Graph<float> g;
    const auto y = g.maxpool_nd(g.input(x), {2, 2}, {2, 2});
    benchmark::DoNotOptimize(g.value(y).data.data());
  }
}
BENCHMARK(BM_MaxPool2d)->Unit(benchmark::kMillisecond);

void BM_SoftDiceLoss(benchmark::State& state) {
  cq::Rng rng(4);
  const cq::Tensor probs = random_tensor({4, 3, 80, 80}, rng, 0.01f, 0.99f);
  cq::Tensor onehot({4, 3, 80, 80});
  for (std::size_t n = 0; n < 4; ++n) {
    for (std::size_t y = 0; y < 80; ++y) {
      for (std::size_t x = 0; x < 80; ++x) {
        const std::size_t c = rng.below(3);
        onehot.data[((n * 3 + c) * 80 + y) * 80 + x] = 1.0f;
      }
    }
  }
  const cq::LossWeights weights;
  for (auto _ : state) {
    cq::Graph<float> g;
    const auto loss = cq::soft_dice_loss(g, g.input(probs), g.input(onehot), weights);
    g.backward(loss);
    benchmark::DoNotOptimize(g.value(loss).data.data());
  }
}
BENCHMARK(BM_SoftDiceLoss)->Unit(benchmark::kMillisecond);

void BM_Clahe(benchmark::State& state) {
  cq::Rng rng(5);
  const cq::Tensor image = random_tensor({80, 80}, rng);
  for (auto _ : state) {
    cq::Tensor out = cq::clahe(image);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(BM_Clahe)->Unit(benchmark::kMillisecond);

cq::PhantomResult benchmark_phantom() {
  cq::PhantomParams params;
  params.seed = 99;
  return cq::generate_phantom(params);
}

void BM_QuantifySequence(benchmark::State& state) {
  const cq::PhantomResult phantom = benchmark_phantom();
  for (auto _ : state) {
    std::vector<cq::IndexVector> indices = cq::quantify_sequence(phantom.masks);
    benchmark::DoNotOptimize(indices.data());
  }
}
BENCHMARK(BM_QuantifySequence)->Unit(benchmark::kMillisecond);

void BM_Hausdorff(benchmark::State& state) {
  const cq::PhantomResult phantom = benchmark_phantom();
  const cq::Grid2D a = phantom.masks.frame(0);
  const cq::Grid2D b = phantom.masks.frame(phantom.masks.frames / 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cq::hausdorff(a, b, cq::kMyocardium, 1.0));
  }
}
BENCHMARK(BM_Hausdorff)->Unit(benchmark::kMillisecond);

void BM_DrUnetForward(benchmark::State& state) {
  cq::Rng rng(6);
  cq::DrUnetConfig config;  // 16 base filters, depth 4
  cq::DrUnet net(config, rng);
  const cq::Tensor x = random_tensor({1, 1, 80, 80}, rng);
  for (auto _ : state) {
    cq::Graph<float> g;
    const auto y = net.forward(g, g.input(x), cq::BatchNormMode::kInfer);
    benchmark::DoNotOptimize(g.value(y).data.data());
  }
}
BENCHMARK(BM_DrUnetForward)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  cq::Rng rng(7);
  cq::DrUnetConfig config;
  config.base_filters = 8;
  config.depth = 2;
  cq::DrUnet net(config, rng);
  cq::Adam adam(cq::AdamConfig{});
  const cq::Tensor x = random_tensor({2, 1, 32, 32}, rng);
  cq::Tensor onehot({2, 3, 32, 32});
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t px = 0; px < 32; ++px) {
        const std::size_t c = rng.below(3);
        onehot.data[((n * 3 + c) * 32 + y) * 32 + px] = 1.0f;
      }
    }
  }
  const cq::LossWeights weights;
  for (auto _ : state) {
    cq::Graph<float> g;
    const auto probs = net.forward(g, g.input(x), cq::BatchNormMode::kTrain);
    const auto loss = cq::soft_dice_loss(g, probs, g.input(onehot), weights);
    g.backward(loss);
    adam.step(g, net.parameters());
    benchmark::DoNotOptimize(g.value(loss).data.data());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
