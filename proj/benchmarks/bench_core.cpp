#include <benchmark/benchmark.h>

#include <random>

#include "rdseg/eed.hpp"
#include "rdseg/network.hpp"
#include "rdseg/ops.hpp"

using namespace rdseg;

namespace {

Tensor4<float> random_tensor(Shape4 s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Tensor4<float> t(s);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

Grid random_grid(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Grid g(n, n);
  for (auto& v : g.v) v = dist(rng);
  return g;
}

}  // namespace

static void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const auto x = random_tensor({1, c, 64, 64}, 1);
  const auto k = random_tensor({c, c, 3, 3}, 2);
  const auto b = random_tensor({1, c, 1, 1}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::conv2d(x, k, b));
  }
  state.SetItemsProcessed(state.iterations() * 64 * 64 * 9ll * c * c);
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32);

static void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const auto x = random_tensor({1, c, 64, 64}, 1);
  const auto k = random_tensor({c, c, 3, 3}, 2);
  const auto g = random_tensor({1, c, 64, 64}, 4);
  for (auto _ : state) {
    Tensor4<float> gx(x.shape), gk(k.shape), gb({1, c, 1, 1});
    ops::conv2d_backward(x, k, g, &gx, &gk, &gb);
    benchmark::DoNotOptimize(gx.data.data());
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(16);

static void BM_MaxPool(benchmark::State& state) {
  const auto x = random_tensor({1, 16, 128, 128}, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::maxpool2x2(x));
  }
}
BENCHMARK(BM_MaxPool);

static void BM_BatchNormTrain(benchmark::State& state) {
  const auto x = random_tensor({4, 16, 64, 64}, 6);
  const auto gamma = Tensor4<float>::full({1, 16, 1, 1}, 1.0f);
  const Tensor4<float> beta({1, 16, 1, 1});
  for (auto _ : state) {
    Tensor4<float> rm({1, 16, 1, 1});
    auto rv = Tensor4<float>::full({1, 16, 1, 1}, 1.0f);
    benchmark::DoNotOptimize(ops::batch_norm_train(x, gamma, beta, rm, rv, 0.9f, 1e-5f,
                                                   static_cast<ops::BnCache<float>*>(nullptr)));
  }
}
BENCHMARK(BM_BatchNormTrain);

static void BM_DiffuseStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto img = random_grid(n, 7);
  const auto field = build_diffusion_tensor(structure_tensor(img, 1.0, 2.0), auto_lambda(img));
  for (auto _ : state) {
    benchmark::DoNotOptimize(diffuse_step(img, field, 0.15));
  }
}
BENCHMARK(BM_DiffuseStep)->Arg(64)->Arg(256);

static void BM_EedFilter(benchmark::State& state) {
  const auto img = random_grid(128, 8);
  EedParams p;
  p.lambda = auto_lambda(img);
  p.steps = 10;
  for (auto _ : state) {
    benchmark::DoNotOptimize(eed_filter(img, p));
  }
}
BENCHMARK(BM_EedFilter);

static void BM_UnetForwardInfer(benchmark::State& state) {
  ModelConfig cfg;
  cfg.levels = 3;
  cfg.base_channels = 8;
  cfg.input_size = 64;
  auto model = build_unet<float>(cfg, 9);
  unet_forward(model, random_tensor({2, 1, 64, 64}, 10), ForwardMode::train);
  const auto x = random_tensor({1, 1, 64, 64}, 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(unet_forward_infer(model, x));
  }
}
BENCHMARK(BM_UnetForwardInfer);

static void BM_UnetTrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.levels = 3;
  cfg.base_channels = 8;
  cfg.input_size = 64;
  auto model = build_unet<float>(cfg, 12);
  const auto x = random_tensor({8, 1, 64, 64}, 13);
  Tensor4<float> y({8, 1, 64, 64});
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = i % 7 == 0 ? 1.0f : 0.0f;
  for (auto _ : state) {
    auto fwd = unet_forward_train(model, x);
    auto loss = fwd.tape.soft_dice(fwd.output, y, 1.0f);
    fwd.tape.backward(loss);
    benchmark::DoNotOptimize(fwd.tape.grad(fwd.input));
  }
}
BENCHMARK(BM_UnetTrainStep);

BENCHMARK_MAIN();
