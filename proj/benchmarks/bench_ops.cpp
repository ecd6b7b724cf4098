#include <benchmark/benchmark.h>

#include "badiff/ops.hpp"
#include "badiff/rng.hpp"

using namespace badiff;

namespace {

void bm_conv2d_forward(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  RngStream rng(1);
  Tensor x = Tensor::randn({8, c, 16, 16}, rng);
  Tensor k = Tensor::randn({c, c, 3, 3}, rng, 0.1);
  Tensor b = Tensor::randn({c}, rng, 0.1);
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::conv2d(x, k, b, 1, 1));
  }
  state.SetItemsProcessed(state.iterations() * 8 * 16 * 16);
}

void bm_conv2d_train_step(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  RngStream rng(2);
  Tensor x = Tensor::randn({8, c, 16, 16}, rng, 1.0, true);
  Tensor k = Tensor::randn({c, c, 3, 3}, rng, 0.1, true);
  Tensor b = Tensor::randn({c}, rng, 0.1, true);
  for (auto _ : state) {
    x.zero_grad();
    k.zero_grad();
    b.zero_grad();
    ops::mean_all(ops::square(ops::conv2d(x, k, b, 1, 1))).backward();
  }
}

void bm_group_norm(benchmark::State& state) {
  RngStream rng(3);
  Tensor x = Tensor::randn({8, 32, 16, 16}, rng);
  Tensor g = Tensor::full({32}, 1.0);
  Tensor b = Tensor::zeros({32});
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::group_norm(x, g, b, 8));
  }
}

}  // namespace

BENCHMARK(bm_conv2d_forward)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_conv2d_train_step)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_group_norm)->Unit(benchmark::kMicrosecond);
