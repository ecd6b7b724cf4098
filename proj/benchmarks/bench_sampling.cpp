#include <benchmark/benchmark.h>

#include "badiff/policy.hpp"

using namespace badiff;

namespace {

ModelConfig bench_model_cfg() {
  ModelConfig cfg;
  cfg.denoiser.levels = {12, 24};
  cfg.denoiser.blocks_per_level = 1;
  cfg.denoiser.time_embed_dim = 32;
  cfg.denoiser.entropy_embed_dim = 64;
  cfg.denoiser.groups = 4;
  cfg.embed_hidden = 64;
  cfg.entropy.hyper_channels = 12;
  cfg.entropy.hyper_latent_channels = 6;
  cfg.entropy.context_channels = 12;
  cfg.entropy.fuse_channels = 24;
  cfg.policy.hidden = {64, 32};
  cfg.schedule_steps = 50;
  cfg.beta_start = 0.002;
  cfg.beta_end = 0.35;
  return cfg;
}

void bm_full_sampling_run(benchmark::State& state) {
  Model model(bench_model_cfg());
  uint64_t seed = 1;
  for (auto _ : state) {
    // threshold above 1: the policy never fires, so this is the full chain
    benchmark::DoNotOptimize(adaptive_sample(model, EntropyBudget{1.0}, seed++, 1.1));
  }
  state.SetItemsProcessed(state.iterations() * 50);
}

void bm_denoiser_step(benchmark::State& state) {
  Model model(bench_model_cfg());
  RngStream rng(8);
  Tensor x = Tensor::randn({1, 1, 16, 16}, rng);
  std::vector<int> ts{25};
  std::vector<EntropyBudget> budgets{{1.0}};
  NoGradGuard ng;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.denoise(x, ts, budgets));
  }
}

}  // namespace

BENCHMARK(bm_full_sampling_run)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_denoiser_step)->Unit(benchmark::kMicrosecond);
