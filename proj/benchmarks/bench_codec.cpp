#include <benchmark/benchmark.h>

#include "badiff/codec.hpp"
#include "badiff/rng.hpp"

using namespace badiff;

namespace {

EntropyModelConfig bench_entropy_cfg() {
  EntropyModelConfig cfg;
  cfg.hyper_channels = 12;
  cfg.hyper_latent_channels = 6;
  cfg.context_channels = 12;
  cfg.fuse_channels = 24;
  return cfg;
}

void bm_pmf_to_cdf(benchmark::State& state) {
  RngStream rng(4);
  std::vector<double> pmf(64);
  double sum = 0.0;
  for (double& p : pmf) {
    p = std::exp(rng.normal());
    sum += p;
  }
  for (double& p : pmf) p /= sum;
  for (auto _ : state) {
    benchmark::DoNotOptimize(pmf_to_cdf(pmf));
  }
}

void bm_codec_roundtrip_16(benchmark::State& state) {
  ParamSet params;
  RngStream rng(5);
  EntropyModel em(params, "entropy", bench_entropy_cfg(), rng);
  SymbolGrid grid;
  grid.width = 16;
  grid.height = 16;
  grid.symbols.resize(256);
  RngStream grng(6);
  for (auto& s : grid.symbols) s = static_cast<uint16_t>(grng.uniform_index(kBins));
  for (auto _ : state) {
    Bitstream bs = codec_encode(grid, em, EntropyBudget{1.0});
    benchmark::DoNotOptimize(codec_decode(bs, em));
  }
  state.SetItemsProcessed(state.iterations() * 256);
}

void bm_logistic_bits(benchmark::State& state) {
  RngStream rng(7);
  for (auto _ : state) {
    double mu = rng.uniform(-32.0, 32.0);
    double sigma = std::exp(rng.uniform(std::log(0.01), std::log(30.0)));
    benchmark::DoNotOptimize(logistic_bits(static_cast<int>(rng.uniform_index(64)), mu, sigma));
  }
}

}  // namespace

BENCHMARK(bm_pmf_to_cdf)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_codec_roundtrip_16)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_logistic_bits)->Unit(benchmark::kNanosecond);
