#include <cmath>
#include <filesystem>

#include "badiff/codec.hpp"
#include "badiff/rng.hpp"
#include "doctest.h"

using namespace badiff;

namespace {

EntropyModelConfig tiny_cfg() {
  EntropyModelConfig cfg;
  cfg.hyper_channels = 6;
  cfg.hyper_latent_channels = 4;
  cfg.context_channels = 6;
  cfg.fuse_channels = 8;
  return cfg;
}

std::vector<double> random_pmf(RngStream& rng, int n, double concentration) {
  std::vector<double> p(static_cast<size_t>(n));
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(concentration * rng.normal());
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

SymbolGrid random_grid(RngStream& rng, int w, int h) {
  SymbolGrid g;
  g.width = w;
  g.height = h;
  g.symbols.resize(static_cast<size_t>(w) * h);
  for (auto& s : g.symbols) s = static_cast<uint16_t>(rng.uniform_index(kBins));
  return g;
}

}  // namespace

TEST_CASE("pmf_to_cdf uniform and concentrated cases") {
  std::vector<double> uniform(64, 1.0 / 64);
  FrozenCdf cdf = pmf_to_cdf(uniform);
  for (int k = 0; k < 64; ++k) CHECK(cdf.freq(k) == 1024);
  CHECK(cdf.cum.back() == 65536);

  std::vector<double> conc(64, 1e-300);
  conc[17] = 1.0;
  double s = 0.0;
  for (double v : conc) s += v;
  for (double& v : conc) v /= s;
  FrozenCdf c2 = pmf_to_cdf(conc);
  for (int k = 0; k < 64; ++k) {
    if (k != 17) CHECK(c2.freq(k) == 1);
  }
  CHECK(c2.freq(17) == 65536 - 63);
  CHECK(c2.cum.back() == 65536);
}

TEST_CASE("pmf_to_cdf rejects degenerate input") {
  std::vector<double> bad(64, 0.0);
  CHECK_THROWS_AS(pmf_to_cdf(bad), std::invalid_argument);
  std::vector<double> negative(64, 1.0 / 63);
  negative[5] = -1.0 / 63;
  CHECK_THROWS_AS(pmf_to_cdf(negative), std::invalid_argument);
  std::vector<double> off(64, 1.0 / 64);
  off[0] += 1e-3;
  CHECK_THROWS_AS(pmf_to_cdf(off), std::invalid_argument);
}

TEST_CASE("quantized cross-entropy within 0.01 bpp over 1000 random pmfs") {
  RngStream rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    double conc = rng.uniform(0.3, 4.0);
    auto pmf = random_pmf(rng, 64, conc);
    FrozenCdf cdf = pmf_to_cdf(pmf);
    double exact = 0.0, quantized = 0.0;
    for (int k = 0; k < 64; ++k) {
      if (pmf[static_cast<size_t>(k)] <= 0.0) continue;
      exact -= pmf[static_cast<size_t>(k)] * std::log2(pmf[static_cast<size_t>(k)]);
      quantized -= pmf[static_cast<size_t>(k)] *
                   std::log2(static_cast<double>(cdf.freq(k)) / FrozenCdf::kTotal);
    }
    CHECK(quantized >= exact - 1e-12);  // quantization can only lose
    CHECK(quantized - exact < 0.01);
  }
}

TEST_CASE("raw range coder round trips under random tables") {
  RngStream rng(42);
  for (int trial = 0; trial < 300; ++trial) {
    int n = 1 + static_cast<int>(rng.uniform_index(400));
    std::vector<FrozenCdf> tables;
    std::vector<int> symbols;
    RangeEncoder enc;
    for (int i = 0; i < n; ++i) {
      auto pmf = random_pmf(rng, 64, rng.uniform(0.2, 5.0));
      tables.push_back(pmf_to_cdf(pmf));
      int sym = static_cast<int>(rng.uniform_index(64));
      symbols.push_back(sym);
      enc.encode(tables.back(), sym);
    }
    auto bytes = enc.finish();
    RangeDecoder dec(bytes.data(), bytes.size());
    for (int i = 0; i < n; ++i) {
      CHECK(dec.decode(tables[static_cast<size_t>(i)]) == symbols[static_cast<size_t>(i)]);
    }
  }
}

TEST_CASE("coded length stays within 64 bits of the information content") {
  RngStream rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    int n = 64 + static_cast<int>(rng.uniform_index(512));
    RangeEncoder enc;
    double info_bits = 0.0;
    for (int i = 0; i < n; ++i) {
      auto pmf = random_pmf(rng, 64, rng.uniform(0.3, 3.0));
      FrozenCdf cdf = pmf_to_cdf(pmf);
      int sym = static_cast<int>(rng.uniform_index(64));
      info_bits -= std::log2(static_cast<double>(cdf.freq(sym)) / FrozenCdf::kTotal);
      enc.encode(cdf, sym);
    }
    auto bytes = enc.finish();
    CHECK(8.0 * static_cast<double>(bytes.size()) <= info_bits + 64.0);
  }
}

TEST_CASE("full codec: lossless round trip on 1000 random grids") {
  ParamSet params;
  RngStream rng(44);
  EntropyModel em(params, "entropy", tiny_cfg(), rng);
  RngStream grid_rng(45);
  for (int trial = 0; trial < 1000; ++trial) {
    int w = 8, h = 8;
    if (trial % 7 == 0) {
      w = 12;
      h = 8;
    }
    SymbolGrid g = random_grid(grid_rng, w, h);
    Bitstream bs = codec_encode(g, em, EntropyBudget{1.0});
    SymbolGrid back = codec_decode(bs, em);
    REQUIRE(back.width == g.width);
    REQUIRE(back.height == g.height);
    CHECK(back.symbols == g.symbols);
  }
}

TEST_CASE("codec determinism: identical inputs give identical bytes") {
  ParamSet params;
  RngStream rng(46);
  EntropyModel em(params, "entropy", tiny_cfg(), rng);
  RngStream grid_rng(47);
  SymbolGrid g = random_grid(grid_rng, 16, 16);
  auto a = codec_encode(g, em, EntropyBudget{0.7}).serialize();
  auto b = codec_encode(g, em, EntropyBudget{0.7}).serialize();
  CHECK(a == b);
}

TEST_CASE("bitstream header round trip and realized bpp accounting") {
  ParamSet params;
  RngStream rng(48);
  EntropyModel em(params, "entropy", tiny_cfg(), rng);
  RngStream grid_rng(49);
  SymbolGrid g = random_grid(grid_rng, 16, 8);
  Bitstream bs = codec_encode(g, em, EntropyBudget{1.234});
  auto bytes = bs.serialize();
  Bitstream parsed = Bitstream::parse(bytes);
  CHECK(parsed.width == 16);
  CHECK(parsed.height == 8);
  CHECK(parsed.h_target_milli_bpp == 1234);
  CHECK(parsed.grid_crc == bs.grid_crc);
  CHECK(parsed.hyper == bs.hyper);
  CHECK(parsed.body == bs.body);
  CHECK(bs.realized_bpp() ==
        doctest::Approx(8.0 * bytes.size() / 128.0).epsilon(1e-12));
}

TEST_CASE("empty 0x0 grid round trips header-only") {
  ParamSet params;
  RngStream rng(50);
  EntropyModel em(params, "entropy", tiny_cfg(), rng);
  SymbolGrid empty;
  empty.width = 0;
  empty.height = 0;
  Bitstream bs = codec_encode(empty, em, EntropyBudget{0.5});
  CHECK(bs.hyper.empty());
  CHECK(bs.body.empty());
  auto bytes = bs.serialize();
  CHECK(bytes.size() == Bitstream::kHeaderBytes);
  SymbolGrid back = codec_decode(Bitstream::parse(bytes), em);
  CHECK(back.width == 0);
  CHECK(back.height == 0);
  CHECK(back.symbols.empty());
}

TEST_CASE("truncated and corrupted streams fail loudly") {
  ParamSet params;
  RngStream rng(51);
  EntropyModel em(params, "entropy", tiny_cfg(), rng);
  RngStream grid_rng(52);
  SymbolGrid g = random_grid(grid_rng, 8, 8);
  Bitstream bs = codec_encode(g, em, EntropyBudget{1.0});
  auto bytes = bs.serialize();

  // truncate the body
  std::vector<uint8_t> cut(bytes.begin(), bytes.end() - 6);
  Bitstream short_bs = Bitstream::parse(cut);
  CHECK_THROWS_AS(codec_decode(short_bs, em), format_error);

  // bad magic
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(Bitstream::parse(bad), format_error);

  // bad version
  auto badv = bytes;
  badv[4] = 9;
  CHECK_THROWS_AS(Bitstream::parse(badv), format_error);

  // flipped body bits: decode error or checksum mismatch, never silence
  int flips_detected = 0;
  for (int trial = 0; trial < 16; ++trial) {
    auto flipped = bytes;
    size_t pos = Bitstream::kHeaderBytes + bs.hyper.size() +
                 static_cast<size_t>(trial) % bs.body.size();
    flipped[pos] ^= static_cast<uint8_t>(1u << (trial % 8));
    try {
      SymbolGrid out = codec_decode(Bitstream::parse(flipped), em);
      CHECK(out.symbols != g.symbols);  // checksum should have caught this
    } catch (const format_error&) {
      ++flips_detected;
    }
  }
  CHECK(flips_detected == 16);  // crc catches every single-bit body flip
}

TEST_CASE("realized body rate tracks the model's own bpp estimate") {
  ParamSet params;
  RngStream rng(53);
  EntropyModel em(params, "entropy", tiny_cfg(), rng);
  RngStream img_rng(54);
  for (int trial = 0; trial < 5; ++trial) {
    // smooth-ish images: base + mild noise, in model range
    Tensor x = Tensor::zeros({1, 1, 16, 16});
    double base = img_rng.uniform(-0.5, 0.5);
    for (double& v : x.values()) v = std::clamp(base + 0.3 * img_rng.normal(), -1.0, 1.0);
    NoGradGuard ng;
    double h_phi = em.bpp(x).values()[0];
    SymbolGrid g = quantize_to_bins(x);
    Bitstream bs = codec_encode(g, em, EntropyBudget{1.0});
    double realized = bs.body_bpp();
    CHECK(std::abs(realized - h_phi) <= 0.02 * h_phi + 64.0 / 256.0);
  }
}
