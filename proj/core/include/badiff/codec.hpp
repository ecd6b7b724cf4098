#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "badiff/entropy_model.hpp"
#include "badiff/logistic.hpp"
#include "badiff/schedule.hpp"

namespace badiff {

// Cumulative frequency table with 16-bit precision: cum[k] is the mass below
// symbol k, cum[n] == 65536, and every symbol has frequency >= 1.
struct FrozenCdf {
  std::vector<uint32_t> cum;

  int symbol_count() const { return static_cast<int>(cum.size()) - 1; }
  uint32_t freq(int k) const { return cum[static_cast<size_t>(k) + 1] - cum[static_cast<size_t>(k)]; }
  static constexpr uint32_t kTotal = 1u << 16;
};

// Deterministic largest-remainder quantization of a probability vector.
// The pmf must be non-negative and sum to 1 within 1e-9.
FrozenCdf pmf_to_cdf(const std::vector<double>& pmf);

// Carry-less 32-bit range coder (Subbotin style renormalization).
class RangeEncoder {
 public:
  void encode(const FrozenCdf& cdf, int symbol);
  std::vector<uint8_t> finish();

 private:
  void normalize();
  uint32_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  std::vector<uint8_t> bytes_;
};

class RangeDecoder {
 public:
  RangeDecoder(const uint8_t* data, size_t size);
  int decode(const FrozenCdf& cdf);

 private:
  void normalize();
  uint8_t next_byte();
  uint32_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
  const uint8_t* data_;
  size_t size_;
  size_t pos_ = 0;
};

// Container format, little-endian:
//   "BADF" | version u8 | width u16 | height u16 | H_target_milli_bpp u16
//   | hyper payload length u32 | grid crc32 u32 | hyper bytes | body bytes
struct Bitstream {
  uint8_t version = 1;
  uint16_t width = 0;
  uint16_t height = 0;
  uint16_t h_target_milli_bpp = 0;
  uint32_t grid_crc = 0;
  std::vector<uint8_t> hyper;
  std::vector<uint8_t> body;

  static constexpr size_t kHeaderBytes = 4 + 1 + 2 + 2 + 2 + 4 + 4;

  size_t total_bytes() const { return kHeaderBytes + hyper.size() + body.size(); }
  double realized_bpp() const;
  double body_bpp() const;

  std::vector<uint8_t> serialize() const;
  static Bitstream parse(const std::vector<uint8_t>& bytes);
};

uint32_t crc32_ieee(const uint8_t* data, size_t size);

// Lossless coding of a symbol grid under the learned model: the hyperprior
// latent is 8-bit quantized and sent under a fixed discretized-Gaussian
// prior, then pixels are range-coded in raster order, each under the
// FrozenCdf derived from the causal context of already-decoded symbols.
Bitstream codec_encode(const SymbolGrid& grid, const EntropyModel& model,
                       const EntropyBudget& budget);
SymbolGrid codec_decode(const Bitstream& bs, const EntropyModel& model);

void write_bitstream(const Bitstream& bs, const std::string& path);
Bitstream read_bitstream(const std::string& path);

}  // namespace badiff
