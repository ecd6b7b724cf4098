#include "badiff/codec.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "badiff/errors.hpp"

namespace badiff {

namespace {

constexpr uint32_t kTop = 1u << 24;
constexpr uint32_t kBot = 1u << 16;

// hyperprior latent quantization step and fixed prior spread (in symbols)
constexpr double kHyperDelta = 1.0 / 16.0;
constexpr double kHyperPriorSigma = 24.0;
constexpr int kHyperSymbols = 256;

const FrozenCdf& hyper_prior_cdf() {
  static const FrozenCdf cdf = [] {
    std::vector<double> pmf(kHyperSymbols);
    double sum = 0.0;
    for (int s = 0; s < kHyperSymbols; ++s) {
      double z = (s - 128.0) / kHyperPriorSigma;
      pmf[static_cast<size_t>(s)] = std::exp(-0.5 * z * z);
      sum += pmf[static_cast<size_t>(s)];
    }
    for (double& p : pmf) p /= sum;
    return pmf_to_cdf(pmf);
  }();
  return cdf;
}

int quantize_hyper(double z) {
  int s = static_cast<int>(std::lround(z / kHyperDelta)) + 128;
  return std::min(kHyperSymbols - 1, std::max(0, s));
}

double dequantize_hyper(int s) { return (s - 128) * kHyperDelta; }

}  // namespace

FrozenCdf pmf_to_cdf(const std::vector<double>& pmf) {
  int n = static_cast<int>(pmf.size());
  if (n < 2) throw std::invalid_argument("pmf_to_cdf: need at least two symbols");
  if (static_cast<uint32_t>(n) > FrozenCdf::kTotal) {
    throw std::invalid_argument("pmf_to_cdf: too many symbols for 16-bit totals");
  }
  double sum = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0)) throw std::invalid_argument("pmf_to_cdf: degenerate pmf");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("pmf_to_cdf: pmf does not sum to 1");
  }

  std::vector<uint32_t> freq(static_cast<size_t>(n));
  std::vector<std::pair<double, int>> remainder(static_cast<size_t>(n));
  int64_t assigned = 0;
  for (int k = 0; k < n; ++k) {
    double exact = pmf[static_cast<size_t>(k)] / sum * FrozenCdf::kTotal;
    double fl = std::floor(exact);
    freq[static_cast<size_t>(k)] = static_cast<uint32_t>(fl);
    remainder[static_cast<size_t>(k)] = {exact - fl, k};
    assigned += static_cast<int64_t>(fl);
  }
  // largest remainders first, index breaking ties, absorb the deficit
  std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  int64_t deficit = static_cast<int64_t>(FrozenCdf::kTotal) - assigned;
  for (int64_t i = 0; i < deficit; ++i) {
    ++freq[static_cast<size_t>(remainder[static_cast<size_t>(i) % n].second)];
  }
  // floor every symbol at 1, taking the excess from the largest entries
  int64_t added = 0;
  for (auto& f : freq) {
    if (f == 0) {
      f = 1;
      ++added;
    }
  }
  while (added > 0) {
    auto it = std::max_element(freq.begin(), freq.end());
    if (*it <= 1) throw std::invalid_argument("pmf_to_cdf: degenerate pmf");
    int64_t take = std::min<int64_t>(added, *it - 1);
    *it -= static_cast<uint32_t>(take);
    added -= take;
  }

  FrozenCdf cdf;
  cdf.cum.resize(static_cast<size_t>(n) + 1);
  cdf.cum[0] = 0;
  for (int k = 0; k < n; ++k) {
    cdf.cum[static_cast<size_t>(k) + 1] =
        cdf.cum[static_cast<size_t>(k)] + freq[static_cast<size_t>(k)];
  }
  if (cdf.cum.back() != FrozenCdf::kTotal) {
    throw std::invalid_argument("pmf_to_cdf: internal total mismatch");
  }
  return cdf;
}

void RangeEncoder::normalize() {
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
    bytes_.push_back(static_cast<uint8_t>(low_ >> 24));
    low_ <<= 8;
    range_ <<= 8;
  }
}

void RangeEncoder::encode(const FrozenCdf& cdf, int symbol) {
  if (symbol < 0 || symbol >= cdf.symbol_count()) {
    throw std::invalid_argument("range encoder: symbol out of range");
  }
  uint32_t r = range_ / FrozenCdf::kTotal;
  low_ += r * cdf.cum[static_cast<size_t>(symbol)];
  range_ = r * cdf.freq(symbol);
  normalize();
}

std::vector<uint8_t> RangeEncoder::finish() {
  for (int i = 0; i < 4; ++i) {
    bytes_.push_back(static_cast<uint8_t>(low_ >> 24));
    low_ <<= 8;
  }
  return std::move(bytes_);
}

RangeDecoder::RangeDecoder(const uint8_t* data, size_t size)
    : data_(data), size_(size) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  if (pos_ >= size_) throw format_error("range decoder: truncated stream");
  return data_[pos_++];
}

void RangeDecoder::normalize() {
  while ((low_ ^ (low_ + range_)) < kTop ||
         (range_ < kBot && ((range_ = (0u - low_) & (kBot - 1)), true))) {
    code_ = (code_ << 8) | next_byte();
    low_ <<= 8;
    range_ <<= 8;
  }
}

int RangeDecoder::decode(const FrozenCdf& cdf) {
  uint32_t r = range_ / FrozenCdf::kTotal;
  uint32_t val = (code_ - low_) / r;
  if (val >= FrozenCdf::kTotal) throw format_error("range decoder: corrupt stream");
  // largest k with cum[k] <= val
  auto it = std::upper_bound(cdf.cum.begin(), cdf.cum.end(), val);
  int symbol = static_cast<int>(it - cdf.cum.begin()) - 1;
  low_ += r * cdf.cum[static_cast<size_t>(symbol)];
  range_ = r * cdf.freq(symbol);
  normalize();
  return symbol;
}

double Bitstream::realized_bpp() const {
  if (width == 0 || height == 0) return 0.0;
  return 8.0 * static_cast<double>(total_bytes()) /
         (static_cast<double>(width) * height);
}

double Bitstream::body_bpp() const {
  if (width == 0 || height == 0) return 0.0;
  return 8.0 * static_cast<double>(body.size()) /
         (static_cast<double>(width) * height);
}

namespace {

void put_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(static_cast<uint8_t>(x & 0xff));
  v.push_back(static_cast<uint8_t>(x >> 8));
}

void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) {
    v.push_back(static_cast<uint8_t>((x >> (8 * i)) & 0xff));
  }
}

uint16_t get_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (static_cast<uint16_t>(p[1]) << 8));
}

uint32_t get_u32(const uint8_t* p) {
  uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(p[i]) << (8 * i);
  return x;
}

}  // namespace

std::vector<uint8_t> Bitstream::serialize() const {
  std::vector<uint8_t> out;
  out.reserve(total_bytes());
  out.push_back('B');
  out.push_back('A');
  out.push_back('D');
  out.push_back('F');
  out.push_back(version);
  put_u16(out, width);
  put_u16(out, height);
  put_u16(out, h_target_milli_bpp);
  put_u32(out, static_cast<uint32_t>(hyper.size()));
  put_u32(out, grid_crc);
  out.insert(out.end(), hyper.begin(), hyper.end());
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

Bitstream Bitstream::parse(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes) throw format_error("bitstream: header truncated");
  if (bytes[0] != 'B' || bytes[1] != 'A' || bytes[2] != 'D' || bytes[3] != 'F') {
    throw format_error("bitstream: bad magic");
  }
  Bitstream bs;
  bs.version = bytes[4];
  if (bs.version != 1) {
    throw format_error("bitstream: unsupported version " + std::to_string(bs.version));
  }
  bs.width = get_u16(&bytes[5]);
  bs.height = get_u16(&bytes[7]);
  bs.h_target_milli_bpp = get_u16(&bytes[9]);
  uint32_t hyper_len = get_u32(&bytes[11]);
  bs.grid_crc = get_u32(&bytes[15]);
  if (bytes.size() < kHeaderBytes + hyper_len) {
    throw format_error("bitstream: hyper segment truncated");
  }
  bs.hyper.assign(bytes.begin() + kHeaderBytes,
                  bytes.begin() + kHeaderBytes + hyper_len);
  bs.body.assign(bytes.begin() + kHeaderBytes + hyper_len, bytes.end());
  return bs;
}

uint32_t crc32_ieee(const uint8_t* data, size_t size) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int j = 0; j < 8; ++j) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < size; ++i) {
    crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  }
  return crc ^ 0xFFFFFFFFu;
}

namespace {

uint32_t grid_checksum(const SymbolGrid& grid) {
  std::vector<uint8_t> bytes(grid.symbols.size());
  for (size_t i = 0; i < grid.symbols.size(); ++i) {
    bytes[i] = static_cast<uint8_t>(grid.symbols[i]);
  }
  return crc32_ieee(bytes.data(), bytes.size());
}

}  // namespace

Bitstream codec_encode(const SymbolGrid& grid, const EntropyModel& model,
                       const EntropyBudget& budget) {
  Bitstream bs;
  long milli = std::lround(std::min(65.535, std::max(0.0, budget.bpp)) * 1000.0);
  bs.h_target_milli_bpp = static_cast<uint16_t>(milli);
  if (grid.width == 0 && grid.height == 0) {
    bs.grid_crc = crc32_ieee(nullptr, 0);
    return bs;
  }
  if (!grid.valid()) throw std::invalid_argument("codec_encode: invalid grid");
  if (grid.width > 65535 || grid.height > 65535) {
    throw std::invalid_argument("codec_encode: grid too large for header");
  }
  if (grid.width % 4 != 0 || grid.height % 4 != 0) {
    throw std::invalid_argument("codec_encode: grid size must be a multiple of 4");
  }
  bs.width = static_cast<uint16_t>(grid.width);
  bs.height = static_cast<uint16_t>(grid.height);
  bs.grid_crc = grid_checksum(grid);

  NoGradGuard ng;
  // hyperprior from the dequantized grid, quantized for transmission; both
  // sides then run the feature branch on the same reconstructed latent
  Tensor deq_img = dequantize_grid(grid);
  Tensor z = model.hyper_encode(deq_img);
  std::vector<int> zsyms(static_cast<size_t>(z.numel()));
  Tensor zhat = Tensor::zeros(z.shape());
  for (int64_t i = 0; i < z.numel(); ++i) {
    zsyms[static_cast<size_t>(i)] = quantize_hyper(z.data()[i]);
    zhat.data()[i] = dequantize_hyper(zsyms[static_cast<size_t>(i)]);
  }
  RangeEncoder henc;
  const FrozenCdf& prior = hyper_prior_cdf();
  for (int s : zsyms) henc.encode(prior, s);
  bs.hyper = henc.finish();

  Tensor hyper_feat = model.hyper_features(zhat);

  std::vector<double> deq(grid.symbols.size());
  for (size_t i = 0; i < deq.size(); ++i) deq[i] = bin_center_x(grid.symbols[i]);

  RangeEncoder enc;
  for (int y = 0; y < grid.height; ++y) {
    for (int x = 0; x < grid.width; ++x) {
      auto pp = model.predict_pixel(deq, grid.width, grid.height, x, y, hyper_feat, 0);
      auto pmf = logistic_pmf_vector(pp.mu, pp.sigma);
      FrozenCdf cdf = pmf_to_cdf(std::vector<double>(pmf.begin(), pmf.end()));
      enc.encode(cdf, grid.symbols[static_cast<size_t>(y) * grid.width + x]);
    }
  }
  bs.body = enc.finish();
  return bs;
}

SymbolGrid codec_decode(const Bitstream& bs, const EntropyModel& model) {
  SymbolGrid grid;
  grid.width = bs.width;
  grid.height = bs.height;
  if (bs.width == 0 && bs.height == 0) {
    if (bs.grid_crc != crc32_ieee(nullptr, 0)) {
      throw format_error("codec_decode: checksum mismatch");
    }
    return grid;
  }
  if (bs.width % 4 != 0 || bs.height % 4 != 0) {
    throw format_error("codec_decode: bad grid size in header");
  }
  grid.symbols.assign(static_cast<size_t>(bs.width) * bs.height, 0);

  NoGradGuard ng;
  int zh = bs.height / 4, zw = bs.width / 4;
  int zc = model.config().hyper_latent_channels;
  Tensor zhat = Tensor::zeros({1, zc, zh, zw});
  {
    RangeDecoder hdec(bs.hyper.data(), bs.hyper.size());
    const FrozenCdf& prior = hyper_prior_cdf();
    for (int64_t i = 0; i < zhat.numel(); ++i) {
      zhat.data()[i] = dequantize_hyper(hdec.decode(prior));
    }
  }
  Tensor hyper_feat = model.hyper_features(zhat);

  std::vector<double> deq(grid.symbols.size(), 0.0);
  RangeDecoder dec(bs.body.data(), bs.body.size());
  for (int y = 0; y < bs.height; ++y) {
    for (int x = 0; x < bs.width; ++x) {
      auto pp = model.predict_pixel(deq, bs.width, bs.height, x, y, hyper_feat, 0);
      auto pmf = logistic_pmf_vector(pp.mu, pp.sigma);
      FrozenCdf cdf = pmf_to_cdf(std::vector<double>(pmf.begin(), pmf.end()));
      int sym = dec.decode(cdf);
      size_t idx = static_cast<size_t>(y) * bs.width + x;
      grid.symbols[idx] = static_cast<uint16_t>(sym);
      deq[idx] = bin_center_x(sym);
    }
  }
  if (grid_checksum(grid) != bs.grid_crc) {
    throw format_error(
        "codec_decode: checksum mismatch (corrupt stream or wrong model)");
  }
  return grid;
}

void write_bitstream(const Bitstream& bs, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("cannot open for writing: " + path);
  auto bytes = bs.serialize();
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw format_error("bitstream write failed: " + path);
}

Bitstream read_bitstream(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open bitstream: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return Bitstream::parse(bytes);
}

}  // namespace badiff
