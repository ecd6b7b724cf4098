#pragma once
#include <array>
#include <cstdint>
#include <vector>

#include "badiff/tensor.hpp"

namespace badiff {

// Discretized logistic over K = 64 uniform bins of [-1, 1].
//
// Work in "symbol units" s(x) = (K/2) x, one unit per bin: bin k covers
// s in [k-32, k-31), the last bin closed, so x = 0 falls on the 31|32 edge
// and mu = 0 with symmetric sigma gives PMF(31) = PMF(32). Edge bins absorb
// the tails (lower edge of bin 0 is -inf, upper edge of bin 63 is +inf), so
// the PMF telescopes to exactly 1.
inline constexpr int kBins = 64;
inline constexpr double kSigmaFloor = 1e-3;
// At or above this sigma the distribution is treated as exactly uniform.
// The true sigma->inf limit of the tail-absorbing form piles mass onto the
// two edge bins instead of flattening, so the uninformative limit is made
// explicit here.
inline constexpr double kSigmaUniform = 1e9;

// s(x) and bin geometry
double symbol_coord(double x);          // 32 x
double bin_lower_s(int k);              // k - 32 (finite edge; tails handled by pmf)
double bin_center_x(int k);             // center of bin k in model range

// x must lie in [-1, 1]; the last bin is closed.
int quantize_symbol(double x);
double dequantize_symbol(int k);        // = bin_center_x

struct SymbolGrid {
  int width = 0;
  int height = 0;
  std::vector<uint16_t> symbols;  // bin indices < kBins

  bool valid() const;
};

// x: single-channel image tensor [...,H,W] with values in [-1, 1].
SymbolGrid quantize_to_bins(const Tensor& x);
// dequantized bin centers as a [1,1,H,W] tensor (no gradient history).
Tensor dequantize_grid(const SymbolGrid& grid);

// Full PMF vector by CDF differencing; sums to exactly 1.0 (telescoping).
std::array<double, kBins> logistic_pmf_vector(double mu, double sigma);
// Single-bin probability.
double logistic_pmf(int k, double mu, double sigma);

// Stable code length of bin k in bits with analytic derivatives. Finite for
// any sigma >= kSigmaFloor, including deep tails where the PMF underflows.
struct BitsAndGrad {
  double bits = 0.0;
  double dbits_dmu = 0.0;
  double dbits_dsigma = 0.0;
};
BitsAndGrad logistic_bits(int k, double mu, double sigma);

}  // namespace badiff
