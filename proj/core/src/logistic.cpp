#include "badiff/logistic.hpp"

#include <cmath>

namespace badiff {

namespace {

constexpr double kLn2 = 0.6931471805599453;

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void check_sigma(double sigma) {
  if (!(sigma >= kSigmaFloor)) {
    throw std::invalid_argument("logistic: sigma below floor");
  }
}

void check_bin(int k) {
  if (k < 0 || k >= kBins) throw std::invalid_argument("logistic: bin out of range");
}

}  // namespace

double symbol_coord(double x) { return 0.5 * kBins * x; }
double bin_lower_s(int k) { return static_cast<double>(k) - 0.5 * kBins; }
double bin_center_x(int k) { return (static_cast<double>(k) + 0.5) * 2.0 / kBins - 1.0; }

int quantize_symbol(double x) {
  if (!(x >= -1.0 && x <= 1.0)) {
    throw std::invalid_argument("quantize_symbol: value outside [-1, 1]");
  }
  int k = static_cast<int>(std::floor((x + 1.0) * 0.5 * kBins));
  return k >= kBins ? kBins - 1 : k;  // closed upper bin
}

double dequantize_symbol(int k) {
  check_bin(k);
  return bin_center_x(k);
}

bool SymbolGrid::valid() const {
  if (width <= 0 || height <= 0) return false;
  if (symbols.size() != static_cast<size_t>(width) * height) return false;
  for (uint16_t s : symbols) {
    if (s >= kBins) return false;
  }
  return true;
}

SymbolGrid quantize_to_bins(const Tensor& x) {
  if (x.ndim() < 2) throw std::invalid_argument("quantize_to_bins: need [...,H,W]");
  int h = x.dim(-2), w = x.dim(-1);
  if (x.numel() != static_cast<int64_t>(h) * w) {
    throw std::invalid_argument("quantize_to_bins: expected a single-channel image");
  }
  SymbolGrid g;
  g.width = w;
  g.height = h;
  g.symbols.resize(static_cast<size_t>(w) * h);
  const double* d = x.data();
  for (size_t i = 0; i < g.symbols.size(); ++i) {
    g.symbols[i] = static_cast<uint16_t>(quantize_symbol(d[i]));
  }
  return g;
}

Tensor dequantize_grid(const SymbolGrid& grid) {
  if (!grid.valid()) throw std::invalid_argument("dequantize_grid: invalid grid");
  Tensor t = Tensor::zeros({1, 1, grid.height, grid.width});
  double* d = t.data();
  for (size_t i = 0; i < grid.symbols.size(); ++i) {
    d[i] = bin_center_x(grid.symbols[i]);
  }
  return t;
}

std::array<double, kBins> logistic_pmf_vector(double mu, double sigma) {
  check_sigma(sigma);
  std::array<double, kBins> pmf;
  if (sigma >= kSigmaUniform) {
    pmf.fill(1.0 / kBins);
    return pmf;
  }
  // shared CDF values telescope: the sum is exactly S(+inf)-S(-inf) = 1
  double prev = 0.0;
  for (int k = 0; k < kBins; ++k) {
    double next = k == kBins - 1 ? 1.0 : sigmoid((bin_lower_s(k + 1) - mu) / sigma);
    pmf[static_cast<size_t>(k)] = next - prev;
    prev = next;
  }
  return pmf;
}

double logistic_pmf(int k, double mu, double sigma) {
  check_bin(k);
  check_sigma(sigma);
  if (sigma >= kSigmaUniform) return 1.0 / kBins;
  double hi = k == kBins - 1 ? 1.0 : sigmoid((bin_lower_s(k + 1) - mu) / sigma);
  double lo = k == 0 ? 0.0 : sigmoid((bin_lower_s(k) - mu) / sigma);
  return hi - lo;
}

// Stable log-PMF: evaluate on whichever side of the sigmoid keeps the
// arguments non-positive (S(a)-S(b) == S(-b)-S(-a)), assemble through
// log1p/softplus, and form the mu/sigma derivatives from the ratios
// s(edge)/pmf which stay finite even when the PMF itself underflows.
BitsAndGrad logistic_bits(int k, double mu, double sigma) {
  check_bin(k);
  check_sigma(sigma);
  BitsAndGrad out;
  if (sigma >= kSigmaUniform) {
    out.bits = std::log2(static_cast<double>(kBins));
    return out;
  }
  if (k == 0 || k == kBins - 1) {
    // single-tail bin: pmf = S(zz) with zz signed toward the finite edge,
    // and dzz/dsigma = -zz/sigma on both sides
    double edge = k == 0 ? bin_lower_s(1) : bin_lower_s(kBins - 1);
    double zz = (k == 0 ? 1.0 : -1.0) * (edge - mu) / sigma;
    out.bits = softplus(-zz) / kLn2;
    double s_other = sigmoid(-zz);  // dlogpmf/dzz
    double dzz_dmu = (k == 0 ? -1.0 : 1.0) / sigma;
    out.dbits_dmu = -(s_other * dzz_dmu) / kLn2;
    out.dbits_dsigma = (s_other * zz / sigma) / kLn2;
    return out;
  }
  double a = (bin_lower_s(k + 1) - mu) / sigma;  // upper edge, a > b
  double b = (bin_lower_s(k) - mu) / sigma;
  // flip to the non-positive side when the interval sits right of mu
  bool flipped = a + b > 0.0;
  double fa = flipped ? -b : a;
  double fb = flipped ? -a : b;
  double la = -softplus(-fa);  // log S(fa)
  double lb = -softplus(-fb);
  double d = lb - la;  // <= 0
  double log1m = std::log1p(-std::exp(d));
  double logpmf = la + log1m;
  out.bits = -logpmf / kLn2;
  // s(z)/pmf ratios; s(z) = S(z) S(-z) is symmetric in z so a flip only
  // swaps which edge each ratio belongs to
  double ratio_fa = std::exp(-softplus(fa) - log1m);     // s(fa)/pmf
  double ratio_fb = std::exp(d - softplus(fb) - log1m);  // s(fb)/pmf
  double ratio_a = flipped ? ratio_fb : ratio_fa;
  double ratio_b = flipped ? ratio_fa : ratio_fb;
  double dlog_dmu = -(ratio_a - ratio_b) / sigma;
  double dlog_dsigma = -(a * ratio_a - b * ratio_b) / sigma;
  out.dbits_dmu = -dlog_dmu / kLn2;
  out.dbits_dsigma = -dlog_dsigma / kLn2;
  return out;
}

}  // namespace badiff
