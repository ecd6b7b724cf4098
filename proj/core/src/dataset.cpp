#include "badiff/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "badiff/rng.hpp"

namespace badiff {

namespace {

// Coarse value-noise lattice bilinearly upsampled, then thresholded at 0
// by the caller; the lattice step sets the texture's spatial frequency.
std::vector<double> value_noise(int size, int step, RngStream& rng) {
  int knots = size / step + 2;
  std::vector<double> lattice(static_cast<size_t>(knots) * knots);
  for (double& v : lattice) v = rng.uniform(-1.0, 1.0);
  std::vector<double> out(static_cast<size_t>(size) * size);
  for (int y = 0; y < size; ++y) {
    double fy = static_cast<double>(y) / step;
    int y0 = static_cast<int>(fy);
    double ty = fy - y0;
    for (int x = 0; x < size; ++x) {
      double fx = static_cast<double>(x) / step;
      int x0 = static_cast<int>(fx);
      double tx = fx - x0;
      double v00 = lattice[static_cast<size_t>(y0) * knots + x0];
      double v01 = lattice[static_cast<size_t>(y0) * knots + x0 + 1];
      double v10 = lattice[static_cast<size_t>(y0 + 1) * knots + x0];
      double v11 = lattice[static_cast<size_t>(y0 + 1) * knots + x0 + 1];
      out[static_cast<size_t>(y) * size + x] =
          (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
    }
  }
  return out;
}

ImageU8 synthesize(int size, double c, RngStream rng) {
  std::vector<double> f(static_cast<size_t>(size) * size, 0.5);

  // smooth gradient
  double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  double gx = std::cos(theta), gy = std::sin(theta);
  double gamp = rng.uniform(0.15, 0.35);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double u = (gx * x + gy * y) / size;
      f[static_cast<size_t>(y) * size + x] += gamp * u;
    }
  }

  // Gaussian blobs
  int nblobs = 1 + static_cast<int>(rng.uniform_index(3));
  for (int b = 0; b < nblobs; ++b) {
    double cx = rng.uniform(0.0, size - 1.0);
    double cy = rng.uniform(0.0, size - 1.0);
    double sigma = size * rng.uniform(0.12, 0.35);
    double amp = rng.uniform(-0.45, 0.45);
    double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        f[static_cast<size_t>(y) * size + x] += amp * std::exp(-d2 * inv2s2);
      }
    }
  }

  // binary texture, higher frequency and stronger with complexity
  if (c > 0.0) {
    int step = std::max(1, static_cast<int>(std::lround((1.0 - c) * 7.0)) + 1);
    auto noise = value_noise(size, step, rng);
    double tamp = 0.22 * c;
    for (size_t i = 0; i < f.size(); ++i) {
      f[i] += noise[i] > 0.0 ? tamp : -tamp;
    }
    // per-pixel noise floor only at high complexity
    double namp = 0.5 * c * c;
    if (namp > 0.0) {
      for (double& v : f) v += rng.uniform(-namp, namp);
    }
  }

  // fit into [0.02, 0.98] without clipping mass onto the endpoints
  double fmin = f[0], fmax = f[0];
  for (double v : f) {
    fmin = std::min(fmin, v);
    fmax = std::max(fmax, v);
  }
  double range = fmax - fmin;
  if (range > 0.96) {
    for (double& v : f) v = 0.02 + 0.96 * (v - fmin) / range;
  } else {
    double shift = std::max(0.0, 0.02 - fmin) - std::max(0.0, fmax - 0.98);
    for (double& v : f) v += shift;
  }

  // quantize to a complexity-dependent number of gray levels
  int levels = 3 + static_cast<int>(std::lround(std::pow(c, 2.2) * 290.0));
  ImageU8 img;
  img.width = size;
  img.height = size;
  img.pixels.resize(f.size());
  for (size_t i = 0; i < f.size(); ++i) {
    double v = std::min(1.0, std::max(0.0, f[i]));
    double q;
    if (levels >= 256) {
      q = v;
    } else {
      q = std::round(v * (levels - 1)) / (levels - 1);
    }
    img.pixels[i] = static_cast<uint8_t>(std::lround(q * 255.0));
  }
  return img;
}

}  // namespace

std::vector<ImageU8> generate(const DatasetSpec& spec) {
  if (spec.count < 1) throw std::invalid_argument("generate: count must be >= 1");
  if (spec.size < 8) throw std::invalid_argument("generate: size must be >= 8");
  if (spec.complexity < 0.0 || spec.complexity > 1.0) {
    throw std::invalid_argument("generate: complexity must be in [0,1]");
  }
  RngStream base(spec.seed);
  std::vector<ImageU8> out;
  out.reserve(static_cast<size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    out.push_back(synthesize(spec.size, spec.complexity,
                             base.fork(static_cast<uint64_t>(i) + 1)));
  }
  return out;
}

double histogram_entropy_bits(const ImageU8& img) {
  if (!img.valid()) throw std::invalid_argument("histogram_entropy_bits: invalid image");
  std::vector<int64_t> hist(256, 0);
  for (uint8_t p : img.pixels) ++hist[p];
  double n = static_cast<double>(img.pixels.size());
  double h = 0.0;
  for (int64_t c : hist) {
    if (c == 0) continue;
    double p = c / n;
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace badiff
