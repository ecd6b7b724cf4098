#pragma once
#include <cstdint>
#include <vector>

#include "badiff/image.hpp"

namespace badiff {

struct DatasetSpec {
  int count = 1;
  int size = 16;          // square side
  double complexity = 0.5;  // in [0,1]
  uint64_t seed = 0;
};

// Deterministic procedural grayscale images: smooth gradients, Gaussian
// blobs, and binary texture whose spatial frequency and gray-level count
// grow with the complexity knob, so histogram entropy rises with it.
std::vector<ImageU8> generate(const DatasetSpec& spec);

// Shannon entropy (bits) of the 256-bin pixel histogram.
double histogram_entropy_bits(const ImageU8& img);

}  // namespace badiff
