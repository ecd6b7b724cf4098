#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "badiff/tensor.hpp"

namespace badiff {

// Grayscale 8-bit image, raster order.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;

  bool valid() const {
    return width > 0 && height > 0 &&
           pixels.size() == static_cast<size_t>(width) * height;
  }
};

// Binary PGM (P5), maxval 255, bit-exact round trip.
ImageU8 read_pgm(const std::string& path);
void write_pgm(const ImageU8& img, const std::string& path);

// Affine 8-bit <-> [-1,1] mapping: v -> 2v/255 - 1.
Tensor to_model_range(const ImageU8& img);          // [1,1,H,W]
ImageU8 from_model_range(const Tensor& t);          // clamps to [-1,1]

}  // namespace badiff
