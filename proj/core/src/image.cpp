#include "badiff/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "badiff/errors.hpp"

namespace badiff {

namespace {

// PGM token reader: skips whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) {
        in.unget();
        break;
      }
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

ImageU8 read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("cannot open PGM file: " + path);
  std::string magic = next_token(in);
  if (magic != "P5") {
    throw format_error("not a binary PGM (expected magic P5, got '" + magic + "')");
  }
  auto read_int = [&](const char* what) {
    std::string tok = next_token(in);
    if (tok.empty()) throw format_error(std::string("PGM header truncated at ") + what);
    for (char c : tok) {
      if (!std::isdigit(static_cast<unsigned char>(c))) {
        throw format_error(std::string("bad PGM ") + what + ": " + tok);
      }
    }
    return std::stol(tok);
  };
  long w = read_int("width");
  long h = read_int("height");
  long maxval = read_int("maxval");
  if (w <= 0 || h <= 0) throw format_error("bad PGM dimensions");
  if (maxval != 255) {
    throw format_error("unsupported PGM depth (maxval " + std::to_string(maxval) +
                       ", only 255 supported)");
  }
  int sep = in.get();  // single whitespace byte before the raster
  if (sep == EOF) throw format_error("PGM payload missing");
  ImageU8 img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(static_cast<size_t>(w) * h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw format_error("PGM payload truncated");
  }
  return img;
}

void write_pgm(const ImageU8& img, const std::string& path) {
  if (!img.valid()) throw std::invalid_argument("write_pgm: invalid image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("cannot open for writing: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw format_error("PGM write failed: " + path);
}

Tensor to_model_range(const ImageU8& img) {
  if (!img.valid()) throw std::invalid_argument("to_model_range: invalid image");
  Tensor t = Tensor::zeros({1, 1, img.height, img.width});
  double* d = t.data();
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    d[i] = 2.0 * img.pixels[i] / 255.0 - 1.0;
  }
  return t;
}

ImageU8 from_model_range(const Tensor& t) {
  if (t.ndim() < 2) throw std::invalid_argument("from_model_range: need [...,H,W]");
  int h = t.dim(-2);
  int w = t.dim(-1);
  if (t.numel() != static_cast<int64_t>(h) * w) {
    throw std::invalid_argument("from_model_range: expected a single-channel image");
  }
  ImageU8 img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h);
  const double* d = t.data();
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    double v = std::min(1.0, std::max(-1.0, d[i]));
    img.pixels[i] = static_cast<uint8_t>(std::lround((v + 1.0) * 0.5 * 255.0));
  }
  return img;
}

}  // namespace badiff
