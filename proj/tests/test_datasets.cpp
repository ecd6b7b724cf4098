#include <cstdio>
#include <filesystem>

#include "badiff/dataset.hpp"
#include "badiff/image.hpp"
#include "badiff/rng.hpp"
#include "doctest.h"

using namespace badiff;

namespace {
std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("generator complexity bounds on histogram entropy") {
  DatasetSpec lo{20, 16, 0.0, 11};
  for (const auto& img : generate(lo)) {
    CHECK(histogram_entropy_bits(img) < 2.0);
  }
  DatasetSpec hi{20, 16, 1.0, 12};
  for (const auto& img : generate(hi)) {
    CHECK(histogram_entropy_bits(img) > 5.0);
  }
}

TEST_CASE("generator determinism: same spec twice is byte-identical") {
  DatasetSpec spec{8, 16, 0.6, 999};
  auto a = generate(spec);
  auto b = generate(spec);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].pixels == b[i].pixels);
}

TEST_CASE("mean histogram entropy strictly increases with complexity") {
  double prev = -1.0;
  for (double c : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    DatasetSpec spec{100, 16, c, 4242};
    double mean = 0.0;
    for (const auto& img : generate(spec)) mean += histogram_entropy_bits(img);
    mean /= 100.0;
    CHECK(mean > prev);
    prev = mean;
  }
}

TEST_CASE("generator validates spec") {
  CHECK_THROWS_AS(generate(DatasetSpec{0, 16, 0.5, 1}), std::invalid_argument);
  CHECK_THROWS_AS(generate(DatasetSpec{1, 4, 0.5, 1}), std::invalid_argument);
  CHECK_THROWS_AS(generate(DatasetSpec{1, 16, 1.5, 1}), std::invalid_argument);
}

TEST_CASE("model range endpoints and midpoint") {
  ImageU8 img;
  img.width = 3;
  img.height = 1;
  img.pixels = {0, 128, 255};
  Tensor t = to_model_range(img);
  CHECK(t.values()[0] == doctest::Approx(-1.0));
  CHECK(t.values()[1] == doctest::Approx(2.0 * 128 / 255 - 1.0).epsilon(1e-12));
  CHECK(t.values()[2] == doctest::Approx(1.0));
}

TEST_CASE("model range round trip within one level") {
  RngStream rng(5);
  ImageU8 img;
  img.width = 16;
  img.height = 16;
  img.pixels.resize(256);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_index(256));
  ImageU8 back = from_model_range(to_model_range(img));
  REQUIRE(back.pixels.size() == img.pixels.size());
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    CHECK(std::abs(int(back.pixels[i]) - int(img.pixels[i])) <= 1);
  }
}

TEST_CASE("pgm round trip is bit exact") {
  DatasetSpec spec{1, 16, 0.8, 31};
  ImageU8 img = generate(spec)[0];
  std::string path = tmp_path("badiff_test_roundtrip.pgm");
  write_pgm(img, path);
  ImageU8 back = read_pgm(path);
  CHECK(back.width == img.width);
  CHECK(back.height == img.height);
  CHECK(back.pixels == img.pixels);
  std::filesystem::remove(path);
}

TEST_CASE("pgm rejects wrong magic and depth") {
  std::string p2 = tmp_path("badiff_test_p2.pgm");
  {
    std::FILE* f = std::fopen(p2.c_str(), "wb");
    std::fputs("P2\n2 2\n255\n0 1 2 3\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_pgm(p2), format_error);
  std::filesystem::remove(p2);

  std::string deep = tmp_path("badiff_test_deep.pgm");
  {
    std::FILE* f = std::fopen(deep.c_str(), "wb");
    std::fputs("P5\n2 2\n65535\n", f);
    const char payload[8] = {0};
    std::fwrite(payload, 1, 8, f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_pgm(deep), format_error);
  std::filesystem::remove(deep);
}

TEST_CASE("pgm rejects truncated payload") {
  std::string path = tmp_path("badiff_test_trunc.pgm");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("P5\n4 4\n255\n", f);
    const char payload[5] = {1, 2, 3, 4, 5};  // 16 expected
    std::fwrite(payload, 1, 5, f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(read_pgm(path), format_error);
  std::filesystem::remove(path);
}

TEST_CASE("pgm header comments are tolerated") {
  std::string path = tmp_path("badiff_test_comment.pgm");
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("P5\n# a comment\n2 1\n255\n", f);
    const unsigned char payload[2] = {7, 9};
    std::fwrite(payload, 1, 2, f);
    std::fclose(f);
  }
  ImageU8 img = read_pgm(path);
  CHECK(img.width == 2);
  CHECK(img.pixels[0] == 7);
  CHECK(img.pixels[1] == 9);
  std::filesystem::remove(path);
}
