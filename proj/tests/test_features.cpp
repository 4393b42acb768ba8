#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "detkit/features.hpp"

using namespace detkit;

namespace {
// 1-channel 4x4 ramp: pixel (y, x) holds x + 4 y.
ImageTensor ramp_image() {
  ImageTensor img(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(0, y, x) = x + 4.0 * y;
  return img;
}
}  // namespace

TEST_CASE("feature_dim counts grid cells per channel plus bias") {
  CHECK(feature_dim(3, 3) == 28);
  CHECK(feature_dim(1, 1) == 2);
  CHECK(feature_dim(4, 2) == 17);
}

TEST_CASE("pooling a constant image yields the constant everywhere") {
  ImageTensor img(2, 8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      img.at(0, y, x) = 3.5;
      img.at(1, y, x) = -1.25;
    }
  const FeatureVector f = roi_pool(img, Box(1.3, 2.7, 6.1, 7.9), 3);
  REQUIRE(f.size() == feature_dim(2, 3));
  for (int i = 0; i < 9; ++i) {
    CHECK(f[i] == Catch::Approx(3.5).margin(1e-12));
    CHECK(f[9 + i] == Catch::Approx(-1.25).margin(1e-12));
  }
  CHECK(f[f.size() - 1] == 1.0);
}

TEST_CASE("grid cells take exact means of covered pixels") {
  const ImageTensor img = ramp_image();
  const FeatureVector f = roi_pool(img, Box(0, 0, 4, 4), 2);
  REQUIRE(f.size() == 5);
  // Quadrant means of the ramp.
  CHECK(f[0] == Catch::Approx(2.5).margin(1e-12));   // rows 0-1, cols 0-1
  CHECK(f[1] == Catch::Approx(4.5).margin(1e-12));   // rows 0-1, cols 2-3
  CHECK(f[2] == Catch::Approx(10.5).margin(1e-12));  // rows 2-3, cols 0-1
  CHECK(f[3] == Catch::Approx(12.5).margin(1e-12));  // rows 2-3, cols 2-3
  CHECK(f[4] == 1.0);
}

TEST_CASE("cells too small to cover a pixel center fall back to bilinear sampling") {
  const ImageTensor img = ramp_image();
  // Box centered exactly on pixel (1, 1)'s center at (1.5, 1.5).
  const FeatureVector f = roi_pool(img, Box(1.4, 1.4, 1.6, 1.6), 1);
  REQUIRE(f.size() == 2);
  CHECK(f[0] == Catch::Approx(img.at(0, 1, 1)).margin(1e-12));
  // Off-center: bilinear blend of the four neighbours around (2.0, 2.0).
  const FeatureVector g = roi_pool(img, Box(1.9, 1.9, 2.1, 2.1), 1);
  const double expect = 0.25 * (img.at(0, 1, 1) + img.at(0, 1, 2) + img.at(0, 2, 1) + img.at(0, 2, 2));
  CHECK(g[0] == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("bilinear samples clamp to the image border") {
  const ImageTensor img = ramp_image();
  // Thin sliver near the left edge: cell centers land outside pixel centers.
  const FeatureVector f = roi_pool(img, Box(0.0, 0.0, 0.2, 0.2), 1);
  CHECK(f[0] == Catch::Approx(img.at(0, 0, 0)).margin(1e-12));
}

TEST_CASE("boxes reaching outside the image pool the clipped region") {
  const ImageTensor img = ramp_image();
  const FeatureVector wide = roi_pool(img, Box(-10, -10, 50, 50), 2);
  const FeatureVector inside = roi_pool(img, Box(0, 0, 4, 4), 2);
  for (int i = 0; i < wide.size(); ++i) CHECK(wide[i] == inside[i]);
}

TEST_CASE("degenerate boxes are rejected") {
  const ImageTensor img = ramp_image();
  CHECK_THROWS_AS(roi_pool(img, Box(2, 2, 2, 3), 2), std::invalid_argument);
  // Fully outside: clips to a zero-area box.
  CHECK_THROWS_AS(roi_pool(img, Box(10, 10, 12, 12), 2), std::invalid_argument);
  CHECK_THROWS_AS(roi_pool(img, Box(0, 0, 4, 4), 0), std::invalid_argument);
}

TEST_CASE("feature layout is channel-major with rows before columns") {
  ImageTensor img(2, 4, 4);
  // Channel 0 varies by row, channel 1 by column.
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      img.at(0, y, x) = y;
      img.at(1, y, x) = 10.0 * x;
    }
  const FeatureVector f = roi_pool(img, Box(0, 0, 4, 4), 2);
  REQUIRE(f.size() == 9);
  // Channel 0: rows 0-1 mean 0.5, rows 2-3 mean 2.5; constant across columns.
  CHECK(f[0] == Catch::Approx(0.5).margin(1e-12));
  CHECK(f[1] == Catch::Approx(0.5).margin(1e-12));
  CHECK(f[2] == Catch::Approx(2.5).margin(1e-12));
  CHECK(f[3] == Catch::Approx(2.5).margin(1e-12));
  // Channel 1: cols 0-1 mean 5, cols 2-3 mean 25; constant across rows.
  CHECK(f[4] == Catch::Approx(5.0).margin(1e-12));
  CHECK(f[5] == Catch::Approx(25.0).margin(1e-12));
  CHECK(f[6] == Catch::Approx(5.0).margin(1e-12));
  CHECK(f[7] == Catch::Approx(25.0).margin(1e-12));
}
