#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

#include "detkit/data.hpp"
#include "detkit/geometry.hpp"

namespace detkit {

using FeatureVector = Eigen::VectorXd;

inline int feature_dim(int channels, int grid_size) { return channels * grid_size * grid_size + 1; }

namespace detail {

// Bilinear sample at continuous (x, y); pixel (i, j) has its center at
// (j + 0.5, i + 0.5). Samples are clamped to the border pixels.
inline double bilinear(const ImageTensor& img, int c, double x, double y) {
  const double u = x - 0.5, v = y - 0.5;
  double j0 = std::floor(u), i0 = std::floor(v);
  double fx = u - j0, fy = v - i0;
  int j = static_cast<int>(j0), i = static_cast<int>(i0);
  if (j < 0) { j = 0; fx = 0; }
  if (i < 0) { i = 0; fy = 0; }
  if (j >= img.width - 1) { j = img.width - 1; fx = 0; }
  if (i >= img.height - 1) { i = img.height - 1; fy = 0; }
  const int j1 = std::min(j + 1, img.width - 1);
  const int i1 = std::min(i + 1, img.height - 1);
  const double a = img.at(c, i, j) * (1 - fx) + img.at(c, i, j1) * fx;
  const double b = img.at(c, i1, j) * (1 - fx) + img.at(c, i1, j1) * fx;
  return a * (1 - fy) + b * fy;
}

}  // namespace detail

// Fixed-grid mean pooling over the box: the box is split into S x S equal
// cells; each output is the mean of pixels whose centers fall in the cell,
// or a bilinear sample at the cell center when the cell covers none. Layout
// is channel-major (c, row, col), with a trailing constant 1.0 bias feature.
inline FeatureVector roi_pool(const ImageTensor& img, const Box& b, int grid_size) {
  if (grid_size < 1) throw std::invalid_argument("roi_pool: grid_size must be >= 1");
  const Box box = clip_box(b, img.bounds());
  if (!box.positive_area()) throw std::invalid_argument("roi_pool: zero-area box after clipping");

  const int S = grid_size;
  FeatureVector f(feature_dim(img.channels, S));
  const double cw = box.width() / S;
  const double ch = box.height() / S;

  for (int r = 0; r < S; ++r) {
    const double y_lo = box.y1 + r * ch;
    const double y_hi = box.y1 + (r + 1) * ch;
    // Pixel rows with center in [y_lo, y_hi).
    const int iy1 = std::max(0, static_cast<int>(std::ceil(y_lo - 0.5)));
    const int iy2 = std::min(img.height - 1, static_cast<int>(std::ceil(y_hi - 0.5)) - 1);
    for (int c = 0; c < S; ++c) {
      const double x_lo = box.x1 + c * cw;
      const double x_hi = box.x1 + (c + 1) * cw;
      const int ix1 = std::max(0, static_cast<int>(std::ceil(x_lo - 0.5)));
      const int ix2 = std::min(img.width - 1, static_cast<int>(std::ceil(x_hi - 0.5)) - 1);

      const bool has_pixels = iy2 >= iy1 && ix2 >= ix1;
      for (int ch_i = 0; ch_i < img.channels; ++ch_i) {
        double value;
        if (has_pixels) {
          double sum = 0.0;
          for (int y = iy1; y <= iy2; ++y)
            for (int x = ix1; x <= ix2; ++x) sum += img.at(ch_i, y, x);
          value = sum / (static_cast<double>(iy2 - iy1 + 1) * (ix2 - ix1 + 1));
        } else {
          value = detail::bilinear(img, ch_i, 0.5 * (x_lo + x_hi), 0.5 * (y_lo + y_hi));
        }
        f[ch_i * S * S + r * S + c] = value;
      }
    }
  }
  f[f.size() - 1] = 1.0;
  return f;
}

}  // namespace detkit
