#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

namespace detkit {

// Axis-aligned rectangle in continuous image coordinates, corner form.
// Invariants: x2 >= x1, y2 >= y1, all coordinates finite.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  Box() = default;
  Box(double x1_, double y1_, double x2_, double y2_) : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {
    if (!std::isfinite(x1) || !std::isfinite(y1) || !std::isfinite(x2) || !std::isfinite(y2))
      throw std::invalid_argument("Box: non-finite coordinate");
    if (x2 < x1 || y2 < y1) throw std::invalid_argument("Box: negative extent");
  }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return x1 + 0.5 * width(); }
  double center_y() const { return y1 + 0.5 * height(); }
  bool positive_area() const { return width() > 0 && height() > 0; }

  bool operator==(const Box& o) const {
    return x1 == o.x1 && y1 == o.y1 && x2 == o.x2 && y2 == o.y2;
  }
};

// Zero-area boxes have IoU 0 against everything, themselves included; a
// degenerate box never counts as a match.
inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Dense proposals x ground-truths overlap table.
class IoUMatrix {
 public:
  IoUMatrix() = default;
  IoUMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), v_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return v_.empty(); }

  double& at(std::size_t i, std::size_t j) { return v_[i * cols_ + j]; }
  double at(std::size_t i, std::size_t j) const { return v_[i * cols_ + j]; }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> v_;
};

inline IoUMatrix iou_matrix(const std::vector<Box>& proposals, const std::vector<Box>& gts) {
  IoUMatrix m(proposals.size(), gts.size());
  for (std::size_t i = 0; i < proposals.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j) m.at(i, j) = iou(proposals[i], gts[j]);
  return m;
}

// Encoded regression target (tx, ty, tw, th), dimensionless.
struct BoxDeltas {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

// Per-coordinate encoding weights; configuration, not per-instance state.
struct DeltaWeights {
  double wx = 10.0, wy = 10.0, ww = 5.0, wh = 5.0;
};

// Upper clamp applied to the unweighted log-size deltas before exp.
inline const double kDeltaClamp = std::log(1000.0 / 16.0);

inline BoxDeltas encode_deltas(const Box& anchor, const Box& target, const DeltaWeights& w) {
  const double wa = anchor.width(), ha = anchor.height();
  if (wa <= 0 || ha <= 0) throw std::invalid_argument("encode_deltas: anchor has empty extent");
  const double wt = target.width(), ht = target.height();
  if (wt <= 0 || ht <= 0) throw std::invalid_argument("encode_deltas: target has empty extent");
  BoxDeltas d;
  d.tx = w.wx * (target.center_x() - anchor.center_x()) / wa;
  d.ty = w.wy * (target.center_y() - anchor.center_y()) / ha;
  d.tw = w.ww * std::log(wt / wa);
  d.th = w.wh * std::log(ht / ha);
  return d;
}

// Intersects b with bounds; a box fully outside collapses to a zero-area box
// on the nearest edge.
inline Box clip_box(const Box& b, const Box& bounds) {
  Box out;
  out.x1 = std::clamp(b.x1, bounds.x1, bounds.x2);
  out.y1 = std::clamp(b.y1, bounds.y1, bounds.y2);
  out.x2 = std::clamp(b.x2, bounds.x1, bounds.x2);
  out.y2 = std::clamp(b.y2, bounds.y1, bounds.y2);
  return out;
}

// Exact inverse of encode_deltas for deltas within the clamp range.
inline Box decode_deltas(const Box& anchor, const BoxDeltas& d, const DeltaWeights& w,
                         const std::optional<Box>& clip_region = std::nullopt) {
  const double wa = anchor.width(), ha = anchor.height();
  if (wa <= 0 || ha <= 0) throw std::invalid_argument("decode_deltas: anchor has empty extent");
  if (!std::isfinite(d.tx) || !std::isfinite(d.ty) || !std::isfinite(d.tw) || !std::isfinite(d.th))
    throw std::invalid_argument("decode_deltas: non-finite deltas");
  const double dx = d.tx / w.wx;
  const double dy = d.ty / w.wy;
  const double dw = std::min(d.tw / w.ww, kDeltaClamp);
  const double dh = std::min(d.th / w.wh, kDeltaClamp);
  const double cx = anchor.center_x() + dx * wa;
  const double cy = anchor.center_y() + dy * ha;
  const double ow = wa * std::exp(dw);
  const double oh = ha * std::exp(dh);
  Box out(cx - 0.5 * ow, cy - 0.5 * oh, cx + 0.5 * ow, cy + 0.5 * oh);
  if (clip_region) out = clip_box(out, *clip_region);
  return out;
}

}  // namespace detkit
