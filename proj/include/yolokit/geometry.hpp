#pragma once

#include <algorithm>

namespace yolokit {

// Axis-aligned box, center parameterization. All coordinates are normalized
// to [0,1] relative to image width/height (darknet label convention).
// Centers live in [0,1]; w/h are nonnegative and may exceed the image after
// decoding.
struct BBoxCenter {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

// Corner parameterization: (x1,y1) top-left, (x2,y2) bottom-right.
struct BBoxCorner {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
};

// A (width, height) pair; the unit of anchor clustering.
struct WH {
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
};

inline BBoxCorner center_to_corner(const BBoxCenter& b) {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0,
          b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

inline BBoxCenter corner_to_center(const BBoxCorner& b) {
  return {(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0, b.x2 - b.x1, b.y2 - b.y1};
}

// Intersection over union. Degenerate or inverted boxes count as zero area,
// so the result is always in [0,1] and never NaN.
inline double iou(const BBoxCorner& a, const BBoxCorner& b) {
  const double aw = std::max(0.0, a.x2 - a.x1);
  const double ah = std::max(0.0, a.y2 - a.y1);
  const double bw = std::max(0.0, b.x2 - b.x1);
  const double bh = std::max(0.0, b.y2 - b.y1);
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = aw * ah + bw * bh - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double iou(const BBoxCenter& a, const BBoxCenter& b) {
  return iou(center_to_corner(a), center_to_corner(b));
}

// Overlap of two shapes compared as if co-centered. 1 - wh_iou is the
// clustering distance used for anchor selection.
inline double wh_iou(const WH& a, const WH& b) {
  const double aw = std::max(0.0, a.w);
  const double ah = std::max(0.0, a.h);
  const double bw = std::max(0.0, b.w);
  const double bh = std::max(0.0, b.h);
  const double inter = std::min(aw, bw) * std::min(ah, bh);
  const double uni = aw * ah + bw * bh - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace yolokit
