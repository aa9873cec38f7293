#pragma once

#include <algorithm>
#include <cmath>

namespace patchnet {

/// Axis-aligned box in frame pixel coordinates (edges, not pixel centers) with a confidence.
struct BBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
  double score = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const { return x_max > x_min && y_max > y_min; }

  static BBox from_center(double cx, double cy, double w, double h, double score = 0.0) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h, score};
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double center_distance(const BBox& a, const BBox& b) {
  return std::hypot(a.center_x() - b.center_x(), a.center_y() - b.center_y());
}

/// Square crop window: frame point (x, y) maps to crop point ((x - origin_x) * scale, (y - origin_y) * scale).
struct CropGeometry {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double scale = 1.0;  // crop pixels per frame pixel
  int size = 0;        // crop side in pixels

  double to_crop_x(double x) const { return (x - origin_x) * scale; }
  double to_crop_y(double y) const { return (y - origin_y) * scale; }
  double to_frame_x(double u) const { return origin_x + u / scale; }
  double to_frame_y(double v) const { return origin_y + v / scale; }

  BBox to_crop(const BBox& b) const {
    return {to_crop_x(b.x_min), to_crop_y(b.y_min), to_crop_x(b.x_max), to_crop_y(b.y_max), b.score};
  }
  BBox to_frame(const BBox& b) const {
    return {to_frame_x(b.x_min), to_frame_y(b.y_min), to_frame_x(b.x_max), to_frame_y(b.y_max), b.score};
  }
};

/// Square window of side context * max(box side) centered on the box.
inline CropGeometry crop_geometry(const BBox& box, int out_size, double context_factor) {
  const double side = context_factor * std::max(box.width(), box.height());
  return {box.center_x() - 0.5 * side, box.center_y() - 0.5 * side, out_size / side, out_size};
}

}  // namespace patchnet
