#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "densetarget/common.hpp"

namespace dt {

struct Raster;  // heatmap.hpp

/// Axis-aligned box, half-open pixel convention: [x1,x2) x [y1,y2).
struct Box2D {
  double x1, y1, x2, y2;

  Box2D(double x1_, double y1_, double x2_, double y2_);

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

struct Point {
  double x, y;
};

/// Four corners, clockwise from top-left. Signed area must be positive
/// (screen coordinates, y growing downward).
struct Quad {
  std::array<Point, 4> corners;

  explicit Quad(const std::array<Point, 4>& c);
  static Quad from_box(const Box2D& b);

  double signed_area() const;
};

/// 3x3 projective transform, normalized so h[2][2] == 1 when nonzero.
struct Homography {
  std::array<std::array<double, 3>, 3> m;

  static Homography identity();
  Point project(const Point& p) const;
  Homography inverse() const;
  double determinant() const;
};

double iou(const Box2D& a, const Box2D& b);

/// Direct linear transform from exact 4-point correspondences.
/// Throws DegenerateQuad when the 8x8 system is singular.
Homography four_point_transform(const Quad& src, const Quad& dst);

enum class CompositionMode { Add, Max };

/// Inverse-mapping bilinear warp of `patch` through `h`, composed into
/// `target` (Add or Max). Pixels outside the projected footprint are
/// untouched; samples outside the patch read as zero.
void warp_accumulate(const Raster& patch, const Homography& h, Raster& target,
                     CompositionMode mode);

}  // namespace dt
