#include "densetarget/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "densetarget/heatmap.hpp"

namespace dt {

Box2D::Box2D(double x1_, double y1_, double x2_, double y2_)
    : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {
  if (!(x1 < x2) || !(y1 < y2)) {
    throw Error("Box2D: degenerate box (need x1 < x2 and y1 < y2)");
  }
}

Quad::Quad(const std::array<Point, 4>& c) : corners(c) {
  if (!(signed_area() > 0.0)) {
    throw DegenerateQuad("Quad: corners must be clockwise with positive area");
  }
}

Quad Quad::from_box(const Box2D& b) {
  return Quad({{{b.x1, b.y1}, {b.x2, b.y1}, {b.x2, b.y2}, {b.x1, b.y2}}});
}

double Quad::signed_area() const {
  // Shoelace with y down: clockwise on screen gives positive area.
  double a = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Point& p = corners[i];
    const Point& q = corners[(i + 1) % 4];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

Homography Homography::identity() {
  Homography h{};
  h.m = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  return h;
}

Point Homography::project(const Point& p) const {
  double X = m[0][0] * p.x + m[0][1] * p.y + m[0][2];
  double Y = m[1][0] * p.x + m[1][1] * p.y + m[1][2];
  double W = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
  return {X / W, Y / W};
}

double Homography::determinant() const {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Homography Homography::inverse() const {
  double det = determinant();
  if (std::abs(det) < 1e-12) {
    throw DegenerateQuad("Homography: singular matrix, cannot invert");
  }
  Homography inv{};
  inv.m[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv.m[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv.m[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv.m[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv.m[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv.m[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv.m[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv.m[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv.m[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

double iou(const Box2D& a, const Box2D& b) {
  double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

namespace {

// Gaussian elimination with partial pivoting on an n x (n+1) augmented
// system stored row-major. Returns false when singular.
bool solve_augmented(std::vector<double>& a, int n, std::vector<double>& out) {
  const int cols = n + 1;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a[r * cols + col]) > std::abs(a[pivot * cols + col])) pivot = r;
    }
    if (std::abs(a[pivot * cols + col]) < 1e-12) return false;
    if (pivot != col) {
      for (int c = 0; c < cols; ++c) std::swap(a[col * cols + c], a[pivot * cols + c]);
    }
    const double d = a[col * cols + col];
    for (int r = col + 1; r < n; ++r) {
      double f = a[r * cols + col] / d;
      if (f == 0.0) continue;
      for (int c = col; c < cols; ++c) a[r * cols + c] -= f * a[col * cols + c];
    }
  }
  out.assign(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double s = a[r * cols + n];
    for (int c = r + 1; c < n; ++c) s -= a[r * cols + c] * out[c];
    out[r] = s / a[r * cols + r];
  }
  return true;
}

}  // namespace

Homography four_point_transform(const Quad& src, const Quad& dst) {
  // DLT with h22 fixed to 1: two equations per correspondence.
  std::vector<double> sys(8 * 9, 0.0);
  for (int i = 0; i < 4; ++i) {
    const Point& s = src.corners[i];
    const Point& d = dst.corners[i];
    double* rx = &sys[(2 * i) * 9];
    rx[0] = s.x; rx[1] = s.y; rx[2] = 1.0;
    rx[6] = -s.x * d.x; rx[7] = -s.y * d.x; rx[8] = d.x;
    double* ry = &sys[(2 * i + 1) * 9];
    ry[3] = s.x; ry[4] = s.y; ry[5] = 1.0;
    ry[6] = -s.x * d.y; ry[7] = -s.y * d.y; ry[8] = d.y;
  }
  std::vector<double> h;
  if (!solve_augmented(sys, 8, h)) {
    throw DegenerateQuad("four_point_transform: singular system (collinear corners?)");
  }
  Homography H{};
  H.m = {{{h[0], h[1], h[2]}, {h[3], h[4], h[5]}, {h[6], h[7], 1.0}}};
  if (std::abs(H.determinant()) < 1e-12) {
    throw DegenerateQuad("four_point_transform: degenerate homography");
  }
  return H;
}

namespace {

// Bilinear sample with zero padding; (x, y) in patch pixel coordinates,
// pixel (i, j) centered at (j + 0.5, i + 0.5).
double sample_bilinear(const Raster& patch, double x, double y) {
  double fx = x - 0.5;
  double fy = y - 0.5;
  int x0 = static_cast<int>(std::floor(fx));
  int y0 = static_cast<int>(std::floor(fy));
  double tx = fx - x0;
  double ty = fy - y0;
  auto px = [&](int row, int col) -> double {
    if (row < 0 || col < 0 || row >= patch.height || col >= patch.width) return 0.0;
    return patch.at(row, col);
  };
  return (1 - ty) * ((1 - tx) * px(y0, x0) + tx * px(y0, x0 + 1)) +
         ty * ((1 - tx) * px(y0 + 1, x0) + tx * px(y0 + 1, x0 + 1));
}

}  // namespace

void warp_accumulate(const Raster& patch, const Homography& h, Raster& target,
                     CompositionMode mode) {
  const Homography inv = h.inverse();

  // Bounding box of the projected patch corners limits the scan.
  std::array<Point, 4> corners = {{{0, 0},
                                   {static_cast<double>(patch.width), 0},
                                   {static_cast<double>(patch.width), static_cast<double>(patch.height)},
                                   {0, static_cast<double>(patch.height)}}};
  double minx = std::numeric_limits<double>::infinity(), maxx = -minx;
  double miny = minx, maxy = -minx;
  for (const Point& c : corners) {
    Point p = h.project(c);
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  int c0 = std::max(0, static_cast<int>(std::floor(minx)));
  int c1 = std::min(target.width, static_cast<int>(std::ceil(maxx)));
  int r0 = std::max(0, static_cast<int>(std::floor(miny)));
  int r1 = std::min(target.height, static_cast<int>(std::ceil(maxy)));

  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      Point src = inv.project({c + 0.5, r + 0.5});
      if (src.x < 0.0 || src.y < 0.0 || src.x > patch.width || src.y > patch.height) continue;
      double v = sample_bilinear(patch, src.x, src.y);
      if (mode == CompositionMode::Add) {
        target.at(r, c) += v;
      } else {
        target.at(r, c) = std::max(target.at(r, c), v);
      }
    }
  }
}

}  // namespace dt
