#include <doctest.h>

#include <cmath>

#include "densetarget/geometry.hpp"
#include "densetarget/heatmap.hpp"
#include "densetarget/rng.hpp"

using namespace dt;

TEST_CASE("Box2D rejects degenerate extents") {
  CHECK_THROWS_AS(Box2D(5, 0, 5, 10), Error);
  CHECK_THROWS_AS(Box2D(0, 8, 10, 8), Error);
  CHECK_THROWS_AS(Box2D(10, 0, 5, 10), Error);
  Box2D b(1, 2, 5, 10);
  CHECK(b.width() == 4);
  CHECK(b.height() == 8);
  CHECK(b.area() == 32);
  CHECK(b.cx() == 3);
  CHECK(b.cy() == 6);
}

TEST_CASE("Quad orientation and signed area") {
  // Clockwise in screen coordinates (y down) has positive shoelace area.
  Quad q = Quad::from_box(Box2D(0, 0, 4, 2));
  CHECK(q.signed_area() == doctest::Approx(8.0));
  CHECK(q.corners[0].x == 0);
  CHECK(q.corners[1].x == 4);
  CHECK(q.corners[2].y == 2);
  // Counter-clockwise corner order must be rejected.
  CHECK_THROWS_AS(Quad({{{0, 0}, {0, 2}, {4, 2}, {4, 0}}}), DegenerateQuad);
  // Collapsed quad.
  CHECK_THROWS_AS(Quad({{{1, 1}, {1, 1}, {1, 1}, {1, 1}}}), DegenerateQuad);
}

TEST_CASE("iou closed-form cases") {
  Box2D a(0, 0, 10, 10);
  CHECK(iou(a, a) == doctest::Approx(1.0));
  CHECK(iou(a, Box2D(10, 10, 20, 20)) == 0.0);  // touching corners
  CHECK(iou(a, Box2D(20, 0, 30, 10)) == 0.0);   // disjoint
  // 5x10 overlap over union 100+100-50.
  CHECK(iou(a, Box2D(5, 0, 15, 10)) == doctest::Approx(50.0 / 150.0));
  // Containment: 4x4 inside 10x10.
  CHECK(iou(a, Box2D(2, 2, 6, 6)) == doctest::Approx(16.0 / 100.0));
}

TEST_CASE("iou symmetry on random boxes") {
  Xoshiro256 rng(7);
  for (int i = 0; i < 200; ++i) {
    auto rnd_box = [&] {
      double x1 = rng.uniform(0, 50), y1 = rng.uniform(0, 50);
      return Box2D(x1, y1, x1 + rng.uniform(0.5, 30), y1 + rng.uniform(0.5, 30));
    };
    Box2D a = rnd_box(), b = rnd_box();
    double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-15);
  }
}

TEST_CASE("Homography identity, projection, determinant") {
  Homography h = Homography::identity();
  Point p = h.project({3.5, -2.0});
  CHECK(p.x == 3.5);
  CHECK(p.y == -2.0);
  CHECK(h.determinant() == doctest::Approx(1.0));
  CHECK_THROWS_AS((Homography{{{{0, 0, 0}, {0, 0, 0}, {0, 0, 0}}}}.inverse()), DegenerateQuad);
}

TEST_CASE("four_point_transform maps corners exactly") {
  Quad src = Quad::from_box(Box2D(0, 0, 120, 120));
  Quad dst({{{10, 5}, {40, 8}, {38, 44}, {9, 40}}});
  Homography h = four_point_transform(src, dst);
  for (int i = 0; i < 4; ++i) {
    Point p = h.project(src.corners[i]);
    CHECK(p.x == doctest::Approx(dst.corners[i].x).epsilon(1e-10));
    CHECK(p.y == doctest::Approx(dst.corners[i].y).epsilon(1e-10));
  }
  // Inverse maps back.
  Homography inv = h.inverse();
  for (int i = 0; i < 4; ++i) {
    Point p = inv.project(dst.corners[i]);
    CHECK(p.x == doctest::Approx(src.corners[i].x).epsilon(1e-9));
    CHECK(p.y == doctest::Approx(src.corners[i].y).epsilon(1e-9));
  }
}

TEST_CASE("four_point_transform axis-aligned box is affine scale+shift") {
  Quad src = Quad::from_box(Box2D(0, 0, 100, 100));
  Quad dst = Quad::from_box(Box2D(20, 30, 70, 110));
  Homography h = four_point_transform(src, dst);
  CHECK(h.m[0][0] == doctest::Approx(0.5));
  CHECK(h.m[1][1] == doctest::Approx(0.8));
  CHECK(h.m[0][2] == doctest::Approx(20.0));
  CHECK(h.m[1][2] == doctest::Approx(30.0));
  CHECK(h.m[2][0] == doctest::Approx(0.0));
  CHECK(h.m[2][1] == doctest::Approx(0.0));
  CHECK(h.m[2][2] == doctest::Approx(1.0));
}

TEST_CASE("four_point_transform random round trips") {
  Xoshiro256 rng(99);
  int done = 0;
  while (done < 100) {
    std::array<Point, 4> c;
    // Perturbed box corners; retry when perturbation breaks convexity.
    double x1 = rng.uniform(0, 20), y1 = rng.uniform(0, 20);
    double w = rng.uniform(10, 60), hgt = rng.uniform(10, 60);
    c = {{{x1, y1}, {x1 + w, y1}, {x1 + w, y1 + hgt}, {x1, y1 + hgt}}};
    for (Point& p : c) {
      p.x += rng.uniform(-2, 2);
      p.y += rng.uniform(-2, 2);
    }
    try {
      Quad dst(c);
      Quad src = Quad::from_box(Box2D(0, 0, 1, 1));
      Homography h = four_point_transform(src, dst);
      Homography inv = h.inverse();
      Point mid = h.project({0.5, 0.5});
      Point back = inv.project(mid);
      CHECK(back.x == doctest::Approx(0.5).epsilon(1e-8));
      CHECK(back.y == doctest::Approx(0.5).epsilon(1e-8));
      ++done;
    } catch (const DegenerateQuad&) {
      continue;
    }
  }
}

TEST_CASE("four_point_transform degenerate correspondences throw") {
  // All dst corners identical -> singular system.
  Quad src = Quad::from_box(Box2D(0, 0, 10, 10));
  CHECK_THROWS_AS(Quad({{{5, 5}, {5, 5}, {5, 5}, {5, 5}}}), DegenerateQuad);
  (void)src;
}

TEST_CASE("warp_accumulate identity copies the patch") {
  Raster patch(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) patch.at(r, c) = r * 4 + c + 1;
  Raster target(4, 4, 0.0);
  warp_accumulate(patch, Homography::identity(), target, CompositionMode::Add);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) CHECK(target.at(r, c) == doctest::Approx(patch.at(r, c)));
}

TEST_CASE("warp_accumulate translation by whole pixels") {
  Raster patch(3, 3, 0.0);
  patch.at(1, 1) = 2.0;
  Homography shift = four_point_transform(Quad::from_box(Box2D(0, 0, 3, 3)),
                                          Quad::from_box(Box2D(2, 1, 5, 4)));
  Raster target(8, 8, 0.0);
  warp_accumulate(patch, shift, target, CompositionMode::Add);
  double total = 0.0;
  for (double v : target.data) total += v;
  CHECK(target.at(2, 3) == doctest::Approx(2.0));
  CHECK(total == doctest::Approx(2.0));
}

TEST_CASE("warp_accumulate Add vs Max composition") {
  Raster patch(2, 2, 1.0);
  Raster add_t(4, 4, 0.0), max_t(4, 4, 0.0);
  Homography id = Homography::identity();
  warp_accumulate(patch, id, add_t, CompositionMode::Add);
  warp_accumulate(patch, id, add_t, CompositionMode::Add);
  warp_accumulate(patch, id, max_t, CompositionMode::Max);
  warp_accumulate(patch, id, max_t, CompositionMode::Max);
  CHECK(add_t.at(0, 0) == doctest::Approx(2.0));
  CHECK(max_t.at(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("warp_accumulate leaves pixels outside the footprint untouched") {
  Raster patch(2, 2, 1.0);
  Homography h = four_point_transform(Quad::from_box(Box2D(0, 0, 2, 2)),
                                      Quad::from_box(Box2D(5, 5, 7, 7)));
  Raster target(10, 10, -3.0);
  warp_accumulate(patch, h, target, CompositionMode::Add);
  CHECK(target.at(0, 0) == -3.0);
  CHECK(target.at(9, 9) == -3.0);
  CHECK(target.at(5, 5) == doctest::Approx(-2.0));
}

TEST_CASE("warp_accumulate 2x downscale bilinear average") {
  // 2x2 patch of value v mapped onto a single target pixel: the inverse
  // sample lands at the patch center, bilinear across four equal values.
  Raster patch(2, 2);
  patch.at(0, 0) = 1;
  patch.at(0, 1) = 3;
  patch.at(1, 0) = 5;
  patch.at(1, 1) = 7;
  Homography h = four_point_transform(Quad::from_box(Box2D(0, 0, 2, 2)),
                                      Quad::from_box(Box2D(1, 1, 2, 2)));
  Raster target(4, 4, 0.0);
  warp_accumulate(patch, h, target, CompositionMode::Add);
  CHECK(target.at(1, 1) == doctest::Approx(4.0));  // mean of the 4 samples
}
