#include <doctest.h>

#include <cmath>
#include <vector>

#include "densetarget/losses.hpp"
#include "densetarget/rng.hpp"

using namespace dt;

namespace {

// Central finite difference relative error of an analytic derivative.
template <typename F>
double fd_rel_err(F&& f, double x, double analytic, double step = 1e-5) {
  double num = (f(x + step) - f(x - step)) / (2 * step);
  double denom = std::max({std::abs(num), std::abs(analytic), 1e-8});
  return std::abs(num - analytic) / denom;
}

}  // namespace

TEST_CASE("focal term closed forms") {
  FocalParams p;  // alpha 0.25, gamma 2
  // (p=0.5, y=1): pt = 0.5, loss = 0.25 * 0.25 * ln 2.
  CHECK(std::abs(focal_term(0.5, 1, p) - 0.25 * 0.25 * std::log(2.0)) < 1e-12);
  // Symmetric for the negative class at the mirrored probability.
  CHECK(focal_term(0.5, 0, p) == doctest::Approx(focal_term(0.5, 1, p)).epsilon(1e-15));
  CHECK(focal_term(0.2, 0, p) == doctest::Approx(focal_term(0.8, 1, p)).epsilon(1e-15));

  // gamma = 0, alpha = 1 degenerates to cross entropy.
  FocalParams ce{1.0, 0.0};
  CHECK(focal_term(0.9, 1, ce) == doctest::Approx(-std::log(0.9)).epsilon(1e-14));
  CHECK(focal_term(0.9, 1, ce) == doctest::Approx(0.105360515657826).epsilon(1e-12));

  // Confident correct predictions are strongly down-weighted vs CE.
  CHECK(focal_term(0.99, 1, p) < 1e-4 * focal_term(0.99, 1, ce) + 1e-12);
}

TEST_CASE("focal term derivative matches finite differences") {
  Xoshiro256 rng(61);
  for (int i = 0; i < 500; ++i) {
    FocalParams p;
    p.alpha = rng.uniform(0.05, 1.0);
    p.gamma = (i % 5 == 0) ? 0.0 : rng.uniform(0.5, 4.0);
    double x = rng.uniform(0.02, 0.98);
    int y = (rng.next_u64() & 1) ? 1 : 0;
    double dp = 0.0;
    focal_term(x, y, p, &dp);
    auto f = [&](double v) { return focal_term(v, y, p); };
    CHECK(fd_rel_err(f, x, dp) < 1e-4);
  }
}

TEST_CASE("focal loss reduction: sum over non-ignored / max(1, #pos)") {
  FocalParams params;
  std::vector<double> p = {0.8, 0.3, 0.1, 0.6, 0.5};
  std::vector<FocalAnchorState> st = {
      FocalAnchorState::Positive, FocalAnchorState::Positive, FocalAnchorState::Negative,
      FocalAnchorState::Ignored, FocalAnchorState::Negative};
  std::vector<double> grad(5);
  double v = focal_loss(p, st, params, grad);

  double expect = (focal_term(0.8, 1, params) + focal_term(0.3, 1, params) +
                   focal_term(0.1, 0, params) + focal_term(0.5, 0, params)) /
                  2.0;
  CHECK(v == doctest::Approx(expect).epsilon(1e-15));
  CHECK(grad[3] == 0.0);  // ignored: no gradient
  double d1 = 0.0;
  focal_term(0.3, 1, params, &d1);
  CHECK(grad[1] == doctest::Approx(d1 / 2.0).epsilon(1e-15));

  // No positives: normalizer clamps to 1.
  std::vector<FocalAnchorState> neg = {FocalAnchorState::Negative, FocalAnchorState::Negative};
  std::vector<double> p2 = {0.2, 0.4}, g2(2);
  CHECK(focal_loss(p2, neg, params, g2) ==
        doctest::Approx(focal_term(0.2, 0, params) + focal_term(0.4, 0, params)).epsilon(1e-15));

  // All ignored: exactly zero.
  std::vector<FocalAnchorState> ign = {FocalAnchorState::Ignored};
  std::vector<double> p3 = {0.5}, g3(1);
  CHECK(focal_loss(p3, ign, params, g3) == 0.0);
}

TEST_CASE("focal loss epsilon clamp") {
  FocalParams params;  // eps = 1e-7
  std::vector<FocalAnchorState> st = {FocalAnchorState::Positive};
  std::vector<double> g(1);
  std::vector<double> p0 = {0.0};
  double v = focal_loss(p0, st, params, g);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(focal_term(1e-7, 1, params)).epsilon(1e-12));
  CHECK(g[0] == 0.0);  // gradient suppressed at the clamp

  std::vector<double> p1 = {1.0};
  CHECK(std::isfinite(focal_loss(p1, st, params, g)));
  CHECK(g[0] == 0.0);

  FocalParams strict;
  strict.eps = 0.0;
  CHECK_THROWS_AS(focal_loss(p0, st, strict, g), DomainError);
}

TEST_CASE("focal loss shape mismatch") {
  FocalParams params;
  std::vector<double> p = {0.5, 0.5};
  std::vector<FocalAnchorState> st = {FocalAnchorState::Positive};
  std::vector<double> g(2);
  CHECK_THROWS_AS(focal_loss(p, st, params, g), ShapeMismatch);
}

TEST_CASE("smooth L1 closed forms") {
  CHECK(smooth_l1_term(0.0) == 0.0);
  CHECK(smooth_l1_term(0.5) == 0.125);
  CHECK(smooth_l1_term(2.0) == 1.5);
  CHECK(smooth_l1_term(-2.0) == 1.5);
  CHECK(smooth_l1_term(1.0) == 0.5);  // branch boundary, continuous

  double d = 0.0;
  smooth_l1_term(0.5, &d);
  CHECK(d == 0.5);
  smooth_l1_term(-3.0, &d);
  CHECK(d == -1.0);

  std::vector<double> x = {0.0, 0.5, 2.0};
  std::vector<double> g(3);
  CHECK(smooth_l1(x, g) == doctest::Approx((0.0 + 0.125 + 1.5) / 3.0).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(0.5 / 3.0).epsilon(1e-15));
  CHECK(g[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  std::vector<double> empty, ge;
  CHECK(smooth_l1(empty, ge) == 0.0);
}

TEST_CASE("smooth L1 derivative matches finite differences") {
  Xoshiro256 rng(62);
  for (int i = 0; i < 500; ++i) {
    double x = rng.uniform(-4, 4);
    if (std::abs(std::abs(x) - 1.0) < 1e-3) continue;  // kink at |x|=1
    double d = 0.0;
    smooth_l1_term(x, &d);
    auto f = [](double v) { return smooth_l1_term(v); };
    CHECK(fd_rel_err(f, x, d) < 1e-4);
  }
}

TEST_CASE("gaussian loss documented 2x2 instance") {
  Raster target(2, 2), pred(2, 2);
  target.data = {1.0, 0.0, 0.0, 0.0};
  pred.data = {0.5, 0.2, 0.0, 0.0};
  HemParams params;  // (0.3, 0.1), MeanActive
  Raster grad;
  double v = gaussian_loss(pred, target, params, grad);
  // pos mask: pixel 0 alone; neg mask: the other three; equal 0.5 shares.
  double expect = 0.5 * (0.5 * 0.5) / 1.0 + 0.5 * (0.2 * 0.2) / 3.0;
  CHECK(std::abs(v - expect) < 1e-12);
  CHECK(grad.data[0] == doctest::Approx(2.0 * 0.5 * (0.5 - 1.0)).epsilon(1e-15));
  CHECK(grad.data[1] == doctest::Approx(2.0 * (0.5 / 3.0) * 0.2).epsilon(1e-15));
  CHECK(grad.data[2] == 0.0);
}

TEST_CASE("gaussian loss trivial and dead-zone cases") {
  HemParams params;
  Raster grad;

  Raster t(3, 3, 0.0);
  t.at(1, 1) = 1.0;
  Raster p = t;  // pred == target -> zero loss, zero grad
  CHECK(gaussian_loss(p, t, params, grad) == 0.0);
  for (double g : grad.data) CHECK(g == 0.0);

  // Dead zone: target 0.25 with thresholds (0.3, 0.1) contributes nothing.
  Raster t2(1, 1, 0.25), p2(1, 1, 0.9);
  CHECK(gaussian_loss(p2, t2, params, grad) == 0.0);
  CHECK(grad.data[0] == 0.0);

  // Lone active mask takes full weight.
  Raster t3(1, 2, 1.0), p3(1, 2, 0.0);
  double v = gaussian_loss(p3, t3, params, grad);
  CHECK(v == doctest::Approx(1.0).epsilon(1e-15));  // (1 + 1) / 2 * full weight 1/2 each
}

TEST_CASE("gaussian loss gradients match finite differences") {
  Xoshiro256 rng(63);
  HemParams params;
  for (int trial = 0; trial < 50; ++trial) {
    Raster target(4, 4), pred(4, 4);
    for (double& v : target.data) v = rng.next_double();
    for (double& v : pred.data) v = rng.next_double();
    Raster grad;
    gaussian_loss(pred, target, params, grad);
    for (int i = 0; i < 16; ++i) {
      auto f = [&](double v) {
        Raster p2 = pred;
        p2.data[i] = v;
        Raster g;
        return gaussian_loss(p2, target, params, g);
      };
      CHECK(fd_rel_err(f, pred.data[i], grad.data[i]) < 1e-4);
    }
  }
}

TEST_CASE("gaussian loss SumOverBatchMeanPixels reduction") {
  HemParams params;
  params.reduction = HemReduction::SumOverBatchMeanPixels;
  Raster t(2, 2), p(2, 2);
  t.data = {1.0, 0.0, 0.0, 0.0};
  p.data = {0.5, 0.2, 0.0, 0.0};
  Raster grad;
  // batch_n = 4: every active pixel weighted 1/4.
  double v = gaussian_loss(p, t, params, grad, 4);
  CHECK(v == doctest::Approx((0.25 + 0.04) / 4.0).epsilon(1e-15));
  CHECK_THROWS_AS(gaussian_loss(p, t, params, grad, 0), ConfigError);
}

TEST_CASE("gaussian loss parameter validation and shape checks") {
  Raster g;
  Raster a(2, 2), b(2, 3);
  HemParams params;
  CHECK_THROWS_AS(gaussian_loss(a, b, params, g), ShapeMismatch);
  HemParams bad;
  bad.pos_thresh = 0.1;
  bad.neg_thresh = 0.3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(gaussian_loss(a, a, bad, g), ConfigError);
}

TEST_CASE("total loss weighted sum") {
  CHECK(total_loss(0.1, 0.2, 0.3, {1, 1, 1}) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(total_loss(0.1, 0.2, 0.3, {2, 0.5, 1}) == doctest::Approx(0.6).epsilon(1e-15));
  // lambda_gl = 0 makes the total independent of gl.
  LossWeights w{1, 1, 0};
  CHECK(total_loss(0.1, 0.2, 123.0, w) == total_loss(0.1, 0.2, -7.0, w));
  CHECK_THROWS_AS(total_loss(std::nan(""), 0, 0, {}), DomainError);
}
