#include "densetarget/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dt {

void HemParams::validate() const {
  if (!(0.0 <= neg_thresh && neg_thresh < pos_thresh && pos_thresh <= 1.0)) {
    throw ConfigError("HemParams: need 0 <= neg_thresh < pos_thresh <= 1");
  }
}

double focal_term(double p, int y, const FocalParams& params, double* dp) {
  const double pt = (y == 1) ? p : 1.0 - p;
  const double one_m = 1.0 - pt;
  const double loss = -params.alpha * std::pow(one_m, params.gamma) * std::log(pt);
  if (dp) {
    // d/dpt, then chain through pt = p or 1-p.
    double dpt;
    if (params.gamma == 0.0) {
      dpt = -params.alpha / pt;
    } else {
      dpt = params.alpha * (params.gamma * std::pow(one_m, params.gamma - 1.0) * std::log(pt) -
                            std::pow(one_m, params.gamma) / pt);
    }
    *dp = (y == 1) ? dpt : -dpt;
  }
  return loss;
}

double focal_loss(std::span<const double> p, std::span<const FocalAnchorState> state,
                  const FocalParams& params, std::span<double> grad) {
  if (p.size() != state.size() || grad.size() != p.size()) {
    throw ShapeMismatch("focal_loss: p/state/grad length mismatch");
  }
  size_t n_pos = 0;
  for (FocalAnchorState s : state) {
    if (s == FocalAnchorState::Positive) ++n_pos;
  }
  const double norm = static_cast<double>(std::max<size_t>(1, n_pos));
  double total = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    grad[i] = 0.0;
    if (state[i] == FocalAnchorState::Ignored) continue;
    double pi = p[i];
    bool clamped = false;
    if (params.eps > 0.0) {
      double lo = params.eps, hi = 1.0 - params.eps;
      if (pi < lo) { pi = lo; clamped = true; }
      if (pi > hi) { pi = hi; clamped = true; }
    }
    if (!(pi > 0.0 && pi < 1.0)) {
      throw DomainError("focal_loss: probability outside (0,1)");
    }
    double dp = 0.0;
    total += focal_term(pi, state[i] == FocalAnchorState::Positive ? 1 : 0, params, &dp);
    grad[i] = clamped ? 0.0 : dp / norm;
  }
  return total / norm;
}

double smooth_l1_term(double x, double* dx) {
  const double ax = std::abs(x);
  if (dx) *dx = (ax < 1.0) ? x : (x > 0 ? 1.0 : -1.0);
  return (ax < 1.0) ? 0.5 * x * x : ax - 0.5;
}

double smooth_l1(std::span<const double> x, std::span<double> grad) {
  if (grad.size() != x.size()) throw ShapeMismatch("smooth_l1: grad length mismatch");
  if (x.empty()) return 0.0;
  const double norm = static_cast<double>(x.size());
  double total = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    double d = 0.0;
    total += smooth_l1_term(x[i], &d);
    grad[i] = d / norm;
  }
  return total / norm;
}

double gaussian_loss(const Raster& pred, const Raster& target, const HemParams& params,
                     Raster& grad, int batch_n) {
  params.validate();
  if (!pred.same_shape(target)) {
    throw ShapeMismatch("gaussian_loss: pred " + std::to_string(pred.height) + "x" +
                        std::to_string(pred.width) + " vs target " +
                        std::to_string(target.height) + "x" + std::to_string(target.width));
  }
  if (batch_n < 1) throw ConfigError("gaussian_loss: batch_n must be >= 1");
  grad = Raster(pred.height, pred.width, 0.0);

  size_t n_pos = 0, n_neg = 0;
  for (double t : target.data) {
    if (t >= params.pos_thresh) ++n_pos;
    else if (t <= params.neg_thresh) ++n_neg;
  }

  double w_pos = 0.0, w_neg = 0.0;
  if (params.reduction == HemReduction::MeanActive) {
    // Per-mask mean, masks weighted equally; a lone active mask gets
    // full weight.
    const double share = (n_pos > 0 && n_neg > 0) ? 0.5 : 1.0;
    if (n_pos > 0) w_pos = share / static_cast<double>(n_pos);
    if (n_neg > 0) w_neg = share / static_cast<double>(n_neg);
  } else {
    w_pos = w_neg = 1.0 / static_cast<double>(batch_n);
  }

  double total = 0.0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double t = target.data[i];
    double w;
    if (t >= params.pos_thresh) w = w_pos;
    else if (t <= params.neg_thresh) w = w_neg;
    else continue;  // dead zone: no loss, no gradient
    const double diff = pred.data[i] - t;
    total += w * diff * diff;
    grad.data[i] = 2.0 * w * diff;
  }
  return total;
}

double total_loss(double cls, double reg, double gl, const LossWeights& w) {
  if (!std::isfinite(cls) || !std::isfinite(reg) || !std::isfinite(gl)) {
    throw DomainError("total_loss: non-finite component");
  }
  return w.lambda_cls * cls + w.lambda_reg * reg + w.lambda_gl * gl;
}

}  // namespace dt
