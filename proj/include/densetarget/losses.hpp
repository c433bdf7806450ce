#pragma once

#include <span>
#include <vector>

#include "densetarget/heatmap.hpp"

namespace dt {

struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;
  /// Clamp predictions into [eps, 1-eps] before taking logs; set to 0 to
  /// disable (then out-of-domain inputs raise DomainError).
  double eps = 1e-7;
};

enum class HemReduction { MeanActive, SumOverBatchMeanPixels };

struct HemParams {
  double pos_thresh = 0.3;
  double neg_thresh = 0.1;
  HemReduction reduction = HemReduction::MeanActive;

  void validate() const;
};

struct LossWeights {
  double lambda_cls = 1.0;
  double lambda_reg = 1.0;
  double lambda_gl = 1.0;
};

enum class FocalAnchorState { Negative = 0, Positive = 1, Ignored = 2 };

/// Focal classification loss: mean of -alpha (1-pt)^gamma ln(pt) over
/// non-ignored anchors, normalized by max(1, #positive).
/// `grad` receives d(value)/d(p_i); zero for ignored anchors.
double focal_loss(std::span<const double> p, std::span<const FocalAnchorState> state,
                  const FocalParams& params, std::span<double> grad);

/// Per-anchor focal term and its derivative in p, no reduction.
double focal_term(double p, int y, const FocalParams& params, double* dp = nullptr);

/// Smooth L1 over residuals (mean over coordinates); grad is d/dx_i.
double smooth_l1(std::span<const double> x, std::span<double> grad);

double smooth_l1_term(double x, double* dx = nullptr);

/// Hard-example-mined MSE between prediction and target maps. `batch_n`
/// scales the SumOverBatchMeanPixels reduction (1/n outer sum); pass 1 for
/// a single image.
double gaussian_loss(const Raster& pred, const Raster& target, const HemParams& params,
                     Raster& grad, int batch_n = 1);

double total_loss(double cls, double reg, double gl, const LossWeights& w);

}  // namespace dt
