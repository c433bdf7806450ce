#pragma once

#include <array>
#include <optional>
#include <vector>

#include "densetarget/geometry.hpp"

namespace dt {

struct AnchorLevel {
  int stride;
  double base_size;
};

struct AnchorGridSpec {
  std::vector<AnchorLevel> levels;
  std::vector<double> scales;
  std::vector<double> aspect_ratios;

  /// RetinaNet defaults: strides 8..128, bases 32..512, scales 2^{0,1/3,2/3},
  /// ratios {0.5, 1, 2}.
  static AnchorGridSpec retinanet_default();

  int anchors_per_cell() const {
    return static_cast<int>(scales.size() * aspect_ratios.size());
  }
  void validate() const;
};

enum class AnchorLabel { Positive, Negative, Ignore };

struct AnchorAssignment {
  int anchor_index = -1;
  AnchorLabel label = AnchorLabel::Negative;
  std::optional<int> matched_gt;
  std::array<double, 4> regression_target{};  // defined only when Positive
};

/// Level-major, then row, col, scale, ratio; cell (i, j) at level stride s
/// centers its anchors at (s*(j+0.5), s*(i+0.5)).
std::vector<Box2D> generate_anchors(const AnchorGridSpec& spec, int image_h, int image_w);

struct AssignOptions {
  double pos_iou = 0.5;
  double neg_iou = 0.4;
  // Off by default: the matching rule is best-IoU thresholds only.
  bool force_match_unassigned_gt = false;
};

std::vector<AnchorAssignment> assign_anchors(const std::vector<Box2D>& anchors,
                                             const std::vector<Box2D>& gt,
                                             const AssignOptions& opt = {});

/// Center/size deltas: ((gx-ax)/aw, (gy-ay)/ah, ln(gw/aw), ln(gh/ah)).
std::array<double, 4> encode_deltas(const Box2D& anchor, const Box2D& gt);
Box2D decode_deltas(const Box2D& anchor, const std::array<double, 4>& deltas);

}  // namespace dt
