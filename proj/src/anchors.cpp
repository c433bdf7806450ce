#include "densetarget/anchors.hpp"

#include <cmath>

namespace dt {

AnchorGridSpec AnchorGridSpec::retinanet_default() {
  AnchorGridSpec spec;
  spec.levels = {{8, 32.0}, {16, 64.0}, {32, 128.0}, {64, 256.0}, {128, 512.0}};
  spec.scales = {1.0, std::pow(2.0, 1.0 / 3.0), std::pow(2.0, 2.0 / 3.0)};
  spec.aspect_ratios = {0.5, 1.0, 2.0};
  return spec;
}

void AnchorGridSpec::validate() const {
  if (levels.empty() || scales.empty() || aspect_ratios.empty()) {
    throw ConfigError("AnchorGridSpec: levels/scales/ratios must be non-empty");
  }
  for (size_t i = 1; i < levels.size(); ++i) {
    if (levels[i].stride <= levels[i - 1].stride) {
      throw ConfigError("AnchorGridSpec: strides must be strictly increasing");
    }
  }
  for (double s : scales) {
    if (!(s > 0)) throw ConfigError("AnchorGridSpec: scales must be positive");
  }
  for (double r : aspect_ratios) {
    if (!(r > 0)) throw ConfigError("AnchorGridSpec: ratios must be positive");
  }
}

std::vector<Box2D> generate_anchors(const AnchorGridSpec& spec, int image_h, int image_w) {
  spec.validate();
  std::vector<Box2D> out;
  for (const AnchorLevel& lvl : spec.levels) {
    const int rows = (image_h + lvl.stride - 1) / lvl.stride;
    const int cols = (image_w + lvl.stride - 1) / lvl.stride;
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        const double cx = lvl.stride * (j + 0.5);
        const double cy = lvl.stride * (i + 0.5);
        for (double scale : spec.scales) {
          const double side = lvl.base_size * scale;
          for (double ratio : spec.aspect_ratios) {
            // area = side^2, h/w = ratio
            const double w = side / std::sqrt(ratio);
            const double h = side * std::sqrt(ratio);
            out.emplace_back(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2);
          }
        }
      }
    }
  }
  return out;
}

std::vector<AnchorAssignment> assign_anchors(const std::vector<Box2D>& anchors,
                                             const std::vector<Box2D>& gt,
                                             const AssignOptions& opt) {
  if (!(0.0 <= opt.neg_iou && opt.neg_iou <= opt.pos_iou && opt.pos_iou <= 1.0)) {
    throw ConfigError("assign_anchors: need 0 <= neg_iou <= pos_iou <= 1");
  }
  std::vector<AnchorAssignment> out(anchors.size());
  std::vector<int> best_anchor_for_gt(gt.size(), -1);
  std::vector<double> best_iou_for_gt(gt.size(), 0.0);

  for (size_t a = 0; a < anchors.size(); ++a) {
    AnchorAssignment& as = out[a];
    as.anchor_index = static_cast<int>(a);
    double best = 0.0;
    int best_gt = -1;
    for (size_t g = 0; g < gt.size(); ++g) {
      double v = iou(anchors[a], gt[g]);
      if (v > best) {  // ties keep the lowest gt index
        best = v;
        best_gt = static_cast<int>(g);
      }
      if (v > best_iou_for_gt[g]) {
        best_iou_for_gt[g] = v;
        best_anchor_for_gt[g] = static_cast<int>(a);
      }
    }
    if (best_gt >= 0 && best >= opt.pos_iou) {
      as.label = AnchorLabel::Positive;
      as.matched_gt = best_gt;
      as.regression_target = encode_deltas(anchors[a], gt[best_gt]);
    } else if (best < opt.neg_iou) {
      as.label = AnchorLabel::Negative;
    } else {
      as.label = AnchorLabel::Ignore;
    }
  }

  if (opt.force_match_unassigned_gt) {
    for (size_t g = 0; g < gt.size(); ++g) {
      int a = best_anchor_for_gt[g];
      if (a < 0 || best_iou_for_gt[g] <= 0.0) continue;
      bool matched = false;
      for (const AnchorAssignment& as : out) {
        if (as.label == AnchorLabel::Positive && as.matched_gt == static_cast<int>(g)) {
          matched = true;
          break;
        }
      }
      if (!matched) {
        out[a].label = AnchorLabel::Positive;
        out[a].matched_gt = static_cast<int>(g);
        out[a].regression_target = encode_deltas(anchors[a], gt[g]);
      }
    }
  }
  return out;
}

std::array<double, 4> encode_deltas(const Box2D& anchor, const Box2D& gt) {
  const double aw = anchor.width(), ah = anchor.height();
  return {(gt.cx() - anchor.cx()) / aw, (gt.cy() - anchor.cy()) / ah,
          std::log(gt.width() / aw), std::log(gt.height() / ah)};
}

Box2D decode_deltas(const Box2D& anchor, const std::array<double, 4>& deltas) {
  const double aw = anchor.width(), ah = anchor.height();
  const double cx = anchor.cx() + deltas[0] * aw;
  const double cy = anchor.cy() + deltas[1] * ah;
  const double w = aw * std::exp(deltas[2]);
  const double h = ah * std::exp(deltas[3]);
  return Box2D(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2);
}

}  // namespace dt
