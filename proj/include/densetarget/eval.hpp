#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <vector>

#include "densetarget/postprocess.hpp"

namespace dt {

struct MetricsReport {
  double ap = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ar300 = 0.0;
  double ar300_50 = 0.0;
  /// (iou_thresh, ap, recall) per threshold on the COCO grid.
  struct PerThreshold {
    double iou_thresh;
    double ap;
    double recall;
  };
  std::vector<PerThreshold> breakdown;

  /// Fixed-layout row "ap,ap50,ap75,ar300,ar300_50" at 6 decimals.
  std::string csv_row() const;
  std::string to_json() const;
};

struct DetMatch {
  int det_index;
  std::optional<int> matched_gt;
};

/// COCO-style greedy matching inside one image: detections in descending
/// score order each claim their best unclaimed gt with IoU >= thresh.
/// Throws UnsortedInput when dets are not score-sorted.
std::vector<DetMatch> match_detections(const std::vector<Detection>& dets,
                                       const std::vector<Box2D>& gt, double iou_thresh);

/// 101-point interpolated AP from per-detection (score, is_tp) pairs.
double average_precision(std::vector<std::pair<double, bool>> scored_matches, size_t n_gt);

/// Per-image ground truth and detections keyed by image id. Detections
/// must already be capped (filter_and_cap).
MetricsReport evaluate(const std::map<int, std::vector<Detection>>& dets_by_image,
                       const std::map<int, std::vector<Box2D>>& gt_by_image);

void write_metrics(const MetricsReport& r, const std::filesystem::path& json_path);

}  // namespace dt
