#pragma once

#include <filesystem>
#include <vector>

#include "densetarget/geometry.hpp"

namespace dt {

struct Detection {
  Box2D box;
  double score = 0.0;
  int image_id = 0;
};

/// Greedy NMS: descending score, suppress IoU >= iou_thresh with any kept
/// box, stop at max_out. Ties break by (score desc, x1 asc, y1 asc).
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh, int max_out);

/// Score filter + NMS + cap, sorted by descending score.
std::vector<Detection> filter_and_cap(std::vector<Detection> dets, double score_thresh = 0.05,
                                      double iou_thresh = 0.5, int max_out = 300);

/// JSON array of {image_id, box:[x1,y1,x2,y2], score}.
void write_detections(const std::vector<Detection>& dets, const std::filesystem::path& path);
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace dt
