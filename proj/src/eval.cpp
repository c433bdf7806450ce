#include "densetarget/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace dt {

namespace {

constexpr int kNumRecallPoints = 101;

std::vector<double> coco_iou_grid() {
  std::vector<double> g;
  for (int i = 0; i < 10; ++i) g.push_back(0.5 + 0.05 * i);
  return g;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string MetricsReport::csv_row() const {
  return fmt6(ap) + "," + fmt6(ap50) + "," + fmt6(ap75) + "," + fmt6(ar300) + "," +
         fmt6(ar300_50);
}

std::string MetricsReport::to_json() const {
  nlohmann::json j{{"ap", ap},
                   {"ap50", ap50},
                   {"ap75", ap75},
                   {"ar300", ar300},
                   {"ar300_50", ar300_50}};
  j["breakdown"] = nlohmann::json::array();
  for (const PerThreshold& t : breakdown) {
    j["breakdown"].push_back({{"iou_thresh", t.iou_thresh}, {"ap", t.ap}, {"recall", t.recall}});
  }
  return j.dump(1);
}

std::vector<DetMatch> match_detections(const std::vector<Detection>& dets,
                                       const std::vector<Box2D>& gt, double iou_thresh) {
  for (size_t i = 1; i < dets.size(); ++i) {
    if (dets[i].score > dets[i - 1].score) {
      throw UnsortedInput("match_detections: detections must be sorted by descending score");
    }
  }
  std::vector<DetMatch> out;
  out.reserve(dets.size());
  std::vector<bool> claimed(gt.size(), false);
  for (size_t d = 0; d < dets.size(); ++d) {
    double best = -1.0;
    int best_g = -1;
    for (size_t g = 0; g < gt.size(); ++g) {
      if (claimed[g]) continue;
      double v = iou(dets[d].box, gt[g]);
      if (v >= iou_thresh && v > best) {  // gt ties keep the lowest index
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    DetMatch m{static_cast<int>(d), std::nullopt};
    if (best_g >= 0) {
      claimed[best_g] = true;
      m.matched_gt = best_g;
    }
    out.push_back(m);
  }
  return out;
}

double average_precision(std::vector<std::pair<double, bool>> scored_matches, size_t n_gt) {
  if (n_gt == 0) return 0.0;
  // Canonical order: score desc, TPs before FPs on exact ties. Makes the
  // result a function of the (score, tp) multiset only.
  std::sort(scored_matches.begin(), scored_matches.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second && !b.second;
            });
  size_t tp = 0, fp = 0;
  std::vector<double> recall, precision;
  recall.reserve(scored_matches.size());
  for (const auto& [score, is_tp] : scored_matches) {
    (void)score;
    is_tp ? ++tp : ++fp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  // Precision envelope: non-increasing from the right.
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double total = 0.0;
  size_t ri = 0;
  for (int p = 0; p < kNumRecallPoints; ++p) {
    const double r = p / 100.0;
    while (ri < recall.size() && recall[ri] < r - 1e-12) ++ri;
    if (ri < precision.size()) total += precision[ri];
  }
  return total / kNumRecallPoints;
}

MetricsReport evaluate(const std::map<int, std::vector<Detection>>& dets_by_image,
                       const std::map<int, std::vector<Box2D>>& gt_by_image) {
  for (const auto& [id, dets] : dets_by_image) {
    if (!gt_by_image.count(id)) {
      throw ImageIdMismatch("evaluate: detections reference unknown image id " +
                            std::to_string(id));
    }
    for (const Detection& d : dets) {
      if (d.image_id != id) {
        throw ImageIdMismatch("evaluate: detection image_id does not match its bucket");
      }
    }
  }
  size_t n_gt = 0;
  for (const auto& [id, boxes] : gt_by_image) n_gt += boxes.size();

  MetricsReport report;
  for (double thresh : coco_iou_grid()) {
    std::vector<std::pair<double, bool>> scored;
    size_t matched = 0;
    for (const auto& [id, boxes] : gt_by_image) {
      auto it = dets_by_image.find(id);
      if (it == dets_by_image.end()) continue;
      std::vector<Detection> dets = it->second;
      std::stable_sort(dets.begin(), dets.end(),
                       [](const Detection& a, const Detection& b) { return a.score > b.score; });
      std::vector<DetMatch> matches = match_detections(dets, boxes, thresh);
      for (size_t d = 0; d < dets.size(); ++d) {
        bool tp = matches[d].matched_gt.has_value();
        matched += tp ? 1 : 0;
        scored.emplace_back(dets[d].score, tp);
      }
    }
    MetricsReport::PerThreshold row;
    row.iou_thresh = thresh;
    row.ap = average_precision(std::move(scored), n_gt);
    row.recall = n_gt ? static_cast<double>(matched) / static_cast<double>(n_gt) : 0.0;
    report.breakdown.push_back(row);
  }

  double ap_sum = 0.0, ar_sum = 0.0;
  for (const auto& row : report.breakdown) {
    ap_sum += row.ap;
    ar_sum += row.recall;
    if (std::abs(row.iou_thresh - 0.50) < 1e-9) {
      report.ap50 = row.ap;
      report.ar300_50 = row.recall;
    }
    if (std::abs(row.iou_thresh - 0.75) < 1e-9) report.ap75 = row.ap;
  }
  report.ap = ap_sum / report.breakdown.size();
  report.ar300 = ar_sum / report.breakdown.size();
  return report;
}

void write_metrics(const MetricsReport& r, const std::filesystem::path& json_path) {
  std::ofstream os(json_path);
  if (!os) throw IoError("write_metrics: cannot open " + json_path.string());
  os << r.to_json() << "\n";
}

}  // namespace dt
