#include "densetarget/postprocess.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace dt {

namespace {

bool det_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
  return a.box.y1 < b.box.y1;
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh, int max_out) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) {
    throw ConfigError("nms: iou_thresh must be in (0,1)");
  }
  if (max_out < 1) throw ConfigError("nms: max_out must be >= 1");
  std::stable_sort(dets.begin(), dets.end(), det_order);
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(d.box, k.box) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) {
      kept.push_back(d);
      if (static_cast<int>(kept.size()) >= max_out) break;
    }
  }
  return kept;
}

std::vector<Detection> filter_and_cap(std::vector<Detection> dets, double score_thresh,
                                      double iou_thresh, int max_out) {
  std::erase_if(dets, [&](const Detection& d) { return d.score < score_thresh; });
  if (dets.empty()) return dets;
  return nms(std::move(dets), iou_thresh, max_out);
}

void write_detections(const std::vector<Detection>& dets, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Detection& d : dets) {
    arr.push_back({{"image_id", d.image_id},
                   {"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                   {"score", d.score}});
  }
  std::ofstream os(path);
  if (!os) throw IoError("write_detections: cannot open " + path.string());
  os << arr.dump(1) << "\n";
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_detections: cannot open " + path.string());
  nlohmann::json arr;
  try {
    is >> arr;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("read_detections: " + std::string(e.what()));
  }
  if (!arr.is_array()) throw FormatError("read_detections: expected a JSON array");
  std::vector<Detection> out;
  for (const auto& j : arr) {
    const auto& b = j.at("box");
    out.push_back({Box2D(b.at(0), b.at(1), b.at(2), b.at(3)), j.at("score"), j.at("image_id")});
  }
  return out;
}

}  // namespace dt
