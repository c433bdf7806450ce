#include "densetarget/dataset.hpp"

#include <fstream>

#include <json.hpp>

namespace dt {

const ImageRecord* AnnotationFile::find_image(int id) const {
  for (const ImageRecord& im : images) {
    if (im.id == id) return &im;
  }
  return nullptr;
}

std::map<int, std::vector<Box2D>> AnnotationFile::boxes_by_image() const {
  std::map<int, std::vector<Box2D>> out;
  for (const ImageRecord& im : images) out[im.id];
  for (const auto& [id, box] : annotations) out.at(id).push_back(box);
  return out;
}

void AnnotationFile::validate() const {
  for (const auto& [id, box] : annotations) {
    const ImageRecord* im = find_image(id);
    if (!im) {
      throw FormatError("annotations: unknown image id " + std::to_string(id));
    }
    if (box.x1 < 0 || box.y1 < 0 || box.x2 > im->width || box.y2 > im->height) {
      throw BoxOutOfBounds("annotations: box outside image " + std::to_string(id));
    }
  }
}

void write_annotations(const AnnotationFile& ann, const std::filesystem::path& path) {
  nlohmann::json j;
  j["images"] = nlohmann::json::array();
  for (const ImageRecord& im : ann.images) {
    j["images"].push_back(
        {{"id", im.id}, {"width", im.width}, {"height", im.height}, {"file", im.file}});
  }
  j["annotations"] = nlohmann::json::array();
  for (const auto& [id, box] : ann.annotations) {
    j["annotations"].push_back({{"image_id", id}, {"bbox", {box.x1, box.y1, box.x2, box.y2}}});
  }
  std::ofstream os(path);
  if (!os) throw IoError("write_annotations: cannot open " + path.string());
  os << j.dump(1) << "\n";
}

AnnotationFile read_annotations(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_annotations: cannot open " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("read_annotations: " + std::string(e.what()));
  }
  AnnotationFile ann;
  for (const auto& im : j.at("images")) {
    ann.images.push_back({im.at("id"), im.at("width"), im.at("height"),
                          im.value("file", std::string{})});
  }
  for (const auto& a : j.at("annotations")) {
    const auto& b = a.at("bbox");
    ann.annotations.emplace_back(a.at("image_id"), Box2D(b.at(0), b.at(1), b.at(2), b.at(3)));
  }
  ann.validate();
  return ann;
}

AnnotationFile convert_coco_annotations(const std::filesystem::path& coco_json) {
  std::ifstream is(coco_json);
  if (!is) throw IoError("convert_coco_annotations: cannot open " + coco_json.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("convert_coco_annotations: " + std::string(e.what()));
  }
  AnnotationFile ann;
  for (const auto& im : j.at("images")) {
    std::string file = im.contains("file_name") ? im.at("file_name").get<std::string>()
                                                : im.value("file", std::string{});
    ann.images.push_back({im.at("id"), im.at("width"), im.at("height"), file});
  }
  for (const auto& a : j.at("annotations")) {
    const auto& b = a.at("bbox");  // [x, y, w, h]
    double x = b.at(0), y = b.at(1), w = b.at(2), h = b.at(3);
    ann.annotations.emplace_back(a.at("image_id"), Box2D(x, y, x + w, y + h));
  }
  ann.validate();
  return ann;
}

}  // namespace dt
