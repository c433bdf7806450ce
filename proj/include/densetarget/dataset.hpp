#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "densetarget/geometry.hpp"

namespace dt {

struct ImageRecord {
  int id = 0;
  int width = 0;
  int height = 0;
  std::string file;  // relative path to the .dtr image
};

/// Flat annotation schema:
/// {images: [{id, width, height, file}],
///  annotations: [{image_id, bbox: [x1,y1,x2,y2]}]}
struct AnnotationFile {
  std::vector<ImageRecord> images;
  std::vector<std::pair<int, Box2D>> annotations;  // (image_id, box)

  const ImageRecord* find_image(int id) const;
  std::map<int, std::vector<Box2D>> boxes_by_image() const;
  void validate() const;
};

void write_annotations(const AnnotationFile& ann, const std::filesystem::path& path);
AnnotationFile read_annotations(const std::filesystem::path& path);

/// Converts COCO-style [x,y,w,h] bboxes into the corner-convention schema.
AnnotationFile convert_coco_annotations(const std::filesystem::path& coco_json);

}  // namespace dt
