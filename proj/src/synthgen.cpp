#include "densetarget/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include "densetarget/rng.hpp"

namespace dt {

SceneSpec SceneSpec::standard_benchmark() { return SceneSpec{}; }

void SceneSpec::validate() const {
  if (image_h < 8 || image_w < 8) throw SpecError("SceneSpec: image too small");
  if (rows < 1 || cols < 1) throw SpecError("SceneSpec: need at least a 1x1 grid");
  if (!(fill > 0.0)) throw SpecError("SceneSpec: fill must be positive");
  if (jitter < 0.0) throw SpecError("SceneSpec: jitter must be non-negative");
  if (fill * (1.0 + jitter) > 1.0) {
    throw SpecError("SceneSpec: fill/jitter overflow (fill*(1+jitter) must be <= 1)");
  }
  if (!(object_lo <= object_hi) || !(background_lo <= background_hi)) {
    throw SpecError("SceneSpec: bad intensity ranges");
  }
  if (noise_amp < 0.0) throw SpecError("SceneSpec: noise_amp must be non-negative");
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Xoshiro256 rng(spec.seed);

  Scene scene;
  scene.image = Raster(spec.image_h, spec.image_w);
  const double bg = rng.uniform(spec.background_lo, spec.background_hi);
  for (double& px : scene.image.data) px = bg;

  const double cell_h = static_cast<double>(spec.image_h) / spec.rows;
  const double cell_w = static_cast<double>(spec.image_w) / spec.cols;

  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      const double bw = spec.fill * cell_w;
      const double bh = spec.fill * cell_h;
      // jitter keeps the box inside its cell: |offset| <= (cell - box)/2
      const double max_jx = std::min(spec.jitter * cell_w, (cell_w - bw) / 2.0);
      const double max_jy = std::min(spec.jitter * cell_h, (cell_h - bh) / 2.0);
      const double cx = (c + 0.5) * cell_w + rng.uniform(-max_jx, max_jx);
      const double cy = (r + 0.5) * cell_h + rng.uniform(-max_jy, max_jy);
      const double body = rng.uniform(spec.object_lo, spec.object_hi);

      Box2D box(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0);
      scene.boxes.push_back(box);

      const int x1 = static_cast<int>(std::lround(box.x1));
      const int y1 = static_cast<int>(std::lround(box.y1));
      const int x2 = static_cast<int>(std::lround(box.x2));
      const int y2 = static_cast<int>(std::lround(box.y2));
      // body plus a darker 1-px border for edge contrast
      for (int y = std::max(0, y1); y < std::min(spec.image_h, y2); ++y) {
        for (int x = std::max(0, x1); x < std::min(spec.image_w, x2); ++x) {
          bool border = (y == y1 || y == y2 - 1 || x == x1 || x == x2 - 1);
          scene.image.at(y, x) = border ? body * 0.5 : body;
        }
      }
    }
  }

  if (spec.noise_amp > 0.0) {
    for (double& px : scene.image.data) {
      px = std::clamp(px + rng.uniform(-spec.noise_amp, spec.noise_amp), 0.0, 1.0);
    }
  }
  return scene;
}

void generate_dataset(const SceneSpec& spec, const DatasetCounts& counts, uint64_t master_seed,
                      const std::filesystem::path& out_dir) {
  spec.validate();
  if (counts.n_train < 1 || counts.n_val < 1 || counts.n_test < 1) {
    throw SpecError("generate_dataset: split counts must be >= 1");
  }
  std::filesystem::create_directories(out_dir / "images");

  const std::pair<const char*, int> splits[] = {
      {"train", counts.n_train}, {"val", counts.n_val}, {"test", counts.n_test}};
  for (const auto& [split, count] : splits) {
    AnnotationFile ann;
    const uint64_t tag = stream_tag(split);
    for (int i = 0; i < count; ++i) {
      SceneSpec s = spec;
      s.seed = derive_seed(master_seed, tag, static_cast<uint64_t>(i));
      Scene scene = generate_scene(s);

      std::string file = std::string("images/") + split + "_" + std::to_string(i) + ".dtr";
      write_raster(scene.image, out_dir / file);
      ann.images.push_back({i, spec.image_w, spec.image_h, file});
      for (const Box2D& b : scene.boxes) ann.annotations.emplace_back(i, b);
    }
    write_annotations(ann, out_dir / (std::string(split) + ".json"));
  }
}

}  // namespace dt
