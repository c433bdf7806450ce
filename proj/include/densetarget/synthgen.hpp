#pragma once

#include <filesystem>

#include "densetarget/dataset.hpp"
#include "densetarget/heatmap.hpp"

namespace dt {

/// Dense synthetic shelf scene: a jittered grid of bright rectangles on
/// a dark background.
struct SceneSpec {
  int image_h = 64;
  int image_w = 64;
  int rows = 4;
  int cols = 4;
  double fill = 0.8;     // box side as a fraction of the cell
  double jitter = 0.15;  // center jitter, fraction of the cell
  // low object/background contrast plus noise keeps the detection task
  // non-trivial at 64x64
  double object_lo = 0.30, object_hi = 0.50;
  double background_lo = 0.10, background_hi = 0.30;
  double noise_amp = 0.08;
  uint64_t seed = 1729;

  /// The fixed reference configuration used by the ablation benchmark:
  /// 64x64, 4x4 grid, fill 0.8, jitter 0.15, seed 1729.
  static SceneSpec standard_benchmark();

  void validate() const;
};

struct Scene {
  Raster image;
  std::vector<Box2D> boxes;
};

/// Deterministic in (spec, spec.seed).
Scene generate_scene(const SceneSpec& spec);

struct DatasetCounts {
  int n_train = 200;
  int n_val = 40;
  int n_test = 40;
};

/// Writes <out>/images/<split>_<idx>.dtr plus one annotation JSON per
/// split; per-image seeds derive from (master seed, split tag, index).
void generate_dataset(const SceneSpec& spec, const DatasetCounts& counts, uint64_t master_seed,
                      const std::filesystem::path& out_dir);

}  // namespace dt
