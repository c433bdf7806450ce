#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "densetarget/geometry.hpp"

namespace dt {

/// Row-major single-channel real grid.
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Raster() = default;
  Raster(int h, int w, double fill = 0.0);

  double& at(int row, int col) { return data[static_cast<size_t>(row) * width + col]; }
  double at(int row, int col) const { return data[static_cast<size_t>(row) * width + col]; }

  bool same_shape(const Raster& o) const { return height == o.height && width == o.width; }
};

struct GaussianPatchSpec {
  int size = 120;
  double sigma = 40.0;

  void validate() const;
};

/// Square patch with value exp(-4 ln2 r^2 / sigma^2) at pixel-center
/// distance r from the patch center; sigma is the FWHM.
Raster make_gaussian_patch(const GaussianPatchSpec& spec);

/// Ground-truth gaussian map: one warped patch per box, composed at
/// 1/downscale resolution (ceil division).
Raster build_target_map(const std::vector<Box2D>& boxes, int image_h, int image_w,
                        const GaussianPatchSpec& spec, int downscale,
                        CompositionMode mode);

// ".dtr" container: magic "DTR1", u32 height, u32 width, u32 dtype tag
// (0 = f32), little-endian, then row-major f32 payload.
void write_raster(const Raster& r, const std::filesystem::path& path);
Raster read_raster(const std::filesystem::path& path);

}  // namespace dt
