#include "densetarget/heatmap.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>

namespace dt {

Raster::Raster(int h, int w, double fill)
    : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {
  if (h < 0 || w < 0) throw Error("Raster: negative dimensions");
}

void GaussianPatchSpec::validate() const {
  if (size < 3) throw SpecError("GaussianPatchSpec: size must be >= 3");
  if (!(sigma > 0.0)) throw SpecError("GaussianPatchSpec: sigma must be > 0");
}

Raster make_gaussian_patch(const GaussianPatchSpec& spec) {
  spec.validate();
  Raster patch(spec.size, spec.size);
  const double center = spec.size / 2.0;
  const double k = 4.0 * std::log(2.0) / (spec.sigma * spec.sigma);
  for (int r = 0; r < spec.size; ++r) {
    for (int c = 0; c < spec.size; ++c) {
      double dx = (c + 0.5) - center;
      double dy = (r + 0.5) - center;
      patch.at(r, c) = std::exp(-k * (dx * dx + dy * dy));
    }
  }
  return patch;
}

namespace {

const Raster& cached_patch(const GaussianPatchSpec& spec) {
  static std::mutex mu;
  static std::map<std::pair<int, double>, Raster> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(spec.size, spec.sigma);
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache.emplace(key, make_gaussian_patch(spec)).first;
  }
  return it->second;
}

}  // namespace

Raster build_target_map(const std::vector<Box2D>& boxes, int image_h, int image_w,
                        const GaussianPatchSpec& spec, int downscale,
                        CompositionMode mode) {
  if (downscale < 1) throw SpecError("build_target_map: downscale must be >= 1");
  const int mh = (image_h + downscale - 1) / downscale;
  const int mw = (image_w + downscale - 1) / downscale;
  Raster map(mh, mw, 0.0);
  if (boxes.empty()) return map;

  const Raster& patch = cached_patch(spec);
  const double s = static_cast<double>(spec.size);
  const Quad patch_quad({{{0, 0}, {s, 0}, {s, s}, {0, s}}});
  const double inv = 1.0 / downscale;

  for (size_t i = 0; i < boxes.size(); ++i) {
    const Box2D& b = boxes[i];
    if (b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > image_w || b.y2 > image_h) {
      throw BoxOutOfBounds("build_target_map: box " + std::to_string(i) +
                           " extends outside the image");
    }
    Box2D scaled(b.x1 * inv, b.y1 * inv, b.x2 * inv, b.y2 * inv);
    Homography h = four_point_transform(patch_quad, Quad::from_box(scaled));
    warp_accumulate(patch, h, map, mode);
  }
  return map;
}

namespace {

constexpr char kMagic[4] = {'D', 'T', 'R', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_raster(const Raster& r, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_raster: cannot open " + path.string());
  os.write(kMagic, 4);
  put_u32(os, static_cast<uint32_t>(r.height));
  put_u32(os, static_cast<uint32_t>(r.width));
  put_u32(os, 0);  // dtype tag: f32
  std::vector<float> payload(r.data.begin(), r.data.end());
  for (float f : payload) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
  if (!os) throw IoError("write_raster: write failed for " + path.string());
}

Raster read_raster(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_raster: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("read_raster: bad magic in " + path.string());
  }
  uint32_t h = get_u32(is);
  uint32_t w = get_u32(is);
  uint32_t tag = get_u32(is);
  if (!is || tag != 0) throw FormatError("read_raster: unsupported dtype tag");
  if (h > (1u << 20) || w > (1u << 20)) throw FormatError("read_raster: absurd dimensions");
  Raster r(static_cast<int>(h), static_cast<int>(w));
  for (size_t i = 0; i < r.data.size(); ++i) {
    uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    r.data[i] = f;
  }
  if (!is) throw FormatError("read_raster: truncated payload in " + path.string());
  return r;
}

}  // namespace dt
