#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "densetarget/postprocess.hpp"
#include "densetarget/rng.hpp"

using namespace dt;
namespace fs = std::filesystem;

namespace {

// Quadratic reference NMS, written directly from the contract: sort by
// (score desc, x1 asc, y1 asc), keep a box iff it overlaps no kept box
// at IoU >= thresh, stop at max_out.
std::vector<Detection> naive_nms(std::vector<Detection> dets, double iou_thresh, int max_out) {
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    return a.box.y1 < b.box.y1;
  });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    if (static_cast<int>(kept.size()) >= max_out) break;
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(d.box, k.box) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> random_dets(Xoshiro256& rng, int n, int image_id = 0) {
  std::vector<Detection> dets;
  for (int i = 0; i < n; ++i) {
    double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
    Box2D b(x, y, x + rng.uniform(2, 40), y + rng.uniform(2, 40));
    // Quantized scores produce frequent exact ties.
    double score = std::floor(rng.next_double() * 20.0) / 20.0;
    dets.push_back({b, score, image_id});
  }
  return dets;
}

bool same_dets(const std::vector<Detection>& a, const std::vector<Detection>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].score != b[i].score || a[i].box.x1 != b[i].box.x1 || a[i].box.y1 != b[i].box.y1 ||
        a[i].box.x2 != b[i].box.x2 || a[i].box.y2 != b[i].box.y2) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("nms keeps the top box and drops heavy overlaps") {
  std::vector<Detection> dets = {
      {Box2D(0, 0, 10, 10), 0.9, 0},
      {Box2D(1, 1, 11, 11), 0.8, 0},   // IoU ~0.68 with the first: suppressed
      {Box2D(50, 50, 60, 60), 0.7, 0}, // disjoint: kept
  };
  auto kept = nms(dets, 0.5, 300);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == 0.9);
  CHECK(kept[1].score == 0.7);

  // Threshold is inclusive: IoU exactly at the threshold suppresses.
  std::vector<Detection> edge = {
      {Box2D(0, 0, 10, 10), 0.9, 0},
      {Box2D(0, 5, 10, 15), 0.8, 0},  // IoU = 50/150 = 1/3
  };
  CHECK(nms(edge, 1.0 / 3.0, 300).size() == 1);
  CHECK(nms(edge, 1.0 / 3.0 + 1e-9, 300).size() == 2);
}

TEST_CASE("nms tie-break is (score desc, x1 asc, y1 asc)") {
  std::vector<Detection> dets = {
      {Box2D(5, 0, 15, 10), 0.5, 0},
      {Box2D(0, 0, 10, 10), 0.5, 0},
      {Box2D(0, 3, 10, 13), 0.5, 0},
  };
  auto kept = nms(dets, 0.4, 300);
  REQUIRE(!kept.empty());
  CHECK(kept[0].box.x1 == 0.0);
  CHECK(kept[0].box.y1 == 0.0);
  // Input order must not matter.
  std::reverse(dets.begin(), dets.end());
  CHECK(same_dets(nms(dets, 0.4, 300), kept));
}

TEST_CASE("nms max_out truncation") {
  std::vector<Detection> dets;
  for (int i = 0; i < 10; ++i) {
    dets.push_back({Box2D(i * 20.0, 0, i * 20.0 + 10, 10), 1.0 - i * 0.05, 0});
  }
  CHECK(nms(dets, 0.5, 3).size() == 3);
  CHECK_THROWS_AS(nms(dets, 0.5, 0), ConfigError);
  auto all = nms(dets, 0.5, 300);
  CHECK(all.size() == 10);
  for (size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].score >= all[i].score);
}

TEST_CASE("nms matches the quadratic reference on 1000 seeded instances") {
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    Xoshiro256 rng(seed);
    int n = static_cast<int>(rng.next_below(51));
    auto dets = random_dets(rng, n);
    double thresh = rng.uniform(0.2, 0.8);
    int cap = 1 + static_cast<int>(rng.next_below(50));
    auto got = nms(dets, thresh, cap);
    auto want = naive_nms(dets, thresh, cap);
    CHECK(same_dets(got, want));
  }
}

TEST_CASE("filter_and_cap applies threshold, nms, and cap in order") {
  std::vector<Detection> dets = {
      {Box2D(0, 0, 10, 10), 0.9, 0},
      {Box2D(1, 1, 11, 11), 0.8, 0},
      {Box2D(50, 50, 60, 60), 0.03, 0},  // below score threshold
      {Box2D(30, 30, 40, 40), 0.5, 0},
  };
  auto out = filter_and_cap(dets, 0.05, 0.5, 300);
  REQUIRE(out.size() == 2);
  CHECK(out[0].score == 0.9);
  CHECK(out[1].score == 0.5);

  auto capped = filter_and_cap(dets, 0.05, 0.5, 1);
  REQUIRE(capped.size() == 1);
  CHECK(capped[0].score == 0.9);

  CHECK(filter_and_cap({}, 0.05, 0.5, 300).empty());
}

TEST_CASE("detections JSON round trip") {
  fs::path dir = fs::temp_directory_path() / "dt_postprocess_test";
  fs::create_directories(dir);
  fs::path path = dir / "dets.json";

  std::vector<Detection> dets = {
      {Box2D(1.5, 2.25, 10, 12), 0.875, 3},
      {Box2D(0, 0, 5, 5), 0.125, 7},
  };
  write_detections(dets, path);
  auto back = read_detections(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].image_id == 3);
  CHECK(back[0].box.x1 == 1.5);
  CHECK(back[0].box.y1 == 2.25);
  CHECK(back[0].score == 0.875);
  CHECK(back[1].image_id == 7);

  CHECK_THROWS_AS(read_detections(dir / "missing.json"), IoError);
  fs::path bad = dir / "bad.json";
  std::ofstream(bad) << "{not json";
  CHECK_THROWS_AS(read_detections(bad), FormatError);
}
