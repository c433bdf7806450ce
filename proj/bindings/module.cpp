#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "densetarget/anchors.hpp"
#include "densetarget/eval.hpp"
#include "densetarget/heatmap.hpp"
#include "densetarget/losses.hpp"
#include "densetarget/postprocess.hpp"
#include "densetarget/synthgen.hpp"
#include "densetarget/toynet.hpp"

namespace py = pybind11;
using namespace dt;

namespace {

py::array_t<double> raster_to_array(const Raster& r) {
  py::array_t<double> out({r.height, r.width});
  std::copy(r.data.begin(), r.data.end(), out.mutable_data());
  return out;
}

Raster array_to_raster(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeMismatch("expected a 2-D array");
  Raster r(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + r.data.size(), r.data.begin());
  return r;
}

std::vector<Box2D> boxes_from_list(const std::vector<std::array<double, 4>>& raw) {
  std::vector<Box2D> out;
  out.reserve(raw.size());
  for (const auto& b : raw) out.emplace_back(b[0], b[1], b[2], b[3]);
  return out;
}

}  // namespace

PYBIND11_MODULE(_densetarget, m) {
  m.doc() = "gaussian-map multi-task dense detection core";

  py::register_exception<Error>(m, "DenseTargetError");

  py::class_<Box2D>(m, "Box2D")
      .def(py::init<double, double, double, double>())
      .def_readonly("x1", &Box2D::x1)
      .def_readonly("y1", &Box2D::y1)
      .def_readonly("x2", &Box2D::x2)
      .def_readonly("y2", &Box2D::y2)
      .def("width", &Box2D::width)
      .def("height", &Box2D::height)
      .def("area", &Box2D::area)
      .def("__repr__", [](const Box2D& b) {
        return "Box2D(" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
               std::to_string(b.x2) + ", " + std::to_string(b.y2) + ")";
      });

  m.def("iou", &iou);

  m.def(
      "four_point_transform",
      [](const std::vector<std::array<double, 2>>& src,
         const std::vector<std::array<double, 2>>& dst) {
        if (src.size() != 4 || dst.size() != 4) throw ShapeMismatch("need 4 corners each");
        auto quad = [](const std::vector<std::array<double, 2>>& c) {
          return Quad({{{c[0][0], c[0][1]},
                        {c[1][0], c[1][1]},
                        {c[2][0], c[2][1]},
                        {c[3][0], c[3][1]}}});
        };
        Homography h = four_point_transform(quad(src), quad(dst));
        py::array_t<double> out({3, 3});
        auto buf = out.mutable_unchecked<2>();
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) buf(i, j) = h.m[i][j];
        return out;
      },
      py::arg("src"), py::arg("dst"),
      "3x3 homography mapping the four src corners onto the dst corners");

  m.def(
      "make_gaussian_patch",
      [](int size, double sigma) { return raster_to_array(make_gaussian_patch({size, sigma})); },
      py::arg("size") = 120, py::arg("sigma") = 40.0);

  m.def(
      "build_target_map",
      [](const std::vector<std::array<double, 4>>& boxes, int image_h, int image_w, int size,
         double sigma, int downscale, const std::string& mode) {
        return raster_to_array(build_target_map(
            boxes_from_list(boxes), image_h, image_w, {size, sigma}, downscale,
            mode == "add" ? CompositionMode::Add : CompositionMode::Max));
      },
      py::arg("boxes"), py::arg("image_h"), py::arg("image_w"), py::arg("patch_size") = 120,
      py::arg("sigma") = 40.0, py::arg("downscale") = 2, py::arg("mode") = "max");

  m.def("write_raster",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const std::filesystem::path& path) { write_raster(array_to_raster(a), path); });
  m.def("read_raster",
        [](const std::filesystem::path& path) { return raster_to_array(read_raster(path)); });

  m.def(
      "generate_anchors",
      [](int image_h, int image_w, const std::vector<std::pair<int, double>>& levels,
         const std::vector<double>& scales, const std::vector<double>& ratios) {
        AnchorGridSpec spec;
        if (levels.empty()) {
          spec = AnchorGridSpec::retinanet_default();
        } else {
          for (auto& [s, b] : levels) spec.levels.push_back({s, b});
          spec.scales = scales;
          spec.aspect_ratios = ratios;
        }
        std::vector<std::array<double, 4>> out;
        for (const Box2D& a : generate_anchors(spec, image_h, image_w)) {
          out.push_back({a.x1, a.y1, a.x2, a.y2});
        }
        return out;
      },
      py::arg("image_h"), py::arg("image_w"),
      py::arg("levels") = std::vector<std::pair<int, double>>{},
      py::arg("scales") = std::vector<double>{1.0}, py::arg("ratios") = std::vector<double>{1.0});

  m.def(
      "assign_anchors",
      [](const std::vector<std::array<double, 4>>& anchors,
         const std::vector<std::array<double, 4>>& gt, double pos_iou, double neg_iou) {
        AssignOptions opt;
        opt.pos_iou = pos_iou;
        opt.neg_iou = neg_iou;
        py::list out;
        for (const AnchorAssignment& a :
             assign_anchors(boxes_from_list(anchors), boxes_from_list(gt), opt)) {
          py::dict d;
          d["anchor_index"] = a.anchor_index;
          d["label"] = a.label == AnchorLabel::Positive   ? "positive"
                       : a.label == AnchorLabel::Negative ? "negative"
                                                          : "ignore";
          if (a.matched_gt) {
            d["matched_gt"] = *a.matched_gt;
            d["regression_target"] = a.regression_target;
          }
          out.append(d);
        }
        return out;
      },
      py::arg("anchors"), py::arg("gt"), py::arg("pos_iou") = 0.5, py::arg("neg_iou") = 0.4);

  m.def("encode_deltas", [](const std::array<double, 4>& a, const std::array<double, 4>& g) {
    return encode_deltas(Box2D(a[0], a[1], a[2], a[3]), Box2D(g[0], g[1], g[2], g[3]));
  });
  m.def("decode_deltas", [](const std::array<double, 4>& a, const std::array<double, 4>& d) {
    Box2D b = decode_deltas(Box2D(a[0], a[1], a[2], a[3]), d);
    return std::array<double, 4>{b.x1, b.y1, b.x2, b.y2};
  });

  m.def(
      "focal_loss",
      [](const std::vector<double>& p, const std::vector<int>& y, double alpha, double gamma) {
        FocalParams params{alpha, gamma};
        std::vector<FocalAnchorState> states;
        for (int v : y) states.push_back(static_cast<FocalAnchorState>(v));
        std::vector<double> grad(p.size());
        double value = focal_loss(p, states, params, grad);
        return py::make_tuple(value, grad);
      },
      py::arg("p"), py::arg("labels"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0,
      "labels: 0 negative, 1 positive, 2 ignored; returns (value, grad)");

  m.def("smooth_l1", [](const std::vector<double>& x) {
    std::vector<double> grad(x.size());
    double value = smooth_l1(x, grad);
    return py::make_tuple(value, grad);
  });

  m.def(
      "gaussian_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& target,
         double pos_thresh, double neg_thresh) {
        HemParams params;
        params.pos_thresh = pos_thresh;
        params.neg_thresh = neg_thresh;
        Raster grad;
        double value = gaussian_loss(array_to_raster(pred), array_to_raster(target), params, grad);
        return py::make_tuple(value, raster_to_array(grad));
      },
      py::arg("pred"), py::arg("target"), py::arg("pos_thresh") = 0.3,
      py::arg("neg_thresh") = 0.1);

  m.def("total_loss", [](double cls, double reg, double gl, double l1, double l2, double l3) {
    return total_loss(cls, reg, gl, {l1, l2, l3});
  });

  m.def(
      "nms",
      [](const std::vector<std::array<double, 4>>& boxes, const std::vector<double>& scores,
         double iou_thresh, int max_out) {
        if (boxes.size() != scores.size()) throw ShapeMismatch("boxes/scores length mismatch");
        std::vector<Detection> dets;
        for (size_t i = 0; i < boxes.size(); ++i) {
          dets.push_back({Box2D(boxes[i][0], boxes[i][1], boxes[i][2], boxes[i][3]), scores[i], 0});
        }
        py::list out;
        for (const Detection& d : nms(std::move(dets), iou_thresh, max_out)) {
          out.append(py::make_tuple(std::array<double, 4>{d.box.x1, d.box.y1, d.box.x2, d.box.y2},
                                    d.score));
        }
        return out;
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_thresh") = 0.5, py::arg("max_out") = 300);

  m.def(
      "evaluate",
      [](const std::map<int, std::vector<std::pair<std::array<double, 4>, double>>>& dets,
         const std::map<int, std::vector<std::array<double, 4>>>& gt) {
        std::map<int, std::vector<Detection>> d;
        for (const auto& [id, v] : dets) {
          for (const auto& [b, s] : v) d[id].push_back({Box2D(b[0], b[1], b[2], b[3]), s, id});
        }
        std::map<int, std::vector<Box2D>> g;
        for (const auto& [id, v] : gt) g[id] = boxes_from_list(v);
        MetricsReport r = evaluate(d, g);
        py::dict out;
        out["ap"] = r.ap;
        out["ap50"] = r.ap50;
        out["ap75"] = r.ap75;
        out["ar300"] = r.ar300;
        out["ar300_50"] = r.ar300_50;
        return out;
      },
      py::arg("detections"), py::arg("ground_truth"),
      "detections: {image_id: [([x1,y1,x2,y2], score), ...]}");

  m.def(
      "generate_scene",
      [](int image_h, int image_w, int rows, int cols, double fill, double jitter, uint64_t seed) {
        SceneSpec spec;
        spec.image_h = image_h;
        spec.image_w = image_w;
        spec.rows = rows;
        spec.cols = cols;
        spec.fill = fill;
        spec.jitter = jitter;
        spec.seed = seed;
        Scene scene = generate_scene(spec);
        std::vector<std::array<double, 4>> boxes;
        for (const Box2D& b : scene.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
        return py::make_tuple(raster_to_array(scene.image), boxes);
      },
      py::arg("image_h") = 64, py::arg("image_w") = 64, py::arg("rows") = 4, py::arg("cols") = 4,
      py::arg("fill") = 0.8, py::arg("jitter") = 0.15, py::arg("seed") = 1729);
}
