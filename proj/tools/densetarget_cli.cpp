#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "densetarget/dataset.hpp"
#include "densetarget/eval.hpp"
#include "densetarget/heatmap.hpp"
#include "densetarget/postprocess.hpp"
#include "densetarget/synthgen.hpp"
#include "densetarget/toynet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int default_jobs() {
  if (const char* env = std::getenv("DENSE_TARGET_JOBS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

// Ordered fan-out: results land in a preallocated vector, callers write
// them out sequentially afterwards.
template <typename Fn>
void parallel_for(size_t n, int jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

json load_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw dt::IoError("cannot open " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw dt::FormatError(path.string() + ": " + e.what());
  }
  return j;
}

struct SynthConfig {
  dt::SceneSpec scene;
  dt::DatasetCounts counts;
};

SynthConfig parse_synth_spec(const json& j) {
  SynthConfig cfg;
  dt::SceneSpec& s = cfg.scene;
  s.image_h = j.value("image_h", s.image_h);
  s.image_w = j.value("image_w", s.image_w);
  s.rows = j.value("rows", s.rows);
  s.cols = j.value("cols", s.cols);
  s.fill = j.value("fill", s.fill);
  s.jitter = j.value("jitter", s.jitter);
  s.object_lo = j.value("object_lo", s.object_lo);
  s.object_hi = j.value("object_hi", s.object_hi);
  s.background_lo = j.value("background_lo", s.background_lo);
  s.background_hi = j.value("background_hi", s.background_hi);
  s.noise_amp = j.value("noise_amp", s.noise_amp);
  s.seed = j.value("seed", s.seed);
  cfg.counts.n_train = j.value("n_train", cfg.counts.n_train);
  cfg.counts.n_val = j.value("n_val", cfg.counts.n_val);
  cfg.counts.n_test = j.value("n_test", cfg.counts.n_test);
  return cfg;
}

json synth_config_json(const SynthConfig& cfg) {
  return json{{"image_h", cfg.scene.image_h},
              {"image_w", cfg.scene.image_w},
              {"rows", cfg.scene.rows},
              {"cols", cfg.scene.cols},
              {"fill", cfg.scene.fill},
              {"jitter", cfg.scene.jitter},
              {"object_lo", cfg.scene.object_lo},
              {"object_hi", cfg.scene.object_hi},
              {"background_lo", cfg.scene.background_lo},
              {"background_hi", cfg.scene.background_hi},
              {"noise_amp", cfg.scene.noise_amp},
              {"seed", cfg.scene.seed},
              {"n_train", cfg.counts.n_train},
              {"n_val", cfg.counts.n_val},
              {"n_test", cfg.counts.n_test}};
}

void echo_config(const json& j, const fs::path& out_dir) {
  std::ofstream os(out_dir / "effective_config.json");
  os << j.dump(1) << "\n";
}

int cmd_gen_synthetic(const fs::path& spec_path, const fs::path& out_dir) {
  SynthConfig cfg;
  if (!spec_path.empty()) cfg = parse_synth_spec(load_json_file(spec_path));
  fs::create_directories(out_dir);
  dt::generate_dataset(cfg.scene, cfg.counts, cfg.scene.seed, out_dir);
  echo_config(synth_config_json(cfg), out_dir);
  const int total = cfg.counts.n_train + cfg.counts.n_val + cfg.counts.n_test;
  std::cout << "wrote " << total << " images (" << cfg.counts.n_train << " train, "
            << cfg.counts.n_val << " val, " << cfg.counts.n_test << " test) to "
            << out_dir.string() << "\n";
  return 0;
}

int cmd_gen_targets(const fs::path& ann_path, const fs::path& out_dir, int downscale,
                    int patch_size, double sigma, const std::string& mode_name, int jobs) {
  dt::AnnotationFile ann = dt::read_annotations(ann_path);
  dt::CompositionMode mode =
      mode_name == "add" ? dt::CompositionMode::Add : dt::CompositionMode::Max;
  dt::GaussianPatchSpec patch{patch_size, sigma};
  patch.validate();
  fs::create_directories(out_dir);

  auto boxes = ann.boxes_by_image();
  std::vector<dt::Raster> maps(ann.images.size());
  parallel_for(ann.images.size(), jobs, [&](size_t i) {
    const dt::ImageRecord& im = ann.images[i];
    maps[i] = dt::build_target_map(boxes.at(im.id), im.height, im.width, patch, downscale, mode);
  });
  for (size_t i = 0; i < ann.images.size(); ++i) {
    dt::write_raster(maps[i], out_dir / ("target_" + std::to_string(ann.images[i].id) + ".dtr"));
  }
  std::cout << "wrote " << ann.images.size() << " target maps to " << out_dir.string() << "\n";
  return 0;
}

int cmd_train_toy(const fs::path& dataset_dir, const std::string& kind_name, uint64_t seed,
                  int epochs, double lr, double momentum, double lambda_gl,
                  const fs::path& out_dir) {
  dt::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.momentum = momentum;
  cfg.seed = seed;

  dt::ToyModelSpec spec;
  spec.kind = dt::parse_model_kind(kind_name);
  spec.weights.lambda_gl = (spec.kind == dt::ToyModelKind::Baseline) ? 0.0 : lambda_gl;

  dt::SyntheticDataset data = dt::SyntheticDataset::load(dataset_dir, cfg.patch, cfg.downscale);
  if (data.train.empty()) throw dt::ConfigError("train-toy: dataset has no training images");
  const dt::Raster& first = data.train.front().image;

  dt::Model model(spec, dt::ToyBackboneConfig{}, dt::toy_anchor_spec(), first.height, first.width,
                  seed);
  dt::TrainingLog log = dt::train(model, data, cfg);

  fs::create_directories(out_dir);
  log.write(out_dir / "log.csv");
  model.save_checkpoint(out_dir / "checkpoint");
  dt::MetricsReport test_report = dt::evaluate_split(model, data.test, cfg);
  dt::write_metrics(test_report, out_dir / "test_metrics.json");
  echo_config(json{{"dataset", dataset_dir.string()},
                   {"kind", kind_name},
                   {"seed", seed},
                   {"epochs", epochs},
                   {"lr", lr},
                   {"momentum", momentum},
                   {"lambda_gl", spec.weights.lambda_gl}},
              out_dir);

  const double final_val = log.best_val_ap50;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "val_ap50=%.6f test_ap50=%.6f\n", final_val, test_report.ap50);
  std::cout << buf;
  return 0;
}

int cmd_eval(const fs::path& det_path, const fs::path& ann_path, int cap,
             const fs::path& report_path) {
  dt::AnnotationFile ann = dt::read_annotations(ann_path);
  std::vector<dt::Detection> dets = dt::read_detections(det_path);

  std::map<int, std::vector<dt::Detection>> by_image;
  for (const dt::Detection& d : dets) {
    if (!ann.find_image(d.image_id)) {
      throw dt::ImageIdMismatch("eval: detection references unknown image id " +
                                std::to_string(d.image_id));
    }
    by_image[d.image_id].push_back(d);
  }
  for (auto& [id, v] : by_image) {
    std::stable_sort(v.begin(), v.end(), [](const dt::Detection& a, const dt::Detection& b) {
      return a.score > b.score;
    });
    if (static_cast<int>(v.size()) > cap) v.erase(v.begin() + cap, v.end());
  }
  auto gt = ann.boxes_by_image();
  dt::MetricsReport report = dt::evaluate(by_image, gt);
  std::cout << report.csv_row() << "\n";
  if (!report_path.empty()) dt::write_metrics(report, report_path);
  return 0;
}

int cmd_convert_coco(const fs::path& in_path, const fs::path& out_path) {
  dt::AnnotationFile ann = dt::convert_coco_annotations(in_path);
  dt::write_annotations(ann, out_path);
  std::cout << "converted " << ann.annotations.size() << " annotations over "
            << ann.images.size() << " images\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaussian-map multi-task dense detection toolkit"};
  app.require_subcommand(1);

  int jobs = default_jobs();
  app.add_option("--jobs", jobs, "worker threads for per-image work");

  // gen-synthetic
  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic dense-scene dataset");
  gen->add_option("--spec", spec_path, "scene/dataset spec JSON");
  gen->add_option("--out", out_dir, "output directory")->required();

  // gen-targets
  std::string ann_path, targets_out, mode_name = "max";
  int downscale = 2, patch_size = 120;
  double sigma = 40.0;
  auto* tgt = app.add_subcommand("gen-targets", "build ground-truth gaussian maps");
  tgt->add_option("--annotations", ann_path, "annotation JSON")->required();
  tgt->add_option("--out", targets_out, "output directory")->required();
  tgt->add_option("--downscale", downscale, "map downscale factor");
  tgt->add_option("--patch-size", patch_size, "gaussian patch side length");
  tgt->add_option("--sigma", sigma, "gaussian patch sigma (FWHM)");
  tgt->add_option("--mode", mode_name, "composition mode: max|add")
      ->check(CLI::IsMember({"max", "add"}));

  // train-toy
  std::string dataset_dir, kind = "baseline", train_out;
  std::string config_path;
  uint64_t seed = 0;
  int epochs = 6;
  double lr = 0.01, momentum = 0.9, lambda_gl = 1.0;
  auto* tr = app.add_subcommand("train-toy", "train a toy detector on a synthetic dataset");
  tr->add_option("--dataset", dataset_dir, "dataset directory from gen-synthetic")->required();
  tr->add_option("--kind", kind, "baseline|gdn|gln")
      ->check(CLI::IsMember({"baseline", "gdn", "gln"}));
  tr->add_option("--seed", seed, "training seed");
  tr->add_option("--config", config_path, "config JSON (flags take precedence)");
  auto* opt_epochs = tr->add_option("--epochs", epochs, "training epochs");
  auto* opt_lr = tr->add_option("--lr", lr, "learning rate");
  auto* opt_mom = tr->add_option("--momentum", momentum, "SGD momentum");
  auto* opt_lgl = tr->add_option("--lambda-gl", lambda_gl, "gaussian loss weight");
  tr->add_option("--out", train_out, "run output directory");

  // eval
  std::string det_path, eval_ann, report_path;
  int cap = 300;
  auto* ev = app.add_subcommand("eval", "COCO-style AP/AR metrics");
  ev->add_option("--detections", det_path, "detection JSON")->required();
  ev->add_option("--annotations", eval_ann, "annotation JSON")->required();
  ev->add_option("--caps", cap, "max detections per image");
  ev->add_option("--report", report_path, "metrics JSON output path");

  // convert-coco
  std::string coco_in, coco_out;
  auto* cc = app.add_subcommand("convert-coco", "convert COCO [x,y,w,h] annotations");
  cc->add_option("--in", coco_in, "COCO-style JSON")->required();
  cc->add_option("--out", coco_out, "output annotation JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_synthetic(spec_path, out_dir);
    if (tgt->parsed()) {
      return cmd_gen_targets(ann_path, targets_out, downscale, patch_size, sigma, mode_name, jobs);
    }
    if (tr->parsed()) {
      if (!config_path.empty()) {
        // flags > config file > defaults
        json cfg = load_json_file(config_path);
        if (opt_epochs->count() == 0) epochs = cfg.value("epochs", epochs);
        if (opt_lr->count() == 0) lr = cfg.value("lr", lr);
        if (opt_mom->count() == 0) momentum = cfg.value("momentum", momentum);
        if (opt_lgl->count() == 0) lambda_gl = cfg.value("lambda_gl", lambda_gl);
      }
      if (train_out.empty()) train_out = "run_" + kind + "_" + std::to_string(seed);
      return cmd_train_toy(dataset_dir, kind, seed, epochs, lr, momentum, lambda_gl, train_out);
    }
    if (ev->parsed()) {
      return cmd_eval(det_path, eval_ann, cap,
                      report_path.empty() ? fs::path{} : fs::path(report_path));
    }
    if (cc->parsed()) return cmd_convert_coco(coco_in, coco_out);
  } catch (const dt::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const dt::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const dt::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
