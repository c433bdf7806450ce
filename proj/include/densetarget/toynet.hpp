#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "densetarget/anchors.hpp"
#include "densetarget/autodiff.hpp"
#include "densetarget/dataset.hpp"
#include "densetarget/eval.hpp"
#include "densetarget/rng.hpp"
#include "densetarget/synthgen.hpp"

namespace dt {

enum class ToyModelKind { Baseline, GDN, GLN };

ToyModelKind parse_model_kind(const std::string& name);
std::string model_kind_name(ToyModelKind kind);

struct ToyBackboneConfig {
  /// Channel widths per encoder stage; stage k lives at input/2^(k+1).
  /// widths[0] is the stem (/2); deeper stages are the C2/C3/C4
  /// analogues at /4, /8, /16.
  std::vector<int> widths = {6, 8, 10, 12};
  int kernel = 3;
  int fpn_width = 12;

  void validate() const;
};

struct ToyModelSpec {
  ToyModelKind kind = ToyModelKind::Baseline;
  LossWeights weights;  // Baseline forces lambda_gl = 0
};

/// Anchor layout that fits the synthetic benchmark: two pyramid levels
/// (strides 4 and 8), two scales, square anchors.
AnchorGridSpec toy_anchor_spec();

struct ConvParam {
  ad::Tensor weight;
  ad::Tensor bias;
};

struct ModelForward {
  std::vector<ad::Tensor> cls_logits;  // per level, (A,H,W)
  std::vector<ad::Tensor> box_deltas;  // per level, (4A,H,W)
  ad::Tensor gauss_map;                // (1,H/2,W/2); undefined for Baseline
};

struct TrainConfig {
  int epochs = 6;
  double lr = 0.01;
  double momentum = 0.9;
  uint64_t seed = 0;
  FocalParams focal;
  HemParams hem;
  GaussianPatchSpec patch;
  int downscale = 2;
  double score_thresh = 0.05;
  double nms_iou = 0.5;
  int max_detections = 300;
};

struct TrainingLog {
  struct Row {
    int epoch;
    double loss_total, loss_cls, loss_reg, loss_gl;
    double val_ap50;
  };
  std::vector<Row> rows;
  int best_epoch = -1;
  double best_val_ap50 = 0.0;

  /// "epoch,loss_total,loss_cls,loss_reg,loss_gl,val_ap50", 6 decimals.
  std::string to_csv() const;
  void write(const std::filesystem::path& path) const;
};

class Model {
 public:
  /// Shared backbone/FPN/head parameters are created first in a fixed
  /// order, so Baseline/GDN/GLN share identical class/box init for the
  /// same seed.
  Model(const ToyModelSpec& spec, const ToyBackboneConfig& cfg, const AnchorGridSpec& anchors,
        int image_h, int image_w, uint64_t seed);

  ModelForward forward(const Raster& image) const;

  /// Scalar total loss graph for one image. `components` receives
  /// (cls, reg, gl) forward values.
  ad::Tensor loss(const ModelForward& fwd, const std::vector<AnchorAssignment>& assignments,
                  const Raster& target_map, const TrainConfig& cfg,
                  std::array<double, 3>* components = nullptr) const;

  /// Raw (pre-NMS) detections above `score_thresh` plus the gaussian map
  /// for GDN/GLN.
  std::pair<std::vector<Detection>, std::optional<Raster>> predict(
      const Raster& image, double score_thresh = 0.05) const;

  std::vector<ad::Tensor>& params() { return params_; }
  const std::vector<ad::Tensor>& params() const { return params_; }
  /// Backbone + FPN + class/box head parameters (excludes the gaussian
  /// branch).
  std::vector<ad::Tensor> shared_params() const;

  const std::vector<Box2D>& anchors() const { return anchor_boxes_; }
  ToyModelKind kind() const { return spec_.kind; }
  const LossWeights& weights() const { return spec_.weights; }
  int image_h() const { return image_h_; }
  int image_w() const { return image_w_; }

  void save_checkpoint(const std::filesystem::path& dir) const;
  void load_checkpoint(const std::filesystem::path& dir);

  std::vector<std::vector<double>> snapshot_params() const;
  void restore_params(const std::vector<std::vector<double>>& snap);

 private:
  ConvParam make_conv(int out_c, int in_c, int kh, int kw, const std::string& name,
                      double bias_init = 0.0);

  ToyModelSpec spec_;
  ToyBackboneConfig cfg_;
  AnchorGridSpec anchor_spec_;
  int image_h_, image_w_;
  std::vector<int> level_stage_;  // encoder stage index per pyramid level

  std::vector<ConvParam> enc_;
  std::vector<ConvParam> lateral_;
  std::vector<ConvParam> smooth_;
  ConvParam cls_hidden_, cls_out_, box_hidden_, box_out_;
  std::vector<ConvParam> dec_;        // GDN decoder steps (top-down)
  std::vector<ConvParam> dec_skip_;   // GDN lateral skips
  ConvParam gauss_layer_;             // GLN B2
  ConvParam gauss_hidden_, gauss_out_;

  std::vector<ad::Tensor> params_;
  size_t n_shared_params_ = 0;
  std::vector<Box2D> anchor_boxes_;

  Xoshiro256* init_rng_ = nullptr;  // only set during construction
};

struct SyntheticDataset {
  struct Item {
    int id;
    Raster image;
    std::vector<Box2D> boxes;
    Raster target_map;
  };
  std::vector<Item> train, val, test;

  static SyntheticDataset load(const std::filesystem::path& dir, const GaussianPatchSpec& patch,
                               int downscale, CompositionMode mode = CompositionMode::Max);
};

/// SGD over per-image total losses; logs per-epoch means and validation
/// AP.50, restores the best-validation checkpoint into `model`.
TrainingLog train(Model& model, const SyntheticDataset& data, const TrainConfig& cfg);

/// AP.50 of the model on a split (post-NMS, capped detections).
double evaluate_ap50(const Model& model, const std::vector<SyntheticDataset::Item>& split,
                     const TrainConfig& cfg);
MetricsReport evaluate_split(const Model& model, const std::vector<SyntheticDataset::Item>& split,
                             const TrainConfig& cfg);

}  // namespace dt
