#include "densetarget/toynet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace dt {

ToyModelKind parse_model_kind(const std::string& name) {
  if (name == "baseline") return ToyModelKind::Baseline;
  if (name == "gdn") return ToyModelKind::GDN;
  if (name == "gln") return ToyModelKind::GLN;
  throw ConfigError("unknown model kind: " + name);
}

std::string model_kind_name(ToyModelKind kind) {
  switch (kind) {
    case ToyModelKind::Baseline: return "baseline";
    case ToyModelKind::GDN: return "gdn";
    case ToyModelKind::GLN: return "gln";
  }
  return "?";
}

void ToyBackboneConfig::validate() const {
  if (widths.size() < 2) throw ConfigError("ToyBackboneConfig: need at least 2 stages");
  for (int w : widths) {
    if (w < 1) throw ConfigError("ToyBackboneConfig: widths must be positive");
  }
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("ToyBackboneConfig: kernel must be odd");
  if (fpn_width < 1) throw ConfigError("ToyBackboneConfig: fpn_width must be positive");
}

AnchorGridSpec toy_anchor_spec() {
  AnchorGridSpec spec;
  spec.levels = {{4, 12.0}, {8, 24.0}};
  spec.scales = {1.0, 1.26};
  spec.aspect_ratios = {1.0};
  return spec;
}

std::string TrainingLog::to_csv() const {
  std::string out = "epoch,loss_total,loss_cls,loss_reg,loss_gl,val_ap50\n";
  char buf[160];
  for (const Row& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.loss_total,
                  r.loss_cls, r.loss_reg, r.loss_gl, r.val_ap50);
    out += buf;
  }
  return out;
}

void TrainingLog::write(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("TrainingLog: cannot open " + path.string());
  os << to_csv();
}

namespace {

int ilog2_exact(int v) {
  int k = 0;
  while ((1 << k) < v) ++k;
  return ((1 << k) == v) ? k : -1;
}

}  // namespace

ConvParam Model::make_conv(int out_c, int in_c, int kh, int kw, const std::string& name,
                           double bias_init) {
  const int fan_in = in_c * kh * kw;
  const double bound = std::sqrt(6.0 / fan_in);
  std::vector<double> w(static_cast<size_t>(out_c) * in_c * kh * kw);
  for (double& v : w) v = init_rng_->uniform(-bound, bound);
  ConvParam p;
  p.weight = ad::Tensor::param({out_c, in_c, kh, kw}, std::move(w), name + ".w");
  p.bias = ad::Tensor::param({out_c}, std::vector<double>(out_c, bias_init), name + ".b");
  params_.push_back(p.weight);
  params_.push_back(p.bias);
  return p;
}

Model::Model(const ToyModelSpec& spec, const ToyBackboneConfig& cfg,
             const AnchorGridSpec& anchors, int image_h, int image_w, uint64_t seed)
    : spec_(spec), cfg_(cfg), anchor_spec_(anchors), image_h_(image_h), image_w_(image_w) {
  cfg_.validate();
  anchor_spec_.validate();
  if (spec_.kind == ToyModelKind::Baseline) spec_.weights.lambda_gl = 0.0;

  const int n_stages = static_cast<int>(cfg_.widths.size());
  for (const AnchorLevel& lvl : anchor_spec_.levels) {
    int k = ilog2_exact(lvl.stride);
    if (k < 1) throw ConfigError("Model: anchor stride must be a power of two >= 2");
    if (k - 1 >= n_stages) {
      throw ConfigError("Model: anchor stride " + std::to_string(lvl.stride) +
                        " has no matching encoder stage");
    }
    level_stage_.push_back(k - 1);
  }
  for (size_t i = 1; i < level_stage_.size(); ++i) {
    if (level_stage_[i] != level_stage_[i - 1] + 1) {
      throw ConfigError("Model: anchor strides must double between pyramid levels");
    }
  }

  Xoshiro256 rng(derive_seed(seed, stream_tag("model-init"), 0));
  init_rng_ = &rng;

  const int k = cfg_.kernel;

  // Shared part first: encoder, FPN, class/box heads. The gaussian
  // branch is created afterwards so all kinds share this init.
  int in_c = 1;
  for (int s = 0; s < n_stages; ++s) {
    enc_.push_back(make_conv(cfg_.widths[s], in_c, k, k, "enc" + std::to_string(s)));
    in_c = cfg_.widths[s];
  }
  for (size_t i = 0; i < level_stage_.size(); ++i) {
    lateral_.push_back(
        make_conv(cfg_.fpn_width, cfg_.widths[level_stage_[i]], 1, 1, "lat" + std::to_string(i)));
  }
  for (size_t i = 0; i < level_stage_.size(); ++i) {
    smooth_.push_back(make_conv(cfg_.fpn_width, cfg_.fpn_width, k, k, "smooth" + std::to_string(i)));
  }
  const int A = anchor_spec_.anchors_per_cell();
  cls_hidden_ = make_conv(cfg_.fpn_width, cfg_.fpn_width, k, k, "cls_hidden");
  // prior so that sigmoid(bias) ~ 0.01 at init
  cls_out_ = make_conv(A, cfg_.fpn_width, k, k, "cls_out", -std::log(99.0));
  box_hidden_ = make_conv(cfg_.fpn_width, cfg_.fpn_width, k, k, "box_hidden");
  box_out_ = make_conv(4 * A, cfg_.fpn_width, k, k, "box_out");
  n_shared_params_ = params_.size();

  if (spec_.kind == ToyModelKind::GDN) {
    for (int s = n_stages - 1; s >= 1; --s) {
      dec_.push_back(
          make_conv(cfg_.widths[s - 1], cfg_.widths[s], k, k, "dec" + std::to_string(s)));
      dec_skip_.push_back(
          make_conv(cfg_.widths[s - 1], cfg_.widths[s - 1], 1, 1, "dec_skip" + std::to_string(s)));
    }
    gauss_hidden_ = make_conv(cfg_.widths[0], cfg_.widths[0], k, k, "gauss_hidden");
    gauss_out_ = make_conv(1, cfg_.widths[0], k, k, "gauss_out");
  } else if (spec_.kind == ToyModelKind::GLN) {
    const int cat_c = cfg_.widths[1] + cfg_.fpn_width;
    gauss_layer_ = make_conv(cfg_.fpn_width, cat_c, k, k, "gauss_layer");
    gauss_hidden_ = make_conv(cfg_.widths[0], cfg_.fpn_width, k, k, "gauss_hidden");
    gauss_out_ = make_conv(1, cfg_.widths[0], k, k, "gauss_out");
  }

  init_rng_ = nullptr;
  anchor_boxes_ = generate_anchors(anchor_spec_, image_h_, image_w_);
}

std::vector<ad::Tensor> Model::shared_params() const {
  return {params_.begin(), params_.begin() + static_cast<long>(n_shared_params_)};
}

ModelForward Model::forward(const Raster& image) const {
  if (image.height != image_h_ || image.width != image_w_) {
    throw ShapeMismatch("Model::forward: image size does not match model");
  }
  const int pad = cfg_.kernel / 2;
  ad::Tensor x = ad::Tensor::constant({1, image.height, image.width}, image.data);

  // Encoder: conv+relu then 2x average pool per stage.
  std::vector<ad::Tensor> feats;
  for (const ConvParam& stage : enc_) {
    x = ad::downsample2x_avg(ad::relu(ad::conv2d(x, stage.weight, stage.bias, 1, pad)));
    feats.push_back(x);
  }

  // FPN top-down merge over the anchored levels.
  const size_t L = level_stage_.size();
  std::vector<ad::Tensor> pyr(L);
  for (size_t i = L; i-- > 0;) {
    ad::Tensor lat = ad::conv2d(feats[level_stage_[i]], lateral_[i].weight, lateral_[i].bias, 1, 0);
    pyr[i] = (i + 1 < L) ? ad::add(lat, ad::upsample2x(pyr[i + 1], ad::Interp::Bilinear)) : lat;
  }
  for (size_t i = 0; i < L; ++i) {
    pyr[i] = ad::conv2d(pyr[i], smooth_[i].weight, smooth_[i].bias, 1, pad);
  }

  ModelForward out;
  for (size_t i = 0; i < L; ++i) {
    ad::Tensor ch = ad::relu(ad::conv2d(pyr[i], cls_hidden_.weight, cls_hidden_.bias, 1, pad));
    out.cls_logits.push_back(ad::conv2d(ch, cls_out_.weight, cls_out_.bias, 1, pad));
    ad::Tensor bh = ad::relu(ad::conv2d(pyr[i], box_hidden_.weight, box_hidden_.bias, 1, pad));
    out.box_deltas.push_back(ad::conv2d(bh, box_out_.weight, box_out_.bias, 1, pad));
  }

  if (spec_.kind == ToyModelKind::GDN) {
    // U-shaped decoder: conv+relu, upsample 2x, add 1x1-projected skip.
    ad::Tensor d = feats.back();
    for (size_t j = 0; j < dec_.size(); ++j) {
      d = ad::upsample2x(ad::relu(ad::conv2d(d, dec_[j].weight, dec_[j].bias, 1, pad)),
                         ad::Interp::Bilinear);
      const size_t skip = feats.size() - 2 - j;
      d = ad::add(d, ad::conv2d(feats[skip], dec_skip_[j].weight, dec_skip_[j].bias, 1, 0));
    }
    ad::Tensor g = ad::relu(ad::conv2d(d, gauss_hidden_.weight, gauss_hidden_.bias, 1, pad));
    out.gauss_map = ad::sigmoid(ad::conv2d(g, gauss_out_.weight, gauss_out_.bias, 1, pad));
  } else if (spec_.kind == ToyModelKind::GLN) {
    // Gaussian layer: concat(C2-analogue, finest pyramid level brought to
    // the same resolution), conv+relu, then 2x up to half input size.
    ad::Tensor p = pyr[0];
    for (int s = anchor_spec_.levels[0].stride; s > 4; s /= 2) {
      p = ad::upsample2x(p, ad::Interp::Bilinear);
    }
    ad::Tensor cat = ad::concat_channels(feats[1], p);
    ad::Tensor b2 = ad::relu(ad::conv2d(cat, gauss_layer_.weight, gauss_layer_.bias, 1, pad));
    b2 = ad::upsample2x(b2, ad::Interp::Bilinear);
    ad::Tensor g = ad::relu(ad::conv2d(b2, gauss_hidden_.weight, gauss_hidden_.bias, 1, pad));
    out.gauss_map = ad::sigmoid(ad::conv2d(g, gauss_out_.weight, gauss_out_.bias, 1, pad));
  }
  return out;
}

ad::Tensor Model::loss(const ModelForward& fwd, const std::vector<AnchorAssignment>& assignments,
                       const Raster& target_map, const TrainConfig& cfg,
                       std::array<double, 3>* components) const {
  // Classification: sigmoid probabilities in anchor order.
  std::vector<ad::Tensor> flat_cls, flat_box;
  for (size_t i = 0; i < fwd.cls_logits.size(); ++i) {
    flat_cls.push_back(ad::chw_to_hwc_flat(fwd.cls_logits[i]));
    flat_box.push_back(ad::chw_to_hwc_flat(fwd.box_deltas[i]));
  }
  ad::Tensor probs = ad::sigmoid(ad::concat_flat(flat_cls));
  if (probs.size() != assignments.size()) {
    throw ShapeMismatch("Model::loss: logit count != anchor count");
  }
  std::vector<FocalAnchorState> states(assignments.size());
  std::vector<size_t> pos_coords;
  std::vector<double> pos_targets;
  for (size_t a = 0; a < assignments.size(); ++a) {
    switch (assignments[a].label) {
      case AnchorLabel::Positive:
        states[a] = FocalAnchorState::Positive;
        for (int d = 0; d < 4; ++d) {
          pos_coords.push_back(4 * a + d);
          pos_targets.push_back(assignments[a].regression_target[d]);
        }
        break;
      case AnchorLabel::Negative: states[a] = FocalAnchorState::Negative; break;
      case AnchorLabel::Ignore: states[a] = FocalAnchorState::Ignored; break;
    }
  }
  ad::Tensor cls_loss = ad::focal_loss_node(probs, std::move(states), cfg.focal);

  ad::Tensor reg_loss;
  if (pos_coords.empty()) {
    reg_loss = ad::Tensor::constant({}, {0.0});
  } else {
    ad::Tensor deltas = ad::gather(ad::concat_flat(flat_box), std::move(pos_coords));
    reg_loss = ad::smooth_l1_node(ad::sub_const(deltas, std::move(pos_targets)));
  }

  ad::Tensor gl_loss;
  const bool use_gl = spec_.kind != ToyModelKind::Baseline && spec_.weights.lambda_gl != 0.0;
  if (use_gl) {
    gl_loss = ad::gaussian_loss_node(fwd.gauss_map, target_map, cfg.hem);
  } else {
    gl_loss = ad::Tensor::constant({}, {0.0});
  }

  if (components) {
    *components = {cls_loss.scalar(), reg_loss.scalar(), gl_loss.scalar()};
  }
  return ad::weighted_sum({cls_loss, reg_loss, gl_loss},
                          {spec_.weights.lambda_cls, spec_.weights.lambda_reg,
                           spec_.weights.lambda_gl});
}

std::pair<std::vector<Detection>, std::optional<Raster>> Model::predict(
    const Raster& image, double score_thresh) const {
  ModelForward fwd = forward(image);
  std::vector<Detection> dets;
  const int A = anchor_spec_.anchors_per_cell();
  size_t anchor_idx = 0;
  for (size_t lvl = 0; lvl < fwd.cls_logits.size(); ++lvl) {
    const auto& cshape = fwd.cls_logits[lvl].shape();
    const int H = cshape[1], W = cshape[2];
    const auto& cval = fwd.cls_logits[lvl].value();
    const auto& bval = fwd.box_deltas[lvl].value();
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        for (int a = 0; a < A; ++a, ++anchor_idx) {
          const double logit = cval[(static_cast<size_t>(a) * H + i) * W + j];
          const double score = 1.0 / (1.0 + std::exp(-logit));
          if (score < score_thresh) continue;
          std::array<double, 4> d;
          bool finite = true;
          for (int c = 0; c < 4; ++c) {
            d[c] = bval[(static_cast<size_t>(4 * a + c) * H + i) * W + j];
            finite = finite && std::isfinite(d[c]);
          }
          if (!finite) continue;
          try {
            // exp over/underflow in the size deltas can collapse the box
            // to zero width; such predictions carry no usable geometry.
            dets.push_back({decode_deltas(anchor_boxes_[anchor_idx], d), score, 0});
          } catch (const Error&) {
            continue;
          }
        }
      }
    }
  }
  std::optional<Raster> map;
  if (fwd.gauss_map.defined()) {
    const auto& s = fwd.gauss_map.shape();
    Raster r(s[1], s[2]);
    r.data = fwd.gauss_map.value();
    map = std::move(r);
  }
  return {std::move(dets), std::move(map)};
}

std::vector<std::vector<double>> Model::snapshot_params() const {
  std::vector<std::vector<double>> snap;
  snap.reserve(params_.size());
  for (const ad::Tensor& p : params_) snap.push_back(p.value());
  return snap;
}

void Model::restore_params(const std::vector<std::vector<double>>& snap) {
  if (snap.size() != params_.size()) throw ConfigError("restore_params: size mismatch");
  for (size_t i = 0; i < snap.size(); ++i) params_[i].value() = snap[i];
}

void Model::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  for (size_t i = 0; i < params_.size(); ++i) {
    const ad::Tensor& p = params_[i];
    std::string file = "param_" + std::to_string(i) + ".dtr";
    Raster r(1, static_cast<int>(p.size()));
    r.data = p.value();
    write_raster(r, dir / file);
    manifest.push_back({{"name", p.name()}, {"file", file}, {"shape", p.shape()}});
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw IoError("save_checkpoint: cannot open manifest");
  os << manifest.dump(1) << "\n";
}

void Model::load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("load_checkpoint: cannot open manifest in " + dir.string());
  nlohmann::json manifest;
  is >> manifest;
  if (manifest.size() != params_.size()) {
    throw FormatError("load_checkpoint: parameter count mismatch");
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& entry = manifest.at(i);
    if (entry.at("name").get<std::string>() != params_[i].name() ||
        entry.at("shape").get<std::vector<int>>() != params_[i].shape()) {
      throw FormatError("load_checkpoint: mismatched parameter " + params_[i].name());
    }
    Raster r = read_raster(dir / entry.at("file").get<std::string>());
    if (r.data.size() != params_[i].size()) {
      throw FormatError("load_checkpoint: payload size mismatch for " + params_[i].name());
    }
    params_[i].value() = r.data;
  }
}

SyntheticDataset SyntheticDataset::load(const std::filesystem::path& dir,
                                        const GaussianPatchSpec& patch, int downscale,
                                        CompositionMode mode) {
  SyntheticDataset ds;
  const std::pair<const char*, std::vector<Item>*> splits[] = {
      {"train", &ds.train}, {"val", &ds.val}, {"test", &ds.test}};
  for (const auto& [split, items] : splits) {
    AnnotationFile ann = read_annotations(dir / (std::string(split) + ".json"));
    auto boxes = ann.boxes_by_image();
    for (const ImageRecord& im : ann.images) {
      Item item;
      item.id = im.id;
      item.image = read_raster(dir / im.file);
      item.boxes = boxes.at(im.id);
      item.target_map = build_target_map(item.boxes, im.height, im.width, patch, downscale, mode);
      items->push_back(std::move(item));
    }
  }
  return ds;
}

MetricsReport evaluate_split(const Model& model, const std::vector<SyntheticDataset::Item>& split,
                             const TrainConfig& cfg) {
  std::map<int, std::vector<Detection>> dets_by_image;
  std::map<int, std::vector<Box2D>> gt_by_image;
  for (const auto& item : split) {
    auto [dets, map] = model.predict(item.image, cfg.score_thresh);
    for (Detection& d : dets) d.image_id = item.id;
    dets_by_image[item.id] =
        filter_and_cap(std::move(dets), cfg.score_thresh, cfg.nms_iou, cfg.max_detections);
    gt_by_image[item.id] = item.boxes;
  }
  return evaluate(dets_by_image, gt_by_image);
}

double evaluate_ap50(const Model& model, const std::vector<SyntheticDataset::Item>& split,
                     const TrainConfig& cfg) {
  return evaluate_split(model, split, cfg).ap50;
}

TrainingLog train(Model& model, const SyntheticDataset& data, const TrainConfig& cfg) {
  if (data.train.empty()) throw ConfigError("train: empty training split");

  // Assignments are fixed by geometry; compute once per image.
  std::vector<std::vector<AnchorAssignment>> assignments;
  assignments.reserve(data.train.size());
  for (const auto& item : data.train) {
    assignments.push_back(assign_anchors(model.anchors(), item.boxes));
  }

  std::vector<ad::Tensor>& params = model.params();
  ad::SgdState opt;
  TrainingLog log;
  std::vector<std::vector<double>> best_snap = model.snapshot_params();
  double best_val = -1.0;
  int best_epoch = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double sum_total = 0, sum_cls = 0, sum_reg = 0, sum_gl = 0;
    for (size_t i = 0; i < data.train.size(); ++i) {
      const auto& item = data.train[i];
      ModelForward fwd = model.forward(item.image);
      std::array<double, 3> comps{};
      ad::Tensor total = model.loss(fwd, assignments[i], item.target_map, cfg, &comps);
      const double tv = total.scalar();
      if (!std::isfinite(tv)) {
        std::string which = !std::isfinite(comps[0]) ? "cls"
                            : !std::isfinite(comps[1]) ? "reg"
                                                       : "gl";
        throw DivergenceError("train: non-finite " + which + " loss at epoch " +
                                  std::to_string(epoch),
                              epoch);
      }
      ad::backward(total);
      ad::sgd_step(params, cfg.lr, cfg.momentum, opt);
      for (ad::Tensor& p : params) p.zero_grad();
      sum_total += tv;
      sum_cls += comps[0];
      sum_reg += comps[1];
      sum_gl += comps[2];
    }
    const double n = static_cast<double>(data.train.size());
    const double val_ap50 = evaluate_ap50(model, data.val, cfg);
    log.rows.push_back({epoch, sum_total / n, sum_cls / n, sum_reg / n, sum_gl / n, val_ap50});
    if (val_ap50 > best_val) {
      best_val = val_ap50;
      best_epoch = epoch;
      best_snap = model.snapshot_params();
    }
  }

  if (cfg.epochs == 0) best_val = evaluate_ap50(model, data.val, cfg);
  model.restore_params(best_snap);
  log.best_epoch = best_epoch;
  log.best_val_ap50 = std::max(0.0, best_val);
  return log;
}

}  // namespace dt
