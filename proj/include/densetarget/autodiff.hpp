#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "densetarget/losses.hpp"

namespace dt::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in a define-by-run graph. Graphs are rebuilt per forward
/// pass; leaves (parameters, inputs) survive across passes.
struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string name;

  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  size_t size() const { return value.size(); }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor constant(std::vector<int> shape, std::vector<double> data);
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor param(std::vector<int> shape, std::vector<double> data,
                      std::string name = {});

  const std::vector<int>& shape() const { return node_->shape; }
  std::vector<double>& value() { return node_->value; }
  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& grad() { return node_->grad; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  size_t size() const { return node_->size(); }
  double scalar() const;

  void zero_grad();
  NodePtr node() const { return node_; }
  bool defined() const { return node_ != nullptr; }

 private:
  NodePtr node_;
};

size_t shape_numel(const std::vector<int>& shape);

// ---- elementwise / structural ops (shapes (C,H,W) where noted) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor scale(const Tensor& x, double k);
Tensor sum(const Tensor& x);  // -> scalar, shape {}

/// x: (C,H,W), bias: (C); adds bias[c] to every pixel of channel c.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// a: (Ca,H,W), b: (Cb,H,W) -> (Ca+Cb,H,W).
Tensor concat_channels(const Tensor& a, const Tensor& b);

enum class Interp { Nearest, Bilinear };

/// (C,H,W) -> (C,2H,2W).
Tensor upsample2x(const Tensor& x, Interp mode);

/// (C,H,W) -> (C,H/2,W/2); H and W must be even.
Tensor downsample2x_avg(const Tensor& x);

/// x: (C,H,W), kernel: (OC,C,KH,KW), optional bias (OC).
/// Forward runs im2col; conv2d_direct is the reference path.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int stride = 1, int pad = 0);

/// Direct-loop forward only, for cross-checking the im2col path.
std::vector<double> conv2d_direct(std::span<const double> x, const std::vector<int>& xshape,
                                  std::span<const double> k, const std::vector<int>& kshape,
                                  std::span<const double> bias, int stride, int pad,
                                  std::vector<int>& out_shape);

/// (C,H,W) -> flat (H*W*C); pairs feature-map channel layout with the
/// row/col/anchor ordering of generate_anchors.
Tensor chw_to_hwc_flat(const Tensor& x);

/// Concatenation of flattened tensors into one 1-D tensor.
Tensor concat_flat(const std::vector<Tensor>& parts);

/// out[i] = x[indices[i]]; backward scatters.
Tensor gather(const Tensor& x, std::vector<size_t> indices);

/// out[i] = x[i] - c[i].
Tensor sub_const(const Tensor& x, std::vector<double> c);

Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<double>& weights);

// ---- loss nodes (wrap the analytic kernels from module losses) ----

Tensor focal_loss_node(const Tensor& p, std::vector<FocalAnchorState> states,
                       const FocalParams& params);
Tensor smooth_l1_node(const Tensor& residuals);
Tensor gaussian_loss_node(const Tensor& pred_map, Raster target, const HemParams& params,
                          int batch_n = 1);

/// Reverse accumulation from a scalar loss. Repeated calls accumulate
/// into existing grads; zero_grad between steps.
void backward(const Tensor& loss);

// ---- optimizer ----

struct SgdState {
  std::vector<std::vector<double>> velocity;
};

/// p <- p - lr * v,  v <- momentum * v + grad. Velocities zero-init on
/// first use; state must be reused across steps for momentum.
void sgd_step(std::vector<Tensor>& params, double lr, double momentum, SgdState& state);

}  // namespace dt::ad
