#include "densetarget/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace dt::ad {

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

namespace {

NodePtr make_node(std::vector<int> shape, std::vector<double> value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  if (value.size() != shape_numel(shape)) {
    throw ShapeMismatch("Tensor: data length does not match shape");
  }
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->grad.assign(n->value.size(), 0.0);
  n->requires_grad = requires_grad;
  return n;
}

NodePtr make_op(std::vector<int> shape, std::vector<double> value,
                std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  NodePtr n = make_node(std::move(shape), std::move(value), false);
  for (const NodePtr& p : parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward_fn = std::move(bw);
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": operand shapes differ");
  }
}

struct Chw {
  int c, h, w;
};

Chw as_chw(const std::vector<int>& shape, const char* op) {
  if (shape.size() != 3) throw ShapeMismatch(std::string(op) + ": expected (C,H,W) tensor");
  return {shape[0], shape[1], shape[2]};
}

}  // namespace

Tensor Tensor::constant(std::vector<int> shape, std::vector<double> data) {
  return Tensor(make_node(std::move(shape), std::move(data), false));
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  size_t n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::param(std::vector<int> shape, std::vector<double> data, std::string name) {
  NodePtr n = make_node(std::move(shape), std::move(data), true);
  n->name = std::move(name);
  return Tensor(n);
}

double Tensor::scalar() const {
  if (size() != 1) throw NonScalarLoss("Tensor::scalar: tensor is not scalar");
  return node_->value[0];
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  return Tensor(make_op(a.shape(), std::move(v), {a.node(), b.node()}, [](Node& self) {
    for (int pi = 0; pi < 2; ++pi) {
      Node& p = *self.parents[pi];
      if (!p.requires_grad) continue;
      for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  return Tensor(make_op(a.shape(), std::move(v), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  }));
}

Tensor relu(const Tensor& x) {
  std::vector<double> v(x.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, x.value()[i]);
  return Tensor(make_op(x.shape(), std::move(v), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
    }
  }));
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> v(x.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
  return Tensor(make_op(x.shape(), std::move(v), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.value[i];
      p.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  }));
}

Tensor scale(const Tensor& x, double k) {
  std::vector<double> v(x.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = k * x.value()[i];
  return Tensor(make_op(x.shape(), std::move(v), {x.node()}, [k](Node& self) {
    Node& p = *self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += k * self.grad[i];
  }));
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  return Tensor(make_op({}, {s}, {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (double& g : p.grad) g += self.grad[0];
  }));
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  Chw d = as_chw(x.shape(), "add_channel_bias");
  if (bias.shape() != std::vector<int>{d.c}) {
    throw ShapeMismatch("add_channel_bias: bias length must equal channel count");
  }
  const size_t plane = static_cast<size_t>(d.h) * d.w;
  std::vector<double> v(x.size());
  for (int c = 0; c < d.c; ++c) {
    for (size_t i = 0; i < plane; ++i) v[c * plane + i] = x.value()[c * plane + i] + bias.value()[c];
  }
  return Tensor(make_op(x.shape(), std::move(v), {x.node(), bias.node()}, [plane, d](Node& self) {
    Node& px = *self.parents[0];
    Node& pb = *self.parents[1];
    for (int c = 0; c < d.c; ++c) {
      for (size_t i = 0; i < plane; ++i) {
        const double g = self.grad[c * plane + i];
        if (px.requires_grad) px.grad[c * plane + i] += g;
        if (pb.requires_grad) pb.grad[c] += g;
      }
    }
  }));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Chw da = as_chw(a.shape(), "concat_channels");
  Chw db = as_chw(b.shape(), "concat_channels");
  if (da.h != db.h || da.w != db.w) {
    throw ShapeMismatch("concat_channels: spatial dims differ");
  }
  std::vector<double> v;
  v.reserve(a.size() + b.size());
  v.insert(v.end(), a.value().begin(), a.value().end());
  v.insert(v.end(), b.value().begin(), b.value().end());
  const size_t na = a.size();
  return Tensor(make_op({da.c + db.c, da.h, da.w}, std::move(v), {a.node(), b.node()},
                        [na](Node& self) {
                          Node& pa = *self.parents[0];
                          Node& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            for (size_t i = 0; i < na; ++i) pa.grad[i] += self.grad[i];
                          }
                          if (pb.requires_grad) {
                            for (size_t i = na; i < self.grad.size(); ++i) {
                              pb.grad[i - na] += self.grad[i];
                            }
                          }
                        }));
}

Tensor upsample2x(const Tensor& x, Interp mode) {
  Chw d = as_chw(x.shape(), "upsample2x");
  const int oh = 2 * d.h, ow = 2 * d.w;
  std::vector<double> v(static_cast<size_t>(d.c) * oh * ow);

  if (mode == Interp::Nearest) {
    for (int c = 0; c < d.c; ++c) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          v[(static_cast<size_t>(c) * oh + i) * ow + j] =
              x.value()[(static_cast<size_t>(c) * d.h + i / 2) * d.w + j / 2];
        }
      }
    }
    return Tensor(make_op({d.c, oh, ow}, std::move(v), {x.node()}, [d, oh, ow](Node& self) {
      Node& p = *self.parents[0];
      for (int c = 0; c < d.c; ++c) {
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j) {
            p.grad[(static_cast<size_t>(c) * d.h + i / 2) * d.w + j / 2] +=
                self.grad[(static_cast<size_t>(c) * oh + i) * ow + j];
          }
        }
      }
    }));
  }

  // Bilinear, half-pixel centers, edge clamp (align_corners = false).
  struct Tap {
    int i0, i1, j0, j1;
    double wi, wj;
  };
  auto tap_for = [d](int i, int j) {
    Tap t;
    double si = (i + 0.5) / 2.0 - 0.5;
    double sj = (j + 0.5) / 2.0 - 0.5;
    t.i0 = std::clamp(static_cast<int>(std::floor(si)), 0, d.h - 1);
    t.i1 = std::min(t.i0 + 1, d.h - 1);
    t.j0 = std::clamp(static_cast<int>(std::floor(sj)), 0, d.w - 1);
    t.j1 = std::min(t.j0 + 1, d.w - 1);
    t.wi = std::clamp(si - std::floor(si), 0.0, 1.0);
    t.wj = std::clamp(sj - std::floor(sj), 0.0, 1.0);
    if (si < 0) t.wi = 0.0;
    if (sj < 0) t.wj = 0.0;
    return t;
  };
  for (int c = 0; c < d.c; ++c) {
    const size_t base = static_cast<size_t>(c) * d.h * d.w;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        Tap t = tap_for(i, j);
        double v00 = x.value()[base + static_cast<size_t>(t.i0) * d.w + t.j0];
        double v01 = x.value()[base + static_cast<size_t>(t.i0) * d.w + t.j1];
        double v10 = x.value()[base + static_cast<size_t>(t.i1) * d.w + t.j0];
        double v11 = x.value()[base + static_cast<size_t>(t.i1) * d.w + t.j1];
        v[(static_cast<size_t>(c) * oh + i) * ow + j] =
            (1 - t.wi) * ((1 - t.wj) * v00 + t.wj * v01) +
            t.wi * ((1 - t.wj) * v10 + t.wj * v11);
      }
    }
  }
  return Tensor(make_op({d.c, oh, ow}, std::move(v), {x.node()},
                        [d, oh, ow, tap_for](Node& self) {
                          Node& p = *self.parents[0];
                          for (int c = 0; c < d.c; ++c) {
                            const size_t base = static_cast<size_t>(c) * d.h * d.w;
                            for (int i = 0; i < oh; ++i) {
                              for (int j = 0; j < ow; ++j) {
                                Tap t = tap_for(i, j);
                                const double g =
                                    self.grad[(static_cast<size_t>(c) * oh + i) * ow + j];
                                p.grad[base + static_cast<size_t>(t.i0) * d.w + t.j0] +=
                                    g * (1 - t.wi) * (1 - t.wj);
                                p.grad[base + static_cast<size_t>(t.i0) * d.w + t.j1] +=
                                    g * (1 - t.wi) * t.wj;
                                p.grad[base + static_cast<size_t>(t.i1) * d.w + t.j0] +=
                                    g * t.wi * (1 - t.wj);
                                p.grad[base + static_cast<size_t>(t.i1) * d.w + t.j1] +=
                                    g * t.wi * t.wj;
                              }
                            }
                          }
                        }));
}

Tensor downsample2x_avg(const Tensor& x) {
  Chw d = as_chw(x.shape(), "downsample2x_avg");
  if (d.h % 2 != 0 || d.w % 2 != 0) {
    throw ShapeMismatch("downsample2x_avg: H and W must be even");
  }
  const int oh = d.h / 2, ow = d.w / 2;
  std::vector<double> v(static_cast<size_t>(d.c) * oh * ow);
  for (int c = 0; c < d.c; ++c) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        double s = 0.0;
        for (int di = 0; di < 2; ++di) {
          for (int dj = 0; dj < 2; ++dj) {
            s += x.value()[(static_cast<size_t>(c) * d.h + 2 * i + di) * d.w + 2 * j + dj];
          }
        }
        v[(static_cast<size_t>(c) * oh + i) * ow + j] = 0.25 * s;
      }
    }
  }
  return Tensor(make_op({d.c, oh, ow}, std::move(v), {x.node()}, [d, oh, ow](Node& self) {
    Node& p = *self.parents[0];
    for (int c = 0; c < d.c; ++c) {
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const double g = 0.25 * self.grad[(static_cast<size_t>(c) * oh + i) * ow + j];
          for (int di = 0; di < 2; ++di) {
            for (int dj = 0; dj < 2; ++dj) {
              p.grad[(static_cast<size_t>(c) * d.h + 2 * i + di) * d.w + 2 * j + dj] += g;
            }
          }
        }
      }
    }
  }));
}

std::vector<double> conv2d_direct(std::span<const double> x, const std::vector<int>& xshape,
                                  std::span<const double> k, const std::vector<int>& kshape,
                                  std::span<const double> bias, int stride, int pad,
                                  std::vector<int>& out_shape) {
  const int C = xshape[0], H = xshape[1], W = xshape[2];
  const int OC = kshape[0], KC = kshape[1], KH = kshape[2], KW = kshape[3];
  if (KC != C) throw ShapeMismatch("conv2d: kernel channels != input channels");
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ShapeMismatch("conv2d: empty output");
  out_shape = {OC, OH, OW};
  std::vector<double> out(static_cast<size_t>(OC) * OH * OW, 0.0);
  for (int o = 0; o < OC; ++o) {
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (int c = 0; c < C; ++c) {
          for (int kh = 0; kh < KH; ++kh) {
            const int ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < KW; ++kw) {
              const int iw = ow * stride - pad + kw;
              if (iw < 0 || iw >= W) continue;
              acc += x[(static_cast<size_t>(c) * H + ih) * W + iw] *
                     k[((static_cast<size_t>(o) * C + c) * KH + kh) * KW + kw];
            }
          }
        }
        out[(static_cast<size_t>(o) * OH + oh) * OW + ow] = acc;
      }
    }
  }
  return out;
}

namespace {

// im2col: columns matrix (C*KH*KW) x (OH*OW); missing (padded) samples
// are zero. Row order matches the direct path's accumulation order.
std::vector<double> im2col(std::span<const double> x, int C, int H, int W, int KH, int KW,
                           int OH, int OW, int stride, int pad) {
  std::vector<double> cols(static_cast<size_t>(C) * KH * KW * OH * OW, 0.0);
  size_t row = 0;
  for (int c = 0; c < C; ++c) {
    for (int kh = 0; kh < KH; ++kh) {
      for (int kw = 0; kw < KW; ++kw, ++row) {
        double* dst = &cols[row * OH * OW];
        for (int oh = 0; oh < OH; ++oh) {
          const int ih = oh * stride - pad + kh;
          if (ih < 0 || ih >= H) { dst += OW; continue; }
          for (int ow = 0; ow < OW; ++ow, ++dst) {
            const int iw = ow * stride - pad + kw;
            if (iw >= 0 && iw < W) *dst = x[(static_cast<size_t>(c) * H + ih) * W + iw];
          }
        }
      }
    }
  }
  return cols;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride, int pad) {
  Chw d = as_chw(x.shape(), "conv2d");
  if (kernel.shape().size() != 4) throw ShapeMismatch("conv2d: kernel must be (OC,C,KH,KW)");
  const int OC = kernel.shape()[0], KC = kernel.shape()[1];
  const int KH = kernel.shape()[2], KW = kernel.shape()[3];
  if (KC != d.c) {
    throw ShapeMismatch("conv2d: input has " + std::to_string(d.c) + " channels, kernel expects " +
                        std::to_string(KC));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != std::vector<int>{OC}) {
    throw ShapeMismatch("conv2d: bias length must equal output channels");
  }
  const int OH = (d.h + 2 * pad - KH) / stride + 1;
  const int OW = (d.w + 2 * pad - KW) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ShapeMismatch("conv2d: empty output");

  // im2col + (OC x CKK)(CKK x OHOW) matmul; inner accumulation order
  // equals the direct loops so the two paths agree exactly on exact
  // (integer) inputs.
  std::vector<double> cols = im2col(x.value(), d.c, d.h, d.w, KH, KW, OH, OW, stride, pad);
  const size_t ckk = static_cast<size_t>(d.c) * KH * KW;
  const size_t hw = static_cast<size_t>(OH) * OW;
  std::vector<double> out(static_cast<size_t>(OC) * hw);
  for (int o = 0; o < OC; ++o) {
    const double* krow = &kernel.value()[o * ckk];
    for (size_t p = 0; p < hw; ++p) {
      double acc = has_bias ? bias.value()[o] : 0.0;
      for (size_t r = 0; r < ckk; ++r) acc += krow[r] * cols[r * hw + p];
      out[o * hw + p] = acc;
    }
  }

  std::vector<NodePtr> parents = {x.node(), kernel.node()};
  if (has_bias) parents.push_back(bias.node());
  return Tensor(make_op(
      {OC, OH, OW}, std::move(out), std::move(parents),
      [d, OC, KH, KW, OH, OW, stride, pad, has_bias](Node& self) {
        Node& px = *self.parents[0];
        Node& pk = *self.parents[1];
        for (int o = 0; o < OC; ++o) {
          for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
              const double g = self.grad[(static_cast<size_t>(o) * OH + oh) * OW + ow];
              if (g == 0.0) continue;
              if (has_bias && self.parents[2]->requires_grad) self.parents[2]->grad[o] += g;
              for (int c = 0; c < d.c; ++c) {
                for (int kh = 0; kh < KH; ++kh) {
                  const int ih = oh * stride - pad + kh;
                  if (ih < 0 || ih >= d.h) continue;
                  for (int kw = 0; kw < KW; ++kw) {
                    const int iw = ow * stride - pad + kw;
                    if (iw < 0 || iw >= d.w) continue;
                    const size_t xi = (static_cast<size_t>(c) * d.h + ih) * d.w + iw;
                    const size_t ki = ((static_cast<size_t>(o) * d.c + c) * KH + kh) * KW + kw;
                    if (px.requires_grad) px.grad[xi] += g * pk.value[ki];
                    if (pk.requires_grad) pk.grad[ki] += g * px.value[xi];
                  }
                }
              }
            }
          }
        }
      }));
}

Tensor chw_to_hwc_flat(const Tensor& x) {
  Chw d = as_chw(x.shape(), "chw_to_hwc_flat");
  std::vector<double> v(x.size());
  size_t idx = 0;
  for (int i = 0; i < d.h; ++i) {
    for (int j = 0; j < d.w; ++j) {
      for (int c = 0; c < d.c; ++c, ++idx) {
        v[idx] = x.value()[(static_cast<size_t>(c) * d.h + i) * d.w + j];
      }
    }
  }
  return Tensor(make_op({static_cast<int>(x.size())}, std::move(v), {x.node()}, [d](Node& self) {
    Node& p = *self.parents[0];
    size_t idx = 0;
    for (int i = 0; i < d.h; ++i) {
      for (int j = 0; j < d.w; ++j) {
        for (int c = 0; c < d.c; ++c, ++idx) {
          p.grad[(static_cast<size_t>(c) * d.h + i) * d.w + j] += self.grad[idx];
        }
      }
    }
  }));
}

Tensor concat_flat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_flat: empty input list");
  std::vector<double> v;
  std::vector<NodePtr> parents;
  std::vector<size_t> offsets;
  for (const Tensor& t : parts) {
    offsets.push_back(v.size());
    v.insert(v.end(), t.value().begin(), t.value().end());
    parents.push_back(t.node());
  }
  const int n = static_cast<int>(v.size());
  return Tensor(make_op({n}, std::move(v), std::move(parents),
                        [offsets](Node& self) {
                          for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                            Node& p = *self.parents[pi];
                            if (!p.requires_grad) continue;
                            const size_t off = offsets[pi];
                            for (size_t i = 0; i < p.grad.size(); ++i) {
                              p.grad[i] += self.grad[off + i];
                            }
                          }
                        }));
}

Tensor gather(const Tensor& x, std::vector<size_t> indices) {
  std::vector<double> v(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size()) throw ShapeMismatch("gather: index out of range");
    v[i] = x.value()[indices[i]];
  }
  const int n = static_cast<int>(indices.size());
  return Tensor(make_op({n}, std::move(v), {x.node()},
                        [idx = std::move(indices)](Node& self) {
                          Node& p = *self.parents[0];
                          for (size_t i = 0; i < idx.size(); ++i) p.grad[idx[i]] += self.grad[i];
                        }));
}

Tensor sub_const(const Tensor& x, std::vector<double> c) {
  if (c.size() != x.size()) throw ShapeMismatch("sub_const: length mismatch");
  std::vector<double> v(x.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = x.value()[i] - c[i];
  return Tensor(make_op(x.shape(), std::move(v), {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  }));
}

Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size() || scalars.empty()) {
    throw ShapeMismatch("weighted_sum: need matching non-empty lists");
  }
  double s = 0.0;
  std::vector<NodePtr> parents;
  for (size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].size() != 1) throw NonScalarLoss("weighted_sum: inputs must be scalar");
    s += weights[i] * scalars[i].value()[0];
    parents.push_back(scalars[i].node());
  }
  return Tensor(make_op({}, {s}, std::move(parents), [weights](Node& self) {
    for (size_t i = 0; i < self.parents.size(); ++i) {
      if (self.parents[i]->requires_grad) self.parents[i]->grad[0] += weights[i] * self.grad[0];
    }
  }));
}

Tensor focal_loss_node(const Tensor& p, std::vector<FocalAnchorState> states,
                       const FocalParams& params) {
  std::vector<double> dgrad(p.size());
  double value = focal_loss(p.value(), states, params, dgrad);
  return Tensor(make_op({}, {value}, {p.node()}, [g = std::move(dgrad)](Node& self) {
    Node& parent = *self.parents[0];
    for (size_t i = 0; i < g.size(); ++i) parent.grad[i] += self.grad[0] * g[i];
  }));
}

Tensor smooth_l1_node(const Tensor& residuals) {
  std::vector<double> dgrad(residuals.size());
  double value = smooth_l1(residuals.value(), dgrad);
  return Tensor(make_op({}, {value}, {residuals.node()}, [g = std::move(dgrad)](Node& self) {
    Node& parent = *self.parents[0];
    for (size_t i = 0; i < g.size(); ++i) parent.grad[i] += self.grad[0] * g[i];
  }));
}

Tensor gaussian_loss_node(const Tensor& pred_map, Raster target, const HemParams& params,
                          int batch_n) {
  Raster pred;
  pred.height = target.height;
  pred.width = target.width;
  if (pred_map.size() != target.data.size()) {
    throw ShapeMismatch("gaussian_loss_node: prediction size != target size");
  }
  pred.data = pred_map.value();
  Raster dgrad;
  double value = gaussian_loss(pred, target, params, dgrad, batch_n);
  return Tensor(make_op({}, {value}, {pred_map.node()}, [g = std::move(dgrad)](Node& self) {
    Node& parent = *self.parents[0];
    for (size_t i = 0; i < g.data.size(); ++i) parent.grad[i] += self.grad[0] * g.data[i];
  }));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw NonScalarLoss("backward: loss must be a defined scalar");
  }
  // Iterative post-order DFS, then reverse for the backward sweep.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Interior nodes are transient per-sweep accumulators; only leaves keep
  // gradients across repeated backward calls.
  for (Node* n : order) {
    if (n->backward_fn) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

void sgd_step(std::vector<Tensor>& params, double lr, double momentum, SgdState& state) {
  if (state.velocity.empty()) {
    state.velocity.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) state.velocity[i].assign(params[i].size(), 0.0);
  }
  if (state.velocity.size() != params.size()) {
    throw ConfigError("sgd_step: optimizer state does not match parameter list");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (p.grad().size() != p.size()) throw MissingGrad("sgd_step: parameter has no gradient");
    std::vector<double>& v = state.velocity[i];
    for (size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + p.grad()[j];
      p.value()[j] -= lr * v[j];
    }
  }
}

}  // namespace dt::ad
