// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Dense float tensors with a recorded computation graph for reverse-mode
// differentiation. Every primitive works on [channels, frames] arrays (or
// flat vectors for reductions); the op set is exactly what the separation
// network, its loss and the architecture search need.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "quantsep/common.hpp"

namespace quantsep {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<float>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return from(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<float> data, bool requires_grad = false) {
    if (numel_of(shape) != data.size())
      throw ShapeError(cat("tensor: shape ", shape_str(shape), " does not match ", data.size(), " values"));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(float value, bool requires_grad = false) { return from({}, {value}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  const std::string& op() const { return node_->op; }

  std::span<const float> data() const { return node_->data; }
  // Only leaves may be written in place: interior values are saved
  // activations of the recorded graph.
  std::span<float> mutable_data() {
    if (!node_->leaf) throw ShapeError("tensor: in-place write to a non-leaf tensor");
    return node_->data;
  }
  const std::vector<float>& values() const { return node_->data; }
  float at(std::size_t i) const { return node_->data.at(i); }
  float item() const {
    if (numel() != 1) throw ShapeError(cat("item: tensor of shape ", shape_str(shape()), " is not scalar"));
    return node_->data[0];
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0f); }
  void set_requires_grad(bool flag) {
    if (!node_->leaf) throw ShapeError("tensor: requires_grad can only be set on leaves");
    node_->requires_grad = flag;
  }

  // New leaf holding a copy of the values, with no history.
  Tensor detach(bool requires_grad = false) const { return from(shape(), node_->data, requires_grad); }

  // Reverse pass from a scalar. Gradients accumulate into every reachable
  // requires_grad leaf; the interior graph is released afterwards.
  void backward() {
    if (numel() != 1 || !shape().empty())
      throw ShapeError(cat("backward: loss must be a scalar, got shape ", shape_str(shape())));
    if (!requires_grad()) return;
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    // Iterative post-order DFS: order ends up topological (inputs first).
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    node_->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node* node = *it;
      if (node->leaf) continue;
      if (node->backward) node->backward(*node);
    }
    for (detail::Node* node : order) {
      if (node->leaf) continue;
      node->backward = nullptr;
      node->inputs.clear();
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(std::string, Shape, std::vector<float>, std::vector<Tensor>,
                        std::function<void(std::span<const float>, std::vector<std::vector<float>*>&)>);
};

// Extension point for composite primitives (the iSTFT and SI-SNR loss live in
// other modules). `backward_fn` receives the output gradient and one pointer
// per input: a gradient buffer to accumulate into, or nullptr when that input
// does not require a gradient.
using BackwardFn = std::function<void(std::span<const float>, std::vector<std::vector<float>*>&)>;

inline Tensor make_op(std::string name, Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                      BackwardFn backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = std::move(name);
  node->leaf = false;
  bool any = false;
  for (const Tensor& in : inputs) any = any || in.requires_grad();
  node->requires_grad = any;
  if (any) {
    for (const Tensor& in : inputs) node->inputs.push_back(in.node());
    node->backward = [fn = std::move(backward_fn)](detail::Node& self) {
      std::vector<std::vector<float>*> grads;
      grads.reserve(self.inputs.size());
      for (auto& in : self.inputs) grads.push_back(in->requires_grad ? &in->grad_buffer() : nullptr);
      fn(self.grad_buffer(), grads);
    };
  }
  return Tensor(std::move(node));
}

namespace detail {

inline void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

inline void require_rank2(const char* op, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError(cat(op, ": expected [channels, frames], got ", shape_str(x.shape())));
}

template <typename F, typename D>
Tensor unary(const char* name, const Tensor& x, F forward, D derivative) {
  std::vector<float> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  auto saved = std::make_shared<std::vector<float>>(out);
  return make_op(name, x.shape(), std::move(out), {x},
                 [xin = x, saved, derivative](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   auto& gx = *grads[0];
                   const auto xv = xin.data();
                   for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], (*saved)[i]);
                 });
}

}  // namespace detail

// --- elementwise ---------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same("add", a, b);
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op("add", a.shape(), std::move(out), {a, b},
                 [](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   for (auto* gi : grads)
                     if (gi)
                       for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                 });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same("sub", a, b);
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op("sub", a.shape(), std::move(out), {a, b},
                 [](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   if (grads[0])
                     for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
                   if (grads[1])
                     for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] -= g[i];
                 });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same("mul", a, b);
  std::vector<float> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op("mul", a.shape(), std::move(out), {a, b},
                 [a, b](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   if (grads[0])
                     for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * b.data()[i];
                   if (grads[1])
                     for (std::size_t i = 0; i < g.size(); ++i) (*grads[1])[i] += g[i] * a.data()[i];
                 });
}

inline Tensor scale(const Tensor& x, float factor) {
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.data()[i];
  return make_op("scale", x.shape(), std::move(out), {x},
                 [factor](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += factor * g[i];
                 });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      "sigmoid", x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); },
      [](float, float y) { return y * (1.0f - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      "tanh", x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

// y = x for x > 0, slope * x otherwise; slope is a single learned scalar.
inline Tensor prelu(const Tensor& x, const Tensor& slope) {
  if (slope.numel() != 1) throw ShapeError(cat("prelu: slope must hold one value, got ", shape_str(slope.shape())));
  const float a = slope.data()[0];
  std::vector<float> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = x.data()[i];
    out[i] = v > 0.0f ? v : a * v;
  }
  return make_op("prelu", x.shape(), std::move(out), {x, slope},
                 [x, a](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   const auto xv = x.data();
                   if (grads[0])
                     for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += xv[i] > 0.0f ? g[i] : a * g[i];
                   if (grads[1]) {
                     double acc = 0.0;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       if (xv[i] <= 0.0f) acc += static_cast<double>(g[i]) * xv[i];
                     (*grads[1])[0] += static_cast<float>(acc);
                   }
                 });
}

// --- reductions ------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  return make_op("sum", {}, {static_cast<float>(acc)}, {x},
                 [](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   for (float& v : *grads[0]) v += g[0];
                 });
}

inline Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const float inv = 1.0f / static_cast<float>(x.numel());
  return make_op("mean", {}, {static_cast<float>(acc / static_cast<double>(x.numel()))}, {x},
                 [inv](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   for (float& v : *grads[0]) v += g[0] * inv;
                 });
}

// Softmax over a flat vector.
inline Tensor softmax(const Tensor& x) {
  const auto xv = x.data();
  if (xv.empty()) throw ShapeError("softmax: empty tensor");
  const float peak = *std::max_element(xv.begin(), xv.end());
  std::vector<float> out(xv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = std::exp(xv[i] - peak);
    total += out[i];
  }
  for (float& v : out) v = static_cast<float>(v / total);
  auto saved = std::make_shared<std::vector<float>>(out);
  return make_op("softmax", x.shape(), std::move(out), {x},
                 [saved](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   const auto& y = *saved;
                   double dot = 0.0;
                   for (std::size_t i = 0; i < y.size(); ++i) dot += static_cast<double>(g[i]) * y[i];
                   for (std::size_t i = 0; i < y.size(); ++i)
                     (*grads[0])[i] += y[i] * (g[i] - static_cast<float>(dot));
                 });
}

// Convex (or arbitrary) combination sum_k weights[k] * branches[k].
inline Tensor mix(const std::vector<Tensor>& branches, const Tensor& weights) {
  if (branches.empty() || weights.numel() != branches.size())
    throw ShapeError(cat("mix: ", branches.size(), " branches vs weights ", shape_str(weights.shape())));
  const Shape& shape = branches[0].shape();
  std::vector<float> out(branches[0].numel(), 0.0f);
  for (std::size_t k = 0; k < branches.size(); ++k) {
    detail::require_same("mix", branches[0], branches[k]);
    const float w = weights.data()[k];
    const auto bv = branches[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * bv[i];
  }
  std::vector<Tensor> inputs = branches;
  inputs.push_back(weights);
  return make_op("mix", shape, std::move(out), inputs,
                 [branches, weights](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   const std::size_t k_count = branches.size();
                   for (std::size_t k = 0; k < k_count; ++k) {
                     if (grads[k]) {
                       const float w = weights.data()[k];
                       for (std::size_t i = 0; i < g.size(); ++i) (*grads[k])[i] += w * g[i];
                     }
                     if (grads[k_count]) {
                       double dot = 0.0;
                       const auto bv = branches[k].data();
                       for (std::size_t i = 0; i < g.size(); ++i) dot += static_cast<double>(g[i]) * bv[i];
                       (*grads[k_count])[k] += static_cast<float>(dot);
                     }
                   }
                 });
}

// --- channel-axis structure ----------------------------------------------

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t frames = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    detail::require_rank2("concat", p);
    if (p.dim(1) != frames)
      throw ShapeError(cat("concat: frame mismatch ", shape_str(parts[0].shape()), " vs ", shape_str(p.shape())));
    channels += p.dim(0);
  }
  std::vector<float> out;
  out.reserve(channels * frames);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op("concat", {channels, frames}, std::move(out), parts,
                 [parts](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   std::size_t offset = 0;
                   for (std::size_t k = 0; k < parts.size(); ++k) {
                     const std::size_t n = parts[k].numel();
                     if (grads[k])
                       for (std::size_t i = 0; i < n; ++i) (*grads[k])[i] += g[offset + i];
                     offset += n;
                   }
                 });
}

inline Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  detail::require_rank2("slice", x);
  if (begin + count > x.dim(0))
    throw ShapeError(cat("slice: channels [", begin, ",", begin + count, ") out of ", shape_str(x.shape())));
  const std::size_t frames = x.dim(1);
  std::vector<float> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * frames),
                         x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * frames));
  return make_op("slice", {count, frames}, std::move(out), {x},
                 [offset = begin * frames](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[offset + i] += g[i];
                 });
}

// --- convolution and normalization ----------------------------------------

struct ConvOptions {
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

// 1-D convolution over frames, stride 1, symmetric zero padding so the frame
// count is preserved. x: [Cin, T], weight: [Cout, Cin/groups, K] with K odd,
// bias: [Cout] or undefined.
inline Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, ConvOptions opt = {}) {
  detail::require_rank2("conv1d", x);
  if (weight.rank() != 3)
    throw ShapeError(cat("conv1d: weight must be [out, in/groups, kernel], got ", shape_str(weight.shape())));
  const std::size_t cin = x.dim(0), frames = x.dim(1);
  const std::size_t cout = weight.dim(0), cin_g = weight.dim(1), kernel = weight.dim(2);
  const std::size_t groups = opt.groups, dil = opt.dilation;
  if (groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g)
    throw ShapeError(cat("conv1d: input ", shape_str(x.shape()), " incompatible with weight ",
                         shape_str(weight.shape()), " at groups=", groups));
  if (kernel % 2 == 0) throw ShapeError(cat("conv1d: kernel size must be odd, weight ", shape_str(weight.shape())));
  if (bias.defined() && bias.numel() != cout)
    throw ShapeError(cat("conv1d: bias ", shape_str(bias.shape()), " vs weight ", shape_str(weight.shape())));
  const std::size_t cout_g = cout / groups;
  const long pad = static_cast<long>(dil * (kernel - 1) / 2);
  const long T = static_cast<long>(frames);
  const float* xv = x.data().data();
  const float* wv = weight.data().data();

  std::vector<float> out(cout * frames, 0.0f);
  for (std::size_t o = 0; o < cout; ++o) {
    float* yrow = out.data() + o * frames;
    if (bias.defined()) std::fill(yrow, yrow + frames, bias.data()[o]);
    const std::size_t g = o / cout_g;
    for (std::size_t ci = 0; ci < cin_g; ++ci) {
      const float* xrow = xv + (g * cin_g + ci) * frames;
      const float* wrow = wv + (o * cin_g + ci) * kernel;
      for (std::size_t k = 0; k < kernel; ++k) {
        const float w = wrow[k];
        const long shift = static_cast<long>(k * dil) - pad;
        const long t0 = std::max(0L, -shift), t1 = std::min(T, T - shift);
        for (long t = t0; t < t1; ++t) yrow[t] += w * xrow[t + shift];
      }
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_op(
      "conv1d", {cout, frames}, std::move(out), inputs,
      [x, weight, has_bias, cin_g, cout_g, kernel, dil, pad, T, frames, cout](
          std::span<const float> g, std::vector<std::vector<float>*>& grads) {
        const float* xv = x.data().data();
        const float* wv = weight.data().data();
        float* gx = grads[0] ? grads[0]->data() : nullptr;
        float* gw = grads[1] ? grads[1]->data() : nullptr;
        for (std::size_t o = 0; o < cout; ++o) {
          const float* grow = g.data() + o * frames;
          const std::size_t grp = o / cout_g;
          for (std::size_t ci = 0; ci < cin_g; ++ci) {
            const std::size_t c = grp * cin_g + ci;
            const float* xrow = xv + c * frames;
            for (std::size_t k = 0; k < kernel; ++k) {
              const long shift = static_cast<long>(k * dil) - pad;
              const long t0 = std::max(0L, -shift), t1 = std::min(T, T - shift);
              if (gw) {
                float acc = 0.0f;
                for (long t = t0; t < t1; ++t) acc += grow[t] * xrow[t + shift];
                gw[(o * cin_g + ci) * kernel + k] += acc;
              }
              if (gx) {
                const float w = wv[(o * cin_g + ci) * kernel + k];
                float* gxrow = gx + c * frames;
                for (long t = t0; t < t1; ++t) gxrow[t + shift] += w * grow[t];
              }
            }
          }
          if (has_bias && grads[2]) {
            float acc = 0.0f;
            for (std::size_t t = 0; t < frames; ++t) acc += grow[t];
            (*grads[2])[o] += acc;
          }
        }
      });
}

// Global layer normalization: statistics over all channels and frames,
// learned per-channel gain and bias.
inline Tensor global_layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-8f) {
  detail::require_rank2("global_layer_norm", x);
  const std::size_t channels = x.dim(0), frames = x.dim(1);
  if (gain.numel() != channels || bias.numel() != channels)
    throw ShapeError(cat("global_layer_norm: input ", shape_str(x.shape()), " vs gain ", shape_str(gain.shape()),
                         " / bias ", shape_str(bias.shape())));
  const auto xv = x.data();
  const double n = static_cast<double>(xv.size());
  double mu = 0.0;
  for (float v : xv) mu += v;
  mu /= n;
  double var = 0.0;
  for (float v : xv) var += (v - mu) * (v - mu);
  var /= n;
  const float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps));
  auto xhat = std::make_shared<std::vector<float>>(xv.size());
  std::vector<float> out(xv.size());
  for (std::size_t c = 0; c < channels; ++c) {
    const float gc = gain.data()[c], bc = bias.data()[c];
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t i = c * frames + t;
      (*xhat)[i] = static_cast<float>(xv[i] - mu) * inv_std;
      out[i] = gc * (*xhat)[i] + bc;
    }
  }
  return make_op("global_layer_norm", x.shape(), std::move(out), {x, gain, bias},
                 [xhat, gain, inv_std, channels, frames](std::span<const float> g,
                                                         std::vector<std::vector<float>*>& grads) {
                   const auto& xh = *xhat;
                   if (grads[0]) {
                     double mean_d = 0.0, mean_dx = 0.0;
                     for (std::size_t c = 0; c < channels; ++c) {
                       const float gc = gain.data()[c];
                       for (std::size_t t = 0; t < frames; ++t) {
                         const std::size_t i = c * frames + t;
                         const double d = static_cast<double>(g[i]) * gc;
                         mean_d += d;
                         mean_dx += d * xh[i];
                       }
                     }
                     const double n = static_cast<double>(xh.size());
                     mean_d /= n;
                     mean_dx /= n;
                     for (std::size_t c = 0; c < channels; ++c) {
                       const float gc = gain.data()[c];
                       for (std::size_t t = 0; t < frames; ++t) {
                         const std::size_t i = c * frames + t;
                         (*grads[0])[i] += inv_std * static_cast<float>(g[i] * gc - mean_d - xh[i] * mean_dx);
                       }
                     }
                   }
                   for (std::size_t c = 0; c < channels; ++c) {
                     float dg = 0.0f, db = 0.0f;
                     for (std::size_t t = 0; t < frames; ++t) {
                       const std::size_t i = c * frames + t;
                       dg += g[i] * xh[i];
                       db += g[i];
                     }
                     if (grads[1]) (*grads[1])[c] += dg;
                     if (grads[2]) (*grads[2])[c] += db;
                   }
                 });
}

}  // namespace quantsep
