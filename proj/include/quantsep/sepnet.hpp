// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// The TF-masking separation network: reference-channel LPS, cos(IPD) per
// microphone pair and the angle feature are stacked along channels, mapped to
// a bottleneck, passed through stacked TCN blocks of dilated ConvBlocks, and
// the summed skip outputs drive a 1x1 head producing the real and imaginary
// planes of a complex mask on the reference spectrum.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "quantsep/common.hpp"
#include "quantsep/dsp.hpp"
#include "quantsep/mixgen.hpp"
#include "quantsep/tensor.hpp"

namespace quantsep::sepnet {

enum class MaskHead { Linear, Tanh };

struct ArchConfig {
  std::size_t bins = 257;
  std::size_t pairs = 3;
  std::size_t tcn_blocks = 2;
  std::size_t blocks_per_tcn = 4;
  std::size_t bottleneck = 64;
  std::size_t hidden = 128;
  std::size_t kernel = 3;
  MaskHead head = MaskHead::Linear;

  std::size_t input_channels() const { return bins * (2 + pairs); }

  void validate() const {
    if (bins < 2 || tcn_blocks == 0 || blocks_per_tcn == 0 || bottleneck == 0 || hidden == 0)
      throw ConfigError("architecture: all sizes must be positive");
    if (kernel % 2 == 0) throw ConfigError("architecture: kernel size must be odd");
    if (blocks_per_tcn > 16) throw ConfigError("architecture: at most 16 ConvBlocks per TCN block");
  }

  json to_json() const {
    return {{"bins", bins},         {"pairs", pairs},   {"tcn_blocks", tcn_blocks},
            {"blocks_per_tcn", blocks_per_tcn},          {"bottleneck", bottleneck},
            {"hidden", hidden},     {"kernel", kernel}, {"head", head == MaskHead::Tanh ? "tanh" : "linear"}};
  }

  static ArchConfig from_json(const json& j) {
    ArchConfig a;
    a.bins = j.at("bins").get<std::size_t>();
    a.pairs = j.at("pairs").get<std::size_t>();
    a.tcn_blocks = j.at("tcn_blocks").get<std::size_t>();
    a.blocks_per_tcn = j.at("blocks_per_tcn").get<std::size_t>();
    a.bottleneck = j.at("bottleneck").get<std::size_t>();
    a.hidden = j.at("hidden").get<std::size_t>();
    a.kernel = j.at("kernel").get<std::size_t>();
    const auto head = j.at("head").get<std::string>();
    if (head != "linear" && head != "tanh") throw ConfigError(cat("architecture: unknown head '", head, "'"));
    a.head = head == "tanh" ? MaskHead::Tanh : MaskHead::Linear;
    a.validate();
    return a;
  }
};

// Role of a parameter tensor inside the network.
enum class ParamRole { Weight, Bias, Slope, Gain };

struct ParamInfo {
  std::string id;        // e.g. "tcn1.block2.dconv.weight"
  std::string sublayer;  // e.g. "tcn1.block2.dconv"
  std::string kind;      // input | conv_in | prelu1 | norm1 | dconv | prelu2 | norm2 | conv_out | head_prelu | head
  ParamRole role = ParamRole::Weight;
  Shape shape;
  std::size_t tcn = 0;    // 1-based; 0 outside the TCN stack
  std::size_t block = 0;  // 1-based
  std::size_t fan_in = 1;
};

// Kinds of weight-bearing sublayers inside a ConvBlock.
inline bool is_convblock_weight(const ParamInfo& p) {
  return p.role == ParamRole::Weight && p.tcn > 0 && (p.kind == "conv_in" || p.kind == "dconv" || p.kind == "conv_out");
}

class SepModel {
 public:
  SepModel() = default;

  explicit SepModel(ArchConfig arch) : arch_(arch) {
    arch_.validate();
    const std::size_t B = arch_.bottleneck, H = arch_.hidden, P = arch_.kernel;
    add("input.weight", "input", "input", ParamRole::Weight, {B, arch_.input_channels(), 1});
    add("input.bias", "input", "input", ParamRole::Bias, {B});
    for (std::size_t m = 1; m <= arch_.tcn_blocks; ++m) {
      for (std::size_t n = 1; n <= arch_.blocks_per_tcn; ++n) {
        const std::string p = cat("tcn", m, ".block", n, ".");
        add(p + "conv_in.weight", p + "conv_in", "conv_in", ParamRole::Weight, {H, B, 1}, m, n);
        add(p + "conv_in.bias", p + "conv_in", "conv_in", ParamRole::Bias, {H}, m, n);
        add(p + "prelu1.slope", p + "prelu1", "prelu1", ParamRole::Slope, {1}, m, n);
        add(p + "norm1.gain", p + "norm1", "norm1", ParamRole::Gain, {H}, m, n);
        add(p + "norm1.bias", p + "norm1", "norm1", ParamRole::Bias, {H}, m, n);
        add(p + "dconv.weight", p + "dconv", "dconv", ParamRole::Weight, {H, 1, P}, m, n);
        add(p + "dconv.bias", p + "dconv", "dconv", ParamRole::Bias, {H}, m, n);
        add(p + "prelu2.slope", p + "prelu2", "prelu2", ParamRole::Slope, {1}, m, n);
        add(p + "norm2.gain", p + "norm2", "norm2", ParamRole::Gain, {H}, m, n);
        add(p + "norm2.bias", p + "norm2", "norm2", ParamRole::Bias, {H}, m, n);
        add(p + "conv_out.weight", p + "conv_out", "conv_out", ParamRole::Weight, {B, H, 1}, m, n);
        add(p + "conv_out.bias", p + "conv_out", "conv_out", ParamRole::Bias, {B}, m, n);
      }
    }
    add("head.prelu.slope", "head.prelu", "head_prelu", ParamRole::Slope, {1});
    add("head.weight", "head", "head", ParamRole::Weight, {2 * arch_.bins, B, 1});
    add("head.bias", "head", "head", ParamRole::Bias, {2 * arch_.bins});
  }

  const ArchConfig& arch() const { return arch_; }
  const std::vector<ParamInfo>& info() const { return info_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < info_.size(); ++i)
      if (info_[i].id == id) return i;
    throw ShapeError(cat("model: no parameter '", id, "'"));
  }

  // Fan-in uniform init for weights/biases, 0.25 PReLU slopes, unit norm gains.
  void initialize(std::uint64_t seed, bool zero_head = false) {
    Rng rng(seed);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto values = params_[i].mutable_data();
      const ParamInfo& pi = info_[i];
      const double bound = 1.0 / std::sqrt(static_cast<double>(pi.fan_in));
      for (float& v : values) {
        switch (pi.role) {
          case ParamRole::Weight:
          case ParamRole::Bias: v = static_cast<float>(rng.uniform(-bound, bound)); break;
          case ParamRole::Slope: v = 0.25f; break;
          case ParamRole::Gain: v = 1.0f; break;
        }
      }
      if (pi.kind == "norm1" || pi.kind == "norm2")
        if (pi.role == ParamRole::Bias) std::fill(values.begin(), values.end(), 0.0f);
      if (pi.kind == "head" && zero_head) std::fill(values.begin(), values.end(), 0.0f);
    }
  }

  SepModel clone() const {
    SepModel copy;
    copy.arch_ = arch_;
    copy.info_ = info_;
    for (const auto& p : params_) copy.params_.push_back(p.detach(p.requires_grad()));
    return copy;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::vector<float> flat_values() const {
    std::vector<float> out;
    out.reserve(param_count());
    for (const auto& p : params_) out.insert(out.end(), p.data().begin(), p.data().end());
    return out;
  }

  void set_flat_values(std::span<const float> values) {
    if (values.size() != param_count()) throw ShapeError("model: flat parameter vector has the wrong size");
    std::size_t off = 0;
    for (auto& p : params_) {
      auto d = p.mutable_data();
      std::copy(values.begin() + static_cast<std::ptrdiff_t>(off),
                values.begin() + static_cast<std::ptrdiff_t>(off + d.size()), d.begin());
      off += d.size();
    }
  }

  std::vector<float> flat_grads() const {
    std::vector<float> out;
    out.reserve(param_count());
    for (const auto& p : params_) {
      if (p.has_grad())
        out.insert(out.end(), p.grad().begin(), p.grad().end());
      else
        out.insert(out.end(), p.numel(), 0.0f);
    }
    return out;
  }

 private:
  void add(std::string id, std::string sublayer, std::string kind, ParamRole role, Shape shape, std::size_t tcn = 0,
           std::size_t block = 0) {
    // Biases take the fan-in of the weight of the same sublayer.
    std::size_t fan_in = 1;
    if (role == ParamRole::Weight)
      fan_in = shape[1] * shape[2];
    else if (!info_.empty() && info_.back().sublayer == sublayer)
      fan_in = info_.back().fan_in;
    info_.push_back({std::move(id), std::move(sublayer), std::move(kind), role, shape, tcn, block, fan_in});
    params_.push_back(Tensor::zeros(std::move(shape), true));
  }

  ArchConfig arch_;
  std::vector<ParamInfo> info_;
  std::vector<Tensor> params_;

};

// --- census ---------------------------------------------------------------

enum class Granularity { Sublayer, Block };

// One group of parameters. Quantized entries are the weight clusters that
// share a table; the rest stay in full precision.
struct CensusEntry {
  std::string id;
  std::string kind;
  std::size_t count = 0;
  bool quantized = false;
  std::vector<std::size_t> params;
  std::size_t tcn = 0;
  std::size_t block = 0;
};

struct CensusOptions {
  Granularity granularity = Granularity::Sublayer;
  // Also quantize the input projection and the mask head.
  bool quantize_io = false;
};

// Partition of every trainable parameter: weight clusters first (stable
// network order), then the full-precision remainder.
inline std::vector<CensusEntry> census(const SepModel& model, CensusOptions opt = {}) {
  std::vector<CensusEntry> quantized, rest;
  const auto& info = model.info();
  auto quantizable = [&](const ParamInfo& p) {
    return is_convblock_weight(p) || (opt.quantize_io && p.role == ParamRole::Weight && p.tcn == 0);
  };
  for (std::size_t i = 0; i < info.size(); ++i) {
    const ParamInfo& p = info[i];
    const std::size_t n = numel_of(p.shape);
    if (quantizable(p)) {
      if (opt.granularity == Granularity::Block && p.tcn > 0) {
        const std::string id = cat("tcn", p.tcn, ".block", p.block);
        if (quantized.empty() || quantized.back().id != id)
          quantized.push_back({id, "convblock", 0, true, {}, p.tcn, p.block});
        quantized.back().count += n;
        quantized.back().params.push_back(i);
      } else {
        quantized.push_back({p.sublayer, p.kind, n, true, {i}, p.tcn, p.block});
      }
    } else {
      rest.push_back({p.id, p.kind, n, false, {i}, p.tcn, p.block});
    }
  }
  quantized.insert(quantized.end(), rest.begin(), rest.end());
  return quantized;
}

inline std::vector<CensusEntry> quantized_clusters(const std::vector<CensusEntry>& entries) {
  std::vector<CensusEntry> out;
  for (const auto& e : entries)
    if (e.quantized) out.push_back(e);
  return out;
}

// --- features -------------------------------------------------------------

struct FeatureConfig {
  dsp::StftConfig stft;
  dsp::ArrayGeometry geometry;
  dsp::AngleFeatureOptions angle;
};

// Network inputs as [bins, frames] planes.
struct SceneFeatures {
  std::vector<float> lps;
  std::vector<std::vector<float>> ipds;
  std::vector<float> af;
  std::size_t bins = 0;
  std::size_t frames = 0;
};

// Everything a training or evaluation step needs from one scene.
struct Example {
  Tensor input;              // [input_channels, frames]
  dsp::Spectrogram reference;
  std::vector<float> target;
  std::vector<float> mixture;  // reference channel
  std::size_t bucket = 0;
};

inline SceneFeatures compute_features(const std::vector<dsp::Spectrogram>& specs, double theta,
                                      const FeatureConfig& cfg) {
  SceneFeatures f;
  f.bins = specs.at(0).bins;
  f.frames = specs.at(0).frames;
  f.lps = dsp::log_power(specs[0]);
  for (const auto& [m, n] : cfg.geometry.pairs) f.ipds.push_back(dsp::ipd(specs.at(m), specs.at(n)));
  f.af = dsp::angle_feature(specs, theta, cfg.geometry, cfg.stft.fft_size, cfg.angle);
  return f;
}

// Stacks the features into the network input: standardized LPS, cos(IPD) per
// pair and the angle feature divided by the pair count.
inline Tensor stack_features(const SceneFeatures& f) {
  const std::size_t plane = f.bins * f.frames;
  std::vector<float> input;
  input.reserve(plane * (2 + f.ipds.size()));
  double mu = 0.0, var = 0.0;
  for (float v : f.lps) mu += v;
  mu /= static_cast<double>(plane);
  for (float v : f.lps) var += (v - mu) * (v - mu);
  const double inv_sd = 1.0 / std::sqrt(var / static_cast<double>(plane) + 1e-8);
  for (float v : f.lps) input.push_back(static_cast<float>((v - mu) * inv_sd));
  for (const auto& plane_ipd : f.ipds)
    for (float v : plane_ipd) input.push_back(std::cos(v));
  const float inv_pairs = f.ipds.empty() ? 1.0f : 1.0f / static_cast<float>(f.ipds.size());
  for (float v : f.af) input.push_back(v * inv_pairs);
  return Tensor::from({(2 + f.ipds.size()) * f.bins, f.frames}, std::move(input));
}

inline Example make_example(const mixgen::MixtureScene& scene, const FeatureConfig& cfg) {
  const dsp::Stft stft(cfg.stft);
  std::vector<dsp::Spectrogram> specs;
  for (const auto& ch : scene.mixture) specs.push_back(stft.forward(ch));
  Example ex;
  ex.input = stack_features(compute_features(specs, scene.doa[0], cfg));
  ex.reference = std::move(specs[0]);
  ex.target = scene.target();
  ex.mixture = scene.mixture[0];
  ex.bucket = scene.bucket();
  return ex;
}

inline std::vector<Example> make_examples(const std::vector<mixgen::MixtureScene>& scenes, const FeatureConfig& cfg) {
  std::vector<Example> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(make_example(s, cfg));
  return out;
}

// --- forward --------------------------------------------------------------

struct ForwardResult {
  Tensor head;  // [2F, T] separator output before the head nonlinearity
  Tensor mask_real;
  Tensor mask_imag;
};

// Optional replacement for a convolution, keyed by the weight's parameter
// index. Returning an undefined tensor falls back to the plain convolution.
using ConvHook = std::function<Tensor(std::size_t weight_index, const Tensor& x, const Tensor& bias, ConvOptions opt)>;

// Forward with an explicit parameter list (same layout as model.params()),
// so quantized or architecture-mixed weights can be substituted.
inline ForwardResult forward_with(const SepModel& model, const std::vector<Tensor>& p, const Tensor& input,
                                  const ConvHook& hook = nullptr) {
  const ArchConfig& a = model.arch();
  if (input.rank() != 2 || input.dim(0) != a.input_channels())
    throw ShapeError(cat("sepnet: input ", shape_str(input.shape()), " but the model expects ", a.input_channels(),
                         " channels (", a.bins, " bins x ", 2 + a.pairs, " feature planes)"));
  if (p.size() != model.params().size()) throw ShapeError("sepnet: parameter list size mismatch");
  std::size_t k = 0;
  auto next = [&]() -> const Tensor& { return p[k++]; };
  auto conv = [&](const Tensor& xin, std::size_t wi, const Tensor& b, ConvOptions opt = {}) {
    if (hook) {
      Tensor y = hook(wi, xin, b, opt);
      if (y.defined()) return y;
    }
    return conv1d(xin, p[wi], b, opt);
  };
  k = 2;
  Tensor x = conv(input, 0, p[1]);
  Tensor skip;
  for (std::size_t m = 0; m < a.tcn_blocks; ++m) {
    for (std::size_t n = 0; n < a.blocks_per_tcn; ++n) {
      const std::size_t base = k;
      k += 12;
      const Tensor& b1 = p[base + 1];
      const Tensor& s1 = p[base + 2];
      const Tensor& g1 = p[base + 3];
      const Tensor& n1 = p[base + 4];
      const Tensor& bd = p[base + 6];
      const Tensor& s2 = p[base + 7];
      const Tensor& g2 = p[base + 8];
      const Tensor& n2 = p[base + 9];
      const Tensor& b2 = p[base + 11];
      Tensor h = conv(x, base, b1);
      h = global_layer_norm(prelu(h, s1), g1, n1);
      h = conv(h, base + 5, bd, {.dilation = std::size_t{1} << n, .groups = a.hidden});
      h = global_layer_norm(prelu(h, s2), g2, n2);
      Tensor out = conv(h, base + 10, b2);
      x = add(x, out);
      skip = skip.defined() ? add(skip, out) : out;
    }
  }
  const Tensor& s_head = next();
  const std::size_t w_head = k++;
  const Tensor& b_head = next();
  ForwardResult r;
  r.head = conv(prelu(skip, s_head), w_head, b_head);
  Tensor mask = a.head == MaskHead::Tanh ? tanh(r.head) : r.head;
  r.mask_real = slice_channels(mask, 0, a.bins);
  r.mask_imag = slice_channels(mask, a.bins, a.bins);
  return r;
}

inline ForwardResult forward(const SepModel& model, const Tensor& input) {
  return forward_with(model, model.params(), input);
}

inline dsp::ComplexMask forward(const SepModel& model, const SceneFeatures& features) {
  if (features.ipds.size() != model.arch().pairs)
    throw ShapeError(cat("sepnet: ", features.ipds.size(), " IPD planes for a model built for ", model.arch().pairs,
                         " pairs"));
  if (features.bins != model.arch().bins)
    throw ShapeError(cat("sepnet: ", features.bins, " bins for a model built for ", model.arch().bins));
  const auto r = forward(model, stack_features(features));
  dsp::ComplexMask mask;
  mask.bins = features.bins;
  mask.frames = features.frames;
  mask.real = r.mask_real.values();
  mask.imag = r.mask_imag.values();
  return mask;
}

// --- loss -----------------------------------------------------------------

// Complex product of the mask with a fixed reference spectrum, planes [F,T].
inline std::pair<Tensor, Tensor> apply_mask(const Tensor& mr, const Tensor& mi, const dsp::Spectrogram& ref) {
  const Tensor yr = Tensor::from({ref.bins, ref.frames}, ref.real);
  const Tensor yi = Tensor::from({ref.bins, ref.frames}, ref.imag);
  return {sub(mul(mr, yr), mul(mi, yi)), add(mul(mr, yi), mul(mi, yr))};
}

// Differentiable inverse STFT of [F,T] planes; output shape [samples].
inline Tensor istft(const Tensor& real, const Tensor& imag, const dsp::Spectrogram& layout, const dsp::Stft& stft) {
  dsp::Spectrogram spec = layout;
  spec.real = real.values();
  spec.imag = imag.values();
  auto wave = stft.inverse(spec);
  const std::size_t n = wave.size();
  auto shape_only = std::make_shared<dsp::Spectrogram>(layout);
  shape_only->real.clear();
  shape_only->imag.clear();
  return make_op("istft", {n}, std::move(wave), {real, imag},
                 [shape_only, stft](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   std::vector<float> gr(shape_only->bins * shape_only->frames, 0.0f), gi(gr.size(), 0.0f);
                   stft.inverse_backward(*shape_only, g, gr, gi);
                   if (grads[0])
                     for (std::size_t i = 0; i < gr.size(); ++i) (*grads[0])[i] += gr[i];
                   if (grads[1])
                     for (std::size_t i = 0; i < gi.size(); ++i) (*grads[1])[i] += gi[i];
                 });
}

// Scalar -SI-SNR(estimate, target) in dB.
inline Tensor neg_si_snr(const Tensor& estimate, std::span<const float> target, dsp::SiSnr metric = {}) {
  auto grad = std::make_shared<std::vector<float>>(estimate.numel());
  const double value = metric.evaluate(estimate.data(), target, *grad);
  return make_op("neg_si_snr", {}, {static_cast<float>(-value)}, {estimate},
                 [grad](std::span<const float> g, std::vector<std::vector<float>*>& grads) {
                   for (std::size_t i = 0; i < grad->size(); ++i) (*grads[0])[i] -= g[0] * (*grad)[i];
                 });
}

struct SceneOutput {
  Tensor loss;  // -SI-SNR in dB
  Tensor wave;
  ForwardResult net;
};

inline SceneOutput scene_loss_with(const SepModel& model, const std::vector<Tensor>& params, const Example& ex,
                                   const dsp::Stft& stft, const ConvHook& hook = nullptr) {
  SceneOutput out;
  out.net = forward_with(model, params, ex.input, hook);
  auto [xr, xi] = apply_mask(out.net.mask_real, out.net.mask_imag, ex.reference);
  out.wave = istft(xr, xi, ex.reference, stft);
  out.loss = neg_si_snr(out.wave, ex.target);
  return out;
}

inline SceneOutput scene_loss(const SepModel& model, const Example& ex, const dsp::Stft& stft) {
  return scene_loss_with(model, model.params(), ex, stft);
}


// --- optimizer --------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;
};

// Adam over a fixed list of tensors with global gradient-norm clipping.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0f);
      v_.emplace_back(p.numel(), 0.0f);
    }
  }

  // Returns the pre-clip global gradient norm.
  double step() {
    double sq = 0.0;
    for (const auto& p : params_)
      if (p.has_grad())
        for (float g : p.grad()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      auto values = p.mutable_data();
      const auto grad = p.grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grad[i] * clip;
        m_[k][i] = static_cast<float>(cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g);
        v_[k][i] = static_cast<float>(cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g);
        const double mhat = m_[k][i] / bc1, vhat = v_[k][i] / bc2;
        values[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
    return norm;
  }

  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  std::size_t t_ = 0;
};

// --- training ---------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 4;
  AdamConfig adam;
  // Multiply the learning rate by `lr_decay` every `decay_every` epochs (0 = never).
  std::size_t decay_every = 0;
  double lr_decay = 0.5;
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean -SI-SNR per epoch
  std::vector<double> step_loss;   // mean over each batch
  std::size_t steps = 0;
};

// Called after every epoch with the model and the progress so far.
using EpochHook = std::function<void(std::size_t epoch, const SepModel&, const TrainResult&)>;

inline TrainResult train(SepModel& model, const std::vector<Example>& data, const TrainConfig& cfg,
                         const dsp::Stft& stft, const EpochHook& on_epoch = nullptr) {
  if (data.empty()) throw ConfigError("train: empty dataset");
  if (cfg.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  Adam opt(model.params(), cfg.adam);
  Rng rng(Rng::derive(cfg.seed, 0x7EA1));
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double lr = cfg.adam.lr;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.decay_every > 0 && epoch > 0 && epoch % cfg.decay_every == 0) {
      lr *= cfg.lr_decay;
      opt.set_lr(lr);
    }
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const float weight = 1.0f / static_cast<float>(end - start);
      model.zero_grad();
      double batch_sum = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        auto out = scene_loss(model, data[order[b]], stft);
        const float value = out.loss.item();
        if (!std::isfinite(value))
          throw NumericalError(cat("train: non-finite loss in batch ", result.steps, " (epoch ", epoch, ")"));
        batch_sum += value;
        scale(out.loss, weight).backward();
      }
      if (!std::isfinite(opt.step()))
        throw NumericalError(cat("train: non-finite gradient in batch ", result.steps, " (epoch ", epoch, ")"));
      result.step_loss.push_back(batch_sum / static_cast<double>(end - start));
      epoch_sum += batch_sum;
      ++result.steps;
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(data.size()));
    if (cfg.verbose)
      std::cerr << "epoch " << epoch + 1 << "/" << cfg.epochs << " loss " << result.epoch_loss.back() << "\n";
    if (on_epoch) on_epoch(epoch, model, result);
  }
  return result;
}

// --- evaluation -------------------------------------------------------------

struct SceneScore {
  double si_snr = 0.0;
  double mixture_si_snr = 0.0;
  std::size_t bucket = 0;
};

inline SceneScore score(const SepModel& model, const Example& ex, const dsp::Stft& stft) {
  std::vector<Tensor> frozen;
  for (const auto& p : model.params()) frozen.push_back(p.detach(false));
  const auto out = scene_loss_with(model, frozen, ex, stft);
  return {-static_cast<double>(out.loss.item()), dsp::si_snr(ex.mixture, ex.target), ex.bucket};
}

inline double mean_si_snr(const SepModel& model, const std::vector<Example>& data, const dsp::Stft& stft) {
  double acc = 0.0;
  for (const auto& ex : data) acc += score(model, ex, stft).si_snr;
  return acc / static_cast<double>(data.size());
}

// --- checkpoint -------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  json manifest;
  std::string blob;
};

inline Checkpoint encode_checkpoint(const SepModel& model) {
  Checkpoint ck;
  json clusters = json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& p = model.params()[i];
    const std::string bytes = floats_to_bytes(p.values());
    clusters.push_back({{"id", model.info()[i].id},
                        {"shape", p.shape()},
                        {"offset", offset},
                        {"byte_length", bytes.size()}});
    ck.blob += bytes;
    offset += bytes.size();
  }
  ck.manifest = {{"format", "quantsep-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"architecture", model.arch().to_json()},
                 {"parameter_count", model.param_count()},
                 {"clusters", clusters},
                 {"blob_sha256", sha256_hex(ck.blob)}};
  return ck;
}

inline SepModel decode_checkpoint(const json& manifest, std::string_view blob) {
  if (manifest.value("format", "") != "quantsep-checkpoint") throw ConfigError("checkpoint: unrecognized format");
  if (manifest.at("version").get<int>() != kCheckpointVersion)
    throw ConfigError(cat("checkpoint: unsupported version ", manifest.at("version").get<int>()));
  if (manifest.at("blob_sha256").get<std::string>() != sha256_hex(blob))
    throw ConfigError("checkpoint: blob SHA-256 does not match the manifest");
  SepModel model(ArchConfig::from_json(manifest.at("architecture")));
  const auto& clusters = manifest.at("clusters");
  if (clusters.size() != model.params().size())
    throw ConfigError(cat("checkpoint: ", clusters.size(), " tensors, model has ", model.params().size()));
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const auto& c = clusters[i];
    const auto id = c.at("id").get<std::string>();
    if (id != model.info()[i].id || c.at("shape").get<Shape>() != model.params()[i].shape())
      throw ConfigError(cat("checkpoint: tensor '", id, "' does not match the architecture"));
    const std::size_t off = c.at("offset").get<std::size_t>(), len = c.at("byte_length").get<std::size_t>();
    auto values = model.params()[i].mutable_data();
    if (len != values.size() * 4 || off + len > blob.size()) throw ConfigError(cat("checkpoint: bad extent for '", id, "'"));
    for (std::size_t k = 0; k < values.size(); ++k) values[k] = get_le<float>(blob, off + 4 * k);
  }
  return model;
}

// Writes <stem>.json and <stem>.bin; returns the blob hash.
inline std::string save_checkpoint(const SepModel& model, const std::string& stem) {
  auto ck = encode_checkpoint(model);
  ck.manifest["blob"] = std::filesystem::path(stem + ".bin").filename().string();
  write_file(stem + ".bin", ck.blob);
  write_json(stem + ".json", ck.manifest);
  return ck.manifest["blob_sha256"].get<std::string>();
}

inline SepModel load_checkpoint(const std::string& stem) {
  const json manifest = read_json(stem + ".json");
  return decode_checkpoint(manifest, read_file(stem + ".bin"));
}

}  // namespace quantsep::sepnet
