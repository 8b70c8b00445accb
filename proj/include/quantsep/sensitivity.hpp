// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Per-cluster quantization sensitivity tables Omega[cluster][bits]:
//   Hes: Tr(H_l) * ||f_n(W_l) - W_l||^2 with the trace from Hutchinson probes
//        over finite-difference Hessian-vector products;
//   KL:  sum over probe frames of KL(P_full || P_quant), P the per-frame
//        normalized sigmoid of the separator output, one cluster quantized
//        at a time.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "quantsep/common.hpp"
#include "quantsep/parallel.hpp"
#include "quantsep/quant.hpp"
#include "quantsep/sepnet.hpp"

namespace quantsep::sensitivity {

// Loss value at `params`, gradient written to `grad`.
using GradFn = std::function<double(std::span<const double> params, std::span<double> grad)>;
using MatVec = std::function<std::vector<double>(const std::vector<double>&)>;

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// (grad L(theta + eps z) - grad L(theta - eps z)) / (2 eps) with
// eps = 1e-3 ||theta|| / ||z||, floored at 1e-6.
inline std::vector<double> hvp(const GradFn& grad_fn, std::span<const double> theta, std::span<const double> z) {
  if (z.size() != theta.size())
    throw ShapeError(cat("hvp: direction has ", z.size(), " entries, parameters ", theta.size()));
  const double zn = norm2(z);
  std::vector<double> out(theta.size(), 0.0);
  if (zn == 0.0) return out;
  const double eps = std::max(1e-3 * norm2(theta) / zn, 1e-6);
  std::vector<double> point(theta.size()), g_plus(theta.size()), g_minus(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) point[i] = theta[i] + eps * z[i];
  grad_fn(point, g_plus);
  for (std::size_t i = 0; i < theta.size(); ++i) point[i] = theta[i] - eps * z[i];
  grad_fn(point, g_minus);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    out[i] = (g_plus[i] - g_minus[i]) / (2.0 * eps);
    if (!std::isfinite(out[i]))
      throw NumericalError(cat("hvp: non-finite gradient at coordinate ", i, " (eps=", eps, ", |z|=", zn, ")"));
  }
  return out;
}

enum class Probe { Rademacher, Gaussian };

// Mean of z^T H z over the given probe vectors.
inline double trace_over_probes(const MatVec& hvp_op, const std::vector<std::vector<double>>& probes) {
  if (probes.empty()) throw ConfigError("hutchinson: at least one probe sample is required");
  double acc = 0.0;
  for (const auto& z : probes) {
    const auto hz = hvp_op(z);
    double q = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) q += z[i] * hz[i];
    acc += q;
  }
  return acc / static_cast<double>(probes.size());
}

// (1/m) sum_i z_i^T H z_i over m random probe vectors.
inline double hutchinson_trace(const MatVec& hvp_op, std::size_t dim, std::size_t m, std::uint64_t seed,
                               Probe probe = Probe::Rademacher) {
  if (m == 0) throw ConfigError("hutchinson: at least one probe sample is required");
  Rng rng(seed);
  double acc = 0.0;
  std::vector<std::vector<double>> one(1, std::vector<double>(dim));
  for (std::size_t s = 0; s < m; ++s) {
    for (auto& v : one[0]) v = probe == Probe::Rademacher ? rng.rademacher() : rng.normal();
    acc += trace_over_probes(hvp_op, one);
  }
  return acc / static_cast<double>(m);
}

// --- profiles -------------------------------------------------------------

struct SensitivityProfile {
  std::string metric;  // "Hes" or "KL"
  std::vector<std::string> clusters;
  std::vector<std::size_t> counts;
  std::vector<int> candidates;
  std::vector<std::vector<double>> omega;  // [cluster][candidate index]
  std::vector<double> traces;              // Hes only
  std::size_t samples = 0;                 // Hutchinson m (Hes)
  std::uint64_t seed = 0;
  std::string checkpoint_hash;
  std::string probe_fingerprint;
  std::vector<std::string> warnings;

  double at(std::size_t cluster, int bits) const {
    for (std::size_t k = 0; k < candidates.size(); ++k)
      if (candidates[k] == bits) return omega.at(cluster).at(k);
    throw ConfigError(cat("profile: no entry for ", bits, " bits"));
  }

  json to_json() const {
    json table = json::array();
    for (std::size_t l = 0; l < clusters.size(); ++l) {
      json row = {{"cluster", clusters[l]}, {"count", counts[l]}};
      json om = json::object();
      for (std::size_t k = 0; k < candidates.size(); ++k) om[std::to_string(candidates[k])] = omega[l][k];
      row["omega"] = om;
      if (!traces.empty()) row["trace"] = traces[l];
      table.push_back(row);
    }
    return {{"metric", metric},
            {"checkpoint_hash", checkpoint_hash},
            {"probe_fingerprint", probe_fingerprint},
            {"seed", seed},
            {"m", samples},
            {"candidates", candidates},
            {"table", table},
            {"warnings", warnings}};
  }

  static SensitivityProfile from_json(const json& j) {
    SensitivityProfile p;
    p.metric = j.at("metric").get<std::string>();
    if (p.metric != "Hes" && p.metric != "KL") throw ConfigError(cat("profile: unknown metric '", p.metric, "'"));
    p.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
    p.probe_fingerprint = j.at("probe_fingerprint").get<std::string>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.samples = j.at("m").get<std::size_t>();
    p.candidates = j.at("candidates").get<std::vector<int>>();
    for (const auto& row : j.at("table")) {
      p.clusters.push_back(row.at("cluster").get<std::string>());
      p.counts.push_back(row.at("count").get<std::size_t>());
      std::vector<double> om;
      for (int n : p.candidates) {
        const double v = row.at("omega").at(std::to_string(n)).get<double>();
        if (!(v >= 0.0)) throw ConfigError(cat("profile: negative or invalid entry for '", p.clusters.back(), "'"));
        om.push_back(v);
      }
      p.omega.push_back(om);
      if (row.contains("trace")) p.traces.push_back(row.at("trace").get<double>());
    }
    p.warnings = j.value("warnings", std::vector<std::string>{});
    return p;
  }
};

// Hash of the probe inputs and targets.
inline std::string probe_fingerprint(const std::vector<sepnet::Example>& probe) {
  std::string bytes;
  for (const auto& ex : probe) {
    bytes += floats_to_bytes(ex.input.values());
    bytes += floats_to_bytes(ex.target);
  }
  return sha256_hex(bytes);
}

enum class HessianLoss { SiSnr, SpectralMse };

struct HessianConfig {
  std::size_t samples = 8;  // Hutchinson m
  std::uint64_t seed = 1;
  Probe probe = Probe::Rademacher;
  HessianLoss loss = HessianLoss::SiSnr;
  double loss_scale = 1.0;
  std::size_t jobs = 1;
  bool verbose = false;
};

// Mean probe loss; gradients accumulate into the model's parameters.
inline double probe_loss_backward(const sepnet::SepModel& model, const std::vector<sepnet::Example>& probe,
                                  const dsp::Stft& stft, HessianLoss kind, double loss_scale) {
  double total = 0.0;
  const float weight = static_cast<float>(loss_scale / static_cast<double>(probe.size()));
  for (const auto& ex : probe) {
    if (kind == HessianLoss::SiSnr) {
      auto out = sepnet::scene_loss(model, ex, stft);
      total += out.loss.item();
      scale(out.loss, weight).backward();
    } else {
      const auto net = sepnet::forward(model, ex.input);
      auto [xr, xi] = sepnet::apply_mask(net.mask_real, net.mask_imag, ex.reference);
      const auto clean = stft.forward(ex.target);
      const Tensor sr = Tensor::from({clean.bins, clean.frames}, clean.real);
      const Tensor si = Tensor::from({clean.bins, clean.frames}, clean.imag);
      const Tensor dr = sub(xr, sr), di = sub(xi, si);
      Tensor loss = mean(add(mul(dr, dr), mul(di, di)));
      total += loss.item();
      scale(loss, weight).backward();
    }
  }
  return total * loss_scale / static_cast<double>(probe.size());
}

// Gradient of the probe loss with respect to one cluster's weights, the rest
// of the network held fixed. `work` is a private model copy that gets
// overwritten.
inline GradFn cluster_grad_fn(sepnet::SepModel& work, const sepnet::CensusEntry& cluster,
                              const std::vector<sepnet::Example>& probe, const dsp::Stft& stft, const HessianConfig& cfg) {
  return [&work, cluster, &probe, &stft, cfg](std::span<const double> theta, std::span<double> grad) {
    std::vector<float> values(theta.begin(), theta.end());
    quant::scatter(work, cluster, values);
    work.zero_grad();
    const double loss = probe_loss_backward(work, probe, stft, cfg.loss, cfg.loss_scale);
    std::size_t off = 0;
    for (std::size_t idx : cluster.params) {
      const auto& p = work.params()[idx];
      if (p.has_grad())
        for (float g : p.grad()) grad[off++] = g;
      else
        for (std::size_t k = 0; k < p.numel(); ++k) grad[off++] = 0.0;
    }
    return loss;
  };
}

inline double squared_quant_error(std::span<const float> w, int bits, quant::ScaleMethod method) {
  if (bits >= 32) return 0.0;
  const double alpha = static_cast<float>(quant::fit_scale(w, bits, method));
  return quant::reconstruction_error(w, bits, alpha);
}

inline SensitivityProfile hessian_sensitivity(const sepnet::SepModel& model,
                                              const std::vector<sepnet::CensusEntry>& census,
                                              const std::vector<int>& candidates,
                                              const std::vector<sepnet::Example>& probe, const dsp::Stft& stft,
                                              const HessianConfig& cfg,
                                              quant::ScaleMethod scale_method = quant::ScaleMethod::Mse) {
  if (probe.empty()) throw ConfigError("hessian sensitivity: empty probe set");
  const auto clusters = sepnet::quantized_clusters(census);
  SensitivityProfile prof;
  prof.metric = "Hes";
  prof.candidates = candidates;
  prof.samples = cfg.samples;
  prof.seed = cfg.seed;
  prof.probe_fingerprint = probe_fingerprint(probe);
  prof.traces.assign(clusters.size(), 0.0);
  prof.omega.assign(clusters.size(), std::vector<double>(candidates.size(), 0.0));
  std::vector<sepnet::SepModel> workers;
  for (std::size_t w = 0; w < std::max<std::size_t>(1, std::min(cfg.jobs, clusters.size())); ++w)
    workers.push_back(model.clone());
  parallel_for(clusters.size(), cfg.jobs, [&](std::size_t l, std::size_t w) {
    sepnet::SepModel& work = workers[w];
    const auto& cluster = clusters[l];
    const auto base = quant::gather(model, cluster);
    const std::vector<double> theta(base.begin(), base.end());
    const GradFn grad_fn = cluster_grad_fn(work, cluster, probe, stft, cfg);
    const MatVec op = [&](const std::vector<double>& z) { return hvp(grad_fn, theta, z); };
    prof.traces[l] = hutchinson_trace(op, theta.size(), cfg.samples, Rng::derive(cfg.seed, l), cfg.probe);
    quant::scatter(work, cluster, base);
    if (cfg.verbose) std::cerr << "hessian trace " << cluster.id << " = " << prof.traces[l] << "\n";
  });
  for (std::size_t l = 0; l < clusters.size(); ++l) {
    prof.clusters.push_back(clusters[l].id);
    prof.counts.push_back(clusters[l].count);
    double trace = prof.traces[l];
    if (trace < 0.0) {
      prof.warnings.push_back(cat("negative trace estimate ", trace, " for '", clusters[l].id, "' clamped to 0"));
      trace = 0.0;
    }
    const auto w = quant::gather(model, clusters[l]);
    for (std::size_t k = 0; k < candidates.size(); ++k)
      prof.omega[l][k] = trace * squared_quant_error(w, candidates[k], scale_method);
  }
  return prof;
}

// Per-frame categorical distributions from the separator output [D, T]:
// sigmoid, then normalize each frame over its D outputs.
inline std::vector<std::vector<double>> frame_distributions(std::span<const float> head, std::size_t dims,
                                                            std::size_t frames, bool smooth_zeros) {
  std::vector<std::vector<double>> p(frames, std::vector<double>(dims));
  for (std::size_t t = 0; t < frames; ++t) {
    double total = 0.0;
    bool zero = false;
    for (std::size_t d = 0; d < dims; ++d) {
      const double v = 1.0 / (1.0 + std::exp(-static_cast<double>(head[d * frames + t])));
      p[t][d] = v;
      total += v;
      zero = zero || v == 0.0;
    }
    if (smooth_zeros && zero) {
      total = 0.0;
      for (auto& v : p[t]) total += (v += 1e-10);
    }
    for (auto& v : p[t]) v /= total;
  }
  return p;
}

// sum_t KL(P_t || Q_t).
inline double kl_over_frames(const std::vector<std::vector<double>>& p, const std::vector<std::vector<double>>& q) {
  if (p.size() != q.size()) throw ShapeError("kl: frame count mismatch");
  double total = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (p[t].size() != q[t].size()) throw ShapeError("kl: dimension mismatch");
    for (std::size_t d = 0; d < p[t].size(); ++d)
      if (p[t][d] > 0.0) total += p[t][d] * std::log(p[t][d] / q[t][d]);
  }
  return total;
}

struct KlConfig {
  std::size_t jobs = 1;
  bool verbose = false;
};

inline SensitivityProfile kl_sensitivity(const sepnet::SepModel& model, const std::vector<sepnet::CensusEntry>& census,
                                         const std::vector<int>& candidates,
                                         const std::vector<sepnet::Example>& probe, const KlConfig& cfg = {},
                                         quant::ScaleMethod scale_method = quant::ScaleMethod::Mse) {
  if (probe.empty()) throw ConfigError("kl sensitivity: empty probe set");
  const auto clusters = sepnet::quantized_clusters(census);
  const std::size_t dims = 2 * model.arch().bins;
  auto distributions = [&](const sepnet::SepModel& m, const sepnet::Example& ex, bool smooth) {
    const std::vector<Tensor> frozen = [&] {
      std::vector<Tensor> f;
      for (const auto& p : m.params()) f.push_back(p.detach(false));
      return f;
    }();
    const auto out = sepnet::forward_with(m, frozen, ex.input);
    return frame_distributions(out.head.data(), dims, out.head.dim(1), smooth);
  };
  std::vector<std::vector<std::vector<double>>> reference;
  for (const auto& ex : probe) reference.push_back(distributions(model, ex, false));

  SensitivityProfile prof;
  prof.metric = "KL";
  prof.candidates = candidates;
  prof.probe_fingerprint = probe_fingerprint(probe);
  prof.omega.assign(clusters.size(), std::vector<double>(candidates.size(), 0.0));
  const std::size_t tasks = clusters.size() * candidates.size();
  parallel_for(tasks, cfg.jobs, [&](std::size_t task, std::size_t) {
    const std::size_t l = task / candidates.size(), k = task % candidates.size();
    const int bits = candidates[k];
    if (bits >= 32) return;
    const auto w = quant::gather(model, clusters[l]);
    const double alpha = static_cast<float>(quant::fit_scale(w, bits, scale_method));
    sepnet::SepModel q = model.clone();
    quant::scatter(q, clusters[l], quant::dequantize_codes(quant::quantize_cluster(w, bits, alpha), alpha));
    double total = 0.0;
    for (std::size_t s = 0; s < probe.size(); ++s) total += kl_over_frames(reference[s], distributions(q, probe[s], true));
    prof.omega[l][k] = std::max(total, 0.0);
  });
  for (const auto& c : clusters) {
    prof.clusters.push_back(c.id);
    prof.counts.push_back(c.count);
  }
  if (cfg.verbose) std::cerr << "kl sensitivity: " << tasks << " evaluations\n";
  return prof;
}

}  // namespace quantsep::sensitivity
