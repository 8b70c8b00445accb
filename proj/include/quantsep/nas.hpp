// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Mixed-precision search over a super-network. Each quantized cluster holds
// one frozen weight branch per candidate width; softmax(lambda_l) mixes them
// and only lambda is trained, against -SI-SNR + beta * sum a_n sqrt(n).

#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "quantsep/alloc.hpp"
#include "quantsep/common.hpp"
#include "quantsep/quant.hpp"
#include "quantsep/sepnet.hpp"

namespace quantsep::nas {

enum class MixSpace { Weight, Output };

class SuperNet {
 public:
  SuperNet(sepnet::SepModel frame, std::vector<sepnet::CensusEntry> census, std::vector<int> candidates,
           std::vector<std::vector<std::vector<Tensor>>> branches, MixSpace space)
      : frame_(std::move(frame)),
        census_(std::move(census)),
        clusters_(sepnet::quantized_clusters(census_)),
        candidates_(std::move(candidates)),
        branches_(std::move(branches)),
        space_(space) {
    for (const auto& p : frame_.params()) frozen_.push_back(p.detach(false));
    owner_.assign(frozen_.size(), {npos, npos});
    for (std::size_t l = 0; l < clusters_.size(); ++l) {
      logits_.push_back(Tensor::zeros({candidates_.size()}, true));
      for (std::size_t j = 0; j < clusters_[l].params.size(); ++j) owner_[clusters_[l].params[j]] = {l, j};
    }
    std::vector<float> root;
    for (int n : candidates_) root.push_back(static_cast<float>(std::sqrt(static_cast<double>(n))));
    sqrt_bits_ = Tensor::from({candidates_.size()}, root);
  }

  const sepnet::SepModel& frame() const { return frame_; }
  const std::vector<sepnet::CensusEntry>& census() const { return census_; }
  const std::vector<sepnet::CensusEntry>& clusters() const { return clusters_; }
  const std::vector<int>& candidates() const { return candidates_; }
  std::vector<Tensor>& logits() { return logits_; }
  const std::vector<Tensor>& logits() const { return logits_; }
  MixSpace space() const { return space_; }

  void reset_logits() {
    for (auto& t : logits_) {
      auto d = t.mutable_data();
      std::fill(d.begin(), d.end(), 0.0f);
      t.zero_grad();
    }
  }

  std::vector<Tensor> mixing_weights() const {
    std::vector<Tensor> a;
    for (const auto& t : logits_) a.push_back(softmax(t));
    return a;
  }

  // beta * sum_l sum_n a_n^l sqrt(n).
  Tensor penalty(const std::vector<Tensor>& a, double beta) const {
    Tensor total;
    for (const auto& al : a) {
      Tensor term = sum(mul(al, sqrt_bits_));
      total = total.defined() ? add(total, term) : term;
    }
    return scale(total, static_cast<float>(beta));
  }

  // Task loss for one scene under mixing weights `a`.
  sepnet::SceneOutput scene_loss(const sepnet::Example& ex, const dsp::Stft& stft, const std::vector<Tensor>& a) const {
    std::vector<Tensor> params = frozen_;
    sepnet::ConvHook hook = nullptr;
    if (space_ == MixSpace::Weight) {
      for (std::size_t l = 0; l < clusters_.size(); ++l)
        for (std::size_t j = 0; j < clusters_[l].params.size(); ++j) {
          std::vector<Tensor> options;
          for (std::size_t k = 0; k < candidates_.size(); ++k) options.push_back(branches_[l][k][j]);
          params[clusters_[l].params[j]] = mix(options, a[l]);
        }
    } else {
      hook = [this, &a](std::size_t wi, const Tensor& x, const Tensor& bias, ConvOptions opt) -> Tensor {
        const auto [l, j] = owner_[wi];
        if (l == npos) return {};
        std::vector<Tensor> outs;
        for (std::size_t k = 0; k < candidates_.size(); ++k) outs.push_back(conv1d(x, branches_[l][k][j], bias, opt));
        return mix(outs, a[l]);
      };
    }
    return sepnet::scene_loss_with(frame_, params, ex, stft, hook);
  }

  // argmax_n lambda_n^l per cluster; ties go to the narrower width.
  quant::BitAssignment selection() const {
    quant::BitAssignment bits;
    for (std::size_t l = 0; l < clusters_.size(); ++l) {
      const auto v = logits_[l].data();
      std::size_t best = 0;
      for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] > v[best]) best = k;
      bits[clusters_[l].id] = candidates_[best];
    }
    return bits;
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  sepnet::SepModel frame_;
  std::vector<sepnet::CensusEntry> census_;
  std::vector<sepnet::CensusEntry> clusters_;
  std::vector<int> candidates_;
  std::vector<std::vector<std::vector<Tensor>>> branches_;  // [cluster][candidate][param]
  MixSpace space_;
  std::vector<Tensor> frozen_;
  std::vector<Tensor> logits_;
  std::vector<std::pair<std::size_t, std::size_t>> owner_;
  Tensor sqrt_bits_;
};

// `uniform` maps each candidate width to a model quantized at that width.
// Unquantized parameters are taken from the widest one.
inline SuperNet build_supernet(const std::map<int, sepnet::SepModel>& uniform,
                               const std::vector<sepnet::CensusEntry>& census, MixSpace space = MixSpace::Weight) {
  if (uniform.empty()) throw ConfigError("supernet: no uniform-precision models");
  const auto clusters = sepnet::quantized_clusters(census);
  const auto& widest = uniform.rbegin()->second;
  const std::string arch = widest.arch().to_json().dump();
  std::vector<int> candidates;
  for (const auto& [n, m] : uniform) {
    quant::check_bits(n);
    candidates.push_back(n);
    if (m.arch().to_json().dump() != arch)
      throw ConfigError(cat("supernet: the ", n, "-bit model has a different architecture"));
    if (m.params().size() != widest.params().size())
      throw ConfigError(cat("supernet: the ", n, "-bit model has a different parameter layout"));
    for (const auto& e : census) {
      std::size_t count = 0;
      for (std::size_t idx : e.params) {
        if (idx >= m.params().size()) throw ConfigError(cat("supernet: census entry '", e.id, "' out of range"));
        count += m.params()[idx].numel();
      }
      if (count != e.count)
        throw ConfigError(cat("supernet: census entry '", e.id, "' has ", e.count, " parameters but the ", n,
                              "-bit model has ", count));
    }
  }
  std::vector<std::vector<std::vector<Tensor>>> branches(clusters.size());
  for (std::size_t l = 0; l < clusters.size(); ++l)
    for (const auto& [n, m] : uniform) {
      std::vector<Tensor> per_param;
      for (std::size_t idx : clusters[l].params) per_param.push_back(m.params()[idx].detach(false));
      branches[l].push_back(std::move(per_param));
    }
  return SuperNet(widest.clone(), census, candidates, std::move(branches), space);
}

struct NasConfig {
  double beta = 0.5;
  double lr = 1e-2;
  std::size_t steps = 2000;
  std::size_t batch_size = 1;
  std::uint64_t seed = 1;
  double target_average_bits = 0.0;  // <= 0 disables the restart rule
  std::size_t max_rounds = 5;
  bool verbose = false;
};

struct SearchResult {
  alloc::PrecisionAssignment assignment;
  std::vector<double> loss;  // last round, per step
};

inline SearchResult search(SuperNet& net, const std::vector<sepnet::Example>& data, const dsp::Stft& stft,
                           const NasConfig& cfg) {
  if (!(cfg.beta >= 0.0)) throw ConfigError("nas: beta must be nonnegative");
  if (data.empty()) throw ConfigError("nas: empty search set");
  if (cfg.max_rounds == 0) throw ConfigError("nas: max_rounds must be at least 1");
  SearchResult result;
  json rounds = json::array();
  double beta = cfg.beta;
  quant::BitAssignment bits;
  double final_objective = 0.0;
  for (std::size_t round = 0; round < cfg.max_rounds; ++round) {
    net.reset_logits();
    sepnet::Adam opt(net.logits(), {.lr = cfg.lr, .clip_norm = 0.0});
    Rng rng(Rng::derive(cfg.seed, round));
    result.loss.clear();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
      for (auto& t : net.logits()) t.zero_grad();
      double task = 0.0;
      for (std::size_t b = 0; b < cfg.batch_size; ++b) {
        const auto& ex = data[rng.below(data.size())];
        // backward() frees the graph, so the mixing weights are rebuilt per scene.
        auto out = net.scene_loss(ex, stft, net.mixing_weights());
        task += out.loss.item();
        scale(out.loss, static_cast<float>(1.0 / cfg.batch_size)).backward();
      }
      Tensor pen = net.penalty(net.mixing_weights(), beta);
      const double value = task / static_cast<double>(cfg.batch_size) + pen.item();
      pen.backward();
      if (!std::isfinite(value)) throw NumericalError(cat("nas: non-finite loss at round ", round, " step ", step));
      if (!std::isfinite(opt.step())) throw NumericalError(cat("nas: non-finite gradient at round ", round, " step ", step));
      result.loss.push_back(value);
      final_objective = value;
      if (cfg.verbose && (step % 100 == 0 || step + 1 == cfg.steps))
        std::cerr << "nas round " << round << " step " << step << " loss " << value << "\n";
    }
    bits = net.selection();
    const double avg = alloc::average_bits(net.census(), bits);
    json sel = json::object();
    for (const auto& c : net.clusters()) sel[c.id] = bits.at(c.id);
    rounds.push_back({{"round", round}, {"beta", beta}, {"average_bits", avg}, {"bits", sel}});
    if (cfg.target_average_bits <= 0.0 || avg <= cfg.target_average_bits + 1e-12) break;
    beta *= 2.0;
  }
  result.assignment = alloc::finish("NAS", net.census(), bits, final_objective);
  result.assignment.rounds = rounds;
  if (cfg.target_average_bits > 0.0) result.assignment.budget = {{"average_bits", cfg.target_average_bits}};
  return result;
}

}  // namespace quantsep::nas
