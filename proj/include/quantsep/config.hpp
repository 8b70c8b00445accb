// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Run configuration. Every key is optional; omitted keys take the defaults
// below, unknown keys are rejected. `to_json()` emits the fully resolved
// configuration and is what stage cache keys are computed from.

#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "quantsep/alloc.hpp"
#include "quantsep/common.hpp"
#include "quantsep/dsp.hpp"
#include "quantsep/mixgen.hpp"
#include "quantsep/nas.hpp"
#include "quantsep/quant.hpp"
#include "quantsep/sensitivity.hpp"
#include "quantsep/sepnet.hpp"

namespace quantsep::config {

inline constexpr int kSchemaVersion = 1;

// Reads one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(cat("config: '", path_, "' must be an object"));
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(cat("config: '", where(key), "' has the wrong type (", j_.at(key).dump(), ")"));
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(cat("config: unknown key '", where(key), "'"));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
E pick(const std::string& where, const std::string& value, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, e] : options) {
    if (value == name) return e;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(cat("config: '", where, "' must be one of {", names, "}, got '", value, "'"));
}

struct DataConfig {
  std::size_t scenes = 800;
  std::uint64_t seed = 1234;
  mixgen::SceneConfig scene;
  mixgen::SplitRatios split;
  std::string write_wav = "test";  // none | test | all
};

struct TrainSection {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double clip_norm = 5.0;
  std::size_t decay_every = 10;
  double lr_decay = 0.5;
};

struct QuantSection {
  std::vector<int> candidates{2, 4, 8, 16};
  sepnet::Granularity granularity = sepnet::Granularity::Sublayer;
  bool quantize_io = false;
  quant::ScaleMethod scale = quant::ScaleMethod::Mse;

  sepnet::CensusOptions census() const { return {granularity, quantize_io}; }
};

struct SensitivitySection {
  std::vector<std::string> metrics{"Hes", "KL"};
  std::size_t probe_frames = 32;  // rounded up to whole probe scenes
  std::size_t hutchinson_samples = 8;
  sensitivity::Probe probe = sensitivity::Probe::Rademacher;
  sensitivity::HessianLoss loss = sensitivity::HessianLoss::SiSnr;
};

struct AllocSection {
  std::vector<double> budgets{4.0, 8.0};  // average bits
  std::vector<double> byte_budgets;
};

struct NasSection {
  bool enabled = true;
  double beta = 0.5;
  double lr = 1e-2;
  std::size_t steps = 2000;
  std::size_t batch_size = 1;
  std::size_t max_rounds = 5;
  bool enforce_budget = true;
  nas::MixSpace mix_space = nas::MixSpace::Weight;
};

struct EvalSection {
  std::string split = "test";  // test | validation
  std::size_t timing_runs = 3;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  std::string out = "runs/quantsep";
  bool verbose = false;
  DataConfig data;
  dsp::StftConfig stft;
  dsp::AngleFeatureOptions angle;
  sepnet::ArchConfig model;
  TrainSection train;
  QuantSection quant;
  SensitivitySection sensitivity;
  AllocSection alloc;
  NasSection nas;
  EvalSection evaluate;

  sepnet::FeatureConfig features() const { return {stft, data.scene.geometry, angle}; }

  std::size_t probe_scenes() const {
    const std::size_t frames = dsp::Stft(stft).frames_for(data.scene.samples());
    return std::max<std::size_t>(1, (sensitivity.probe_frames + frames - 1) / frames);
  }

  void validate() const {
    if (schema_version != kSchemaVersion)
      throw ConfigError(cat("config: schema_version ", schema_version, " is not supported (expected ", kSchemaVersion, ")"));
    data.scene.validate();
    stft.validate();
    if (static_cast<int>(stft.sample_rate) != data.scene.sample_rate)
      throw ConfigError("config: stft.sample_rate must equal data.sample_rate");
    model.validate();
    if (train.epochs == 0 || train.batch_size == 0) throw ConfigError("config: train.epochs and batch_size must be positive");
    if (quant.candidates.empty()) throw ConfigError("config: quant.candidates is empty");
    for (std::size_t i = 0; i < quant.candidates.size(); ++i) {
      quant::check_bits(quant.candidates[i]);
      if (i > 0 && quant.candidates[i] <= quant.candidates[i - 1])
        throw ConfigError("config: quant.candidates must be strictly increasing");
    }
    for (const auto& m : sensitivity.metrics)
      if (m != "Hes" && m != "KL") throw ConfigError(cat("config: unknown sensitivity metric '", m, "'"));
    if (sensitivity.hutchinson_samples == 0) throw ConfigError("config: sensitivity.hutchinson_samples must be >= 1");
    for (double b : alloc.budgets)
      if (!(b >= quant::kMinBits))
        throw ConfigError(cat("config: budget ", b, " average bits is infeasible; minimum achievable is ", quant::kMinBits));
    if (!(nas.beta >= 0.0)) throw ConfigError("config: nas.beta must be nonnegative");
    if (nas.max_rounds == 0 || nas.steps == 0 || nas.batch_size == 0)
      throw ConfigError("config: nas.steps, batch_size and max_rounds must be positive");
    if (evaluate.split != "test" && evaluate.split != "validation")
      throw ConfigError("config: evaluate.split must be 'test' or 'validation'");
    if (data.write_wav != "none" && data.write_wav != "test" && data.write_wav != "all")
      throw ConfigError("config: data.write_wav must be one of {none, test, all}");
    if (evaluate.timing_runs == 0) throw ConfigError("config: evaluate.timing_runs must be >= 1");
  }

  // Fields that change results; drops where and how the run executes.
  json result_json() const {
    json j = to_json();
    for (const char* k : {"jobs", "out", "verbose"}) j.erase(k);
    return j;
  }

  json to_json() const {
    const auto& sc = data.scene;
    json geo = mixgen::geometry_to_json(sc.geometry);
    return {
        {"schema_version", schema_version},
        {"seed", seed},
        {"jobs", jobs},
        {"out", out},
        {"verbose", verbose},
        {"data",
         {{"scenes", data.scenes},
          {"seed", data.seed},
          {"sample_rate", sc.sample_rate},
          {"duration_s", sc.duration_s},
          {"margin_ms", sc.margin_ms},
          {"ramp_ms", sc.ramp_ms},
          {"overlap_ratio", sc.overlap_ratio},
          {"sir_db", sc.sir_db},
          {"mixture_rms", sc.mixture_rms},
          {"doa_sampling", sc.doa_sampling == mixgen::DoaSampling::UniformBuckets ? "uniform_buckets" : "uniform_difference"},
          {"geometry", geo},
          {"echo", {{"enabled", sc.echo.enabled}, {"delay_ms", sc.echo.delay_ms}, {"attenuation", sc.echo.attenuation}}},
          {"split", {{"validation", data.split.validation}, {"test", data.split.test}}},
          {"write_wav", data.write_wav}}},
        {"stft",
         {{"sample_rate", stft.sample_rate},
          {"fft_size", stft.fft_size},
          {"window_length", stft.window_length},
          {"hop", stft.hop},
          {"window", dsp::window_name(stft.window)}}},
        {"features", {{"angle_literal_order", angle.literal_order}}},
        {"model",
         {{"tcn_blocks", model.tcn_blocks},
          {"blocks_per_tcn", model.blocks_per_tcn},
          {"bottleneck", model.bottleneck},
          {"hidden", model.hidden},
          {"kernel", model.kernel},
          {"head", model.head == sepnet::MaskHead::Tanh ? "tanh" : "linear"}}},
        {"train",
         {{"epochs", train.epochs},
          {"batch_size", train.batch_size},
          {"lr", train.lr},
          {"clip_norm", train.clip_norm},
          {"decay_every", train.decay_every},
          {"lr_decay", train.lr_decay}}},
        {"quant",
         {{"candidates", quant.candidates},
          {"granularity", quant.granularity == sepnet::Granularity::Block ? "block" : "sublayer"},
          {"quantize_io", quant.quantize_io},
          {"scale", quant.scale == quant::ScaleMethod::Absmax ? "absmax" : "mse"}}},
        {"sensitivity",
         {{"metrics", sensitivity.metrics},
          {"probe_frames", sensitivity.probe_frames},
          {"hutchinson_samples", sensitivity.hutchinson_samples},
          {"probe", sensitivity.probe == sensitivity::Probe::Gaussian ? "gaussian" : "rademacher"},
          {"loss", sensitivity.loss == sensitivity::HessianLoss::SpectralMse ? "spectral_mse" : "si_snr"}}},
        {"alloc", {{"budgets", alloc.budgets}, {"byte_budgets", alloc.byte_budgets}}},
        {"nas",
         {{"enabled", nas.enabled},
          {"beta", nas.beta},
          {"lr", nas.lr},
          {"steps", nas.steps},
          {"batch_size", nas.batch_size},
          {"max_rounds", nas.max_rounds},
          {"enforce_budget", nas.enforce_budget},
          {"mix_space", nas.mix_space == nas::MixSpace::Output ? "output" : "weight"}}},
        {"evaluate", {{"split", evaluate.split}, {"timing_runs", evaluate.timing_runs}}},
    };
  }

  static RunConfig from_json(const json& j) {
    RunConfig c;
    Section root(j, "");
    c.schema_version = root.get("schema_version", kSchemaVersion);
    c.seed = root.get("seed", c.seed);
    c.jobs = root.get("jobs", c.jobs);
    c.out = root.get("out", c.out);
    c.verbose = root.get("verbose", c.verbose);

    {
      Section s = root.sub("data");
      auto& sc = c.data.scene;
      c.data.scenes = s.get("scenes", c.data.scenes);
      c.data.seed = s.get("seed", c.data.seed);
      sc.sample_rate = s.get("sample_rate", sc.sample_rate);
      sc.duration_s = s.get("duration_s", sc.duration_s);
      sc.margin_ms = s.get("margin_ms", sc.margin_ms);
      sc.ramp_ms = s.get("ramp_ms", sc.ramp_ms);
      sc.overlap_ratio = s.get("overlap_ratio", sc.overlap_ratio);
      sc.sir_db = s.get("sir_db", sc.sir_db);
      sc.mixture_rms = s.get("mixture_rms", sc.mixture_rms);
      sc.doa_sampling = pick<mixgen::DoaSampling>(s.where("doa_sampling"), s.get<std::string>("doa_sampling", "uniform_difference"),
                                                  {{"uniform_difference", mixgen::DoaSampling::UniformDifference},
                                                   {"uniform_buckets", mixgen::DoaSampling::UniformBuckets}});
      if (s.has("geometry")) {
        Section g = s.sub("geometry");
        json merged = mixgen::geometry_to_json(sc.geometry);
        for (const char* key : {"positions_m", "sound_speed", "pairs"})
          if (g.has(key)) merged[key] = g.raw(key);
        g.finish();
        try {
          sc.geometry = mixgen::geometry_from_json(merged);
        } catch (const json::exception& e) {
          throw ConfigError(cat("config: data.geometry is malformed (", e.what(), ")"));
        }
      }
      {
        Section e = s.sub("echo");
        sc.echo.enabled = e.get("enabled", sc.echo.enabled);
        sc.echo.delay_ms = e.get("delay_ms", sc.echo.delay_ms);
        sc.echo.attenuation = e.get("attenuation", sc.echo.attenuation);
        e.finish();
      }
      {
        Section r = s.sub("split");
        c.data.split.validation = r.get("validation", c.data.split.validation);
        c.data.split.test = r.get("test", c.data.split.test);
        r.finish();
      }
      c.data.write_wav = s.get("write_wav", c.data.write_wav);
      s.finish();
    }
    {
      Section s = root.sub("stft");
      c.stft.sample_rate = s.get("sample_rate", c.stft.sample_rate);
      c.stft.fft_size = s.get("fft_size", c.stft.fft_size);
      c.stft.window_length = s.get("window_length", c.stft.window_length);
      c.stft.hop = s.get("hop", c.stft.hop);
      c.stft.window = dsp::window_from_name(s.get<std::string>("window", dsp::window_name(c.stft.window)));
      s.finish();
    }
    {
      Section s = root.sub("features");
      c.angle.literal_order = s.get("angle_literal_order", c.angle.literal_order);
      s.finish();
    }
    {
      Section s = root.sub("model");
      c.model.tcn_blocks = s.get("tcn_blocks", c.model.tcn_blocks);
      c.model.blocks_per_tcn = s.get("blocks_per_tcn", c.model.blocks_per_tcn);
      c.model.bottleneck = s.get("bottleneck", c.model.bottleneck);
      c.model.hidden = s.get("hidden", c.model.hidden);
      c.model.kernel = s.get("kernel", c.model.kernel);
      c.model.head = pick<sepnet::MaskHead>(s.where("head"), s.get<std::string>("head", "linear"),
                                            {{"linear", sepnet::MaskHead::Linear}, {"tanh", sepnet::MaskHead::Tanh}});
      s.finish();
    }
    {
      Section s = root.sub("train");
      c.train.epochs = s.get("epochs", c.train.epochs);
      c.train.batch_size = s.get("batch_size", c.train.batch_size);
      c.train.lr = s.get("lr", c.train.lr);
      c.train.clip_norm = s.get("clip_norm", c.train.clip_norm);
      c.train.decay_every = s.get("decay_every", c.train.decay_every);
      c.train.lr_decay = s.get("lr_decay", c.train.lr_decay);
      s.finish();
    }
    {
      Section s = root.sub("quant");
      c.quant.candidates = s.get("candidates", c.quant.candidates);
      c.quant.granularity = pick<sepnet::Granularity>(
          s.where("granularity"), s.get<std::string>("granularity", "sublayer"),
          {{"sublayer", sepnet::Granularity::Sublayer}, {"block", sepnet::Granularity::Block}});
      c.quant.quantize_io = s.get("quantize_io", c.quant.quantize_io);
      c.quant.scale = pick<quant::ScaleMethod>(s.where("scale"), s.get<std::string>("scale", "mse"),
                                               {{"mse", quant::ScaleMethod::Mse}, {"absmax", quant::ScaleMethod::Absmax}});
      s.finish();
    }
    {
      Section s = root.sub("sensitivity");
      auto& d = c.sensitivity;
      d.metrics = s.get("metrics", d.metrics);
      d.probe_frames = s.get("probe_frames", d.probe_frames);
      d.hutchinson_samples = s.get("hutchinson_samples", d.hutchinson_samples);
      d.probe = pick<sensitivity::Probe>(s.where("probe"), s.get<std::string>("probe", "rademacher"),
                                         {{"rademacher", sensitivity::Probe::Rademacher},
                                          {"gaussian", sensitivity::Probe::Gaussian}});
      d.loss = pick<sensitivity::HessianLoss>(s.where("loss"), s.get<std::string>("loss", "si_snr"),
                                              {{"si_snr", sensitivity::HessianLoss::SiSnr},
                                               {"spectral_mse", sensitivity::HessianLoss::SpectralMse}});
      s.finish();
    }
    {
      Section s = root.sub("alloc");
      c.alloc.budgets = s.get("budgets", c.alloc.budgets);
      c.alloc.byte_budgets = s.get("byte_budgets", c.alloc.byte_budgets);
      s.finish();
    }
    {
      Section s = root.sub("nas");
      auto& d = c.nas;
      d.enabled = s.get("enabled", d.enabled);
      d.beta = s.get("beta", d.beta);
      d.lr = s.get("lr", d.lr);
      d.steps = s.get("steps", d.steps);
      d.batch_size = s.get("batch_size", d.batch_size);
      d.max_rounds = s.get("max_rounds", d.max_rounds);
      d.enforce_budget = s.get("enforce_budget", d.enforce_budget);
      d.mix_space = pick<nas::MixSpace>(s.where("mix_space"), s.get<std::string>("mix_space", "weight"),
                                        {{"weight", nas::MixSpace::Weight}, {"output", nas::MixSpace::Output}});
      s.finish();
    }
    {
      Section s = root.sub("evaluate");
      c.evaluate.split = s.get("split", c.evaluate.split);
      c.evaluate.timing_runs = s.get("timing_runs", c.evaluate.timing_runs);
      s.finish();
    }
    root.finish();
    c.model.bins = c.stft.fft_size / 2 + 1;
    c.model.pairs = c.data.scene.geometry.pairs.size();
    c.validate();
    return c;
  }

  static RunConfig load(const std::string& path) {
    json j;
    try {
      j = read_json(path);
    } catch (const json::exception& e) {
      throw ConfigError(cat("config: cannot parse '", path, "': ", e.what()));
    }
    return from_json(j);
  }
};

}  // namespace quantsep::config
