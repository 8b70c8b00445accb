// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Stage runner behind the command-line tool. Each stage has a cache key
// hashed from its inputs; a stage whose key and output hashes match the
// record under <out>/cache is skipped. Every command runs the stages it
// depends on, so `evaluate` on a fresh directory simulates and trains first.
//
// Layout under <out>:
//   data/manifest.json, data/wav/...       simulate
//   model/checkpoint.{json,bin}, model/train_log.json
//   sensitivity/{hes,kl}.json
//   assignments/<system>.json             allocate, nas-search, uniform
//   packed/<system>.qsep                  quantize
//   evaluation/<system>.{json,csv}        evaluate (+ .timing.json)
//   reports/summary.{json,csv}, reports/precision_profile.csv, reports/timing.json
//   run.json

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "quantsep/alloc.hpp"
#include "quantsep/common.hpp"
#include "quantsep/config.hpp"
#include "quantsep/mixgen.hpp"
#include "quantsep/nas.hpp"
#include "quantsep/parallel.hpp"
#include "quantsep/quant.hpp"
#include "quantsep/sensitivity.hpp"
#include "quantsep/sepnet.hpp"
#include "quantsep/wav.hpp"

namespace quantsep::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "1.0.0";

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"simulate", "train",    "sensitivity", "allocate", "nas-search",
                                          "quantize", "evaluate", "report",      "pipeline"};
  return c;
}

inline std::string number_tag(double v) {
  char buf[32];
  if (v == std::floor(v) && std::abs(v) < 1e12)
    std::snprintf(buf, sizeof buf, "%.0f", v);
  else
    std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string fixed(double v, int digits = 4) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct System {
  std::string name;
  std::string method;  // fp32 | mixture | uniform | Hes | KL | NAS
  alloc::Budget budget;
  bool has_budget = false;

  bool quantized() const { return method != "fp32" && method != "mixture"; }
};

struct StageRecord {
  std::string name;
  std::string key;
  std::string status;  // ran | cached
  double seconds = 0.0;
};

struct BucketStats {
  std::size_t count = 0;
  double si_snr = 0.0, mixture = 0.0;
};

struct Evaluation {
  std::vector<sepnet::SceneScore> scores;
  double seconds = 0.0;
};

class Runner {
 public:
  Runner(config::RunConfig cfg, fs::path out, std::ostream& log = std::cerr)
      : cfg_(std::move(cfg)), out_(std::move(out)), log_(log), stft_(cfg_.stft) {
    fs::create_directories(out_);
  }

  const config::RunConfig& config() const { return cfg_; }
  const fs::path& out() const { return out_; }
  const std::vector<StageRecord>& stages() const { return stages_; }

  void run(const std::string& command) {
    if (command == "simulate") simulate();
    else if (command == "train") train();
    else if (command == "sensitivity") sensitivity();
    else if (command == "allocate") allocate();
    else if (command == "nas-search") nas_search();
    else if (command == "quantize") quantize();
    else if (command == "evaluate") evaluate();
    else if (command == "report" || command == "pipeline") report();
    else throw ConfigError(cat("unknown command '", command, "'"));
  }

  // --- systems ---------------------------------------------------------------

  std::vector<System> systems() const {
    std::vector<System> s;
    s.push_back({"mixture", "mixture", {}, false});
    s.push_back({"fp32", "fp32", {}, false});
    for (int n : cfg_.quant.candidates)
      s.push_back({cat("uniform-", n), "uniform", {alloc::Budget::Kind::AverageBits, static_cast<double>(n)}, true});
    for (const auto& m : cfg_.sensitivity.metrics) {
      const std::string lower = m == "Hes" ? "hes" : "kl";
      for (double b : cfg_.alloc.budgets)
        s.push_back({cat(lower, "-avg", number_tag(b)), m, {alloc::Budget::Kind::AverageBits, b}, true});
      for (double b : cfg_.alloc.byte_budgets)
        s.push_back({cat(lower, "-bytes", number_tag(b)), m, {alloc::Budget::Kind::Bytes, b}, true});
    }
    if (cfg_.nas.enabled)
      for (double b : cfg_.alloc.budgets)
        s.push_back({cat("nas-avg", number_tag(b)), "NAS", {alloc::Budget::Kind::AverageBits, b}, true});
    return s;
  }

  // --- stages --------------------------------------------------------------

  void simulate() {
    if (simulated_) return;
    const std::string key = hash_json({{"stage", "simulate"}, {"data", cfg_.to_json().at("data")}});
    sim_key_ = key;
    const fs::path manifest = out_ / "data" / "manifest.json";
    stage("simulate", key, [&] {
      generate();
      fs::create_directories(out_ / "data");
      json scenes = json::array();
      const auto plan = mixgen::plan_dataset(cfg_.data.scenes, cfg_.data.seed, cfg_.data.split);
      std::vector<fs::path> outputs{manifest};
      for (const auto& entry : plan) {
        const auto& scene = scene_at(entry);
        json js = mixgen::scene_to_json(scene);
        js["index"] = entry.index;
        js["split"] = split_name(entry.split);
        const bool write = cfg_.data.write_wav == "all" || (cfg_.data.write_wav == "test" && entry.split == mixgen::Split::Test);
        if (write) {
          const fs::path dir = out_ / "data" / "wav" / split_name(entry.split);
          fs::create_directories(dir);
          const std::string stem = cat("scene", entry.index);
          wav::write((dir / (stem + "_mix.wav")).string(), {scene.sample_rate, scene.mixture});
          wav::write((dir / (stem + "_target.wav")).string(), {scene.sample_rate, {scene.sources[0]}});
          wav::write((dir / (stem + "_interferer.wav")).string(), {scene.sample_rate, {scene.sources[1]}});
          js["files"] = {{"mixture", cat("wav/", split_name(entry.split), "/", stem, "_mix.wav")},
                         {"target", cat("wav/", split_name(entry.split), "/", stem, "_target.wav")},
                         {"interferer", cat("wav/", split_name(entry.split), "/", stem, "_interferer.wav")}};
        }
        scenes.push_back(js);
      }
      std::size_t counts[3] = {data_->train.size(), data_->validation.size(), data_->test.size()};
      std::array<std::size_t, 4> hist{};
      for (const auto* part : {&data_->train, &data_->validation, &data_->test})
        for (const auto& sc : *part) ++hist[sc.bucket()];
      json histogram = json::object();
      for (std::size_t b = 0; b < 4; ++b) histogram[mixgen::kBucketNames[b]] = hist[b];
      write_json(manifest.string(), {{"fingerprint", fingerprint_},
                                     {"data_config", cfg_.to_json().at("data")},
                                     {"counts", {{"train", counts[0]}, {"validation", counts[1]}, {"test", counts[2]}}},
                                     {"bucket_histogram", histogram},
                                     {"scenes", scenes}});
      return outputs;
    });
    if (!data_) {
      generate();
      const json m = read_json(manifest.string());
      if (m.at("fingerprint").get<std::string>() != fingerprint_)
        throw Error("simulate: regenerated scenes do not match the dataset manifest fingerprint");
    }
    simulated_ = true;
  }

  void train() {
    if (trained_) return;
    simulate();
    const json c = cfg_.to_json();
    const std::string key = hash_json({{"stage", "train"},
                                       {"data", sim_key_},
                                       {"stft", c.at("stft")},
                                       {"features", c.at("features")},
                                       {"model", c.at("model")},
                                       {"train", c.at("train")},
                                       {"seed", cfg_.seed}});
    const fs::path stem = out_ / "model" / "checkpoint";
    stage("train", key, [&] {
      fs::create_directories(out_ / "model");
      sepnet::SepModel model(cfg_.model);
      model.initialize(Rng::derive(cfg_.seed, 1));
      sepnet::TrainConfig tc;
      tc.epochs = cfg_.train.epochs;
      tc.batch_size = cfg_.train.batch_size;
      tc.adam.lr = cfg_.train.lr;
      tc.adam.clip_norm = cfg_.train.clip_norm;
      tc.decay_every = cfg_.train.decay_every;
      tc.lr_decay = cfg_.train.lr_decay;
      tc.seed = Rng::derive(cfg_.seed, 2);
      const auto& tr = examples(mixgen::Split::Train);
      const auto& va = examples(mixgen::Split::Validation);
      json epochs = json::array();
      const auto result = sepnet::train(model, tr, tc, stft_, [&](std::size_t e, const sepnet::SepModel& m, const sepnet::TrainResult& r) {
        const double val = sepnet::mean_si_snr(m, va, stft_);
        epochs.push_back({{"epoch", e + 1}, {"train_loss", r.epoch_loss.back()}, {"validation_si_snr", val}});
        if (cfg_.verbose) log_ << "train: epoch " << e + 1 << " loss " << r.epoch_loss.back() << " val " << val << " dB\n";
      });
      const std::string hash = sepnet::save_checkpoint(model, stem.string());
      write_json((out_ / "model" / "train_log.json").string(),
                 {{"checkpoint_hash", hash}, {"steps", result.steps}, {"parameters", model.param_count()}, {"epochs", epochs}});
      model_ = std::make_unique<sepnet::SepModel>(std::move(model));
      return std::vector<fs::path>{stem.string() + ".json", stem.string() + ".bin", out_ / "model" / "train_log.json"};
    });
    if (!model_) model_ = std::make_unique<sepnet::SepModel>(sepnet::load_checkpoint(stem.string()));
    checkpoint_hash_ = read_json(stem.string() + ".json").at("blob_sha256").get<std::string>();
    census_ = sepnet::census(*model_, cfg_.quant.census());
    trained_ = true;
  }

  void sensitivity() {
    train();
    const json c = cfg_.to_json();
    const std::size_t probe_n = std::min(cfg_.probe_scenes(), examples(mixgen::Split::Train).size());
    const std::vector<sepnet::Example> probe(examples(mixgen::Split::Train).begin(),
                                             examples(mixgen::Split::Train).begin() + static_cast<std::ptrdiff_t>(probe_n));
    for (const auto& metric : cfg_.sensitivity.metrics) {
      if (profiles_.count(metric)) continue;
      const fs::path path = profile_path(metric);
      const std::string key = hash_json({{"stage", "sensitivity"},
                                         {"metric", metric},
                                         {"checkpoint", checkpoint_hash_},
                                         {"sensitivity", c.at("sensitivity")},
                                         {"quant", c.at("quant")},
                                         {"probe_scenes", probe_n},
                                         {"seed", cfg_.seed}});
      stage(cat("sensitivity-", metric), key, [&] {
        fs::create_directories(out_ / "sensitivity");
        sensitivity::SensitivityProfile prof;
        if (metric == "Hes") {
          sensitivity::HessianConfig hc;
          hc.samples = cfg_.sensitivity.hutchinson_samples;
          hc.seed = Rng::derive(cfg_.seed, 3);
          hc.probe = cfg_.sensitivity.probe;
          hc.loss = cfg_.sensitivity.loss;
          hc.jobs = cfg_.jobs;
          hc.verbose = cfg_.verbose;
          prof = sensitivity::hessian_sensitivity(*model_, census_, cfg_.quant.candidates, probe, stft_, hc, cfg_.quant.scale);
        } else {
          prof = sensitivity::kl_sensitivity(*model_, census_, cfg_.quant.candidates, probe, {cfg_.jobs, cfg_.verbose},
                                             cfg_.quant.scale);
        }
        prof.checkpoint_hash = checkpoint_hash_;
        for (const auto& w : prof.warnings) log_ << "warning: " << w << "\n";
        write_json(path.string(), prof.to_json());
        return std::vector<fs::path>{path};
      });
      profiles_[metric] = sensitivity::SensitivityProfile::from_json(read_json(path.string()));
    }
  }

  void allocate() {
    train();
    for (const auto& sys : systems()) {
      if (sys.method == "uniform") uniform_assignment(sys);
      if (sys.method == "Hes" || sys.method == "KL") {
        sensitivity();
        const auto& prof = profiles_.at(sys.method);
        const fs::path path = assignment_path(sys.name);
        const std::string key = hash_json({{"stage", "allocate"},
                                           {"profile", sha256_hex(prof.to_json().dump())},
                                           {"budget", sys.budget.to_json()},
                                           {"census", census_json()}});
        stage(cat("allocate-", sys.name), key, [&] {
          const auto a = alloc::allocate(prof, census_, sys.budget);
          write_json(path.string(), a.to_json());
          return std::vector<fs::path>{path};
        });
      }
    }
  }

  void nas_search() {
    train();
    if (!cfg_.nas.enabled) return;
    const json c = cfg_.to_json();
    for (const auto& sys : systems()) {
      if (sys.method != "NAS") continue;
      const fs::path path = assignment_path(sys.name);
      const std::string key = hash_json({{"stage", "nas"},
                                         {"checkpoint", checkpoint_hash_},
                                         {"quant", c.at("quant")},
                                         {"nas", c.at("nas")},
                                         {"budget", sys.budget.value},
                                         {"seed", cfg_.seed}});
      stage(cat("nas-search-", sys.name), key, [&] {
        std::map<int, sepnet::SepModel> uniform;
        for (int n : cfg_.quant.candidates) {
          const auto bits = quant::uniform_assignment(census_, n);
          uniform.emplace(n, quant::apply_scheme(*model_, census_, quant::make_scheme(*model_, census_, bits, cfg_.quant.scale)));
        }
        auto net = nas::build_supernet(uniform, census_, cfg_.nas.mix_space);
        nas::NasConfig nc;
        nc.beta = cfg_.nas.beta;
        nc.lr = cfg_.nas.lr;
        nc.steps = cfg_.nas.steps;
        nc.batch_size = cfg_.nas.batch_size;
        nc.max_rounds = cfg_.nas.max_rounds;
        nc.seed = Rng::derive(cfg_.seed, 4);
        nc.target_average_bits = cfg_.nas.enforce_budget ? sys.budget.value : 0.0;
        nc.verbose = cfg_.verbose;
        auto result = nas::search(net, examples(mixgen::Split::Train), stft_, nc);
        auto& a = result.assignment;
        a.budget = sys.budget.to_json();
        a.profile_hash = checkpoint_hash_;
        write_json(path.string(), a.to_json());
        return std::vector<fs::path>{path};
      });
    }
  }

  void quantize() {
    allocate();
    nas_search();
    for (const auto& sys : systems()) {
      if (!sys.quantized()) continue;
      const fs::path apath = assignment_path(sys.name), ppath = packed_path(sys.name);
      const std::string key = hash_json({{"stage", "quantize"},
                                         {"checkpoint", checkpoint_hash_},
                                         {"assignment", file_hash(apath)},
                                         {"quant", cfg_.to_json().at("quant")}});
      stage(cat("quantize-", sys.name), key, [&] {
        fs::create_directories(out_ / "packed");
        const auto a = alloc::PrecisionAssignment::from_json(read_json(apath.string()));
        const auto scheme = quant::make_scheme(*model_, census_, a.bits, cfg_.quant.scale);
        quant::save_packed(ppath.string(), quant::pack_model(*model_, census_, scheme, cfg_.quant.census()));
        return std::vector<fs::path>{ppath};
      });
    }
  }

  void evaluate() {
    quantize();
    const json c = cfg_.to_json();
    for (const auto& sys : systems()) {
      const fs::path jpath = eval_path(sys.name, ".json"), cpath = eval_path(sys.name, ".csv");
      const std::string model_hash = sys.quantized() ? file_hash(packed_path(sys.name)) : checkpoint_hash_;
      const std::string key = hash_json({{"stage", "evaluate"},
                                         {"system", sys.name},
                                         {"model", sys.method == "mixture" ? std::string("none") : model_hash},
                                         {"data", sim_key_},
                                         {"evaluate", c.at("evaluate")},
                                         {"stft", c.at("stft")},
                                         {"features", c.at("features")}});
      stage(cat("evaluate-", sys.name), key, [&] {
        fs::create_directories(out_ / "evaluation");
        std::optional<sepnet::SepModel> m;
        json size = nullptr, prov = {{"checkpoint_hash", checkpoint_hash_}};
        if (sys.method == "fp32") {
          m.emplace(model_->clone());
          auto all_float = census_;
          for (auto& e : all_float) e.quantized = false;
          size = quant::model_size(all_float, {}).to_json();
        } else if (sys.quantized()) {
          const auto pm = quant::load_packed(packed_path(sys.name).string());
          m.emplace(quant::dequantize(pm));
          auto sr = quant::model_size(census_, quant::packed_bits(pm)).to_json();
          sr["container_overhead_bytes"] = quant::container_overhead(pm);
          size = sr;
          prov["packed_sha256"] = file_hash(packed_path(sys.name));
          prov["assignment_hash"] = file_hash(assignment_path(sys.name));
        }
        const auto ev = run_evaluation(m ? &*m : nullptr);
        write_json(jpath.string(), evaluation_json(sys, ev.scores, size, prov));
        write_file(cpath.string(), evaluation_csv(ev.scores));
        json timing = {{"system", sys.name}, {"runs", cfg_.evaluate.timing_runs}};
        if (m) {
          std::vector<double> secs{ev.seconds};
          for (std::size_t r = 1; r < cfg_.evaluate.timing_runs; ++r) secs.push_back(run_evaluation(&*m).seconds);
          std::sort(secs.begin(), secs.end());
          const double audio_h = audio_seconds() / 3600.0;
          timing["median_seconds"] = secs[secs.size() / 2];
          timing["seconds_per_audio_hour"] = secs[secs.size() / 2] / audio_h;
        }
        write_json(eval_path(sys.name, ".timing.json").string(), timing);
        return std::vector<fs::path>{jpath, cpath};
      });
    }
  }

  void report() {
    evaluate();
    const auto list = systems();
    json inputs = json::array();
    for (const auto& sys : list) inputs.push_back(file_hash(eval_path(sys.name, ".json")));
    for (const auto& m : cfg_.sensitivity.metrics) inputs.push_back(file_hash(profile_path(m)));
    const fs::path dir = out_ / "reports";
    const std::string key = hash_json({{"stage", "report"}, {"inputs", inputs}});
    stage("report", key, [&] {
      fs::create_directories(dir);
      write_json((dir / "summary.json").string(), summary_json(list));
      write_file((dir / "summary.csv").string(), summary_csv(list));
      write_file((dir / "precision_profile.csv").string(), precision_csv(list));
      return std::vector<fs::path>{dir / "summary.json", dir / "summary.csv", dir / "precision_profile.csv"};
    });
    json timing = json::array();
    for (const auto& sys : list) {
      const fs::path p = eval_path(sys.name, ".timing.json");
      if (fs::exists(p)) timing.push_back(read_json(p.string()));
    }
    write_json((dir / "timing.json").string(), {{"note", "wall-clock, not part of the deterministic reports"}, {"systems", timing}});
  }

  // Evaluates one checkpoint stem or packed file outside the system list.
  json evaluate_file(const std::string& path) {
    simulate();
    std::optional<sepnet::SepModel> m;
    json size = nullptr, prov = json::object();
    if (path.size() > 5 && path.substr(path.size() - 5) == ".qsep") {
      const auto pm = quant::load_packed(path);
      m.emplace(quant::dequantize(pm));
      size = quant::model_size(sepnet::census(*m, quant::packed_census_options(pm)), quant::packed_bits(pm)).to_json();
      prov["packed_sha256"] = file_hash(path);
    } else {
      std::string stem = path;
      if (stem.size() > 5 && stem.substr(stem.size() - 5) == ".json") stem = stem.substr(0, stem.size() - 5);
      m.emplace(sepnet::load_checkpoint(stem));
      prov["checkpoint_hash"] = read_json(stem + ".json").at("blob_sha256").get<std::string>();
    }
    if (m->arch().to_json() != cfg_.model.to_json())
      throw ConfigError(cat("evaluate: '", path, "' was built for a different architecture than the configuration"));
    const auto ev = run_evaluation(&*m);
    const std::string name = fs::path(path).stem().string();
    System sys{cat("file-", name), "file", {}, false};
    fs::create_directories(out_ / "evaluation");
    json j = evaluation_json(sys, ev.scores, size, prov);
    write_json(eval_path(sys.name, ".json").string(), j);
    write_file(eval_path(sys.name, ".csv").string(), evaluation_csv(ev.scores));
    return j;
  }

  json run_record(const std::string& command, const std::string& config_path, const std::string& config_text) const {
    json st = json::array();
    for (const auto& s : stages_)
      st.push_back({{"stage", s.name}, {"key", s.key}, {"status", s.status}, {"seconds", s.seconds}});
    json reports = json::object();
    if (fs::exists(out_ / "reports"))
      for (const auto& f : {"summary.json", "summary.csv", "precision_profile.csv"})
        if (fs::exists(out_ / "reports" / f)) reports[f] = file_hash(out_ / "reports" / f);
    return {{"tool", "quantsep"},
            {"version", kToolVersion},
            {"command", command},
            {"config_path", config_path},
            {"config_sha256", sha256_hex(config_text)},
            {"resolved_config", cfg_.to_json()},
            {"seed", cfg_.seed},
            {"jobs", cfg_.jobs},
            {"out", out_.string()},
            {"dataset_fingerprint", fingerprint_},
            {"checkpoint_hash", checkpoint_hash_},
            {"stages", st},
            {"reports", reports}};
  }

  const sepnet::SepModel& model() {
    train();
    return *model_;
  }
  const std::vector<sepnet::CensusEntry>& census() {
    train();
    return census_;
  }

  const std::vector<sepnet::Example>& examples(mixgen::Split split) {
    simulate();
    auto& slot = examples_[static_cast<int>(split)];
    if (!slot) {
      const auto& scenes = split == mixgen::Split::Train        ? data_->train
                           : split == mixgen::Split::Validation ? data_->validation
                                                                : data_->test;
      slot = std::make_unique<std::vector<sepnet::Example>>(sepnet::make_examples(scenes, cfg_.features()));
    }
    return *slot;
  }

  fs::path profile_path(const std::string& metric) const {
    return out_ / "sensitivity" / (metric == "Hes" ? "hes.json" : "kl.json");
  }
  fs::path assignment_path(const std::string& system) const { return out_ / "assignments" / (system + ".json"); }
  fs::path packed_path(const std::string& system) const { return out_ / "packed" / (system + ".qsep"); }
  fs::path eval_path(const std::string& system, const std::string& ext) const {
    return out_ / "evaluation" / (system + ext);
  }

 private:
  static std::string hash_json(const json& j) { return sha256_hex(cat(kToolVersion, "\n", j.dump())); }
  static std::string file_hash(const fs::path& p) { return sha256_hex(read_file(p.string())); }

  static const char* split_name(mixgen::Split s) {
    switch (s) {
      case mixgen::Split::Train: return "train";
      case mixgen::Split::Validation: return "validation";
      default: return "test";
    }
  }

  template <typename F>
  void stage(const std::string& name, const std::string& key, F&& body) {
    const fs::path record = out_ / "cache" / (name + ".json");
    const auto t0 = std::chrono::steady_clock::now();
    if (fs::exists(record)) {
      try {
        const json r = read_json(record.string());
        bool ok = r.at("key").get<std::string>() == key;
        for (const auto& [rel, h] : r.at("outputs").items()) {
          if (!ok) break;
          const fs::path p = out_ / rel;
          const std::string expected = h;
          ok = fs::exists(p) && file_hash(p) == expected;
        }
        if (ok) {
          stages_.push_back({name, key, "cached", 0.0});
          if (cfg_.verbose) log_ << "stage " << name << ": cached\n";
          return;
        }
      } catch (const ConfigError&) {
      }
    }
    if (cfg_.verbose) log_ << "stage " << name << ": running\n";
    std::vector<fs::path> outputs;
    try {
      outputs = body();
    } catch (const ConfigError& e) {
      throw ConfigError(cat("stage '", name, "' failed: ", e.what()));
    } catch (const NumericalError& e) {
      throw NumericalError(cat("stage '", name, "' failed: ", e.what()));
    } catch (const std::exception& e) {
      throw Error(cat("stage '", name, "' failed: ", e.what()));
    }
    json outs = json::object();
    for (const auto& p : outputs) outs[fs::relative(p, out_).generic_string()] = file_hash(p);
    fs::create_directories(out_ / "cache");
    write_json(record.string(), {{"key", key}, {"outputs", outs}});
    stages_.push_back({name, key, "ran", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()});
  }

  void generate() {
    if (data_) return;
    data_ = std::make_unique<mixgen::Dataset>(mixgen::make_dataset(cfg_.data.scene, cfg_.data.scenes, cfg_.data.seed, cfg_.data.split));
    plan_ = mixgen::plan_dataset(cfg_.data.scenes, cfg_.data.seed, cfg_.data.split);
    std::string bytes;
    for (const auto& entry : plan_) {
      const auto& sc = scene_at(entry);
      for (const auto& ch : sc.mixture) bytes += floats_to_bytes(ch);
      for (const auto& s : sc.sources) bytes += floats_to_bytes(s);
    }
    fingerprint_ = sha256_hex(bytes);
  }

  // Scenes land in their split vectors in plan order.
  const mixgen::MixtureScene& scene_at(const mixgen::DatasetEntry& entry) {
    if (position_.empty()) {
      std::size_t k[3] = {0, 0, 0};
      for (const auto& e : plan_) position_.push_back(k[static_cast<int>(e.split)]++);
    }
    const std::size_t pos = position_.at(entry.index);
    switch (entry.split) {
      case mixgen::Split::Train: return data_->train.at(pos);
      case mixgen::Split::Validation: return data_->validation.at(pos);
      default: return data_->test.at(pos);
    }
  }

  void uniform_assignment(const System& sys) {
    const fs::path path = assignment_path(sys.name);
    const int n = static_cast<int>(sys.budget.value);
    const std::string key = hash_json({{"stage", "uniform"}, {"bits", n}, {"census", census_json()}});
    stage(cat("allocate-", sys.name), key, [&] {
      fs::create_directories(out_ / "assignments");
      auto a = alloc::finish("uniform", census_, quant::uniform_assignment(census_, n), 0.0);
      a.budget = sys.budget.to_json();
      write_json(path.string(), a.to_json());
      return std::vector<fs::path>{path};
    });
  }

  json census_json() const {
    json j = json::array();
    for (const auto& e : census_)
      if (e.quantized) j.push_back({e.id, e.count});
    return j;
  }

  const std::vector<sepnet::Example>& eval_examples() {
    return examples(cfg_.evaluate.split == "validation" ? mixgen::Split::Validation : mixgen::Split::Test);
  }

  double audio_seconds() {
    double s = 0.0;
    for (const auto& ex : eval_examples()) s += static_cast<double>(ex.target.size()) / cfg_.stft.sample_rate;
    return s;
  }

  Evaluation run_evaluation(const sepnet::SepModel* m) {
    Evaluation ev;
    const auto& data = eval_examples();
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& ex : data) {
      if (m) {
        ev.scores.push_back(sepnet::score(*m, ex, stft_));
      } else {
        const double mix = dsp::si_snr(ex.mixture, ex.target);
        ev.scores.push_back({mix, mix, ex.bucket});
      }
    }
    ev.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return ev;
  }

  json evaluation_json(const System& sys, const std::vector<sepnet::SceneScore>& scores, const json& size,
                       const json& prov) const {
    std::array<BucketStats, 4> b{};
    BucketStats all;
    for (const auto& s : scores) {
      for (BucketStats* t : {&b[s.bucket], &all}) {
        ++t->count;
        t->si_snr += s.si_snr;
        t->mixture += s.mixture_si_snr;
      }
    }
    auto stats = [](const BucketStats& t) -> json {
      if (t.count == 0) return {{"count", 0}, {"si_snr", nullptr}, {"mixture_si_snr", nullptr}, {"improvement", nullptr}};
      const double n = static_cast<double>(t.count);
      return {{"count", t.count},
              {"si_snr", t.si_snr / n},
              {"mixture_si_snr", t.mixture / n},
              {"improvement", (t.si_snr - t.mixture) / n}};
    };
    json buckets = json::object();
    for (std::size_t k = 0; k < 4; ++k) buckets[mixgen::kBucketNames[k]] = stats(b[k]);
    json j = {{"system", sys.name}, {"method", sys.method}, {"split", cfg_.evaluate.split}, {"scenes", scores.size()},
              {"buckets", buckets},  {"mean", stats(all)},  {"size", size},                 {"provenance", prov}};
    if (sys.has_budget) j["budget"] = sys.budget.to_json();
    return j;
  }

  static std::string evaluation_csv(const std::vector<sepnet::SceneScore>& scores) {
    std::ostringstream os;
    os << "scene,bucket,si_snr_db,mixture_si_snr_db,improvement_db\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
      os << i << "," << mixgen::kBucketNames[scores[i].bucket] << "," << fixed(scores[i].si_snr) << ","
         << fixed(scores[i].mixture_si_snr) << "," << fixed(scores[i].si_snr - scores[i].mixture_si_snr) << "\n";
    return os.str();
  }

  json summary_json(const std::vector<System>& list) const {
    json rows = json::array();
    for (const auto& sys : list) {
      json e = read_json(eval_path(sys.name, ".json").string());
      if (sys.quantized()) {
        const json a = read_json(assignment_path(sys.name).string());
        e["assignment"] = a;
        int lo = 99, hi = 0;
        for (const auto& [id, n] : a.at("bits").items()) {
          lo = std::min(lo, n.get<int>());
          hi = std::max(hi, n.get<int>());
        }
        e["min_bits"] = lo;
        e["max_bits"] = hi;
      }
      rows.push_back(e);
    }
    json profiles = json::object();
    for (const auto& m : cfg_.sensitivity.metrics)
      profiles[m] = {{"file", fs::relative(profile_path(m), out_).generic_string()}, {"sha256", file_hash(profile_path(m))}};
    return {{"provenance",
             {{"checkpoint_hash", checkpoint_hash_},
              {"dataset_fingerprint", fingerprint_},
              {"config_hash", hash_json(cfg_.result_json())},
              {"profiles", profiles}}},
            {"notes",
             {"uniform-precision branches are post-training quantized copies of one full-precision model",
              "SI-SNR in dB; improvement is relative to the unprocessed reference-channel mixture"}},
            {"systems", rows}};
  }

  std::string summary_csv(const std::vector<System>& list) const {
    std::ostringstream os;
    os << "system,method,budget,average_bits,min_bits,size_bytes,quantized_ratio,end_to_end_ratio";
    for (const auto& name : mixgen::kBucketNames) os << ",si_snr_" << name;
    os << ",si_snr_mean,mixture_si_snr_mean,si_snri_mean\n";
    for (const auto& sys : list) {
      const json e = read_json(eval_path(sys.name, ".json").string());
      os << sys.name << "," << sys.method << ",";
      if (sys.has_budget) os << number_tag(sys.budget.value) << (sys.budget.kind == alloc::Budget::Kind::Bytes ? "B" : "");
      os << ",";
      if (!e.at("size").is_null()) {
        const auto& s = e.at("size");
        int lo = 32;
        if (sys.quantized()) {
          lo = 99;
          const json a = read_json(assignment_path(sys.name).string());
          for (const auto& [id, n] : a.at("bits").items()) lo = std::min(lo, n.get<int>());
        }
        os << fixed(s.at("average_bits").get<double>()) << "," << lo << "," << s.at("total_bytes").get<std::uint64_t>() << ","
           << fixed(s.at("quantized_fraction_ratio").get<double>()) << "," << fixed(s.at("end_to_end_ratio").get<double>());
      } else {
        os << ",,,,";
      }
      for (const auto& name : mixgen::kBucketNames) {
        const auto& v = e.at("buckets").at(name).at("si_snr");
        os << "," << (v.is_null() ? std::string() : fixed(v.get<double>()));
      }
      const auto& mean = e.at("mean");
      os << "," << fixed(mean.at("si_snr").get<double>()) << "," << fixed(mean.at("mixture_si_snr").get<double>()) << ","
         << fixed(mean.at("improvement").get<double>()) << "\n";
    }
    return os.str();
  }

  // One row per cluster in network order, labelled "tcn-block sublayer".
  std::string precision_csv(const std::vector<System>& list) const {
    std::ostringstream os;
    os << "index,label,cluster,params";
    std::vector<json> assignments;
    for (const auto& sys : list) {
      if (!sys.quantized()) continue;
      os << "," << sys.name;
      assignments.push_back(read_json(assignment_path(sys.name).string()).at("bits"));
    }
    os << "\n";
    std::size_t index = 0;
    for (const auto& e : census_) {
      if (!e.quantized) continue;
      const std::string label = e.tcn > 0 ? cat(e.tcn, "-", e.block, " ", e.kind) : e.kind;
      os << index++ << "," << label << "," << e.id << "," << e.count;
      for (const auto& a : assignments) os << "," << a.at(e.id).get<int>();
      os << "\n";
    }
    return os.str();
  }

  config::RunConfig cfg_;
  fs::path out_;
  std::ostream& log_;
  dsp::Stft stft_;
  std::vector<StageRecord> stages_;

  bool simulated_ = false, trained_ = false;
  std::string sim_key_, fingerprint_, checkpoint_hash_;
  std::unique_ptr<mixgen::Dataset> data_;
  std::vector<mixgen::DatasetEntry> plan_;
  std::vector<std::size_t> position_;
  std::unique_ptr<std::vector<sepnet::Example>> examples_[3];
  std::unique_ptr<sepnet::SepModel> model_;
  std::vector<sepnet::CensusEntry> census_;
  std::map<std::string, sensitivity::SensitivityProfile> profiles_;
};

}  // namespace quantsep::pipeline
