// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Synthetic two-talker scenes for a far-field linear array. Sources are
// harmonic stacks with wandering F0 and formant envelopes plus filtered noise
// bursts; each microphone receives the plane-wave delayed source images.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "quantsep/common.hpp"
#include "quantsep/dsp.hpp"
#include "quantsep/fft.hpp"

namespace quantsep::mixgen {

inline constexpr std::array<const char*, 4> kBucketNames{"0-15", "15-45", "45-90", "90-180"};

// Angle-difference bucket index for a DOA difference in degrees.
inline std::size_t angle_bucket(double diff_deg) {
  if (diff_deg < 15.0) return 0;
  if (diff_deg < 45.0) return 1;
  if (diff_deg < 90.0) return 2;
  return 3;
}

enum class DoaSampling { UniformDifference, UniformBuckets };

struct EchoConfig {
  bool enabled = false;
  double delay_ms = 12.0;
  double attenuation = 0.4;
};

struct SceneConfig {
  int sample_rate = 16000;
  double duration_s = 1.0;
  double margin_ms = 20.0;
  double ramp_ms = 10.0;
  double overlap_ratio = 0.85;
  double sir_db = 0.0;
  double mixture_rms = 0.05;
  DoaSampling doa_sampling = DoaSampling::UniformDifference;
  dsp::ArrayGeometry geometry;
  EchoConfig echo;

  std::size_t samples() const { return static_cast<std::size_t>(std::lround(duration_s * sample_rate)); }

  void validate() const {
    geometry.validate();
    if (sample_rate <= 0) throw ConfigError("mixgen: sample_rate must be positive");
    if (overlap_ratio < 0.0 || overlap_ratio > 1.0) throw ConfigError("mixgen: overlap_ratio must be in [0, 1]");
    const double usable = duration_s - 2.0 * margin_ms / 1000.0;
    if (usable <= 4.0 * ramp_ms / 1000.0) throw ConfigError("mixgen: duration too short for margins and ramps");
    if (mixture_rms <= 0.0) throw ConfigError("mixgen: mixture_rms must be positive");
  }
};

struct MixtureScene {
  int sample_rate = 16000;
  dsp::ArrayGeometry geometry;
  std::array<double, 2> doa{};  // radians; index 0 is the target speaker
  double overlap_ratio = 0.0;
  double sir_db = 0.0;
  std::uint64_t seed = 0;
  // Dry sources as observed at the reference microphone.
  std::array<std::vector<float>, 2> sources;
  // mixture[c][i]
  std::vector<std::vector<float>> mixture;

  double doa_difference_deg() const { return std::abs(doa[0] - doa[1]) * 180.0 / kPi; }
  std::size_t bucket() const { return angle_bucket(doa_difference_deg()); }
  const std::vector<float>& target() const { return sources[0]; }
  std::size_t length() const { return sources[0].size(); }
};

namespace detail {

// Speech-like excitation: harmonic stack + noise bursts under a syllabic
// envelope. Returns `length` samples, nonzero only inside [begin, end).
inline std::vector<double> synth_source(Rng& rng, int rate, std::size_t length, std::size_t begin, std::size_t end,
                                        std::size_t ramp) {
  std::vector<double> x(length, 0.0);
  const double fs = rate;
  const double f0_base = rng.uniform(80.0, 300.0);
  const double vib_rate = rng.uniform(0.5, 3.0), vib_depth = rng.uniform(0.03, 0.12);
  const double vib_phase = rng.uniform(0.0, 2.0 * kPi);
  const double syl_rate = rng.uniform(3.0, 6.0), syl_phase = rng.uniform(0.0, 2.0 * kPi);
  std::array<double, 3> formant{rng.uniform(300.0, 900.0), rng.uniform(900.0, 2200.0), rng.uniform(2200.0, 3500.0)};
  std::array<double, 3> drift{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
  const std::size_t harmonics = static_cast<std::size_t>(std::floor(4000.0 / f0_base));
  std::vector<double> harm_phase(harmonics);
  for (auto& p : harm_phase) p = rng.uniform(0.0, 2.0 * kPi);

  // Noise bursts: band-limited via a two-pole resonator at a random centre.
  const double noise_centre = rng.uniform(2500.0, 6000.0);
  const double r = 0.95, w = 2.0 * kPi * noise_centre / fs;
  const double a1 = 2.0 * r * std::cos(w), a2 = -r * r;
  double n1 = 0.0, n2 = 0.0;
  const double burst_rate = rng.uniform(1.5, 3.0), burst_phase = rng.uniform(0.0, 2.0 * kPi);

  double phase = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double t = static_cast<double>(i - begin) / fs;
    const double f0 = f0_base * (1.0 + vib_depth * std::sin(2.0 * kPi * vib_rate * t + vib_phase));
    phase += 2.0 * kPi * f0 / fs;
    double voiced = 0.0;
    for (std::size_t k = 0; k < harmonics; ++k) {
      const double fk = f0 * static_cast<double>(k + 1);
      double amp = 0.0;
      for (std::size_t m = 0; m < 3; ++m) {
        const double centre = formant[m] * (1.0 + drift[m] * std::sin(2.0 * kPi * 0.7 * t + static_cast<double>(m)));
        const double bw = 120.0 + 80.0 * static_cast<double>(m);
        amp += std::exp(-0.5 * (fk - centre) * (fk - centre) / (bw * bw)) / static_cast<double>(m + 1);
      }
      voiced += amp * std::sin(phase * static_cast<double>(k + 1) + harm_phase[k]);
    }
    const double white = rng.normal();
    const double band = white + a1 * n1 + a2 * n2;
    n2 = n1;
    n1 = band;
    const double syllable = 0.5 * (1.0 - std::cos(2.0 * kPi * syl_rate * t + syl_phase));
    const double burst = std::pow(std::max(0.0, std::sin(2.0 * kPi * burst_rate * t + burst_phase)), 8.0);
    x[i] = syllable * voiced + 0.05 * burst * band;
  }
  // Raised-cosine ramps at the activity edges.
  for (std::size_t k = 0; k < ramp && begin + k < end; ++k) {
    const double g = 0.5 * (1.0 - std::cos(kPi * static_cast<double>(k) / static_cast<double>(ramp)));
    x[begin + k] *= g;
    x[end - 1 - k] *= g;
  }
  return x;
}

// Circular fractional delay by `delay` seconds via an exact phase ramp. The
// Nyquist bin is dropped so the operator is unitary on what remains.
inline std::vector<double> delay_signal(const std::vector<cdouble>& spectrum, double delay, double fs) {
  const std::size_t n = spectrum.size();
  std::vector<cdouble> a(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (n % 2 == 0 && k == n / 2) continue;
    const double freq = (k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n)) * fs /
                        static_cast<double>(n);
    a[k] = spectrum[k] * std::polar(1.0, -2.0 * kPi * freq * delay);
  }
  fft(a, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

inline double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace detail

// Per-microphone delay of a far-field source at angle theta.
inline double channel_delay(const dsp::ArrayGeometry& geo, std::size_t channel, double theta) {
  return geo.distance_from_reference(channel) * std::cos(theta) / geo.sound_speed;
}

struct SimulateOptions {
  // Forces the DOAs instead of sampling them.
  bool fixed_doa = false;
  std::array<double, 2> doa{kPi / 3.0, 2.0 * kPi / 3.0};
  // Drops the interferer (single-source scenes for feature checks).
  bool single_source = false;
};

inline MixtureScene simulate(const SceneConfig& cfg, std::uint64_t seed, const SimulateOptions& opt = {}) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t length = cfg.samples();
  const double fs = cfg.sample_rate;
  const std::size_t margin = static_cast<std::size_t>(std::lround(cfg.margin_ms * fs / 1000.0));
  const std::size_t ramp = static_cast<std::size_t>(std::lround(cfg.ramp_ms * fs / 1000.0));
  const std::size_t usable = length - 2 * margin;
  const std::size_t active = static_cast<std::size_t>(std::lround(usable * (1.0 + cfg.overlap_ratio) / 2.0));

  MixtureScene scene;
  scene.sample_rate = cfg.sample_rate;
  scene.geometry = cfg.geometry;
  scene.seed = seed;

  if (opt.fixed_doa) {
    scene.doa = opt.doa;
  } else {
    double diff = 0.0;
    if (cfg.doa_sampling == DoaSampling::UniformBuckets) {
      static constexpr std::array<double, 5> edges{0.0, 15.0, 45.0, 90.0, 180.0};
      const std::size_t b = rng.below(4);
      diff = rng.uniform(edges[b], edges[b + 1]) * kPi / 180.0;
    } else {
      diff = rng.uniform(0.0, kPi);
    }
    const double first = rng.uniform(0.0, kPi - diff);
    scene.doa = {first, first + diff};
    if (rng.uniform() < 0.5) std::swap(scene.doa[0], scene.doa[1]);
  }

  const std::array<std::pair<std::size_t, std::size_t>, 2> spans{
      std::pair{margin, margin + active}, std::pair{margin + usable - active, margin + usable}};
  const std::size_t overlap_len = spans[0].second > spans[1].first ? spans[0].second - spans[1].first : 0;
  scene.overlap_ratio = opt.single_source ? 0.0 : static_cast<double>(overlap_len) / static_cast<double>(usable);

  std::array<std::vector<cdouble>, 2> spectra;
  std::array<double, 2> gains{1.0, 1.0};
  for (std::size_t s = 0; s < 2; ++s) {
    auto dry = detail::synth_source(rng, cfg.sample_rate, length, spans[s].first, spans[s].second, ramp);
    if (cfg.echo.enabled) {
      const std::size_t lag = static_cast<std::size_t>(std::lround(cfg.echo.delay_ms * fs / 1000.0));
      for (std::size_t i = length; i-- > lag;) dry[i] += cfg.echo.attenuation * dry[i - lag];
    }
    spectra[s].assign(dry.begin(), dry.end());
    fft(spectra[s], false);
  }

  // Reference images (zero delay) fix the SIR and the overall level.
  std::array<std::vector<double>, 2> ref{detail::delay_signal(spectra[0], 0.0, fs),
                                         detail::delay_signal(spectra[1], 0.0, fs)};
  const double e0 = detail::energy(ref[0]), e1 = detail::energy(ref[1]);
  gains[1] = opt.single_source ? 0.0 : std::sqrt(e0 / e1 / std::pow(10.0, cfg.sir_db / 10.0));
  {
    std::vector<double> mix(length);
    for (std::size_t i = 0; i < length; ++i) mix[i] = ref[0][i] + gains[1] * ref[1][i];
    const double rms = std::sqrt(detail::energy(mix) / static_cast<double>(length));
    const double level = cfg.mixture_rms / rms;
    gains[0] *= level;
    gains[1] *= level;
  }
  for (std::size_t s = 0; s < 2; ++s) {
    scene.sources[s].resize(length);
    for (std::size_t i = 0; i < length; ++i) scene.sources[s][i] = static_cast<float>(gains[s] * ref[s][i]);
  }
  scene.sir_db = opt.single_source ? std::numeric_limits<double>::infinity()
                                   : 10.0 * std::log10(gains[0] * gains[0] * e0 / (gains[1] * gains[1] * e1));

  const std::size_t channels = cfg.geometry.channels();
  scene.mixture.assign(channels, std::vector<float>(length, 0.0f));
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t s = 0; s < 2; ++s) {
      if (gains[s] == 0.0) continue;
      const double tau = channel_delay(cfg.geometry, c, scene.doa[s]);
      const auto image = c == 0 ? ref[s] : detail::delay_signal(spectra[s], tau, fs);
      for (std::size_t i = 0; i < length; ++i) scene.mixture[c][i] += static_cast<float>(gains[s] * image[i]);
    }
  }
  return scene;
}

// Image of one source at one channel, for verification.
inline std::vector<float> source_image(const MixtureScene& scene, std::size_t source, std::size_t channel) {
  std::vector<cdouble> spec(scene.sources[source].begin(), scene.sources[source].end());
  fft(spec, false);
  const auto img =
      detail::delay_signal(spec, channel_delay(scene.geometry, channel, scene.doa[source]), scene.sample_rate);
  return {img.begin(), img.end()};
}

enum class Split { Train, Validation, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

struct SplitRatios {
  double validation = 0.05;
  double test = 0.05;
};

struct DatasetEntry {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  Split split = Split::Train;
};

// Scene i uses a seed derived from (seed, i); a seeded permutation assigns
// floor(n * ratio) scenes (at least one) to validation and test, the rest to
// training.
inline std::vector<DatasetEntry> plan_dataset(std::size_t n_scenes, std::uint64_t seed, SplitRatios ratios = {}) {
  if (n_scenes < 3) throw ConfigError("dataset: at least 3 scenes are required");
  const std::size_t n_val =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(n_scenes) * ratios.validation + 1e-9)));
  const std::size_t n_test =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(static_cast<double>(n_scenes) * ratios.test + 1e-9)));
  if (n_val + n_test >= n_scenes) throw ConfigError("dataset: split ratios leave no training scenes");
  std::vector<std::size_t> order(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) order[i] = i;
  Rng rng(Rng::derive(seed, 0xDA7A));
  for (std::size_t i = n_scenes - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::vector<DatasetEntry> plan(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    plan[i].index = i;
    plan[i].seed = Rng::derive(seed, i);
  }
  for (std::size_t k = 0; k < n_val; ++k) plan[order[k]].split = Split::Validation;
  for (std::size_t k = n_val; k < n_val + n_test; ++k) plan[order[k]].split = Split::Test;
  return plan;
}

struct Dataset {
  std::vector<MixtureScene> train, validation, test;
};

inline Dataset make_dataset(const SceneConfig& cfg, std::size_t n_scenes, std::uint64_t seed, SplitRatios ratios = {}) {
  Dataset data;
  for (const auto& entry : plan_dataset(n_scenes, seed, ratios)) {
    auto scene = simulate(cfg, entry.seed);
    switch (entry.split) {
      case Split::Train: data.train.push_back(std::move(scene)); break;
      case Split::Validation: data.validation.push_back(std::move(scene)); break;
      case Split::Test: data.test.push_back(std::move(scene)); break;
    }
  }
  return data;
}

inline json geometry_to_json(const dsp::ArrayGeometry& geo) {
  json pairs = json::array();
  for (const auto& [a, b] : geo.pairs) pairs.push_back({a, b});
  return {{"positions_m", geo.positions}, {"sound_speed", geo.sound_speed}, {"pairs", pairs}};
}

inline dsp::ArrayGeometry geometry_from_json(const json& j) {
  dsp::ArrayGeometry geo;
  geo.positions = j.at("positions_m").get<std::vector<double>>();
  geo.sound_speed = j.at("sound_speed").get<double>();
  geo.pairs.clear();
  for (const auto& p : j.at("pairs")) geo.pairs.emplace_back(p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>());
  geo.validate();
  return geo;
}

inline json scene_to_json(const MixtureScene& s) {
  return {{"seed", s.seed},
          {"doa_rad", {s.doa[0], s.doa[1]}},
          {"doa_difference_deg", s.doa_difference_deg()},
          {"bucket", kBucketNames[s.bucket()]},
          {"sir_db", s.sir_db},
          {"overlap_ratio", s.overlap_ratio},
          {"samples", s.length()}};
}

}  // namespace quantsep::mixgen
