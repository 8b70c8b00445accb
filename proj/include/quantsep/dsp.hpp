// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Front-end signal processing: STFT/iSTFT, spectral and spatial features,
// complex masking and the SI-SNR metric.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "quantsep/common.hpp"
#include "quantsep/fft.hpp"

namespace quantsep::dsp {

enum class Window { SqrtHann, Hann, Rectangular };

inline Window window_from_name(const std::string& name) {
  if (name == "sqrt_hann") return Window::SqrtHann;
  if (name == "hann") return Window::Hann;
  if (name == "rectangular") return Window::Rectangular;
  throw ConfigError(cat("stft: unknown window '", name, "'"));
}

inline std::string window_name(Window w) {
  switch (w) {
    case Window::SqrtHann: return "sqrt_hann";
    case Window::Hann: return "hann";
    case Window::Rectangular: return "rectangular";
  }
  return "?";
}

struct StftConfig {
  int sample_rate = 16000;
  std::size_t fft_size = 512;
  std::size_t window_length = 512;
  std::size_t hop = 256;
  Window window = Window::SqrtHann;

  std::size_t bins() const { return fft_size / 2 + 1; }

  std::vector<double> window_samples() const {
    std::vector<double> w(window_length);
    const double n = static_cast<double>(window_length);
    for (std::size_t i = 0; i < window_length; ++i) {
      const double hann = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / n);
      switch (window) {
        case Window::SqrtHann: w[i] = std::sqrt(hann); break;
        case Window::Hann: w[i] = hann; break;
        case Window::Rectangular: w[i] = 1.0; break;
      }
    }
    return w;
  }

  // Sum of squared windows overlapped at the hop; constant iff the
  // analysis/synthesis pair reconstructs exactly.
  std::vector<double> overlap_envelope() const {
    const auto w = window_samples();
    std::vector<double> env(hop, 0.0);
    for (std::size_t i = 0; i < window_length; ++i) env[i % hop] += w[i] * w[i];
    return env;
  }

  void validate() const {
    if (sample_rate <= 0) throw ConfigError("stft: sample_rate must be positive");
    if (fft_size < 2 || fft_size % 2 != 0) throw ConfigError("stft: fft_size must be even");
    if (window_length == 0 || window_length > fft_size)
      throw ConfigError("stft: window_length must be in [1, fft_size]");
    if (hop == 0 || hop > window_length) throw ConfigError("stft: hop must be in [1, window_length]");
    const auto env = overlap_envelope();
    const auto [lo, hi] = std::minmax_element(env.begin(), env.end());
    if (*lo <= 0.0 || (*hi - *lo) > 1e-9 * *hi)
      throw ConfigError(cat("stft: ", window_name(window), " window of ", window_length, " samples at hop ", hop,
                            " does not satisfy constant overlap-add"));
  }
};

// Complex spectrum stored as [bins, frames] row-major real/imag planes.
struct Spectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<float> real;
  std::vector<float> imag;
  int sample_rate = 16000;
  std::size_t hop = 0;
  std::size_t window_length = 0;
  std::size_t signal_length = 0;

  std::size_t index(std::size_t f, std::size_t t) const { return f * frames + t; }
  std::complex<double> at(std::size_t f, std::size_t t) const {
    const std::size_t i = index(f, t);
    return {real[i], imag[i]};
  }
  bool same_shape(const Spectrogram& o) const { return bins == o.bins && frames == o.frames; }
};

// Analysis pads (window - hop) zeros on the left and enough on the right that
// every input sample is covered by a full set of overlapping frames, so the
// inverse reconstructs the whole signal.
class Stft {
 public:
  explicit Stft(StftConfig config = {}) : config_(config) {
    config_.validate();
    window_ = config_.window_samples();
    envelope_ = config_.overlap_envelope()[0];
  }

  const StftConfig& config() const { return config_; }

  std::size_t frames_for(std::size_t length) const {
    const std::size_t pad = left_pad();
    return (length - 1 + pad) / config_.hop + 1;
  }

  std::size_t left_pad() const { return config_.window_length - config_.hop; }

  Spectrogram forward(std::span<const float> wave) const {
    const std::size_t win = config_.window_length, hop = config_.hop, n_fft = config_.fft_size;
    if (wave.size() < win)
      throw ShapeError(cat("stft: signal of ", wave.size(), " samples is shorter than the window (", win, ")"));
    Spectrogram spec;
    spec.bins = config_.bins();
    spec.frames = frames_for(wave.size());
    spec.real.assign(spec.bins * spec.frames, 0.0f);
    spec.imag.assign(spec.bins * spec.frames, 0.0f);
    spec.sample_rate = config_.sample_rate;
    spec.hop = hop;
    spec.window_length = win;
    spec.signal_length = wave.size();
    const long pad = static_cast<long>(left_pad());
    std::vector<double> frame(n_fft);
    for (std::size_t t = 0; t < spec.frames; ++t) {
      std::fill(frame.begin(), frame.end(), 0.0);
      for (std::size_t i = 0; i < win; ++i) {
        const long j = static_cast<long>(t * hop + i) - pad;
        if (j >= 0 && j < static_cast<long>(wave.size())) frame[i] = window_[i] * wave[static_cast<std::size_t>(j)];
      }
      const auto bins = rfft(frame);
      for (std::size_t f = 0; f < spec.bins; ++f) {
        spec.real[spec.index(f, t)] = static_cast<float>(bins[f].real());
        spec.imag[spec.index(f, t)] = static_cast<float>(bins[f].imag());
      }
    }
    return spec;
  }

  std::vector<float> inverse(const Spectrogram& spec) const {
    check_spec(spec);
    const std::size_t win = config_.window_length, hop = config_.hop, n_fft = config_.fft_size;
    const long pad = static_cast<long>(left_pad());
    const long length = static_cast<long>(spec.signal_length);
    std::vector<double> acc(spec.signal_length, 0.0);
    std::vector<cdouble> bins(spec.bins);
    for (std::size_t t = 0; t < spec.frames; ++t) {
      for (std::size_t f = 0; f < spec.bins; ++f) bins[f] = spec.at(f, t);
      const auto frame = irfft(bins, n_fft);
      for (std::size_t i = 0; i < win; ++i) {
        const long j = static_cast<long>(t * hop + i) - pad;
        if (j >= 0 && j < length) acc[static_cast<std::size_t>(j)] += window_[i] * frame[i];
      }
    }
    std::vector<float> out(acc.size());
    for (std::size_t j = 0; j < acc.size(); ++j) out[j] = static_cast<float>(acc[j] / envelope_);
    return out;
  }

  // Vector-Jacobian product of inverse(): maps dL/dwave to dL/dreal, dL/dimag.
  void inverse_backward(const Spectrogram& shape, std::span<const float> grad_wave, std::span<float> grad_real,
                        std::span<float> grad_imag) const {
    check_spec(shape);
    const std::size_t win = config_.window_length, hop = config_.hop, n_fft = config_.fft_size;
    if (grad_wave.size() != shape.signal_length || grad_real.size() != shape.bins * shape.frames ||
        grad_imag.size() != grad_real.size())
      throw ShapeError("istft backward: buffer sizes do not match the spectrogram");
    const long pad = static_cast<long>(left_pad());
    const long length = static_cast<long>(shape.signal_length);
    std::vector<double> frame(n_fft);
    const double inv_n = 1.0 / static_cast<double>(n_fft);
    for (std::size_t t = 0; t < shape.frames; ++t) {
      std::fill(frame.begin(), frame.end(), 0.0);
      for (std::size_t i = 0; i < win; ++i) {
        const long j = static_cast<long>(t * hop + i) - pad;
        if (j >= 0 && j < length) frame[i] = window_[i] * grad_wave[static_cast<std::size_t>(j)] / envelope_;
      }
      const auto bins = rfft(frame);
      for (std::size_t f = 0; f < shape.bins; ++f) {
        const bool edge = f == 0 || (2 * f == n_fft);
        const double weight = (edge ? 1.0 : 2.0) * inv_n;
        grad_real[shape.index(f, t)] += static_cast<float>(weight * bins[f].real());
        grad_imag[shape.index(f, t)] += static_cast<float>(edge ? 0.0 : weight * bins[f].imag());
      }
    }
  }

 private:
  void check_spec(const Spectrogram& spec) const {
    if (spec.bins != config_.bins() || spec.hop != config_.hop || spec.window_length != config_.window_length ||
        spec.frames != frames_for(spec.signal_length))
      throw ShapeError(cat("istft: spectrogram [", spec.bins, ",", spec.frames, "] does not match the STFT config"));
  }

  StftConfig config_;
  std::vector<double> window_;
  double envelope_ = 1.0;
};

// log(|Y|^2 + floor) per bin.
inline std::vector<float> log_power(const Spectrogram& spec, double floor = 1e-10) {
  std::vector<float> out(spec.real.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = static_cast<double>(spec.real[i]) * spec.real[i] + static_cast<double>(spec.imag[i]) * spec.imag[i];
    out[i] = static_cast<float>(std::log(p + floor));
  }
  return out;
}

// Phase of y^m / y^n per bin in (-pi, pi]; bins where either channel is zero
// carry no phase and yield 0.
inline std::vector<float> ipd(const Spectrogram& m, const Spectrogram& n) {
  if (!m.same_shape(n)) throw ShapeError("ipd: spectrogram shapes differ");
  std::vector<float> out(m.real.size(), 0.0f);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::complex<double> ym(m.real[i], m.imag[i]), yn(n.real[i], n.imag[i]);
    const std::complex<double> cross = ym * std::conj(yn);
    if (cross == 0.0) continue;
    double phase = std::atan2(cross.imag(), cross.real());
    if (phase <= -kPi) phase += 2.0 * kPi;
    out[i] = static_cast<float>(phase);
  }
  return out;
}

struct ArrayGeometry {
  // Positions along the array axis in meters; channel 0 is the reference.
  std::vector<double> positions{0.0, 0.05, 0.11, 0.16};
  double sound_speed = 343.0;
  std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 3}, {1, 2}, {0, 1}};

  std::size_t channels() const { return positions.size(); }
  double distance_from_reference(std::size_t r) const { return positions.at(r) - positions.at(0); }

  void validate() const {
    if (positions.size() < 2) throw ConfigError("geometry: at least two microphones are required");
    if (sound_speed <= 0.0) throw ConfigError("geometry: sound speed must be positive");
    for (std::size_t i = 0; i < positions.size(); ++i)
      for (std::size_t j = i + 1; j < positions.size(); ++j)
        if (positions[i] == positions[j])
          throw ConfigError(cat("geometry: microphones ", i, " and ", j, " share position ", positions[i]));
    if (pairs.empty()) throw ConfigError("geometry: no microphone pairs selected");
    for (const auto& [a, b] : pairs)
      if (a >= positions.size() || b >= positions.size() || a == b)
        throw ConfigError(cat("geometry: invalid pair (", a, ",", b, ")"));
  }
};

// Far-field steering vector: element r is exp(-j 2 pi f d_1r cos(theta) / c).
inline std::vector<std::complex<double>> steering_vector(double theta, double freq_hz, const ArrayGeometry& geo) {
  std::vector<std::complex<double>> g(geo.channels());
  const double c = std::cos(theta);
  for (std::size_t r = 0; r < g.size(); ++r) {
    const double d = geo.distance_from_reference(r);
    if (d == 0.0) {
      g[r] = {1.0, 0.0};
      continue;
    }
    const double phi = 2.0 * kPi * freq_hz * d / geo.sound_speed;
    g[r] = std::polar(1.0, -phi * c);
  }
  return g;
}

inline double bin_frequency(std::size_t bin, std::size_t fft_size, int sample_rate) {
  return static_cast<double>(bin) * sample_rate / static_cast<double>(fft_size);
}

struct AngleFeatureOptions {
  // Pair the steering ratio G_n/G_m with y^m/y^n exactly as the formula is
  // usually printed. Off by default: that order scores an on-target plane
  // wave cos(2*dphi) instead of 1.
  bool literal_order = false;
};

// Sum over the selected pairs of the cosine similarity between the 2-D
// vectors of the steering ratio and the observed channel ratio.
inline std::vector<float> angle_feature(const std::vector<Spectrogram>& specs, double theta,
                                        const ArrayGeometry& geo, std::size_t fft_size,
                                        AngleFeatureOptions opt = {}) {
  if (specs.size() < 2) throw ShapeError("angle_feature: need at least two channels");
  if (specs.size() != geo.channels())
    throw ShapeError(cat("angle_feature: ", specs.size(), " spectrograms for ", geo.channels(), " microphones"));
  for (const auto& s : specs)
    if (!s.same_shape(specs[0])) throw ShapeError("angle_feature: spectrogram shapes differ");
  const std::size_t bins = specs[0].bins, frames = specs[0].frames;
  std::vector<float> out(bins * frames, 0.0f);
  for (std::size_t f = 0; f < bins; ++f) {
    const auto g = steering_vector(theta, bin_frequency(f, fft_size, specs[0].sample_rate), geo);
    for (const auto& [m, n] : geo.pairs) {
      const std::complex<double> ratio = opt.literal_order ? g[n] / g[m] : g[m] / g[n];
      const double ratio_norm = std::abs(ratio);
      for (std::size_t t = 0; t < frames; ++t) {
        // y^m conj(y^n) points along y^m / y^n.
        const std::complex<double> obs = specs[m].at(f, t) * std::conj(specs[n].at(f, t));
        const double obs_norm = std::abs(obs);
        if (obs_norm == 0.0) continue;
        const double cosine = (ratio.real() * obs.real() + ratio.imag() * obs.imag()) / (ratio_norm * obs_norm);
        out[f * frames + t] += static_cast<float>(std::clamp(cosine, -1.0, 1.0));
      }
    }
  }
  return out;
}

struct ComplexMask {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<float> real;
  std::vector<float> imag;
};

inline Spectrogram apply_cirm(const ComplexMask& mask, const Spectrogram& ref) {
  if (mask.bins != ref.bins || mask.frames != ref.frames) throw ShapeError("apply_cirm: mask and spectrum differ in shape");
  Spectrogram out = ref;
  for (std::size_t i = 0; i < out.real.size(); ++i) {
    const float mr = mask.real[i], mi = mask.imag[i], yr = ref.real[i], yi = ref.imag[i];
    out.real[i] = mr * yr - mi * yi;
    out.imag[i] = mr * yi + mi * yr;
  }
  return out;
}

// Scale-invariant SNR with mean removal, capped at +/- cap dB. The noise
// floor is relative to the estimate energy so rescaling is exact.
struct SiSnr {
  double cap_db = 60.0;
  double eps = 1e-8;

  // Returns the value and, when `grad` is non-empty, writes d(SI-SNR)/d(estimate).
  double evaluate(std::span<const float> estimate, std::span<const float> target, std::span<float> grad = {}) const {
    if (estimate.size() != target.size())
      throw ShapeError(cat("si_snr: estimate has ", estimate.size(), " samples, target ", target.size()));
    const std::size_t n = target.size();
    double mean_e = 0.0, mean_t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mean_e += estimate[i];
      mean_t += target[i];
    }
    mean_e /= static_cast<double>(n);
    mean_t /= static_cast<double>(n);
    double dot = 0.0, tt = 0.0, ee = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = estimate[i] - mean_e, t = target[i] - mean_t;
      dot += e * t;
      tt += t * t;
      ee += e * e;
    }
    if (tt <= 0.0) throw ShapeError("si_snr: target has zero energy");
    const double alpha = dot / tt;
    const double signal = alpha * alpha * tt;
    const double noise = std::max(ee - signal, 0.0) + eps * ee;
    double value = signal > 0.0 ? 10.0 * std::log10(signal / noise) : -cap_db;
    const bool capped = value >= cap_db || value <= -cap_db;
    value = std::clamp(value, -cap_db, cap_db);
    if (!grad.empty()) {
      if (grad.size() != n) throw ShapeError("si_snr: gradient buffer size mismatch");
      if (capped) {
        std::fill(grad.begin(), grad.end(), 0.0f);
      } else {
        const double k = 10.0 / std::log(10.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double s_t = alpha * (target[i] - mean_t);
          const double e = estimate[i] - mean_e;
          const double err = e - s_t + eps * e;
          grad[i] = static_cast<float>(k * (2.0 * s_t / signal - 2.0 * err / noise));
        }
      }
    }
    return value;
  }
};

inline double si_snr(std::span<const float> estimate, std::span<const float> target) {
  return SiSnr{}.evaluate(estimate, target);
}

}  // namespace quantsep::dsp
