// Copyright 2026 The quantsep Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "quantsep/common.hpp"

namespace quantsep {

using cdouble = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

namespace detail {

// In-place iterative radix-2; `inverse` flips the twiddle sign (no scaling).
inline void fft_radix2(std::vector<cdouble>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    std::vector<cdouble> tw(half);
    for (std::size_t k = 0; k < half; ++k) tw[k] = std::polar(1.0, ang * static_cast<double>(k));
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cdouble u = a[i + k];
        const cdouble v = a[i + k + half] * tw[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

// Bluestein chirp-z for lengths that are not a power of two.
inline void fft_bluestein(std::vector<cdouble>& a, bool inverse) {
  const std::size_t n = a.size();
  std::size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cdouble> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small for long transforms.
    const std::size_t k2 = (k * k) % (2 * n);
    chirp[k] = std::polar(1.0, sign * kPi * static_cast<double>(k2) / static_cast<double>(n));
  }
  std::vector<cdouble> x(m), y(m);
  for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
  y[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) y[k] = y[m - k] = std::conj(chirp[k]);
  fft_radix2(x, false);
  fft_radix2(y, false);
  for (std::size_t k = 0; k < m; ++k) x[k] *= y[k];
  fft_radix2(x, true);
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * inv_m * chirp[k];
}

}  // namespace detail

// Unnormalized DFT: X_k = sum_n x_n e^{-2 pi i k n / N}; the inverse applies
// the conjugate kernel and divides by N.
inline void fft(std::vector<cdouble>& a, bool inverse = false) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if (is_power_of_two(n))
    detail::fft_radix2(a, inverse);
  else
    detail::fft_bluestein(a, inverse);
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : a) v *= inv;
  }
}

// Real-input forward transform; returns the N/2+1 non-negative bins.
inline std::vector<cdouble> rfft(const std::vector<double>& x) {
  std::vector<cdouble> a(x.begin(), x.end());
  fft(a, false);
  a.resize(x.size() / 2 + 1);
  return a;
}

// Inverse of rfft for an even length n; imaginary parts of the DC and
// Nyquist bins are ignored.
inline std::vector<double> irfft(const std::vector<cdouble>& half, std::size_t n) {
  if (half.size() != n / 2 + 1) throw ShapeError(cat("irfft: ", half.size(), " bins for length ", n));
  std::vector<cdouble> a(n);
  a[0] = cdouble(half[0].real(), 0.0);
  for (std::size_t k = 1; k < n / 2 + (n % 2); ++k) {
    a[k] = half[k];
    a[n - k] = std::conj(half[k]);
  }
  if (n % 2 == 0) a[n / 2] = cdouble(half[n / 2].real(), 0.0);
  fft(a, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i].real();
  return out;
}

}  // namespace quantsep
