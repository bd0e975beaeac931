#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "nsd/eeg_io.hpp"
#include "nsd/error.hpp"

namespace nsd::preprocess {

inline constexpr double kLowCutHz = 0.5;
inline constexpr double kHighCutHz = 12.8;
inline constexpr double kTargetRateHz = 32.0;
inline constexpr int kEpochSeconds = 8;
inline constexpr std::size_t kEpochSamples = 256;
// Order-4 Butterworth prototype -> order-8 band-pass transfer function.
inline constexpr int kPrototypeOrder = 4;
inline constexpr int kFilterOrder = 2 * kPrototypeOrder;
inline constexpr std::size_t kPadLength = 3 * kFilterOrder;

// Second-order section, a0 normalized to 1.
struct Biquad {
  double b0, b1, b2, a1, a2;
};

inline std::complex<double> response(std::span<const Biquad> sos, double freq_hz, double fs) {
  const std::complex<double> z = std::polar(1.0, 2.0 * std::numbers::pi * freq_hz / fs);
  const std::complex<double> zi = 1.0 / z, zi2 = zi * zi;
  std::complex<double> h = 1.0;
  for (const auto &s : sos)
    h *= (s.b0 + s.b1 * zi + s.b2 * zi2) / (1.0 + s.a1 * zi + s.a2 * zi2);
  return h;
}

// Digital Butterworth band-pass via prewarped bilinear transform. Every section
// carries one zero at z=+1 and one at z=-1; overall gain is unity at the
// prewarped centre frequency.
inline std::vector<Biquad> butterworth_bandpass(double low_hz, double high_hz, double fs,
                                                int prototype_order = kPrototypeOrder) {
  if (!(low_hz > 0.0 && high_hz > low_hz && high_hz < fs / 2.0))
    throw ConfigError("bandpass: invalid band edges");
  if (prototype_order < 2 || prototype_order % 2 != 0)
    throw ConfigError("bandpass: prototype order must be even");
  const double k = 2.0 * fs;
  const double w_lo = k * std::tan(std::numbers::pi * low_hz / fs);
  const double w_hi = k * std::tan(std::numbers::pi * high_hz / fs);
  const double bw = w_hi - w_lo;
  const double w0sq = w_lo * w_hi;

  std::vector<Biquad> sos;
  for (int m = 0; m < prototype_order / 2; ++m) {
    // Upper-half-plane prototype pole; its conjugate gives the mirrored sections.
    const double theta =
        std::numbers::pi * (2.0 * m + 1.0 + prototype_order) / (2.0 * prototype_order);
    const std::complex<double> p = std::polar(1.0, theta);
    const std::complex<double> half = p * bw / 2.0;
    const std::complex<double> disc = std::sqrt(half * half - w0sq);
    for (const auto s : {half + disc, half - disc}) {
      const std::complex<double> z = (k + s) / (k - s);
      Biquad q{1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)};
      sos.push_back(q);
    }
  }
  const double f0 = fs / std::numbers::pi * std::atan(std::sqrt(w0sq) / k);
  const double gain = std::abs(response(sos, f0, fs));
  const double per_section = std::pow(gain, -1.0 / static_cast<double>(sos.size()));
  for (auto &s : sos) {
    s.b0 *= per_section;
    s.b2 *= per_section;
  }
  return sos;
}

// Direct-form II transposed, optional initial state per section.
inline void sosfilt_inplace(std::span<const Biquad> sos, std::vector<double> &x,
                            const std::vector<std::array<double, 2>> &zi) {
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const auto &q = sos[s];
    double z1 = zi[s][0], z2 = zi[s][1];
    for (double &v : x) {
      const double in = v;
      const double out = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * out + z2;
      z2 = q.b2 * in - q.a2 * out;
      v = out;
    }
  }
}

// Steady-state section states for a constant input of value 1.
inline std::vector<std::array<double, 2>> sos_step_state(std::span<const Biquad> sos) {
  std::vector<std::array<double, 2>> zi(sos.size());
  double u = 1.0;
  for (std::size_t s = 0; s < sos.size(); ++s) {
    const auto &q = sos[s];
    const double y = u * (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
    const double z2 = q.b2 * u - q.a2 * y;
    const double z1 = q.b1 * u - q.a1 * y + z2;
    zi[s] = {z1, z2};
    u = y;
  }
  return zi;
}

// Forward-backward filtering with odd reflection padding and steady-state
// initial conditions scaled by the edge sample.
inline std::vector<double> filtfilt(std::span<const Biquad> sos, std::span<const double> x,
                                    std::size_t padlen = kPadLength) {
  if (x.size() <= padlen)
    throw DataError("bandpass: signal too short");
  const std::size_t n = x.size();
  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i)
    ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i)
    ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const auto unit = sos_step_state(sos);
  auto scaled = [&](double v) {
    auto zi = unit;
    for (auto &z : zi) {
      z[0] *= v;
      z[1] *= v;
    }
    return zi;
  };
  sosfilt_inplace(sos, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  sosfilt_inplace(sos, ext, scaled(ext.front()));
  std::reverse(ext.begin(), ext.end());
  return std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(padlen),
                             ext.begin() + static_cast<std::ptrdiff_t>(padlen + n));
}

// Zero-phase 0.5-12.8 Hz band-pass.
inline std::vector<double> bandpass_filter(std::span<const double> x, double fs) {
  if (!(fs > 2.0 * kHighCutHz))
    throw ConfigError("bandpass: sample rate must exceed 25.6 Hz");
  for (double v : x)
    if (!std::isfinite(v))
      throw DataError("bandpass: non-finite input");
  const auto sos = butterworth_bandpass(kLowCutHz, kHighCutHz, fs);
  return filtfilt(sos, x);
}

inline int decimation_factor(double fs_in, double fs_out) {
  const double ratio = fs_in / fs_out;
  const double rounded = std::round(ratio);
  if (!(fs_out > 0.0) || rounded < 1.0 || std::abs(ratio - rounded) > 1e-9)
    throw ConfigError("decimate: sample rate ratio must be an integer");
  return static_cast<int>(rounded);
}

// Keeps every factor-th sample; the band-pass has already removed content above
// the new Nyquist frequency.
inline std::vector<double> decimate(std::span<const double> x, double fs_in = 256.0,
                                    double fs_out = kTargetRateHz) {
  const auto factor = static_cast<std::size_t>(decimation_factor(fs_in, fs_out));
  std::vector<double> out(x.size() / factor);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x[i * factor];
  return out;
}

// Band-pass and downsample every channel to 32 Hz.
inline eeg::Recording preprocess_recording(const eeg::Recording &raw) {
  raw.validate();
  const double fs = raw.sample_rate_hz;
  decimation_factor(fs, kTargetRateHz);
  eeg::Recording out;
  out.subject_id = raw.subject_id;
  out.channel_names = raw.channel_names;
  out.sample_rate_hz = kTargetRateHz;
  const bool needs_filter = fs > kTargetRateHz;
  const auto sos = needs_filter ? butterworth_bandpass(kLowCutHz, kHighCutHz, fs)
                                : std::vector<Biquad>{};
  for (const auto &ch : raw.samples) {
    std::vector<double> x(ch.begin(), ch.end());
    std::vector<double> y = needs_filter ? decimate(filtfilt(sos, x), fs, kTargetRateHz) : x;
    out.samples.emplace_back(y.begin(), y.end());
  }
  return out;
}

struct Epoch {
  int channel_index{0};
  double start_time_s{0.0};
  std::vector<double> samples;
  std::optional<int> label;
};

struct EpochingPolicy {
  double window_s{8.0};
  double stride_s{4.0};
  double label_threshold{0.5};

  static EpochingPolicy svm() { return {8.0, 4.0, 0.5}; }
  static EpochingPolicy fcnn() { return {8.0, 1.0, 0.5}; }
};

inline std::size_t epoch_count(std::size_t n_samples, double fs, double stride_s) {
  if (n_samples < kEpochSamples)
    return 0;
  const auto stride = static_cast<std::size_t>(std::llround(stride_s * fs));
  return (n_samples - kEpochSamples) / stride + 1;
}

// Channel-major list of 8 s windows starting at 0, stride, 2*stride, ...
inline std::vector<Epoch> make_epochs(const eeg::Recording &rec, const EpochingPolicy &policy) {
  if (std::abs(rec.sample_rate_hz - kTargetRateHz) > 1e-9)
    throw ConfigError("make_epochs: recording must be sampled at 32 Hz");
  if (!(policy.stride_s > 0.0) || policy.stride_s > policy.window_s)
    throw ConfigError("make_epochs: stride must lie in (0, window]");
  if (std::abs(policy.window_s - kEpochSeconds) > 1e-12)
    throw ConfigError("make_epochs: window must be 8 s");
  const double fs = rec.sample_rate_hz;
  const auto stride = static_cast<std::size_t>(std::llround(policy.stride_s * fs));
  if (stride == 0)
    throw ConfigError("make_epochs: stride shorter than one sample");
  const std::size_t count = epoch_count(rec.n_samples(), fs, policy.stride_s);
  std::vector<Epoch> epochs;
  epochs.reserve(count * rec.n_channels());
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    const auto &ch = rec.samples[c];
    for (std::size_t k = 0; k < count; ++k) {
      Epoch ep;
      ep.channel_index = static_cast<int>(c);
      ep.start_time_s = static_cast<double>(k * stride) / fs;
      ep.samples.assign(ch.begin() + static_cast<std::ptrdiff_t>(k * stride),
                        ch.begin() + static_cast<std::ptrdiff_t>(k * stride + kEpochSamples));
      epochs.push_back(std::move(ep));
    }
  }
  return epochs;
}

// 1 iff more than `threshold` of the epoch's 8 annotated seconds are seizure on
// the epoch's own channel.
inline int label_epoch(const Epoch &epoch, const eeg::AnnotationSet &ann,
                       double threshold = 0.5) {
  if (epoch.channel_index < 0 ||
      static_cast<std::size_t>(epoch.channel_index) >= ann.per_channel.size())
    throw DataError("label_epoch: channel not annotated");
  const auto first = static_cast<long long>(std::floor(epoch.start_time_s + 1e-9));
  const long long last = first + kEpochSeconds;
  if (first < 0 || last > static_cast<long long>(ann.n_seconds()))
    throw DataError("label_epoch: epoch extends past the annotation");
  const auto &labels = ann.per_channel[static_cast<std::size_t>(epoch.channel_index)];
  int seizure = 0;
  for (long long t = first; t < last; ++t)
    seizure += labels[static_cast<std::size_t>(t)] ? 1 : 0;
  return static_cast<double>(seizure) / kEpochSeconds > threshold ? 1 : 0;
}

// Zero mean, unit population std; near-constant epochs map to zeros.
template <typename T> std::vector<T> standardize(std::span<const T> x) {
  std::vector<T> out(x.size(), T(0));
  if (x.empty())
    return out;
  double mean = 0.0;
  for (T v : x)
    mean += static_cast<double>(v);
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (T v : x) {
    const double d = static_cast<double>(v) - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(x.size()));
  if (sd < 1e-8)
    return out;
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<T>((static_cast<double>(x[i]) - mean) / sd);
  return out;
}

inline Epoch standardize_epoch(const Epoch &epoch) {
  Epoch out = epoch;
  out.samples = standardize(std::span<const double>(epoch.samples));
  return out;
}

} // namespace nsd::preprocess
