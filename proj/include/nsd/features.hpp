#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "nsd/error.hpp"

namespace nsd::features {

inline constexpr std::size_t kEpochLength = 256;
inline constexpr double kSampleRate = 32.0;
inline constexpr std::size_t kNumFeatures = 55;
inline constexpr std::size_t kNumBins = kEpochLength / 2 + 1;
inline constexpr double kBinWidth = kSampleRate / static_cast<double>(kEpochLength);

// Index layout of the 55-element feature vector.
namespace index {
inline constexpr std::size_t total_power = 0;
inline constexpr std::size_t peak_frequency = 1;
inline constexpr std::size_t sef80 = 2, sef90 = 3, sef95 = 4;
inline constexpr std::size_t band_power = 5;      // 11 bands
inline constexpr std::size_t band_power_norm = 16; // 11 bands
inline constexpr std::size_t wavelet_energy = 27;
inline constexpr std::size_t curve_length = 28;
inline constexpr std::size_t extrema = 29;
inline constexpr std::size_t rms = 30;
inline constexpr std::size_t hjorth_activity = 31, hjorth_mobility = 32, hjorth_complexity = 33;
inline constexpr std::size_t zero_crossings = 34; // raw, diff, second diff
inline constexpr std::size_t ar_error = 37;       // orders 1..9
inline constexpr std::size_t skewness = 46;
inline constexpr std::size_t kurtosis = 47;
inline constexpr std::size_t nonlinear_energy = 48;
inline constexpr std::size_t var_diff1 = 49, var_diff2 = 50;
inline constexpr std::size_t shannon_entropy = 51;
inline constexpr std::size_t svd_entropy = 52;
inline constexpr std::size_t fisher_information = 53;
inline constexpr std::size_t spectral_entropy = 54;
} // namespace index

inline constexpr int kNumBands = 11;
inline constexpr int kArOrders = 9;
inline constexpr int kHistogramBins = 64;
inline constexpr int kEmbeddingDimension = 20;
inline constexpr int kWaveletLevels = 5;

struct FeatureVector {
  std::array<double, kNumFeatures> values{};

  double &operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  static constexpr std::size_t size() { return kNumFeatures; }
};

struct Spectrum {
  std::array<double, kNumBins> freqs{};
  std::array<double, kNumBins> psd{};
};

namespace detail {

inline void require_epoch(std::span<const double> x) {
  if (x.size() != kEpochLength)
    throw DataError("features: epoch must contain 256 samples");
}

inline double mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x)
    s += v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

inline double variance(std::span<const double> x) {
  if (x.empty())
    return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x)
    s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

inline std::vector<double> diff(std::span<const double> x) {
  std::vector<double> d(x.size() > 0 ? x.size() - 1 : 0);
  for (std::size_t i = 0; i + 1 < x.size(); ++i)
    d[i] = x[i + 1] - x[i];
  return d;
}

inline double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

} // namespace detail

// Hann-windowed (periodic), mean-removed, single-sided power spectral density.
inline Spectrum periodogram(std::span<const double> epoch) {
  detail::require_epoch(epoch);
  const double m = detail::mean(epoch);
  std::vector<double> xw(kEpochLength);
  double wsq = 0.0;
  for (std::size_t i = 0; i < kEpochLength; ++i) {
    const double w =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / kEpochLength);
    xw[i] = (epoch[i] - m) * w;
    wsq += w * w;
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, xw);
  Spectrum out;
  const double scale = 1.0 / (kSampleRate * wsq);
  for (std::size_t k = 0; k < kNumBins; ++k) {
    out.freqs[k] = static_cast<double>(k) * kBinWidth;
    double p = std::norm(spec[k]) * scale;
    if (k != 0 && k != kNumBins - 1)
      p *= 2.0;
    out.psd[k] = p;
  }
  return out;
}

// Power in (lo, hi] Hz.
inline double band_power(const Spectrum &s, double lo, double hi) {
  double p = 0.0;
  for (std::size_t k = 0; k < kNumBins; ++k)
    if (s.freqs[k] > lo && s.freqs[k] <= hi)
      p += s.psd[k] * kBinWidth;
  return p;
}

// Indices 0-26.
inline std::array<double, 27> spectral_feature_set(const Spectrum &s) {
  std::array<double, 27> f{};
  const double total = band_power(s, 0.0, 12.0);
  if (!(total > 0.0))
    return f;
  f[0] = total;

  double best = -1.0;
  for (std::size_t k = 0; k < kNumBins; ++k) {
    if (s.freqs[k] > 0.5 && s.freqs[k] <= 12.8 && s.psd[k] > best) {
      best = s.psd[k];
      f[1] = s.freqs[k];
    }
  }

  constexpr std::array<double, 3> edges{0.80, 0.90, 0.95};
  for (std::size_t e = 0; e < edges.size(); ++e) {
    double cumulative = 0.0;
    for (std::size_t k = 1; k < kNumBins && s.freqs[k] <= 12.0; ++k) {
      cumulative += s.psd[k] * kBinWidth;
      if (cumulative >= edges[e] * total) {
        f[2 + e] = s.freqs[k];
        break;
      }
    }
  }

  for (int b = 0; b < kNumBands; ++b) {
    const double p = band_power(s, b, b + 2.0);
    f[5 + static_cast<std::size_t>(b)] = p;
    f[16 + static_cast<std::size_t>(b)] = p / total;
  }
  return f;
}

struct Hjorth {
  double activity{0.0};
  double mobility{0.0};
  double complexity{0.0};
};

inline Hjorth hjorth(std::span<const double> x) {
  const double var0 = detail::variance(x);
  if (!(var0 > 0.0))
    return {};
  const auto d1 = detail::diff(x);
  const auto d2 = detail::diff(d1);
  const double var1 = detail::variance(d1);
  const double var2 = detail::variance(d2);
  Hjorth h;
  h.activity = var0;
  h.mobility = std::sqrt(var1 / var0);
  const double mobility_d1 = var1 > 0.0 ? std::sqrt(var2 / var1) : 0.0;
  h.complexity = h.mobility > 0.0 ? mobility_d1 / h.mobility : 0.0;
  return h;
}

// Levinson-Durbin on the biased autocorrelation of the mean-removed epoch;
// entry p-1 is the AR(p) prediction-error variance.
inline std::array<double, kArOrders> ar_errors(std::span<const double> x) {
  std::array<double, kArOrders> err{};
  const std::size_t n = x.size();
  const double m = detail::mean(x);
  std::array<double, kArOrders + 1> r{};
  for (int lag = 0; lag <= kArOrders; ++lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + static_cast<std::size_t>(lag) < n; ++i)
      s += (x[i] - m) * (x[i + static_cast<std::size_t>(lag)] - m);
    r[static_cast<std::size_t>(lag)] = s / static_cast<double>(n);
  }
  if (!(r[0] > 0.0))
    return err;
  std::array<double, kArOrders + 1> a{};
  a[0] = 1.0;
  double e = r[0];
  for (int p = 1; p <= kArOrders; ++p) {
    double acc = r[static_cast<std::size_t>(p)];
    for (int j = 1; j < p; ++j)
      acc += a[static_cast<std::size_t>(j)] * r[static_cast<std::size_t>(p - j)];
    const double k = e > 0.0 ? -acc / e : 0.0;
    std::array<double, kArOrders + 1> next = a;
    for (int j = 1; j < p; ++j)
      next[static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(j)] +
                                          k * a[static_cast<std::size_t>(p - j)];
    next[static_cast<std::size_t>(p)] = k;
    a = next;
    e *= (1.0 - k * k);
    e = std::max(e, 0.0);
    err[static_cast<std::size_t>(p - 1)] = e;
  }
  return err;
}

// Sign changes between consecutive samples; exact zeros keep the previous sign.
inline int zero_crossings(std::span<const double> x) {
  int count = 0;
  int prev = 0;
  for (double v : x) {
    const int s = (v > 0.0) - (v < 0.0);
    if (s == 0)
      continue;
    if (prev != 0 && s != prev)
      ++count;
    prev = s;
  }
  return count;
}

// Periodized orthogonal Daubechies wavelet with four vanishing moments (8 taps).
inline constexpr std::array<double, 8> kDb4Scaling{
    0.23037781330885523,  0.7148465705525415,  0.6308807679295904,  -0.02798376941698385,
    -0.18703481171888114, 0.030841381835986965, 0.032883011666982945, -0.010597401784997278};

// Sum of squared detail coefficients over the first `levels` levels.
inline double wavelet_energy(std::span<const double> x, int levels = kWaveletLevels) {
  std::vector<double> approx(x.begin(), x.end());
  constexpr std::size_t taps = kDb4Scaling.size();
  double energy = 0.0;
  for (int level = 0; level < levels; ++level) {
    const std::size_t n = approx.size();
    if (n < 2 || n % 2 != 0)
      break;
    std::vector<double> next(n / 2);
    for (std::size_t i = 0; i < n / 2; ++i) {
      double a = 0.0, d = 0.0;
      for (std::size_t k = 0; k < taps; ++k) {
        const double v = approx[(2 * i + k) % n];
        a += kDb4Scaling[k] * v;
        const double g = ((k % 2) ? -1.0 : 1.0) * kDb4Scaling[taps - 1 - k];
        d += g * v;
      }
      next[i] = a;
      energy += d * d;
    }
    approx = std::move(next);
  }
  return energy;
}

struct Moments {
  double skewness{0.0};
  double kurtosis{0.0};
};

inline Moments moments(std::span<const double> x) {
  const double m = detail::mean(x);
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - m;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  const double n = static_cast<double>(x.size());
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (!(m2 > 0.0))
    return {};
  return {m3 / std::pow(m2, 1.5), m4 / (m2 * m2)};
}

// Indices 27-30 then 46-50, in that order.
inline std::array<double, 9> misc_time_set(std::span<const double> x) {
  std::array<double, 9> f{};
  f[0] = wavelet_energy(x);
  double curve = 0.0;
  for (std::size_t i = 0; i + 1 < x.size(); ++i)
    curve += std::abs(x[i + 1] - x[i]);
  f[1] = curve;
  int extrema = 0;
  for (std::size_t i = 1; i + 1 < x.size(); ++i)
    if ((x[i] - x[i - 1]) * (x[i + 1] - x[i]) < 0.0)
      ++extrema;
  f[2] = extrema;
  double sq = 0.0;
  for (double v : x)
    sq += v * v;
  f[3] = std::sqrt(sq / static_cast<double>(x.size()));
  const auto mom = moments(x);
  f[4] = mom.skewness;
  f[5] = mom.kurtosis;
  double nle = 0.0;
  for (std::size_t i = 1; i + 1 < x.size(); ++i)
    nle += x[i] * x[i] - x[i - 1] * x[i + 1];
  f[6] = x.size() > 2 ? nle / static_cast<double>(x.size() - 2) : 0.0;
  const auto d1 = detail::diff(x);
  const auto d2 = detail::diff(d1);
  f[7] = detail::variance(d1);
  f[8] = detail::variance(d2);
  return f;
}

// Indices 51-54: Shannon, SVD entropy, Fisher information, spectral entropy.
inline std::array<double, 4> info_theory_set(std::span<const double> x, const Spectrum &s) {
  std::array<double, 4> f{};
  if (!(detail::variance(x) > 0.0))
    return f;

  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, width = *hi_it - *lo_it;
  std::array<int, kHistogramBins> hist{};
  for (double v : x) {
    auto bin = static_cast<int>((v - lo) / width * kHistogramBins);
    hist[static_cast<std::size_t>(std::clamp(bin, 0, kHistogramBins - 1))]++;
  }
  double h = 0.0;
  for (int c : hist)
    h -= detail::xlogx(static_cast<double>(c) / static_cast<double>(x.size()));
  f[0] = h;

  const int rows = static_cast<int>(x.size()) - kEmbeddingDimension + 1;
  Eigen::MatrixXd embed(rows, kEmbeddingDimension);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < kEmbeddingDimension; ++j)
      embed(i, j) = x[static_cast<std::size_t>(i + j)];
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(embed).singularValues();
  const double sv_sum = sv.sum();
  if (sv_sum > 0.0) {
    const Eigen::VectorXd p = sv / sv_sum;
    double ent = 0.0, fisher = 0.0;
    for (int i = 0; i < p.size(); ++i) {
      ent -= detail::xlogx(p(i));
      if (i + 1 < p.size() && p(i) > 0.0)
        fisher += (p(i + 1) - p(i)) * (p(i + 1) - p(i)) / p(i);
    }
    f[1] = ent;
    f[2] = fisher;
  }

  double total = 0.0;
  int bins = 0;
  for (std::size_t k = 0; k < kNumBins; ++k)
    if (s.freqs[k] > 0.0 && s.freqs[k] <= 12.8) {
      total += s.psd[k];
      ++bins;
    }
  if (total > 0.0 && bins > 1) {
    double se = 0.0;
    for (std::size_t k = 0; k < kNumBins; ++k)
      if (s.freqs[k] > 0.0 && s.freqs[k] <= 12.8)
        se -= detail::xlogx(s.psd[k] / total);
    f[3] = se / std::log(static_cast<double>(bins));
  }
  return f;
}

inline FeatureVector extract_features(std::span<const double> epoch) {
  detail::require_epoch(epoch);
  FeatureVector fv;
  const Spectrum spec = periodogram(epoch);
  const auto spectral = spectral_feature_set(spec);
  std::copy(spectral.begin(), spectral.end(), fv.values.begin());

  const auto misc = misc_time_set(epoch);
  for (std::size_t i = 0; i < 4; ++i)
    fv[index::wavelet_energy + i] = misc[i];
  for (std::size_t i = 0; i < 5; ++i)
    fv[index::skewness + i] = misc[4 + i];

  const Hjorth h = hjorth(epoch);
  fv[index::hjorth_activity] = h.activity;
  fv[index::hjorth_mobility] = h.mobility;
  fv[index::hjorth_complexity] = h.complexity;

  const auto d1 = detail::diff(epoch);
  const auto d2 = detail::diff(d1);
  fv[index::zero_crossings] = zero_crossings(epoch);
  fv[index::zero_crossings + 1] = zero_crossings(d1);
  fv[index::zero_crossings + 2] = zero_crossings(d2);

  const auto ar = ar_errors(epoch);
  std::copy(ar.begin(), ar.end(), fv.values.begin() + index::ar_error);

  const auto info = info_theory_set(epoch, spec);
  std::copy(info.begin(), info.end(), fv.values.begin() + index::shannon_entropy);
  return fv;
}

// Per-column z-score fitted on training rows only.
struct FeatureNormalizer {
  static constexpr double kStdFloor = 1e-12;
  std::array<double, kNumFeatures> mean{};
  std::array<double, kNumFeatures> stdev{};

  FeatureVector apply(const FeatureVector &fv) const {
    FeatureVector out;
    for (std::size_t j = 0; j < kNumFeatures; ++j)
      out[j] = stdev[j] > kStdFloor ? (fv[j] - mean[j]) / stdev[j] : 0.0;
    return out;
  }
};

inline FeatureNormalizer fit_normalizer(std::span<const FeatureVector> rows) {
  if (rows.size() < 2)
    throw DataError("fit_normalizer: need at least two training rows");
  FeatureNormalizer norm;
  const double n = static_cast<double>(rows.size());
  for (std::size_t j = 0; j < kNumFeatures; ++j) {
    double s = 0.0;
    for (const auto &r : rows)
      s += r[j];
    const double m = s / n;
    double ss = 0.0;
    for (const auto &r : rows)
      ss += (r[j] - m) * (r[j] - m);
    norm.mean[j] = m;
    norm.stdev[j] = std::max(std::sqrt(ss / n), FeatureNormalizer::kStdFloor);
  }
  return norm;
}

inline FeatureVector apply_normalizer(const FeatureVector &fv, const FeatureNormalizer &norm) {
  return norm.apply(fv);
}

} // namespace nsd::features
