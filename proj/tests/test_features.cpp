#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "nsd/features.hpp"
#include "nsd/preprocess.hpp"
#include "nsd/rng.hpp"
#include "nsd/synth.hpp"
#include "support/feature_oracle.hpp"

namespace {

using namespace nsd;
using namespace nsd::features;
using namespace nsd::testing;

Vec sinusoid(double f, double amp = 1.0, double phase = 0.0) {
  Vec x(256);
  for (std::size_t i = 0; i < 256; ++i)
    x[i] = amp * std::sin(2 * kPi * f * static_cast<double>(i) / 32.0 + phase);
  return x;
}

TEST(FeatureOracle, AllFeaturesMatchReferenceOn100RandomEpochs) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = random_epoch(rng);
    const auto got = extract_features(x);
    const auto want = reference_features(x);
    for (std::size_t j = 0; j < 55; ++j) {
      const double scale = std::max(std::abs(got[j]), std::abs(want[j]));
      ASSERT_LE(std::abs(got[j] - want[j]), 1e-9 * scale) << "trial " << trial << " feature " << j;
    }
  }
}

TEST(Periodogram, SinusoidZeroAndParseval) {
  const auto s = periodogram(sinusoid(4.0));
  const auto peak = std::max_element(s.psd.begin(), s.psd.end()) - s.psd.begin();
  EXPECT_DOUBLE_EQ(s.freqs[static_cast<std::size_t>(peak)], 4.0);
  EXPECT_DOUBLE_EQ(s.freqs[128], 16.0);
  const auto z = periodogram(Vec(256, 0.0));
  for (double v : z.psd)
    EXPECT_EQ(v, 0.0);
  // Parseval on the windowed signal, normalized by the window power.
  Rng rng(5);
  const auto x = random_epoch(rng);
  double m = 0.0;
  for (double v : x)
    m += v;
  m /= 256;
  double num = 0.0, wsq = 0.0;
  for (std::size_t i = 0; i < 256; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2 * kPi * static_cast<double>(i) / 256.0);
    num += std::pow((x[i] - m) * w, 2);
    wsq += w * w;
  }
  double area = 0.0;
  for (double v : periodogram(x).psd)
    area += v * kBinWidth;
  EXPECT_NEAR(area, num / wsq, 0.02 * num / wsq);
}

TEST(Periodogram, WhiteNoiseIsFlat) {
  Rng rng(6);
  std::array<double, kNumBins> avg{};
  for (int d = 0; d < 100; ++d) {
    Vec x(256);
    for (auto &v : x)
      v = rng.normal();
    const auto s = periodogram(x);
    for (std::size_t k = 0; k < kNumBins; ++k)
      avg[k] += s.psd[k] / 100.0;
  }
  // Expected density sigma^2 / (fs / 2) for the one-sided spectrum.
  for (std::size_t k = 4; k < 125; ++k)
    EXPECT_NEAR(avg[k], 1.0 / 16.0, 0.35 / 16.0) << k;
}

TEST(SpectralSet, SinusoidAndZero) {
  const auto f = spectral_feature_set(periodogram(sinusoid(4.0)));
  EXPECT_DOUBLE_EQ(f[1], 4.0);
  // Bands (3, 5] and (4, 6] are indices 5+3 and 5+4.
  EXPECT_GT(f[8] + f[9], 0.95 * f[0]);
  const auto z = spectral_feature_set(periodogram(Vec(256, 0.0)));
  for (double v : z)
    EXPECT_EQ(v, 0.0);
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto g = spectral_feature_set(periodogram(random_epoch(rng)));
    double disjoint = 0.0;
    for (int b = 0; b < 11; b += 2)
      disjoint += g[static_cast<std::size_t>(16 + b)];
    EXPECT_LE(disjoint, 1.0 + 1e-9);
    for (int b = 0; b < 11; ++b) {
      EXPECT_GE(g[static_cast<std::size_t>(16 + b)], 0.0);
      EXPECT_LE(g[static_cast<std::size_t>(16 + b)], 1.0);
    }
  }
}

TEST(Hjorth, Properties) {
  Rng rng(7);
  Vec x(256);
  for (auto &v : x)
    v = rng.normal();
  const auto h = hjorth(x);
  EXPECT_GE(h.activity, 0.7);
  EXPECT_LE(h.activity, 1.3);
  const auto c = hjorth(Vec(256, 4.0));
  EXPECT_EQ(c.activity, 0.0);
  EXPECT_EQ(c.mobility, 0.0);
  EXPECT_EQ(c.complexity, 0.0);
  Vec y = x;
  for (auto &v : y)
    v *= 3.5;
  const auto hs = hjorth(y);
  EXPECT_NEAR(hs.activity, 3.5 * 3.5 * h.activity, 1e-9 * hs.activity);
  EXPECT_NEAR(hs.mobility, h.mobility, 1e-9);
  EXPECT_NEAR(hs.complexity, h.complexity, 1e-9);
}

TEST(ArErrors, WhiteNoiseAr1AndMonotone) {
  Rng rng(8);
  Vec x(256);
  for (auto &v : x)
    v = rng.normal();
  const auto e = ar_errors(x);
  const double var = ref_var(x);
  EXPECT_NEAR(e[0], var, 0.15 * var);
  EXPECT_NEAR(e[8], var, 0.15 * var);

  double ratio = 0.0;
  for (int d = 0; d < 50; ++d) {
    Vec y(256);
    double prev = rng.normal() / std::sqrt(1 - 0.81);
    for (auto &v : y) {
      prev = 0.9 * prev + rng.normal();
      v = prev;
    }
    ratio += ar_errors(y)[0] * (1 - 0.81) / 50.0;
  }
  // Ratio taken against the stationary process variance 1 / (1 - a^2).
  EXPECT_NEAR(ratio, 0.19, 0.15 * 0.19);

  for (int t = 0; t < 100; ++t) {
    const auto z = ar_errors(random_epoch(rng));
    for (int p = 0; p + 1 < 9; ++p)
      EXPECT_LE(z[static_cast<std::size_t>(p + 1)], z[static_cast<std::size_t>(p)] + 1e-12);
  }
  for (double v : ar_errors(Vec(256, 1.0)))
    EXPECT_EQ(v, 0.0);
}

TEST(ZeroCrossings, Examples) {
  EXPECT_EQ(zero_crossings(Vec(256, 2.0)), 0);
  Vec alt(256);
  for (std::size_t i = 0; i < 256; ++i)
    alt[i] = i % 2 ? -1.0 : 1.0;
  EXPECT_EQ(zero_crossings(alt), 255);
  // Offset phase keeps samples off the exact zeros of the sinusoid.
  EXPECT_EQ(zero_crossings(sinusoid(2.0, 1.0, 1.0)), 32);
  EXPECT_EQ(zero_crossings(Vec{1.0, 0.0, 0.0, -1.0, 0.0, 2.0}), 2);
}

TEST(MiscTime, Examples) {
  const auto c = misc_time_set(Vec(256, -3.0));
  EXPECT_EQ(c[1], 0.0);
  EXPECT_EQ(c[2], 0.0);
  EXPECT_DOUBLE_EQ(c[3], 3.0);
  EXPECT_EQ(c[6], 0.0);
  EXPECT_EQ(c[7], 0.0);
  EXPECT_EQ(c[8], 0.0);
  Vec ramp(256);
  for (std::size_t i = 0; i < 256; ++i)
    ramp[i] = static_cast<double>(i);
  const auto r = misc_time_set(ramp);
  EXPECT_DOUBLE_EQ(r[1], 255.0);
  EXPECT_EQ(r[2], 0.0);
  EXPECT_NEAR(misc_time_set(sinusoid(1.0))[3], 1.0 / std::sqrt(2.0), 0.01 / std::sqrt(2.0));
}

TEST(Wavelet, FilterIsOrthonormalWithFourVanishingMoments) {
  const auto &h = kDb4Scaling;
  double sum = 0.0, sq = 0.0;
  for (double v : h) {
    sum += v;
    sq += v * v;
  }
  EXPECT_NEAR(sum, std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(sq, 1.0, 1e-12);
  for (int m = 1; m < 4; ++m) {
    double s = 0.0;
    for (int k = 0; k + 2 * m < 8; ++k)
      s += h[static_cast<std::size_t>(k)] * h[static_cast<std::size_t>(k + 2 * m)];
    EXPECT_NEAR(s, 0.0, 1e-12);
  }
  for (int p = 0; p < 4; ++p) {
    double s = 0.0;
    for (int k = 0; k < 8; ++k)
      s += (k % 2 ? -1.0 : 1.0) * std::pow(k, p) * h[static_cast<std::size_t>(7 - k)];
    EXPECT_NEAR(s, 0.0, 1e-9) << p;
  }
}

TEST(Wavelet, EnergySplitsOrthogonally) {
  Rng rng(10);
  const auto x = random_epoch(rng);
  // Periodized orthogonal transform: detail energy + final approximation
  // energy equals the signal energy.
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(x.data(), 256);
  double total = a.squaredNorm();
  Vec approx = x;
  for (int level = 0; level < 5; ++level) {
    Vec next(approx.size() / 2);
    for (std::size_t i = 0; i < next.size(); ++i)
      for (std::size_t k = 0; k < 8; ++k)
        next[i] += kDb4Scaling[k] * approx[(2 * i + k) % approx.size()];
    approx = next;
  }
  double tail = 0.0;
  for (double v : approx)
    tail += v * v;
  EXPECT_NEAR(wavelet_energy(x) + tail, total, 1e-9 * total);
}

TEST(InfoTheory, Examples) {
  const Vec sine = sinusoid(3.0, 2.0, 0.3);
  EXPECT_LT(info_theory_set(sine, periodogram(sine))[3], 0.3);
  Rng rng(11);
  Vec noise(256);
  for (auto &v : noise)
    v = rng.normal();
  EXPECT_GT(info_theory_set(noise, periodogram(noise))[3], 0.8);
  const Vec flat(256, 5.0);
  for (double v : info_theory_set(flat, periodogram(flat)))
    EXPECT_EQ(v, 0.0);
  Vec scaled = noise;
  for (auto &v : scaled)
    v *= 17.0;
  EXPECT_NEAR(info_theory_set(scaled, periodogram(scaled))[1],
              info_theory_set(noise, periodogram(noise))[1], 1e-9);
}

TEST(Extract, ZeroEpochAndFiniteness) {
  const auto z = extract_features(Vec(256, 0.0));
  for (double v : z.values)
    EXPECT_EQ(v, 0.0);
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto f = extract_features(random_epoch(rng));
    for (double v : f.values)
      EXPECT_TRUE(std::isfinite(v));
    EXPECT_EQ(f[29], std::round(f[29]));
    for (std::size_t j = 34; j < 37; ++j)
      EXPECT_EQ(f[j], std::round(f[j]));
  }
  EXPECT_THROW(extract_features(Vec(100, 0.0)), DataError);
}

TEST(Extract, AmplitudeScaleCovariance) {
  Rng rng(13);
  const auto x = random_epoch(rng);
  Vec y = x;
  const double a = 2.75;
  for (auto &v : y)
    v *= a;
  const auto fx = extract_features(x), fy = extract_features(y);
  auto rel = [](double p, double q) { return std::abs(p - q) / std::max(std::abs(q), 1e-300); };
  for (std::size_t j : {16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 32, 33, 52, 53, 54})
    EXPECT_LT(rel(fy[j], fx[j]), 1e-9) << j;
  for (std::size_t j : {0, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 31})
    EXPECT_LT(rel(fy[j], a * a * fx[j]), 1e-9) << j;
  EXPECT_LT(rel(fy[30], a * fx[30]), 1e-9);
}

TEST(Extract, TimeReversalInvariants) {
  Rng rng(14);
  const auto x = random_epoch(rng);
  Vec r(x.rbegin(), x.rend());
  const auto fx = extract_features(x), fr = extract_features(r);
  for (std::size_t j : {34, 35, 36})
    EXPECT_EQ(fx[j], fr[j]);
  EXPECT_NEAR(fx[30], fr[30], 1e-12 * fx[30]);
}

TEST(Extract, GoldenVectorIsPinned) {
  Rng rng(42);
  const auto f = extract_features(random_epoch(rng));
  std::ifstream in(NSD_TEST_DATA_DIR "/golden_features.txt");
  ASSERT_TRUE(in) << "missing golden file";
  for (std::size_t j = 0; j < 55; ++j) {
    double want = 0.0;
    ASSERT_TRUE(in >> want);
    EXPECT_NEAR(f[j], want, 1e-9 * std::max(1.0, std::abs(want))) << j;
  }
}

TEST(Extract, SeizureEpochStandsOutFromBackground) {
  eeg::SynthConfig cfg;
  cfg.duration_s = 600;
  cfg.seizure_events = {1, 1};
  cfg.seizure_duration_s = {120, 120};
  const auto s = eeg::generate_synthetic_subject(cfg, 3);
  const auto rec = preprocess::preprocess_recording(s.recording);
  const auto &ev = s.events.front();
  const auto epochs = preprocess::make_epochs(rec, preprocess::EpochingPolicy::svm());
  std::vector<FeatureVector> rows;
  for (const auto &e : epochs)
    rows.push_back(extract_features(e.samples));
  const auto norm = fit_normalizer(rows);
  auto row_at = [&](int channel, double start) {
    for (std::size_t i = 0; i < epochs.size(); ++i)
      if (epochs[i].channel_index == channel && epochs[i].start_time_s == start)
        return norm.apply(rows[i]);
    throw std::runtime_error("epoch not found");
  };
  const double mid = 4.0 * std::floor((ev.start_s + ev.duration_s / 2) / 4.0);
  const double before = ev.start_s >= 60 ? 4.0 * std::floor((ev.start_s - 40) / 4.0)
                                          : 4.0 * std::floor((ev.start_s + ev.duration_s + 40) / 4.0);
  const auto zs = row_at(ev.first_channel, mid), zb = row_at(ev.first_channel, before);
  int differing = 0;
  for (std::size_t j = 0; j < 55; ++j)
    differing += std::abs(zs[j] - zb[j]) > 3.0;
  EXPECT_GE(differing, 10);
}

TEST(Normalizer, Properties) {
  std::vector<FeatureVector> same(3);
  for (auto &r : same)
    r.values.fill(2.0);
  const auto n0 = fit_normalizer(same);
  for (double v : n0.apply(same[0]).values)
    EXPECT_EQ(v, 0.0);

  std::vector<FeatureVector> two(2);
  two[0][0] = 0.0;
  two[1][0] = 2.0;
  const auto n1 = fit_normalizer(two);
  EXPECT_DOUBLE_EQ(n1.apply(two[0])[0], -1.0);
  EXPECT_DOUBLE_EQ(n1.apply(two[1])[0], 1.0);

  Rng rng(15);
  std::vector<FeatureVector> rows;
  for (int i = 0; i < 40; ++i)
    rows.push_back(extract_features(random_epoch(rng)));
  const auto norm = fit_normalizer(rows);
  std::vector<FeatureVector> z;
  for (const auto &r : rows)
    z.push_back(norm.apply(r));
  for (std::size_t j = 0; j < 55; ++j) {
    double m = 0.0, ss = 0.0;
    for (const auto &r : z)
      m += r[j] / 40.0;
    for (const auto &r : z)
      ss += (r[j] - m) * (r[j] - m) / 40.0;
    EXPECT_LT(std::abs(m), 1e-9);
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-9);
  }
  const auto again = fit_normalizer(z);
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t j = 0; j < 55; ++j)
      EXPECT_NEAR(again.apply(z[i])[j], z[i][j], 1e-9);
  EXPECT_THROW(fit_normalizer(std::vector<FeatureVector>{}), DataError);
}

} // namespace
