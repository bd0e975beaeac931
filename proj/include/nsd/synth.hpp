#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "nsd/eeg_io.hpp"
#include "nsd/error.hpp"
#include "nsd/rng.hpp"

namespace nsd::eeg {

struct IntRange {
  int lo{0};
  int hi{0};
};

struct RealRange {
  double lo{0.0};
  double hi{0.0};
};

// Desk-scale stand-in for a clinical neonatal EEG corpus.
struct SynthConfig {
  int n_subjects{6};
  int duration_s{1800};
  IntRange seizure_events{3, 5};
  IntRange seizure_duration_s{60, 150};
  RealRange seizure_fundamental_hz{1.0, 3.0};
  double background_amplitude_uv{20.0};
  // Seizure amplitude relative to the background RMS.
  RealRange seizure_to_background{2.5, 4.0};
  RealRange subject_gain{0.6, 1.6};
  double sample_rate_hz{256.0};
  std::uint64_t rng_seed{7};

  void validate() const {
    if (n_subjects < 1)
      throw ConfigError("synth: n_subjects must be >= 1");
    if (duration_s < 8)
      throw ConfigError("synth: duration must be at least 8 s");
    if (seizure_events.lo < 0 || seizure_events.hi < seizure_events.lo)
      throw ConfigError("synth: empty seizure event range");
    if (seizure_duration_s.lo < 1 || seizure_duration_s.hi < seizure_duration_s.lo)
      throw ConfigError("synth: empty seizure duration range");
    if (seizure_fundamental_hz.lo < 1.0 || seizure_fundamental_hz.hi > 3.0 ||
        seizure_fundamental_hz.hi < seizure_fundamental_hz.lo)
      throw ConfigError("synth: seizure fundamental must lie within [1, 3] Hz");
    if (!(background_amplitude_uv > 0.0))
      throw ConfigError("synth: background amplitude must be positive");
    if (seizure_to_background.hi < seizure_to_background.lo || seizure_to_background.lo < 0.0)
      throw ConfigError("synth: empty seizure amplitude range");
    if (subject_gain.hi < subject_gain.lo || !(subject_gain.lo > 0.0))
      throw ConfigError("synth: empty subject gain range");
    if (!(sample_rate_hz >= 32.0) || std::fmod(sample_rate_hz, 32.0) != 0.0)
      throw ConfigError("synth: sample rate must be a multiple of 32 Hz");
    const long long worst = static_cast<long long>(seizure_events.hi) * seizure_duration_s.hi;
    if (2 * worst > duration_s)
      throw ConfigError("synth: requested seizure time exceeds 50% of the recording");
  }
};

struct SeizureEvent {
  int start_s{0};
  int duration_s{0};
  int first_channel{0};
  int n_channels{1};
  double fundamental_hz{2.0};
  double amplitude_uv{50.0};
  std::uint64_t phase_seed{0};
};

struct SyntheticSubject {
  Recording recording;
  AnnotationSet annotations;
  std::vector<SeizureEvent> events;
};

inline const std::vector<std::string> &bipolar_montage() {
  static const std::vector<std::string> names{"F4-C4", "C4-O2", "F3-C3", "C3-O1",
                                              "T4-C4", "C4-Cz", "Cz-C3", "C3-T3"};
  return names;
}

// White Gaussian noise through a 3-pole/3-zero -10 dB/decade pinking filter,
// scaled to unit RMS. The first samples are discarded as filter warm-up.
inline std::vector<double> pink_noise(Rng &rng, std::size_t n) {
  constexpr std::array<double, 4> b{0.049922035, -0.095993537, 0.050612699, -0.004408786};
  constexpr std::array<double, 4> a{1.0, -2.494956002, 2.017265875, -0.522189400};
  constexpr std::size_t warmup = 2048;
  std::vector<double> out(n);
  std::array<double, 4> xs{}, ys{};
  for (std::size_t i = 0; i < n + warmup; ++i) {
    for (int k = 3; k > 0; --k) {
      xs[k] = xs[k - 1];
      ys[k] = ys[k - 1];
    }
    xs[0] = rng.normal();
    ys[0] = b[0] * xs[0] + b[1] * xs[1] + b[2] * xs[2] + b[3] * xs[3] - a[1] * ys[1] -
            a[2] * ys[2] - a[3] * ys[3];
    if (i >= warmup)
      out[i - warmup] = ys[0];
  }
  double mean = 0.0;
  for (double v : out)
    mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double &v : out) {
    v -= mean;
    ss += v * v;
  }
  const double rms = std::sqrt(ss / static_cast<double>(n));
  if (rms > 0.0)
    for (double &v : out)
      v /= rms;
  return out;
}

// Spike-and-wave: fundamental plus two harmonics at 1/h amplitude, slow
// frequency and amplitude modulation, 5 s Hann onset/offset.
inline std::vector<double> seizure_waveform(const SeizureEvent &ev, double fs) {
  constexpr double taper_s = 5.0;
  const std::size_t n = static_cast<std::size_t>(std::llround(ev.duration_s * fs));
  std::vector<double> out(n);
  Rng rng(ev.phase_seed);
  const double fm_rate = rng.uniform(0.02, 0.08);
  const double fm_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double am_rate = rng.uniform(0.03, 0.1);
  const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double phase = rng.uniform(0.0, 1.0);
  const double duration = static_cast<double>(ev.duration_s);
  const double taper = std::min(taper_s, duration / 2.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double f = ev.fundamental_hz *
                     (1.0 + 0.05 * std::sin(2.0 * std::numbers::pi * fm_rate * t + fm_phase));
    phase += f / fs;
    double s = 0.0;
    for (int h = 1; h <= 3; ++h)
      s += std::sin(2.0 * std::numbers::pi * h * phase) / h;
    double env = 1.0 + 0.25 * std::sin(2.0 * std::numbers::pi * am_rate * t + am_phase);
    if (t < taper)
      env *= 0.5 * (1.0 - std::cos(std::numbers::pi * t / taper));
    else if (duration - t < taper)
      env *= 0.5 * (1.0 - std::cos(std::numbers::pi * (duration - t) / taper));
    out[i] = ev.amplitude_uv * env * s;
  }
  return out;
}

// Adds the event to the recording and marks its seconds on the affected channels.
inline void inject_seizure(Recording &rec, AnnotationSet &ann, const SeizureEvent &ev) {
  const double fs = rec.sample_rate_hz;
  if (ev.start_s < 0 || ev.start_s + ev.duration_s > static_cast<int>(ann.n_seconds()))
    throw ConfigError("synth: seizure event outside the recording");
  if (ev.first_channel < 0 || ev.n_channels < 1 ||
      ev.first_channel + ev.n_channels > static_cast<int>(rec.n_channels()))
    throw ConfigError("synth: seizure channel range outside the montage");
  const auto wave = seizure_waveform(ev, fs);
  const std::size_t offset = static_cast<std::size_t>(std::llround(ev.start_s * fs));
  for (int c = ev.first_channel; c < ev.first_channel + ev.n_channels; ++c) {
    auto &ch = rec.samples[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < wave.size() && offset + i < ch.size(); ++i)
      ch[offset + i] = static_cast<float>(ch[offset + i] + wave[i]);
    for (int t = ev.start_s; t < ev.start_s + ev.duration_s; ++t)
      ann.per_channel[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)] = 1;
  }
  ann.recompute_fused();
}

inline std::vector<SeizureEvent> plan_seizures(const SynthConfig &cfg, Rng &rng,
                                               double background_rms) {
  const int n_events =
      static_cast<int>(rng.between(cfg.seizure_events.lo, cfg.seizure_events.hi));
  std::vector<SeizureEvent> events(static_cast<std::size_t>(n_events));
  // Per-subject morphology and spatial extent.
  const double f0 = rng.uniform(cfg.seizure_fundamental_hz.lo, cfg.seizure_fundamental_hz.hi);
  const int n_affected = static_cast<int>(rng.between(1, 8));
  const int first = static_cast<int>(rng.between(0, 8 - n_affected));
  const double ratio = rng.uniform(cfg.seizure_to_background.lo, cfg.seizure_to_background.hi);

  int total = 0;
  for (auto &ev : events) {
    ev.duration_s =
        static_cast<int>(rng.between(cfg.seizure_duration_s.lo, cfg.seizure_duration_s.hi));
    total += ev.duration_s;
  }
  if (2 * total > cfg.duration_s)
    throw ConfigError("synth: requested seizure time exceeds 50% of the recording");

  // Split the free time into n+1 gaps, keeping a minimum separation when it fits.
  int min_gap = 30;
  if (cfg.duration_s - total - (n_events + 1) * min_gap < 0)
    min_gap = 0;
  const int free_time = cfg.duration_s - total - (n_events + 1) * min_gap;
  std::vector<double> weights(static_cast<std::size_t>(n_events) + 1);
  double wsum = 0.0;
  for (auto &w : weights) {
    w = rng.uniform() + 1e-3;
    wsum += w;
  }
  int cursor = 0;
  for (std::size_t k = 0; k < events.size(); ++k) {
    cursor += min_gap + static_cast<int>(std::floor(free_time * weights[k] / wsum));
    auto &ev = events[k];
    ev.start_s = cursor;
    ev.first_channel = first;
    ev.n_channels = n_affected;
    ev.fundamental_hz = f0 * rng.uniform(0.95, 1.05);
    ev.fundamental_hz = std::clamp(ev.fundamental_hz, cfg.seizure_fundamental_hz.lo,
                                   cfg.seizure_fundamental_hz.hi);
    ev.amplitude_uv = ratio * background_rms * rng.uniform(0.85, 1.15);
    ev.phase_seed = rng.next_u64();
    cursor += ev.duration_s;
  }
  return events;
}

// Deterministic in (cfg.rng_seed, subject_index).
inline SyntheticSubject generate_synthetic_subject(const SynthConfig &cfg, int subject_index) {
  cfg.validate();
  Rng rng = Rng::stream(cfg.rng_seed, static_cast<std::uint64_t>(subject_index));
  const auto &names = bipolar_montage();
  const std::size_t n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate_hz));

  SyntheticSubject subj;
  Recording &rec = subj.recording;
  rec.subject_id = std::to_string(subject_index);
  rec.sample_rate_hz = cfg.sample_rate_hz;
  rec.channel_names = names;
  const double gain = rng.uniform(cfg.subject_gain.lo, cfg.subject_gain.hi);
  const double background_rms = cfg.background_amplitude_uv * gain;
  for (std::size_t c = 0; c < names.size(); ++c) {
    Rng ch_rng = Rng::stream(rng.next_u64(), c);
    const double ch_gain = background_rms * ch_rng.uniform(0.8, 1.2);
    auto noise = pink_noise(ch_rng, n);
    std::vector<float> ch(n);
    for (std::size_t i = 0; i < n; ++i)
      ch[i] = static_cast<float>(ch_gain * noise[i]);
    rec.samples.push_back(std::move(ch));
  }

  subj.annotations = AnnotationSet::zeros(rec.subject_id, names,
                                          static_cast<std::size_t>(cfg.duration_s));
  subj.events = plan_seizures(cfg, rng, background_rms);
  for (const auto &ev : subj.events)
    inject_seizure(rec, subj.annotations, ev);
  return subj;
}

} // namespace nsd::eeg
