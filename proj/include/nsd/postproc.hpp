#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "nsd/error.hpp"

namespace nsd::postproc {

// 1 Hz seizure probabilities.
struct ProbabilityTrace {
  std::vector<double> values;
  double start_time_s{0.0};

  std::size_t size() const { return values.size(); }
};

using DetectionMask = std::vector<std::uint8_t>;

struct EpochProbability {
  double start_time_s{0.0};
  double probability{0.0};
};

// Second t takes the probability of the epoch whose centre is nearest t + 0.5
// (ties go to the earlier epoch).
inline ProbabilityTrace trace_from_epoch_probs(std::span<const EpochProbability> epochs,
                                               std::size_t duration_s,
                                               double window_s = 8.0) {
  if (epochs.empty())
    throw DataError("trace_from_epoch_probs: no epochs");
  for (std::size_t i = 1; i < epochs.size(); ++i)
    if (epochs[i].start_time_s < epochs[i - 1].start_time_s)
      throw DataError("trace_from_epoch_probs: epochs must be sorted by start time");
  ProbabilityTrace trace;
  trace.values.resize(duration_s);
  const double half = window_s / 2.0;
  std::size_t k = 0;
  for (std::size_t t = 0; t < duration_s; ++t) {
    const double target = static_cast<double>(t) + 0.5;
    while (k + 1 < epochs.size() &&
           std::abs(epochs[k + 1].start_time_s + half - target) <
               std::abs(epochs[k].start_time_s + half - target))
      ++k;
    trace.values[t] = epochs[k].probability;
  }
  return trace;
}

// Centred moving average; the window shrinks at the edges.
inline ProbabilityTrace moving_average(const ProbabilityTrace &trace, int window_s = 61) {
  if (window_s < 1 || window_s % 2 == 0)
    throw DataError("moving_average: window must be a positive odd number of seconds");
  const std::size_t n = trace.size();
  const auto half = static_cast<std::size_t>(window_s / 2);
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    prefix[i + 1] = prefix[i] + trace.values[i];
  ProbabilityTrace out;
  out.start_time_s = trace.start_time_s;
  out.values.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t lo = t >= half ? t - half : 0;
    const std::size_t hi = std::min(n, t + half + 1);
    out.values[t] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

inline ProbabilityTrace fuse_channels(std::span<const ProbabilityTrace> traces) {
  if (traces.empty())
    throw DataError("fuse_channels: no channels");
  ProbabilityTrace out = traces[0];
  for (std::size_t c = 1; c < traces.size(); ++c) {
    if (traces[c].size() != out.size())
      throw DataError("fuse_channels: channel traces differ in length");
    for (std::size_t t = 0; t < out.size(); ++t)
      out.values[t] = std::max(out.values[t], traces[c].values[t]);
  }
  return out;
}

// Seconds above threshold, each maximal run widened by `collar_s` on both sides.
inline DetectionMask threshold_and_collar(const ProbabilityTrace &trace, double threshold,
                                          int collar_s = 30) {
  const std::size_t n = trace.size();
  DetectionMask mask(n, 0);
  const auto collar = static_cast<std::ptrdiff_t>(std::max(collar_s, 0));
  std::size_t t = 0;
  while (t < n) {
    if (!(trace.values[t] > threshold)) {
      ++t;
      continue;
    }
    std::size_t end = t;
    while (end + 1 < n && trace.values[end + 1] > threshold)
      ++end;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(t) - collar);
    const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1,
                                             static_cast<std::ptrdiff_t>(end) + collar);
    for (auto i = lo; i <= hi; ++i)
      mask[static_cast<std::size_t>(i)] = 1;
    t = end + 1;
  }
  return mask;
}

struct RocPoint {
  double sensitivity{0.0};
  double specificity{0.0};
  double threshold{0.0};
};

// Points ordered from the strictest threshold (+inf: sensitivity 0,
// specificity 1) down to the loosest (sensitivity 1, specificity 0).
struct RocCurve {
  std::vector<RocPoint> points;
};

inline RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size())
    throw DataError("roc_curve: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]))
      throw DataError("roc_curve: non-finite score");
    n_pos += labels[i] ? 1 : 0;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw DataError("roc_curve: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  RocCurve curve;
  curve.points.push_back({0.0, 1.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      if (labels[order[i]])
        ++tp;
      else
        ++fp;
      ++i;
    }
    curve.points.push_back({static_cast<double>(tp) / static_cast<double>(n_pos),
                            1.0 - static_cast<double>(fp) / static_cast<double>(n_neg), thr});
  }
  return curve;
}

// Trapezoidal area under sensitivity vs (1 - specificity).
inline double auc(const RocCurve &curve) {
  double area = 0.0;
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto &a = curve.points[k - 1];
    const auto &b = curve.points[k];
    area += (a.specificity - b.specificity) * (a.sensitivity + b.sensitivity) / 2.0;
  }
  return area;
}

// Area over specificity in [0.9, 1], normalized by the 0.1 span.
inline double auc90(const RocCurve &curve) {
  constexpr double fpr_max = 0.1;
  double area = 0.0;
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const double x0 = 1.0 - curve.points[k - 1].specificity;
    const double x1 = 1.0 - curve.points[k].specificity;
    const double y0 = curve.points[k - 1].sensitivity;
    const double y1 = curve.points[k].sensitivity;
    if (x0 >= fpr_max)
      break;
    if (x1 <= fpr_max) {
      area += (x1 - x0) * (y0 + y1) / 2.0;
    } else {
      const double y_cut = y0 + (y1 - y0) * (fpr_max - x0) / (x1 - x0);
      area += (fpr_max - x0) * (y0 + y_cut) / 2.0;
      break;
    }
  }
  return std::clamp(area / fpr_max, 0.0, 1.0);
}

inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  return auc(roc_curve(scores, labels));
}

// Both values in percent; empty when the annotation holds a single class.
struct SubjectScore {
  std::optional<double> auc;
  std::optional<double> auc90;
  bool defined() const { return auc.has_value(); }
};

inline SubjectScore evaluate_subject(const ProbabilityTrace &fused_trace,
                                     std::span<const std::uint8_t> fused_annotation) {
  if (fused_trace.size() != fused_annotation.size())
    throw DataError("evaluate_subject: trace and annotation differ in length");
  const auto positives = std::count_if(fused_annotation.begin(), fused_annotation.end(),
                                       [](std::uint8_t v) { return v != 0; });
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(fused_annotation.size()))
    return {};
  const auto curve = roc_curve(fused_trace.values, fused_annotation);
  return {100.0 * auc(curve), 100.0 * auc90(curve)};
}

} // namespace nsd::postproc
