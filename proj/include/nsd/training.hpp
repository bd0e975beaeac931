#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nsd/error.hpp"
#include "nsd/fcnn.hpp"
#include "nsd/postproc.hpp"
#include "nsd/rng.hpp"
#include "nsd/text_io.hpp"

namespace nsd::training {

struct TrainConfig {
  double initial_lr{0.003};
  double lr_decay{0.9};
  int decay_every{20};
  double nesterov_momentum{0.9};
  int batch_size{2048};
  int total_iterations{60};
  std::uint64_t rng_seed{1};
  // Upper bound on examples drawn per class in one iteration; 0 disables it.
  int max_per_class{0};
  // Examples scored in infer mode for the per-iteration history.
  int history_eval_cap{1000};

  void validate() const {
    if (!(initial_lr > 0.0) || !(lr_decay > 0.0) || decay_every < 1 ||
        !(nesterov_momentum >= 0.0 && nesterov_momentum < 1.0) || batch_size < 2 ||
        total_iterations < 1 || max_per_class < 0 || history_eval_cap < 2)
      throw ConfigError("training: invalid configuration");
  }
};

inline double lr_at(int iteration, const TrainConfig &cfg) {
  if (iteration < 0)
    throw ConfigError("lr_at: iteration must be non-negative");
  return cfg.initial_lr * std::pow(cfg.lr_decay, iteration / cfg.decay_every);
}

inline double cross_entropy(std::span<const double> probs, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= probs.size())
    throw DataError("cross_entropy: target out of range");
  return -std::log(std::max(probs[static_cast<std::size_t>(target)], 1e-38));
}

inline double cross_entropy_from_logits(std::span<const double> logits, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size())
    throw DataError("cross_entropy: target out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits)
    s += std::exp(l - mx);
  return mx + std::log(s) - logits[static_cast<std::size_t>(target)];
}

// v <- mu v - lr grad(theta + mu v); theta <- theta + v.
template <typename T, typename GradFn>
void nesterov_step(std::span<T> params, std::span<T> velocity, GradFn &&grad_fn, double lr,
                   double mu) {
  if (params.size() != velocity.size())
    throw DataError("nesterov_step: parameter/velocity size mismatch");
  std::vector<T> ahead(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    ahead[i] = params[i] + static_cast<T>(mu) * velocity[i];
  const std::vector<T> grad = grad_fn(std::span<const T>(ahead));
  if (grad.size() != params.size())
    throw DataError("nesterov_step: gradient size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = static_cast<T>(mu) * velocity[i] - static_cast<T>(lr) * grad[i];
    params[i] += velocity[i];
  }
}

// Standardized 256-sample epochs with binary labels.
struct EpochSet {
  std::vector<float> samples;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const float> epoch(std::size_t i) const {
    return std::span<const float>(samples).subspan(i * fcnn::kInputLength, fcnn::kInputLength);
  }
  template <typename R> void append(const R &epoch, int label) {
    if (std::size(epoch) != static_cast<std::size_t>(fcnn::kInputLength))
      throw DataError("EpochSet: epochs must have 256 samples");
    for (auto v : epoch)
      samples.push_back(static_cast<float>(v));
    labels.push_back(label);
  }
  void append(const EpochSet &other) {
    samples.insert(samples.end(), other.samples.begin(), other.samples.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  }
  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }
};

struct HistoryRow {
  int iteration{0};
  double train_loss{0.0};
  double train_auc{0.0};
  double val_auc{0.0};
  double lr{0.0};
};

struct TrainHistory {
  std::vector<HistoryRow> rows;
  int batch_size{0};           // configured
  int effective_batch_size{0}; // after clipping to the per-iteration set
  double nesterov_momentum{0.0};
  std::size_t size() const { return rows.size(); }
};

// Leading comment line carries the optimizer settings; val_auc is empty when
// no validation data was given.
inline void write_history_csv(const TrainHistory &h, const std::string &path) {
  auto out = text::open_output(path);
  std::string s = "# batch_size=" + std::to_string(h.batch_size) +
                  " effective_batch_size=" + std::to_string(h.effective_batch_size) +
                  " nesterov_momentum=";
  text::append_number(s, h.nesterov_momentum);
  s += "\niteration,train_loss,train_auc,val_auc,lr\n";
  for (const auto &r : h.rows) {
    s += std::to_string(r.iteration);
    s += ',';
    text::append_number(s, r.train_loss);
    s += ',';
    text::append_number(s, r.train_auc);
    s += ',';
    if (std::isfinite(r.val_auc))
      text::append_number(s, r.val_auc);
    s += ',';
    text::append_number(s, r.lr);
    s += '\n';
  }
  out << s;
  if (!out)
    throw IoError("write failed for '" + path + "'");
}

inline TrainHistory read_history_csv(const std::string &path) {
  auto in = text::open_input(path);
  TrainHistory h;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  auto number = [&](std::string_view v, std::size_t line_no) {
    double out = 0.0;
    if (!text::parse_number(v, out))
      throw FormatError(path + ":" + std::to_string(line_no) + ": bad number '" +
                        std::string(v) + "'");
    return out;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    if (line[0] == '#') {
      std::string v;
      if (text::header_value(line, "batch_size", v))
        h.batch_size = static_cast<int>(number(v, line_no));
      if (text::header_value(line, "effective_batch_size", v))
        h.effective_batch_size = static_cast<int>(number(v, line_no));
      if (text::header_value(line, "nesterov_momentum", v))
        h.nesterov_momentum = number(v, line_no);
      continue;
    }
    if (!header) {
      if (line != "iteration,train_loss,train_auc,val_auc,lr")
        throw FormatError(path + ":" + std::to_string(line_no) + ": unexpected history header");
      header = true;
      continue;
    }
    const auto f = text::split(line, ',');
    if (f.size() != 5)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 5 fields");
    HistoryRow r;
    r.iteration = static_cast<int>(number(f[0], line_no));
    r.train_loss = number(f[1], line_no);
    r.train_auc = number(f[2], line_no);
    r.val_auc = text::trim(f[3]).empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : number(f[3], line_no);
    r.lr = number(f[4], line_no);
    h.rows.push_back(r);
  }
  if (!header)
    throw FormatError(path + ": missing history header");
  return h;
}

// One iteration's worth of class-balanced batches (indices into the set).
// Each class contributes per_class examples; a class with fewer examples is
// topped up by sampling with replacement. Every batch holds equal numbers of
// both classes.
inline std::vector<std::vector<std::size_t>> balanced_batches(std::span<const int> labels,
                                                              int batch_size, int max_per_class,
                                                              Rng &rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] == 1 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw DataError("training: both classes must be present");
  std::size_t per_class = std::max(pos.size(), neg.size());
  if (max_per_class > 0)
    per_class = std::min(per_class, static_cast<std::size_t>(max_per_class));
  auto draw = [&](std::vector<std::size_t> &cls) {
    rng.shuffle(std::span<std::size_t>(cls));
    std::vector<std::size_t> out(cls.begin(),
                                 cls.begin() + static_cast<std::ptrdiff_t>(std::min(per_class, cls.size())));
    while (out.size() < per_class)
      out.push_back(cls[rng.below(cls.size())]);
    return out;
  };
  const auto p = draw(pos);
  const auto n = draw(neg);
  const std::size_t half = std::max<std::size_t>(
      1, std::min(per_class, static_cast<std::size_t>(batch_size / 2)));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < per_class; start += half) {
    const std::size_t end = std::min(per_class, start + half);
    std::vector<std::size_t> b;
    for (std::size_t k = start; k < end; ++k) {
      b.push_back(p[k]);
      b.push_back(n[k]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// Deterministic subset used for history metrics.
inline std::vector<std::size_t> history_subset(std::size_t n, int cap, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i)
    idx[i] = i;
  if (n > static_cast<std::size_t>(cap)) {
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(static_cast<std::size_t>(cap));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

inline double subset_auc(const fcnn::FcnnModel<float> &model, const EpochSet &set,
                         std::span<const std::size_t> idx) {
  if (idx.empty())
    return std::numeric_limits<double>::quiet_NaN();
  std::vector<float> buf;
  std::vector<std::uint8_t> labels;
  for (auto i : idx) {
    const auto e = set.epoch(i);
    buf.insert(buf.end(), e.begin(), e.end());
    labels.push_back(set.labels[i] == 1 ? 1 : 0);
  }
  if (std::count(labels.begin(), labels.end(), 1) == 0 ||
      std::count(labels.begin(), labels.end(), 0) == 0)
    return std::numeric_limits<double>::quiet_NaN();
  const auto p = fcnn::predict_seizure<float>(model, buf);
  return postproc::auc(p, labels);
}

struct TrainResult {
  fcnn::FcnnModel<float> model;
  TrainHistory history;
};

using ProgressFn = std::function<void(const HistoryRow &)>;

// One iteration is a full pass over a class-balanced resampling of the
// training set. Batch norm runs in train mode for updates; history metrics
// are computed in infer mode without post-processing.
inline TrainResult train_fcnn(const EpochSet &train, const EpochSet &val, const TrainConfig &cfg,
                              const ProgressFn &progress = {}) {
  cfg.validate();
  if (train.count(1) == 0 || train.count(0) == 0)
    throw DataError("train_fcnn: training data must contain both classes");
  if (train.count(0) + train.count(1) != train.size())
    throw DataError("train_fcnn: labels must be 0 or 1");

  TrainResult result;
  result.model = fcnn::init_model<float>(cfg.rng_seed);
  auto &model = result.model;
  std::vector<float> params = fcnn::to_flat(model);
  std::vector<float> velocity(params.size(), 0.0f);

  const auto train_idx = history_subset(train.size(), cfg.history_eval_cap, splitmix64(cfg.rng_seed ^ 0x7a11));
  const auto val_idx = history_subset(val.size(), cfg.history_eval_cap, splitmix64(cfg.rng_seed ^ 0x7a12));

  result.history.batch_size = cfg.batch_size;
  result.history.nesterov_momentum = cfg.nesterov_momentum;
  std::vector<float> buf;
  std::vector<int> targets;
  for (int it = 0; it < cfg.total_iterations; ++it) {
    Rng rng = Rng::stream(cfg.rng_seed, static_cast<std::uint64_t>(it) + 1);
    const auto batches = balanced_batches(train.labels, cfg.batch_size, cfg.max_per_class, rng);
    result.history.effective_batch_size =
        std::max(result.history.effective_batch_size, static_cast<int>(batches.front().size()));
    const double lr = lr_at(it, cfg);
    double loss_sum = 0.0;
    for (const auto &batch : batches) {
      buf.clear();
      targets.clear();
      for (auto i : batch) {
        const auto e = train.epoch(i);
        buf.insert(buf.end(), e.begin(), e.end());
        targets.push_back(train.labels[i]);
      }
      const auto input = fcnn::make_input<float>(buf, static_cast<int>(batch.size()));
      auto grad_fn = [&](std::span<const float> ahead) {
        fcnn::from_flat(model, ahead);
        const auto trace = fcnn::forward(model, input, fcnn::Mode::train);
        fcnn::update_running_stats(model.bn, trace.bn_cache);
        loss_sum += fcnn::mean_cross_entropy(trace.logits, targets);
        return fcnn::to_flat(fcnn::backward(model, trace, targets));
      };
      nesterov_step(std::span<float>(params), std::span<float>(velocity), grad_fn, lr,
                    cfg.nesterov_momentum);
      fcnn::from_flat(model, std::span<const float>(params));
      if (!std::isfinite(params[0]) || !std::isfinite(loss_sum))
        throw NumericalError("train_fcnn: non-finite parameters or loss at iteration " +
                             std::to_string(it));
    }
    HistoryRow row;
    row.iteration = it;
    row.train_loss = loss_sum / static_cast<double>(batches.size());
    row.train_auc = subset_auc(model, train, train_idx);
    row.val_auc = subset_auc(model, val, val_idx);
    row.lr = lr;
    result.history.rows.push_back(row);
    if (progress)
      progress(row);
  }
  return result;
}

struct LooSplit {
  std::vector<std::string> train;
  std::string validation;
  std::string test;
};

// Test = held-out subject; validation rotates over the remaining subjects
// with the held-out position and the seed; train = everything else.
inline LooSplit loo_split(std::span<const std::string> subjects, const std::string &held_out,
                          std::uint64_t seed = 0) {
  if (subjects.size() < 3)
    throw DataError("loo_split: need at least 3 subjects");
  const auto it = std::find(subjects.begin(), subjects.end(), held_out);
  if (it == subjects.end())
    throw DataError("loo_split: unknown subject '" + held_out + "'");
  const auto test_pos = static_cast<std::size_t>(it - subjects.begin());
  std::vector<std::string> remaining;
  for (const auto &s : subjects)
    if (s != held_out)
      remaining.push_back(s);
  if (remaining.size() + 1 != subjects.size())
    throw DataError("loo_split: duplicate subject ids");
  LooSplit split;
  split.test = held_out;
  const std::size_t v = (test_pos + static_cast<std::size_t>(seed % remaining.size())) % remaining.size();
  split.validation = remaining[v];
  for (std::size_t i = 0; i < remaining.size(); ++i)
    if (i != v)
      split.train.push_back(remaining[i]);
  return split;
}

} // namespace nsd::training
