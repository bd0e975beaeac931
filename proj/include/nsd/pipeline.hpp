#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsd/eeg_io.hpp"
#include "nsd/error.hpp"
#include "nsd/fcnn.hpp"
#include "nsd/features.hpp"
#include "nsd/postproc.hpp"
#include "nsd/preprocess.hpp"
#include "nsd/svm.hpp"
#include "nsd/text_io.hpp"
#include "nsd/training.hpp"

namespace nsd::pipeline {

// Everything the two classifiers need from one recording, computed once.
struct SubjectData {
  std::string id;
  std::size_t duration_s{0};
  std::size_t n_channels{0};
  std::vector<std::string> channel_names;
  std::optional<eeg::AnnotationSet> annotations;

  training::EpochSet fcnn; // stride 1 s, standardized
  std::vector<int> fcnn_channel;
  std::vector<double> fcnn_start;

  std::vector<features::FeatureVector> svm_rows; // stride 4 s, filtered
  std::vector<int> svm_labels;                   // 0 / 1
  std::vector<int> svm_channel;
  std::vector<double> svm_start;
};

struct PrepareOptions {
  bool fcnn{true};
  bool svm{true};
};

inline SubjectData prepare_subject(const eeg::Recording &raw, const eeg::AnnotationSet *ann,
                                   PrepareOptions opts = {}) {
  const auto filtered = preprocess::preprocess_recording(raw);
  SubjectData s;
  s.id = raw.subject_id;
  s.n_channels = raw.n_channels();
  s.channel_names = raw.channel_names;
  s.duration_s = static_cast<std::size_t>(raw.duration_s());
  if (s.duration_s < preprocess::kEpochSeconds)
    throw DataError("recording '" + raw.subject_id + "' is shorter than one epoch");
  if (ann) {
    if (ann->per_channel.size() != raw.n_channels())
      throw DataError("annotations for '" + raw.subject_id + "' have " +
                      std::to_string(ann->per_channel.size()) + " channels, recording has " +
                      std::to_string(raw.n_channels()));
    if (ann->n_seconds() < s.duration_s)
      throw DataError("annotations for '" + raw.subject_id + "' are shorter than the recording");
    s.annotations = *ann;
    s.annotations->fused.resize(s.duration_s);
    for (auto &ch : s.annotations->per_channel)
      ch.resize(s.duration_s);
  }
  auto label = [&](const preprocess::Epoch &ep, double thr) {
    return ann ? preprocess::label_epoch(ep, *ann, thr) : 0;
  };
  if (opts.fcnn) {
    const auto policy = preprocess::EpochingPolicy::fcnn();
    for (const auto &ep : preprocess::make_epochs(filtered, policy)) {
      s.fcnn.append(preprocess::standardize(std::span<const double>(ep.samples)),
                    label(ep, policy.label_threshold));
      s.fcnn_channel.push_back(ep.channel_index);
      s.fcnn_start.push_back(ep.start_time_s);
    }
  }
  if (opts.svm) {
    const auto policy = preprocess::EpochingPolicy::svm();
    for (const auto &ep : preprocess::make_epochs(filtered, policy)) {
      s.svm_rows.push_back(features::extract_features(ep.samples));
      s.svm_labels.push_back(label(ep, policy.label_threshold));
      s.svm_channel.push_back(ep.channel_index);
      s.svm_start.push_back(ep.start_time_s);
    }
  }
  return s;
}

// Epoch probabilities (channel-major) to one 1 Hz trace per channel.
inline std::vector<postproc::ProbabilityTrace>
channel_traces(std::span<const double> probs, std::span<const int> channel,
               std::span<const double> start, std::size_t n_channels, std::size_t duration_s) {
  std::vector<std::vector<postproc::EpochProbability>> per(n_channels);
  for (std::size_t i = 0; i < probs.size(); ++i)
    per[static_cast<std::size_t>(channel[i])].push_back({start[i], probs[i]});
  std::vector<postproc::ProbabilityTrace> out;
  for (const auto &eps : per)
    out.push_back(postproc::trace_from_epoch_probs(eps, duration_s));
  return out;
}

inline std::vector<postproc::ProbabilityTrace> fcnn_traces(const fcnn::FcnnModel<float> &model,
                                                           const SubjectData &s) {
  const auto p = fcnn::predict_seizure<float>(model, s.fcnn.samples);
  return channel_traces(p, s.fcnn_channel, s.fcnn_start, s.n_channels, s.duration_s);
}

inline std::vector<postproc::ProbabilityTrace> svm_traces(const svm::SvmModel &model,
                                                          const SubjectData &s) {
  std::vector<double> p;
  p.reserve(s.svm_rows.size());
  for (const auto &row : s.svm_rows)
    p.push_back(svm::predict_probability_raw(model, row));
  return channel_traces(p, s.svm_channel, s.svm_start, s.n_channels, s.duration_s);
}

struct Detection {
  std::vector<postproc::ProbabilityTrace> channels; // smoothed
  postproc::ProbabilityTrace fused;
  postproc::DetectionMask mask;
};

// Smoothing, channel-max fusion, threshold and collar.
inline Detection detect(const std::vector<postproc::ProbabilityTrace> &raw_channels,
                        double threshold, int collar_s = 30, int smoothing_s = 61) {
  Detection d;
  for (const auto &tr : raw_channels)
    d.channels.push_back(postproc::moving_average(tr, smoothing_s));
  d.fused = postproc::fuse_channels(d.channels);
  d.mask = postproc::threshold_and_collar(d.fused, threshold, collar_s);
  return d;
}

inline postproc::SubjectScore score(const std::vector<postproc::ProbabilityTrace> &raw_channels,
                                    const SubjectData &s) {
  if (!s.annotations)
    throw DataError("subject '" + s.id + "' has no annotations to score against");
  const auto d = detect(raw_channels, 0.5);
  return postproc::evaluate_subject(d.fused, s.annotations->fused);
}

struct ResultRow {
  std::string subject;
  postproc::SubjectScore svm;
  postproc::SubjectScore fcnn;
};

struct ResultsTable {
  std::vector<ResultRow> rows;

  // Mean over subjects whose score is defined.
  ResultRow average() const {
    ResultRow avg;
    avg.subject = "average";
    auto mean = [&](auto get) -> std::optional<double> {
      double sum = 0.0;
      int n = 0;
      for (const auto &r : rows)
        if (const auto v = get(r)) {
          sum += *v;
          ++n;
        }
      if (n == 0)
        return std::nullopt;
      return sum / n;
    };
    avg.svm.auc = mean([](const ResultRow &r) { return r.svm.auc; });
    avg.svm.auc90 = mean([](const ResultRow &r) { return r.svm.auc90; });
    avg.fcnn.auc = mean([](const ResultRow &r) { return r.fcnn.auc; });
    avg.fcnn.auc90 = mean([](const ResultRow &r) { return r.fcnn.auc90; });
    return avg;
  }

  std::string to_csv() const {
    std::string s = "subject,auc_svm,auc_fcnn,auc90_svm,auc90_fcnn\n";
    auto cell = [&](const std::optional<double> &v) {
      s += ',';
      if (v)
        text::append_number(s, *v);
    };
    auto row = [&](const ResultRow &r) {
      s += r.subject;
      cell(r.svm.auc);
      cell(r.fcnn.auc);
      cell(r.svm.auc90);
      cell(r.fcnn.auc90);
      s += '\n';
    };
    for (const auto &r : rows)
      row(r);
    row(average());
    return s;
  }

  void write_csv(const std::string &path) const {
    auto out = text::open_output(path);
    out << to_csv();
    if (!out)
      throw IoError("write failed for '" + path + "'");
  }
};

inline ResultsTable read_results_csv(const std::string &path) {
  auto in = text::open_input(path);
  std::string line;
  if (!std::getline(in, line) || line != "subject,auc_svm,auc_fcnn,auc90_svm,auc90_fcnn")
    throw FormatError(path + ": unexpected results header");
  ResultsTable t;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    const auto f = text::split(line, ',');
    if (f.size() != 5)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected 5 fields");
    auto opt = [&](std::string_view v) -> std::optional<double> {
      if (text::trim(v).empty())
        return std::nullopt;
      double out = 0.0;
      if (!text::parse_number(v, out))
        throw FormatError(path + ":" + std::to_string(line_no) + ": bad number '" +
                          std::string(v) + "'");
      return out;
    };
    ResultRow r{std::string(f[0]), {opt(f[1]), opt(f[3])}, {opt(f[2]), opt(f[4])}};
    if (r.subject != "average")
      t.rows.push_back(r);
  }
  return t;
}

// Stratified subsample for the kernel machine: up to half the budget for
// seizure rows, the rest background. Returned indices are sorted.
inline std::vector<std::size_t> svm_subsample(std::span<const int> labels, int max_rows,
                                              std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] == 1 ? pos : neg).push_back(i);
  if (max_rows <= 0 || labels.size() <= static_cast<std::size_t>(max_rows)) {
    std::vector<std::size_t> all(labels.size());
    for (std::size_t i = 0; i < all.size(); ++i)
      all[i] = i;
    return all;
  }
  const std::size_t n_pos = std::min(pos.size(), static_cast<std::size_t>(max_rows / 2));
  const std::size_t n_neg = std::min(neg.size(), static_cast<std::size_t>(max_rows) - n_pos);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(pos));
  rng.shuffle(std::span<std::size_t>(neg));
  std::vector<std::size_t> out(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_pos));
  out.insert(out.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_neg));
  std::sort(out.begin(), out.end());
  return out;
}

struct ExperimentConfig {
  training::TrainConfig fcnn{};
  svm::SvmTrainConfig svm{};
  int svm_max_rows{1500};
  bool run_fcnn{true};
  bool run_svm{true};
};

inline const SubjectData &find_subject(std::span<const SubjectData> subjects,
                                       const std::string &id) {
  for (const auto &s : subjects)
    if (s.id == id)
      return s;
  throw DataError("unknown subject '" + id + "'");
}

inline std::vector<std::string> subject_ids(std::span<const SubjectData> subjects) {
  std::vector<std::string> ids;
  for (const auto &s : subjects)
    ids.push_back(s.id);
  return ids;
}

inline training::TrainResult train_fcnn_fold(std::span<const SubjectData> subjects,
                                             const training::LooSplit &split,
                                             const training::TrainConfig &cfg,
                                             const training::ProgressFn &progress = {}) {
  training::EpochSet train, val;
  for (const auto &id : split.train)
    train.append(find_subject(subjects, id).fcnn);
  val.append(find_subject(subjects, split.validation).fcnn);
  return training::train_fcnn(train, val, cfg, progress);
}

// The kernel machine has its own internal cross-validation, so it trains on
// the training and validation subjects together.
inline svm::SvmModel train_svm_fold(std::span<const SubjectData> subjects,
                                    const training::LooSplit &split,
                                    const svm::SvmTrainConfig &cfg, int max_rows) {
  std::vector<features::FeatureVector> rows;
  std::vector<int> labels;
  auto ids = split.train;
  ids.push_back(split.validation);
  for (const auto &id : ids) {
    const auto &s = find_subject(subjects, id);
    rows.insert(rows.end(), s.svm_rows.begin(), s.svm_rows.end());
    labels.insert(labels.end(), s.svm_labels.begin(), s.svm_labels.end());
  }
  const auto keep = svm_subsample(labels, max_rows, splitmix64(cfg.seed ^ 0x5u));
  std::vector<features::FeatureVector> sub_rows;
  std::vector<int> y;
  for (auto i : keep) {
    sub_rows.push_back(rows[i]);
    y.push_back(labels[i] == 1 ? 1 : -1);
  }
  return svm::train_svm(sub_rows, y, cfg);
}

struct FoldOutcome {
  training::LooSplit split;
  std::optional<fcnn::FcnnModel<float>> fcnn_model;
  std::optional<training::TrainHistory> history;
  std::optional<svm::SvmModel> svm_model;
};

using FoldFn = std::function<void(const FoldOutcome &, const ResultRow &)>;

// Leave-one-subject-out: every subject is held out once, in corpus order.
inline ResultsTable run_loo_experiment(std::span<const SubjectData> subjects,
                                       const ExperimentConfig &cfg, const FoldFn &on_fold = {}) {
  const auto ids = subject_ids(subjects);
  ResultsTable table;
  for (const auto &held_out : ids) {
    FoldOutcome fold;
    fold.split = training::loo_split(ids, held_out, cfg.fcnn.rng_seed);
    const auto &test = find_subject(subjects, held_out);
    ResultRow row;
    row.subject = held_out;
    if (cfg.run_svm) {
      fold.svm_model = train_svm_fold(subjects, fold.split, cfg.svm, cfg.svm_max_rows);
      row.svm = score(svm_traces(*fold.svm_model, test), test);
    }
    if (cfg.run_fcnn) {
      auto trained = train_fcnn_fold(subjects, fold.split, cfg.fcnn);
      row.fcnn = score(fcnn_traces(trained.model, test), test);
      fold.fcnn_model = std::move(trained.model);
      fold.history = std::move(trained.history);
    }
    if (on_fold)
      on_fold(fold, row);
    table.rows.push_back(std::move(row));
  }
  return table;
}

// Corpus directory: manifest.json plus subject_<k>.rec.csv / .ann.csv.
struct CorpusEntry {
  std::string id;
  std::string recording;
  std::string annotations;
};

inline std::vector<CorpusEntry> read_corpus_manifest(const std::string &dir) {
  const auto path = (std::filesystem::path(dir) / "manifest.json").string();
  auto in = text::open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(path + ": " + e.what());
  }
  if (!j.contains("subjects") || !j["subjects"].is_array())
    throw FormatError(path + ": missing 'subjects' array");
  std::vector<CorpusEntry> out;
  try {
    for (const auto &s : j["subjects"]) {
      CorpusEntry e{s.at("id").get<std::string>(), s.at("recording").get<std::string>(),
                    s.at("annotations").get<std::string>()};
      e.recording = (std::filesystem::path(dir) / e.recording).string();
      e.annotations = (std::filesystem::path(dir) / e.annotations).string();
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(path + ": " + e.what());
  }
  if (out.size() < 1)
    throw FormatError(path + ": corpus lists no subjects");
  return out;
}

inline std::vector<SubjectData> load_corpus(const std::string &dir, PrepareOptions opts = {}) {
  std::vector<SubjectData> out;
  for (const auto &e : read_corpus_manifest(dir)) {
    auto rec = eeg::read_recording(e.recording);
    const auto ann = eeg::read_annotations(e.annotations);
    rec.subject_id = e.id;
    out.push_back(prepare_subject(rec, &ann, opts));
  }
  return out;
}

} // namespace nsd::pipeline
