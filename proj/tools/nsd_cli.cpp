#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nsd/eeg_io.hpp"
#include "nsd/error.hpp"
#include "nsd/fcnn.hpp"
#include "nsd/features.hpp"
#include "nsd/pipeline.hpp"
#include "nsd/preprocess.hpp"
#include "nsd/svm.hpp"
#include "nsd/synth.hpp"
#include "nsd/text_io.hpp"
#include "nsd/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nsd;

namespace {

// Desk-scale training caps. Each iteration resamples at most this many
// examples per class, and history metrics score at most this many epochs.
constexpr int kMaxPerClass = 1500;
constexpr int kHistoryEvalCap = 256;

struct SynthArgs {
  int subjects{6};
  double hours{0.5};
  std::string seizures{"3-5"};
  std::string out;
  bool force{false};
};

struct TrainArgs {
  std::string corpus;
  std::string held_out;
  int iterations{60};
  int batch_size{2048};
  double lr{0.003};
  std::string out;
  int jobs{1};
};

struct FeaturesArgs {
  std::string recording;
  std::string annotations;
  std::string out;
};

struct DetectArgs {
  std::string model;
  std::string recording;
  double threshold{0.5};
  int collar{30};
  std::string out;
};

struct EvaluateArgs {
  std::string corpus;
  std::string experiment_dir;
  int jobs{1};
  std::string out;
};

struct LocalizeArgs {
  std::string model;
  std::string recording;
  std::string channel;
  std::vector<double> epoch_start;
  int top_n{1};
  std::string out;
};

// Runs fn(0..n-1) on up to `jobs` threads; the lowest-index failure is rethrown.
template <typename Fn> void parallel_for(std::size_t n, int jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::size_t next = 0;
  std::mutex m;
  auto worker = [&] {
    while (true) {
      std::size_t i;
      {
        std::lock_guard lock(m);
        if (next >= n)
          return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::clamp<long>(jobs, 1, static_cast<long>(std::max<std::size_t>(n, 1))));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back(worker);
    for (auto &t : pool)
      t.join();
  }
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

void write_text(const std::string &path, const std::string &content) {
  auto out = text::open_output(path);
  out << content;
  if (!out)
    throw IoError("write failed for '" + path + "'");
}

eeg::IntRange parse_seizure_range(const std::string &s) {
  int lo = 0, hi = 0;
  const auto dash = s.find('-');
  const bool ok = dash == std::string::npos
                      ? text::parse_number(s, lo) && (hi = lo, true)
                      : text::parse_number(std::string_view(s).substr(0, dash), lo) &&
                            text::parse_number(std::string_view(s).substr(dash + 1), hi);
  if (!ok || lo < 0 || hi < lo)
    throw UsageError("--seizures-per-subject must be N or LO-HI with 0 <= LO <= HI");
  return {lo, hi};
}

std::string subject_name(int k) { return "subject_" + std::to_string(k); }

int cmd_synth(const SynthArgs &a, std::uint64_t seed) {
  eeg::SynthConfig cfg;
  cfg.n_subjects = a.subjects;
  cfg.duration_s = static_cast<int>(std::lround(a.hours * 3600.0));
  cfg.seizure_events = parse_seizure_range(a.seizures);
  cfg.rng_seed = seed;
  cfg.validate();

  const fs::path dir(a.out);
  if (fs::exists(dir) && !fs::is_directory(dir))
    throw IoError("'" + a.out + "' exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !a.force)
    throw IoError("output directory '" + a.out + "' is not empty (use --force)");
  fs::create_directories(dir);

  json manifest;
  manifest["generator"] = {
      {"n_subjects", cfg.n_subjects},
      {"duration_s", cfg.duration_s},
      {"seizure_events", {cfg.seizure_events.lo, cfg.seizure_events.hi}},
      {"seizure_duration_s", {cfg.seizure_duration_s.lo, cfg.seizure_duration_s.hi}},
      {"seizure_fundamental_hz", {cfg.seizure_fundamental_hz.lo, cfg.seizure_fundamental_hz.hi}},
      {"background_amplitude_uv", cfg.background_amplitude_uv},
      {"seizure_to_background", {cfg.seizure_to_background.lo, cfg.seizure_to_background.hi}},
      {"subject_gain", {cfg.subject_gain.lo, cfg.subject_gain.hi}},
      {"sample_rate_hz", cfg.sample_rate_hz}};
  manifest["seed"] = seed;
  manifest["subjects"] = json::array();
  for (int k = 1; k <= cfg.n_subjects; ++k) {
    auto s = eeg::generate_synthetic_subject(cfg, k - 1);
    const auto id = subject_name(k);
    s.recording.subject_id = id;
    s.annotations.subject_id = id;
    const auto rec = id + ".rec.csv", ann = id + ".ann.csv";
    eeg::write_recording(s.recording, (dir / rec).string());
    eeg::write_annotations(s.annotations, (dir / ann).string());
    json events = json::array();
    for (const auto &e : s.events)
      events.push_back({{"start_s", e.start_s},
                        {"duration_s", e.duration_s},
                        {"first_channel", e.first_channel},
                        {"n_channels", e.n_channels},
                        {"fundamental_hz", e.fundamental_hz},
                        {"amplitude_uv", e.amplitude_uv}});
    manifest["subjects"].push_back(
        {{"id", id}, {"recording", rec}, {"annotations", ann}, {"events", events}});
    std::cerr << "wrote " << id << " (" << s.events.size() << " seizure events)\n";
  }
  write_text((dir / "manifest.json").string(), manifest.dump(2) + "\n");
  return 0;
}

int cmd_features(const FeaturesArgs &a) {
  const auto rec = eeg::read_recording(a.recording);
  std::optional<eeg::AnnotationSet> ann;
  if (!a.annotations.empty())
    ann = eeg::read_annotations(a.annotations);
  const auto s = pipeline::prepare_subject(rec, ann ? &*ann : nullptr, {false, true});
  std::string out = "channel,start_s,label";
  for (std::size_t j = 0; j < features::kNumFeatures; ++j)
    out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < s.svm_rows.size(); ++i) {
    out += s.channel_names[static_cast<std::size_t>(s.svm_channel[i])];
    out += ',';
    text::append_number(out, s.svm_start[i]);
    out += ',';
    if (ann)
      out += std::to_string(s.svm_labels[i]);
    for (double v : s.svm_rows[i].values) {
      out += ',';
      text::append_number(out, v);
    }
    out += '\n';
  }
  write_text(a.out, out);
  return 0;
}

// Experiment manifest: corpus path plus one entry per trained fold model.
json read_experiment_manifest(const fs::path &dir) {
  const auto path = dir / "experiment.json";
  if (!fs::exists(path))
    return json::object();
  auto in = text::open_input(path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

int cmd_train(const TrainArgs &a, std::uint64_t seed, bool fcnn_path) {
  pipeline::PrepareOptions opts{fcnn_path, !fcnn_path};
  const auto subjects = pipeline::load_corpus(a.corpus, opts);
  const auto ids = pipeline::subject_ids(subjects);
  std::vector<std::string> folds = ids;
  if (!a.held_out.empty()) {
    if (std::find(ids.begin(), ids.end(), a.held_out) == ids.end())
      throw DataError("unknown subject '" + a.held_out + "' in corpus '" + a.corpus + "'");
    folds = {a.held_out};
  }
  const fs::path dir(a.out);
  fs::create_directories(dir);

  training::TrainConfig tcfg;
  tcfg.total_iterations = a.iterations;
  tcfg.batch_size = a.batch_size;
  tcfg.initial_lr = a.lr;
  tcfg.rng_seed = seed;
  tcfg.max_per_class = kMaxPerClass;
  tcfg.history_eval_cap = kHistoryEvalCap;
  tcfg.validate();
  svm::SvmTrainConfig scfg;
  scfg.seed = seed;
  const int svm_rows = pipeline::ExperimentConfig{}.svm_max_rows;

  std::vector<json> entries(folds.size());
  std::mutex log;
  parallel_for(folds.size(), a.jobs, [&](std::size_t f) {
    const auto &held = folds[f];
    const auto split = training::loo_split(ids, held, seed);
    json entry{{"validation", split.validation}, {"train", split.train}, {"seed", seed}};
    if (fcnn_path) {
      auto progress = [&](const training::HistoryRow &r) {
        std::lock_guard lock(log);
        std::fprintf(stderr, "fold %s iteration %d loss %.5f train_auc %.4f val_auc %.4f\n",
                     held.c_str(), r.iteration, r.train_loss, r.train_auc, r.val_auc);
      };
      const auto result = pipeline::train_fcnn_fold(subjects, split, tcfg, progress);
      const auto model_file = "fold_" + held + ".fcn";
      const auto history_file = "fold_" + held + ".history.csv";
      fcnn::save_model(result.model, (dir / model_file).string());
      training::write_history_csv(result.history, (dir / history_file).string());
      entry["model"] = model_file;
      entry["history"] = history_file;
      entry["iterations"] = tcfg.total_iterations;
      entry["batch_size"] = tcfg.batch_size;
      entry["effective_batch_size"] = result.history.effective_batch_size;
      entry["initial_lr"] = tcfg.initial_lr;
      entry["nesterov_momentum"] = tcfg.nesterov_momentum;
    } else {
      const auto model = pipeline::train_svm_fold(subjects, split, scfg, svm_rows);
      const auto model_file = "fold_" + held + ".svm";
      svm::save_model(model, (dir / model_file).string());
      entry["model"] = model_file;
      entry["support_vectors"] = model.support_vectors.rows();
      entry["gamma"] = model.gamma;
      entry["converged"] = model.converged;
      std::lock_guard lock(log);
      std::fprintf(stderr, "fold %s: %lld support vectors, gamma %g\n", held.c_str(),
                   static_cast<long long>(model.support_vectors.rows()), model.gamma);
    }
    entries[f] = std::move(entry);
  });

  auto manifest = read_experiment_manifest(dir);
  // Relative to the experiment directory so the file does not depend on where it was run.
  manifest["corpus"] =
      fs::absolute(a.corpus).lexically_normal().lexically_relative(fs::absolute(dir).lexically_normal())
          .generic_string();
  const char *key = fcnn_path ? "fcnn" : "svm";
  for (std::size_t f = 0; f < folds.size(); ++f)
    manifest["folds"][folds[f]][key] = entries[f];
  write_text((dir / "experiment.json").string(), manifest.dump(2) + "\n");
  return 0;
}

enum class ModelKind { fcnn, svm };

ModelKind sniff_model(const std::string &path) {
  auto in = text::open_input(path, true);
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  const std::string m(magic, 4);
  if (m == "FCN1")
    return ModelKind::fcnn;
  if (m == "SVM1")
    return ModelKind::svm;
  throw FormatError(path + ": not a model file (expected FCN1 or SVM1)");
}

std::vector<postproc::ProbabilityTrace> model_traces(const std::string &model_path,
                                                     const pipeline::SubjectData &s,
                                                     ModelKind kind) {
  if (kind == ModelKind::fcnn)
    return pipeline::fcnn_traces(fcnn::load_model(model_path), s);
  return pipeline::svm_traces(svm::load_model(model_path), s);
}

std::string recording_stem(const std::string &path) {
  std::string name = fs::path(path).filename().string();
  for (const std::string suffix : {".rec.csv", ".csv"})
    if (name.size() > suffix.size() && name.ends_with(suffix))
      return name.substr(0, name.size() - suffix.size());
  return name;
}

void check_target_rate(const eeg::Recording &rec) {
  const double ratio = rec.sample_rate_hz / preprocess::kTargetRateHz;
  if (!(ratio >= 1.0) || std::abs(ratio - std::round(ratio)) > 1e-9)
    throw DataError("recording sample rate " + text::format_number(rec.sample_rate_hz) +
                    " Hz cannot be brought to the model rate of 32 Hz");
}

int cmd_detect(const DetectArgs &a) {
  if (a.threshold < 0.0 || a.threshold > 1.0)
    throw UsageError("--threshold must lie in [0, 1]");
  const auto kind = sniff_model(a.model);
  const auto rec = eeg::read_recording(a.recording);
  check_target_rate(rec);
  const bool fcnn_path = kind == ModelKind::fcnn;
  const auto s = pipeline::prepare_subject(rec, nullptr, {fcnn_path, !fcnn_path});
  const auto d = pipeline::detect(model_traces(a.model, s, kind), a.threshold, a.collar);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  const auto stem = recording_stem(a.recording);
  std::string trace = "time_s";
  for (const auto &c : s.channel_names)
    trace += "," + c;
  trace += ",fused\n";
  std::string mask = "time_s,mask\n";
  for (std::size_t t = 0; t < d.fused.size(); ++t) {
    trace += std::to_string(t);
    for (const auto &c : d.channels) {
      trace += ',';
      text::append_number(trace, c.values[t]);
    }
    trace += ',';
    text::append_number(trace, d.fused.values[t]);
    trace += '\n';
    mask += std::to_string(t) + "," + std::to_string(d.mask[t]) + "\n";
  }
  write_text((dir / (stem + ".trace.csv")).string(), trace);
  write_text((dir / (stem + ".mask.csv")).string(), mask);
  const auto positive = std::count(d.mask.begin(), d.mask.end(), 1);
  std::cerr << "detected " << positive << " of " << d.mask.size() << " seconds\n";
  return 0;
}

int cmd_evaluate(const EvaluateArgs &a) {
  const auto entries = pipeline::read_corpus_manifest(a.corpus);
  const fs::path dir(a.experiment_dir);
  if (!fs::is_directory(dir))
    throw IoError("experiment directory '" + a.experiment_dir + "' does not exist");
  bool any_fcnn = false, any_svm = false;
  for (const auto &e : entries) {
    any_fcnn |= fs::exists(dir / ("fold_" + e.id + ".fcn"));
    any_svm |= fs::exists(dir / ("fold_" + e.id + ".svm"));
  }
  if (!any_fcnn && !any_svm)
    throw IoError("no fold models in '" + a.experiment_dir + "'");
  for (const auto &e : entries) {
    if (any_fcnn && !fs::exists(dir / ("fold_" + e.id + ".fcn")))
      throw IoError("missing fold model for held-out subject '" + e.id + "': " +
                    (dir / ("fold_" + e.id + ".fcn")).string());
    if (any_svm && !fs::exists(dir / ("fold_" + e.id + ".svm")))
      throw IoError("missing fold model for held-out subject '" + e.id + "': " +
                    (dir / ("fold_" + e.id + ".svm")).string());
  }

  pipeline::ResultsTable table;
  table.rows.resize(entries.size());
  parallel_for(entries.size(), a.jobs, [&](std::size_t i) {
    const auto &e = entries[i];
    auto rec = eeg::read_recording(e.recording);
    const auto ann = eeg::read_annotations(e.annotations);
    rec.subject_id = e.id;
    const auto s = pipeline::prepare_subject(rec, &ann, {any_fcnn, any_svm});
    auto &row = table.rows[i];
    row.subject = e.id;
    if (any_svm)
      row.svm = pipeline::score(
          model_traces((dir / ("fold_" + e.id + ".svm")).string(), s, ModelKind::svm), s);
    if (any_fcnn)
      row.fcnn = pipeline::score(
          model_traces((dir / ("fold_" + e.id + ".fcn")).string(), s, ModelKind::fcnn), s);
  });
  for (const auto &r : table.rows)
    if ((any_svm && !r.svm.defined()) || (any_fcnn && !r.fcnn.defined()))
      std::cerr << "warning: subject " << r.subject << " has a single-class annotation; AUC undefined\n";
  if (a.out.empty())
    std::cout << table.to_csv();
  else
    table.write_csv(a.out);
  return 0;
}

int resolve_channel(const std::string &sel, const std::vector<std::string> &names) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == sel)
      return static_cast<int>(i);
  int idx = -1;
  if (text::parse_number(sel, idx) && idx >= 0 && static_cast<std::size_t>(idx) < names.size())
    return idx;
  throw DataError("unknown channel '" + sel + "'");
}

int cmd_localize(const LocalizeArgs &a) {
  if (sniff_model(a.model) != ModelKind::fcnn)
    throw DataError("localize needs an FCNN model");
  const auto model = fcnn::load_model(a.model);
  const auto raw = eeg::read_recording(a.recording);
  check_target_rate(raw);
  const auto rec = preprocess::preprocess_recording(raw);
  const int ch = resolve_channel(a.channel, rec.channel_names);
  const auto &x = rec.samples[static_cast<std::size_t>(ch)];
  const double fs = preprocess::kTargetRateHz;
  std::string out = "channel,start_s,end_s,score\n";
  for (double start : a.epoch_start) {
    const double first = start * fs;
    if (!(start >= 0.0) || std::abs(first - std::round(first)) > 1e-9 ||
        static_cast<std::size_t>(std::llround(first)) + preprocess::kEpochSamples > x.size())
      throw DataError("epoch starting at " + text::format_number(start) +
                      " s is outside the recording or off the 32 Hz grid");
    const auto begin = x.begin() + std::llround(first);
    const std::vector<float> epoch(begin, begin + preprocess::kEpochSamples);
    const auto z = preprocess::standardize<float>(epoch);
    for (const auto &w : fcnn::localize<float>(model, z, a.top_n)) {
      out += rec.channel_names[static_cast<std::size_t>(ch)];
      out += ',';
      text::append_number(out, start + w.start_sample / fs);
      out += ',';
      text::append_number(out, start + w.end_sample / fs);
      out += ',';
      text::append_number(out, w.score);
      out += '\n';
    }
  }
  write_text(a.out, out);
  return 0;
}

int cmd_inspect(const std::string &path) {
  if (sniff_model(path) == ModelKind::svm) {
    const auto m = svm::load_model(path);
    std::printf("SVM model: %lld support vectors, dimension %lld\n",
                static_cast<long long>(m.support_vectors.rows()), static_cast<long long>(m.dim()));
    std::printf("gamma %.17g  bias %.17g  platt a %.17g  b %.17g\n", m.gamma, m.bias, m.platt_a,
                m.platt_b);
    return 0;
  }
  const auto model = fcnn::load_model(path);
  const auto counts = fcnn::count_params(model);
  const auto trace = fcnn::forward(model, fcnn::make_input<float>(std::vector<float>(256, 0.0f), 1),
                                   fcnn::Mode::infer);
  const auto lengths = trace.lengths();
  struct Row {
    const char *name;
    const char *kind;
    int maps;
    int length;
    std::optional<std::size_t> params;
    std::optional<int> rf_layer;
  };
  const std::vector<Row> rows{
      {"input", "epoch", 1, 256, std::nullopt, std::nullopt},
      {"conv1", "conv 4 + ReLU", 32, lengths[0], counts.per_layer[0], 1},
      {"conv2", "conv 4 + ReLU", 32, lengths[1], counts.per_layer[1], 2},
      {"conv3", "conv 4 + ReLU", 32, lengths[2], counts.per_layer[2], 3},
      {"bn", "batch norm", 32, lengths[2], counts.per_layer[3], std::nullopt},
      {"pool1", "avg pool 8/2", 32, lengths[3], std::nullopt, std::nullopt},
      {"conv4", "conv 4 + ReLU", 32, lengths[4], counts.per_layer[4], 4},
      {"conv5", "conv 4 + ReLU", 32, lengths[5], counts.per_layer[5], 5},
      {"pool2", "avg pool 4/2", 32, lengths[6], std::nullopt, std::nullopt},
      {"conv6", "conv 4 + ReLU", 2, lengths[7], counts.per_layer[6], 6},
      {"gap", "global avg pool", 2, 1, std::nullopt, std::nullopt},
      {"softmax", "softmax", 2, 1, std::nullopt, std::nullopt},
  };
  std::printf("%-8s %-16s %6s %7s %8s %10s\n", "layer", "type", "maps", "length", "params",
              "rf (jump)");
  for (const auto &r : rows) {
    std::string params = r.params ? std::to_string(*r.params) : "-";
    std::string rf = "-";
    if (r.rf_layer) {
      const auto f = fcnn::receptive_field(*r.rf_layer);
      rf = std::to_string(f.size) + " (" + std::to_string(f.jump) + ")";
    }
    std::printf("%-8s %-16s %6d %7d %8s %10s\n", r.name, r.kind, r.maps, r.length,
                params.c_str(), rf.c_str());
  }
  std::printf("total parameters excluding batch norm: %zu\n", counts.total_without_bn);
  std::printf("total parameters including batch norm: %zu\n", counts.total_with_bn);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Neonatal EEG seizure detection: feature SVM and fully convolutional network"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  auto *seed_opt = app.add_option("--seed", seed, "Random seed")->capture_default_str();

  SynthArgs synth;
  auto *c_synth = app.add_subcommand("synth", "Generate a synthetic EEG corpus");
  c_synth->add_option("--subjects", synth.subjects, "Number of subjects")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_synth->add_option("--hours", synth.hours, "Recording length per subject in hours")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_synth->add_option("--seizures-per-subject", synth.seizures, "Seizure count N or range LO-HI")
      ->capture_default_str();
  c_synth->add_option("-o,--output", synth.out, "Output corpus directory")->required();
  c_synth->add_flag("--force", synth.force, "Write into a non-empty directory");

  FeaturesArgs feats;
  auto *c_feat = app.add_subcommand("features", "Extract the 55 epoch features of a recording");
  c_feat->add_option("--recording", feats.recording, "Recording CSV")->required();
  c_feat->add_option("--annotations", feats.annotations, "Annotation CSV for the label column");
  c_feat->add_option("-o,--output", feats.out, "Output CSV")->required();

  TrainArgs train_fcnn, train_svm;
  auto add_train = [&](const char *name, const char *desc, TrainArgs &t) {
    auto *c = app.add_subcommand(name, desc);
    c->add_option("--corpus", t.corpus, "Corpus directory")->required();
    c->add_option("--held-out", t.held_out, "Train a single fold (default: every fold)");
    c->add_option("--iterations", t.iterations, "Training iterations")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c->add_option("--batch-size", t.batch_size, "Mini-batch size")
        ->check(CLI::Range(2, 1 << 20))
        ->capture_default_str();
    c->add_option("--lr", t.lr, "Initial learning rate")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    c->add_option("-o,--output", t.out, "Experiment directory")->required();
    c->add_option("--jobs", t.jobs, "Folds trained in parallel")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    return c;
  };
  auto *c_train_fcnn = add_train("train-fcnn", "Train FCNN fold models", train_fcnn);
  auto *c_train_svm = add_train("train-svm", "Train SVM fold models (iterations, batch size and "
                                             "learning rate do not apply)",
                                train_svm);

  DetectArgs det;
  auto *c_detect = app.add_subcommand("detect", "Run a model over a recording");
  c_detect->add_option("--model", det.model, "Model file (.fcn or .svm)")->required();
  c_detect->add_option("--recording", det.recording, "Recording CSV")->required();
  c_detect->add_option("--threshold", det.threshold, "Decision threshold")->capture_default_str();
  c_detect->add_option("--collar", det.collar, "Collar in seconds")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  c_detect->add_option("-o,--output", det.out, "Output directory")->required();

  EvaluateArgs eval;
  auto *c_eval = app.add_subcommand("evaluate", "Score fold models on their held-out subjects");
  c_eval->add_option("--corpus", eval.corpus, "Corpus directory")->required();
  c_eval->add_option("--experiment-dir", eval.experiment_dir, "Directory of fold models")
      ->required();
  c_eval->add_option("--jobs", eval.jobs, "Subjects scored in parallel")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_eval->add_option("-o,--output", eval.out, "Results CSV (default: stdout)");

  LocalizeArgs loc;
  auto *c_loc = app.add_subcommand("localize", "Trace seizure-map peaks back to input windows");
  c_loc->add_option("--model", loc.model, "FCNN model file")->required();
  c_loc->add_option("--recording", loc.recording, "Recording CSV")->required();
  c_loc->add_option("--channel", loc.channel, "Channel name or index")->required();
  c_loc->add_option("--epoch-start", loc.epoch_start, "Epoch start times in seconds")
      ->required()
      ->expected(1, -1);
  c_loc->add_option("--top-n", loc.top_n, "Windows per epoch")
      ->check(CLI::Range(1, 53))
      ->capture_default_str();
  c_loc->add_option("-o,--output", loc.out, "Output CSV")->required();

  std::string inspect_model;
  auto *c_inspect = app.add_subcommand("inspect-model", "Print the layer table of a model");
  c_inspect->add_option("--model", inspect_model, "Model file")->required();

  for (auto *c : app.get_subcommands({}))
    c->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  // The corpus generator keeps its own default seed.
  if (*c_synth && seed_opt->count() == 0)
    seed = 7;
  try {
    for (auto *c : app.get_subcommands()) {
      std::cerr << "# " << c->get_name() << "\n"
                << "seed=" << seed << "\n"
                << c->config_to_str(true, false);
    }
    if (*c_synth)
      return cmd_synth(synth, seed);
    if (*c_feat)
      return cmd_features(feats);
    if (*c_train_fcnn)
      return cmd_train(train_fcnn, seed, true);
    if (*c_train_svm)
      return cmd_train(train_svm, seed, false);
    if (*c_detect)
      return cmd_detect(det);
    if (*c_eval)
      return cmd_evaluate(eval);
    if (*c_loc)
      return cmd_localize(loc);
    if (*c_inspect)
      return cmd_inspect(inspect_model);
  } catch (const nsd::Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
  return 1;
}
