#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "nsd/pipeline.hpp"
#include "nsd/synth.hpp"

namespace {

using namespace nsd;
using namespace nsd::pipeline;
namespace fs = std::filesystem;

eeg::SyntheticSubject short_subject(int index, int duration_s = 240) {
  eeg::SynthConfig cfg;
  cfg.duration_s = duration_s;
  cfg.seizure_events = {1, 1};
  cfg.seizure_duration_s = {duration_s / 6, duration_s / 4};
  auto s = eeg::generate_synthetic_subject(cfg, index);
  s.recording.subject_id = "subject_" + std::to_string(index + 1);
  return s;
}

TEST(PrepareSubject, EpochCountsLabelsAndStandardization) {
  const auto syn = short_subject(0, 120);
  const auto s = prepare_subject(syn.recording, &syn.annotations);
  const std::size_t ch = syn.recording.n_channels();
  EXPECT_EQ(s.duration_s, 120u);
  EXPECT_EQ(s.fcnn.size(), ch * 113);
  EXPECT_EQ(s.svm_rows.size(), ch * 29);
  EXPECT_EQ(s.svm_labels.size(), s.svm_rows.size());
  for (std::size_t i = 0; i < s.fcnn.size(); ++i) {
    const auto e = s.fcnn.epoch(i);
    double m = 0.0, ss = 0.0;
    for (float v : e)
      m += v / 256.0;
    for (float v : e)
      ss += (v - m) * (v - m) / 256.0;
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(ss, 1.0, 1e-4);
    // Label rule: more than half of the window annotated on the epoch's own channel.
    const auto start = static_cast<std::size_t>(s.fcnn_start[i]);
    int covered = 0;
    for (std::size_t t = start; t < start + 8; ++t)
      covered += syn.annotations.per_channel[static_cast<std::size_t>(s.fcnn_channel[i])][t];
    EXPECT_EQ(s.fcnn.labels[i], covered > 4 ? 1 : 0) << i;
  }
  EXPECT_GT(s.fcnn.count(1), 0u);
}

TEST(PrepareSubject, Errors) {
  auto syn = short_subject(1, 60);
  auto bad = syn.annotations;
  bad.per_channel.pop_back();
  EXPECT_THROW(prepare_subject(syn.recording, &bad), DataError);
  auto shorter = syn.annotations;
  for (auto &c : shorter.per_channel)
    c.resize(30);
  shorter.fused.resize(30);
  EXPECT_THROW(prepare_subject(syn.recording, &shorter), DataError);
  const auto no_ann = prepare_subject(syn.recording, nullptr, {true, false});
  EXPECT_FALSE(no_ann.annotations.has_value());
  EXPECT_TRUE(no_ann.svm_rows.empty());
  EXPECT_THROW(score({}, no_ann), DataError);
}

TEST(Detect, ThresholdExtremesAndFusedIsMax) {
  const auto syn = short_subject(2, 120);
  const auto s = prepare_subject(syn.recording, &syn.annotations, {true, false});
  const auto model = fcnn::init_model<float>(3);
  const auto raw = fcnn_traces(model, s);
  ASSERT_EQ(raw.size(), syn.recording.n_channels());
  for (const auto &t : raw)
    EXPECT_EQ(t.size(), 120u);
  const auto none = detect(raw, 1.0);
  EXPECT_TRUE(std::all_of(none.mask.begin(), none.mask.end(), [](auto v) { return v == 0; }));
  const auto all = detect(raw, 0.0);
  EXPECT_TRUE(std::all_of(all.mask.begin(), all.mask.end(), [](auto v) { return v == 1; }));
  for (std::size_t t = 0; t < 120; ++t) {
    double mx = 0.0;
    for (const auto &c : all.channels)
      mx = std::max(mx, c.values[t]);
    EXPECT_EQ(all.fused.values[t], mx);
  }
}

TEST(ChannelTraces, RoutesEpochsToTheirChannel) {
  const std::vector<double> p{0.1, 0.9, 0.2, 0.8};
  const std::vector<int> ch{0, 1, 0, 1};
  const std::vector<double> start{0.0, 0.0, 4.0, 4.0};
  const auto tr = channel_traces(p, ch, start, 2, 12);
  ASSERT_EQ(tr.size(), 2u);
  EXPECT_EQ(tr[0].values.front(), 0.1);
  EXPECT_EQ(tr[0].values.back(), 0.2);
  EXPECT_EQ(tr[1].values.front(), 0.9);
  EXPECT_EQ(tr[1].values.back(), 0.8);
}

TEST(ResultsTable, CsvShapeAverageAndRoundTrip) {
  ResultsTable t;
  t.rows.push_back({"a", {90.0, 80.0}, {95.0, 85.0}});
  t.rows.push_back({"b", {}, {}});
  t.rows.push_back({"c", {100.0, 100.0}, {97.0, 75.0}});
  const auto avg = t.average();
  EXPECT_DOUBLE_EQ(*avg.svm.auc, 95.0);
  EXPECT_DOUBLE_EQ(*avg.fcnn.auc90, 80.0);
  const auto csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "subject,auc_svm,auc_fcnn,auc90_svm,auc90_fcnn");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find("\nb,,,,\n"), std::string::npos);
  EXPECT_NE(csv.find("\naverage,95,96,90,80\n"), std::string::npos);
  const auto dir = fs::temp_directory_path() / "nsd_test_results";
  fs::create_directories(dir);
  const auto path = (dir / "r.csv").string();
  t.write_csv(path);
  const auto back = read_results_csv(path);
  ASSERT_EQ(back.rows.size(), 3u);
  EXPECT_EQ(back.to_csv(), csv);
  {
    std::ofstream bad(path);
    bad << "subject,x\n";
  }
  EXPECT_THROW(read_results_csv(path), FormatError);
  fs::remove_all(dir);
}

TEST(SvmSubsample, StratifiedCappedSortedDeterministic) {
  std::vector<int> labels(5000, 0);
  for (std::size_t i = 0; i < 300; ++i)
    labels[i * 7] = 1;
  const auto a = svm_subsample(labels, 1500, 11);
  EXPECT_EQ(a, svm_subsample(labels, 1500, 11));
  EXPECT_EQ(a.size(), 1500u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::count_if(a.begin(), a.end(), [&](auto i) { return labels[i] == 1; }), 300);
  const auto all = svm_subsample(std::vector<int>{0, 1, 0}, 1500, 1);
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2}));
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.fcnn.total_iterations = 2;
  cfg.fcnn.batch_size = 32;
  cfg.fcnn.max_per_class = 32;
  cfg.fcnn.history_eval_cap = 64;
  cfg.svm.c_grid = {1.0};
  cfg.svm.gamma_grid = {1.0 / 55.0};
  cfg.svm_max_rows = 200;
  return cfg;
}

TEST(LooExperiment, RowsOrderAndDeterminism) {
  std::vector<SubjectData> subjects;
  for (int k = 0; k < 3; ++k) {
    const auto syn = short_subject(k);
    subjects.push_back(prepare_subject(syn.recording, &syn.annotations));
  }
  std::vector<std::string> held;
  const auto t1 = run_loo_experiment(subjects, tiny_config(), [&](const FoldOutcome &f, const ResultRow &r) {
    held.push_back(f.split.test);
    EXPECT_EQ(r.subject, f.split.test);
    ASSERT_TRUE(f.history.has_value());
    EXPECT_EQ(f.history->rows.size(), 2u);
    EXPECT_TRUE(f.svm_model.has_value());
  });
  EXPECT_EQ(held, subject_ids(subjects));
  ASSERT_EQ(t1.rows.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(t1.rows[k].subject, subjects[k].id);
    EXPECT_TRUE(t1.rows[k].svm.defined());
    EXPECT_TRUE(t1.rows[k].fcnn.defined());
  }
  const auto t2 = run_loo_experiment(subjects, tiny_config());
  EXPECT_EQ(t1.to_csv(), t2.to_csv());
}

TEST(Corpus, ManifestLoadAndErrors) {
  const auto dir = fs::temp_directory_path() / "nsd_test_corpus";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto syn = short_subject(4, 60);
  eeg::write_recording(syn.recording, (dir / "subject_1.rec.csv").string());
  eeg::write_annotations(syn.annotations, (dir / "subject_1.ann.csv").string());
  {
    std::ofstream m(dir / "manifest.json");
    m << R"({"subjects":[{"id":"subject_1","recording":"subject_1.rec.csv","annotations":"subject_1.ann.csv"}]})";
  }
  const auto c = load_corpus(dir.string(), {false, true});
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].id, "subject_1");
  EXPECT_EQ(c[0].svm_rows.size(), syn.recording.n_channels() * 14);
  {
    std::ofstream m(dir / "manifest.json");
    m << R"({"subjects":[{"id":"subject_1"}]})";
  }
  EXPECT_THROW(read_corpus_manifest(dir.string()), FormatError);
  {
    std::ofstream m(dir / "manifest.json");
    m << "{not json";
  }
  EXPECT_THROW(read_corpus_manifest(dir.string()), FormatError);
  EXPECT_THROW(read_corpus_manifest((dir / "missing").string()), IoError);
  fs::remove_all(dir);
}

} // namespace
