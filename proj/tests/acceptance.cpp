// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. argv[1] is a scratch directory.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "nsd/fcnn.hpp"
#include "nsd/features.hpp"
#include "nsd/pipeline.hpp"
#include "nsd/postproc.hpp"
#include "nsd/preprocess.hpp"
#include "nsd/rng.hpp"
#include "nsd/synth.hpp"
#include "nsd/training.hpp"
#include "support/feature_oracle.hpp"
#include "support/gradcheck.hpp"
#include "support/layer_oracles.hpp"

namespace fs = std::filesystem;
using namespace nsd;
using Clock = std::chrono::steady_clock;

namespace {

// Mini-batch size for the end-to-end FCNN run. The per-class cap keeps each
// iteration near 3000 examples, so 128 gives about 23 updates per iteration.
constexpr int kE2eBatchSize = 128;
constexpr double kE2eBudgetSeconds = 30.0 * 60.0;

struct Outcome {
  bool pass{false};
  std::string detail;
};

fs::path g_work;
fs::path g_log;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string quote(const std::string &s) { return "'" + s + "'"; }

// Runs the CLI with stderr appended to the log; stdout goes to `stdout_path`
// when given, otherwise to the log as well.
int cli(const std::string &args, const fs::path &stdout_path = {}) {
  std::string cmd = quote(NSD_CLI_PATH) + " " + args;
  cmd += stdout_path.empty() ? " >> " + quote(g_log.string())
                             : " > " + quote(stdout_path.string());
  cmd += " 2>> " + quote(g_log.string());
  const int status = std::system(cmd.c_str());
  if (status == -1)
    return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
}

void require_cli(const std::string &args, const fs::path &stdout_path = {}) {
  const int rc = cli(args, stdout_path);
  if (rc != 0)
    throw std::runtime_error("nsd_cli " + args + " exited with " + std::to_string(rc));
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

// ---- 1-3: architecture ----

Outcome check_layer_shapes() {
  const auto model = fcnn::init_model<double>(1);
  Rng rng(3);
  std::vector<double> epoch(fcnn::kInputLength);
  for (auto &v : epoch)
    v = rng.normal();
  const auto t = fcnn::forward(model, fcnn::make_input<double>(epoch, 1), fcnn::Mode::infer);
  const auto got = t.lengths();
  const std::array<int, 8> want{253, 250, 247, 120, 117, 114, 56, 53};
  const auto pc = fcnn::count_params(model);
  const std::array<std::size_t, 7> want_params{160, 4128, 4128, 64, 4128, 4128, 258};
  std::string detail = "lengths";
  for (int v : got)
    detail += " " + std::to_string(v);
  detail += "; params";
  for (auto v : pc.per_layer)
    detail += " " + std::to_string(v);
  return {got == want && pc.per_layer == want_params && t.a6.maps() == 2, detail};
}

Outcome check_totals() {
  const auto model = fcnn::init_model<float>(1);
  const auto pc = fcnn::count_params(model);
  const auto dir = g_work / "c2";
  fs::create_directories(dir);
  const auto path = (dir / "model.fcn").string();
  fcnn::save_model(model, path);
  require_cli("inspect-model --model " + quote(path), dir / "inspect.txt");
  const auto text = slurp(dir / "inspect.txt");
  const bool cli_ok = text.find("excluding batch norm: 16930") != std::string::npos &&
                      text.find("including batch norm: 16994") != std::string::npos;
  return {pc.total_without_bn == 16930 && pc.total_with_bn == 16994 && cli_ok,
          "library " + std::to_string(pc.total_without_bn) + "/" +
              std::to_string(pc.total_with_bn) + ", inspect-model " +
              (cli_ok ? "agrees" : "disagrees")};
}

Outcome check_receptive_field() {
  const auto rf1 = fcnn::receptive_field(1);
  const auto rf6 = fcnn::receptive_field(6);
  const auto last = fcnn::final_layer_window(52);
  const auto first = fcnn::final_layer_window(0);
  const bool ok = rf1.size == 4 && rf6.size == 47 && rf6.jump == 4 && first.first == 0 &&
                  first.second == 47 && last.first == 208 && last.second == 255;
  return {ok, "RF1 " + std::to_string(rf1.size) + ", RF6 " + std::to_string(rf6.size) +
                  " jump " + std::to_string(rf6.jump) + ", last window [" +
                  std::to_string(last.first) + "," + std::to_string(last.second) + ")"};
}

// ---- 4-7: numerical oracles ----

Outcome check_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = testing::gradient_check(testing::make_gradcheck_case(seed), 1e-4);
    worst = std::max(worst, r.worst_relative_error);
    checked += r.checked;
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 300.0 && checked > 0,
          "worst relative error " + fmt(worst) + " over " + std::to_string(checked) +
              " parameters in " + fmt(secs, 3) + " s"};
}

Outcome check_layer_oracles() {
  const double conv = testing::conv_oracle_worst_error(101, 100);
  const double pool = testing::pool_oracle_worst_error(102, 100);
  return {conv <= 1e-12 && pool <= 1e-12,
          "conv worst " + fmt(conv) + ", pool worst " + fmt(pool)};
}

Outcome check_features() {
  const double worst = testing::feature_oracle_worst_error(303, 100);
  Rng rng(304);
  double scale_worst = 0.0;
  auto rel = [](double p, double q) { return std::abs(p - q) / std::max(std::abs(q), 1e-300); };
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = testing::random_epoch(rng);
    const double a = rng.uniform(0.1, 10.0);
    auto y = x;
    for (auto &v : y)
      v *= a;
    const auto fx = features::extract_features(x), fy = features::extract_features(y);
    for (std::size_t j : {16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 32, 33, 52, 53, 54})
      scale_worst = std::max(scale_worst, rel(fy[j], fx[j]));
    for (std::size_t j : {0, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 31})
      scale_worst = std::max(scale_worst, rel(fy[j], a * a * fx[j]));
    scale_worst = std::max(scale_worst, rel(fy[30], a * fx[30]));
  }
  return {worst <= 1e-9 && scale_worst <= 1e-8,
          "oracle worst relative error " + fmt(worst) + ", scale covariance worst " +
              fmt(scale_worst)};
}

double mann_whitney(const std::vector<double> &s, const std::vector<std::uint8_t> &l) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (l[i] && !l[j]) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

Outcome check_postprocessing() {
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.between(4, 80));
    std::vector<double> s(n);
    std::vector<std::uint8_t> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = rng.uniform() < 0.5 ? 1 : 0;
      s[i] = trial % 2 ? rng.uniform() + 0.4 * l[i] : std::floor(rng.uniform() * 4.0);
    }
    l[0] = 1;
    l[1] = 0;
    worst = std::max(worst, std::abs(postproc::auc(s, l) - mann_whitney(s, l)));
  }
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<std::uint8_t> l{0, 0, 1, 1};
  const double example = postproc::auc(s, l);
  std::vector<double> v(300, 0.0);
  v[100] = 0.9;
  const auto mask = postproc::threshold_and_collar({v, 0.0}, 0.5);
  bool collar_ok = mask.size() == 300;
  for (std::size_t i = 0; collar_ok && i < 300; ++i)
    collar_ok = mask[i] == ((i >= 70 && i <= 130) ? 1 : 0);
  return {worst <= 1e-12 && std::abs(example - 0.75) <= 1e-12 && collar_ok,
          "Mann-Whitney worst " + fmt(worst) + ", example AUC " + fmt(example) + ", collar " +
              (collar_ok ? "[70,130]" : "wrong")};
}

// ---- 8: default training run through the CLI ----

fs::path g_small_corpus;

Outcome check_default_training() {
  g_small_corpus = g_work / "small_corpus";
  require_cli("synth --subjects 3 --hours 0.1 --seizures-per-subject 1 -o " +
              quote(g_small_corpus.string()));
  const auto exp = g_work / "c8";
  require_cli("train-fcnn --corpus " + quote(g_small_corpus.string()) +
              " --held-out subject_1 -o " + quote(exp.string()));
  const auto text = slurp(exp / "fold_subject_1.history.csv");
  const auto h = training::read_history_csv((exp / "fold_subject_1.history.csv").string());
  bool lr_ok = h.rows.size() == 60;
  for (std::size_t k = 0; lr_ok && k < h.rows.size(); ++k) {
    const double want = 0.003 * std::pow(0.9, static_cast<double>(k / 20));
    lr_ok = std::abs(h.rows[k].lr - want) <= 1e-12 && h.rows[k].iteration == static_cast<int>(k);
  }
  const bool ok = lr_ok && h.batch_size == 2048 && h.effective_batch_size >= 2 &&
                  h.effective_batch_size <= 2048 && h.nesterov_momentum == 0.9 &&
                  std::abs(h.rows.at(0).lr - 0.003) <= 1e-12 &&
                  std::abs(h.rows.at(20).lr - 0.0027) <= 1e-12 &&
                  text.find("iteration,train_loss,train_auc,val_auc,lr") != std::string::npos;
  return {ok, std::to_string(h.rows.size()) + " iterations, batch " +
                  std::to_string(h.batch_size) + " (effective " +
                  std::to_string(h.effective_batch_size) + "), momentum " +
                  fmt(h.nesterov_momentum) + ", lr " + fmt(h.rows.at(0).lr) + " -> " +
                  fmt(h.rows.at(20).lr) + " -> " + fmt(h.rows.at(40).lr)};
}

// ---- 9: end-to-end leave-one-out run ----

fs::path g_e2e_corpus;
fs::path g_e2e_exp;

Outcome check_end_to_end() {
  g_e2e_corpus = g_work / "e2e_corpus";
  g_e2e_exp = g_work / "e2e_experiment";
  const std::string jobs =
      std::to_string(std::max(1u, std::min(4u, std::thread::hardware_concurrency())));
  const auto t0 = Clock::now();
  require_cli("synth --subjects 6 --hours 0.5 -o " + quote(g_e2e_corpus.string()));
  require_cli("train-svm --corpus " + quote(g_e2e_corpus.string()) + " --jobs " + jobs +
              " -o " + quote(g_e2e_exp.string()));
  require_cli("train-fcnn --corpus " + quote(g_e2e_corpus.string()) + " --batch-size " +
              std::to_string(kE2eBatchSize) + " --jobs " + jobs + " -o " +
              quote(g_e2e_exp.string()));
  const auto results = g_e2e_exp / "results.csv";
  require_cli("evaluate --corpus " + quote(g_e2e_corpus.string()) + " --experiment-dir " +
              quote(g_e2e_exp.string()) + " --jobs " + jobs + " -o " + quote(results.string()));
  const double secs = seconds_since(t0);
  const auto table = pipeline::read_results_csv(results.string());
  const auto avg = table.average();
  const double fcnn = avg.fcnn.auc.value_or(0.0);
  const double svm = avg.svm.auc.value_or(0.0);
  return {table.rows.size() == 6 && fcnn >= 95.0 && svm >= 90.0 && secs <= kE2eBudgetSeconds,
          "FCNN AUC " + fmt(fcnn) + ", SVM AUC " + fmt(svm) + " over " +
              std::to_string(table.rows.size()) + " folds in " + fmt(secs / 60.0, 3) +
              " min with " + jobs + " job(s)"};
}

// ---- 10: overfit smoke test ----

Outcome check_overfit() {
  auto make = [](std::uint64_t seed, int per_class) {
    Rng rng(seed);
    training::EpochSet set;
    for (int i = 0; i < 2 * per_class; ++i) {
      const int label = i % 2;
      const double phase = rng.uniform(0.0, 2 * std::numbers::pi);
      std::vector<double> x(256);
      for (std::size_t t = 0; t < 256; ++t)
        x[t] = (label ? 2.0 * std::sin(2 * std::numbers::pi * 2.0 * t / 32.0 + phase) : 0.0) +
               0.5 * rng.normal();
      set.append(preprocess::standardize<double>(x), label);
    }
    return set;
  };
  training::TrainConfig cfg;
  cfg.total_iterations = 60;
  const auto result = training::train_fcnn(make(21, 32), make(22, 16), cfg);
  const auto &rows = result.history.rows;
  bool decreasing = rows.size() == 60;
  for (std::size_t k = 1; decreasing && k < 5; ++k)
    decreasing = rows[k].train_loss < rows[k - 1].train_loss;
  double best = 0.0;
  for (const auto &r : rows)
    best = std::max(best, r.train_auc);
  const double first = rows.empty() ? 0.0 : rows[0].train_loss;
  return {decreasing && std::abs(first - std::log(2.0)) <= 0.1 && best >= 0.99,
          "initial loss " + fmt(first) + ", loss decreasing over first 5 iterations: " +
              (decreasing ? "yes" : "no") + ", best train AUC " + fmt(best)};
}

// ---- 11: localization of confined bursts ----

// 24 s of subject-like background at 256 Hz with a spike-and-wave burst over
// [burst_start, burst_start + burst_len) of the middle 8 s, preprocessed like a
// recording. Returns the standardized middle epoch.
std::vector<float> burst_epoch(Rng &rng, int burst_start, int burst_len) {
  constexpr int factor = 8;
  constexpr std::size_t n = 24 * 256;
  auto x = eeg::pink_noise(rng, n);
  const double fundamental = rng.uniform(1.5, 3.0);
  const double amplitude = rng.uniform(3.0, 4.0);
  double phase = rng.uniform();
  const std::size_t b0 = (256 + static_cast<std::size_t>(burst_start)) * factor;
  const std::size_t b1 = b0 + static_cast<std::size_t>(burst_len) * factor;
  for (std::size_t i = b0; i < b1; ++i) {
    phase += fundamental / 256.0;
    double s = 0.0;
    for (int h = 1; h <= 3; ++h)
      s += std::sin(2.0 * std::numbers::pi * h * phase) / h;
    x[i] += amplitude * s;
  }
  const auto y = preprocess::decimate(preprocess::bandpass_filter(x, 256.0), 256.0, 32.0);
  const std::vector<double> mid(y.begin() + 256, y.begin() + 512);
  const auto z = preprocess::standardize<double>(mid);
  return {z.begin(), z.end()};
}

Outcome check_localization() {
  const auto model = fcnn::load_model((g_e2e_exp / "fold_subject_1.fcn").string());
  Rng rng(11);
  constexpr int burst_len = 64;
  int hits = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int start = static_cast<int>(rng.between(0, 256 - burst_len));
    const auto epoch = burst_epoch(rng, start, burst_len);
    const auto top = fcnn::localize(model, std::span<const float>(epoch), 1);
    if (top.empty())
      continue;
    const int overlap = std::max(0, std::min(top[0].end_sample, start + burst_len) -
                                        std::max(top[0].start_sample, start));
    const int width = top[0].end_sample - top[0].start_sample;
    if (2 * overlap >= width)
      ++hits;
  }
  return {hits >= 16, std::to_string(hits) + "/20 top-1 windows overlap the burst by >= 50%"};
}

// ---- 12: reproducibility of every CLI command ----

// Runs every command into `dir`, capturing stdout of the commands that print.
void run_all_commands(const fs::path &dir) {
  const auto corpus = dir / "corpus";
  const auto exp = dir / "exp";
  require_cli("synth --subjects 3 --hours 0.1 --seizures-per-subject 1 --seed 5 -o " +
              quote(corpus.string()));
  const auto rec = (corpus / "subject_1.rec.csv").string();
  require_cli("features --recording " + quote(rec) + " --annotations " +
              quote((corpus / "subject_1.ann.csv").string()) + " -o " +
              quote((dir / "features.csv").string()));
  require_cli("train-svm --corpus " + quote(corpus.string()) + " -o " + quote(exp.string()));
  require_cli("train-fcnn --corpus " + quote(corpus.string()) +
              " --iterations 3 --batch-size 64 -o " + quote(exp.string()));
  const auto fcn = (exp / "fold_subject_1.fcn").string();
  require_cli("detect --model " + quote(fcn) + " --recording " + quote(rec) + " -o " +
              quote((dir / "detect_fcnn").string()));
  require_cli("detect --model " + quote((exp / "fold_subject_1.svm").string()) +
              " --recording " + quote(rec) + " -o " + quote((dir / "detect_svm").string()));
  require_cli("evaluate --corpus " + quote(corpus.string()) + " --experiment-dir " +
              quote(exp.string()) + " -o " + quote((dir / "results.csv").string()));
  require_cli("localize --model " + quote(fcn) + " --recording " + quote(rec) +
              " --channel 0 --epoch-start 16 --top-n 5 -o " +
              quote((dir / "localize.csv").string()));
  require_cli("inspect-model --model " + quote(fcn), dir / "inspect_fcnn.txt");
  require_cli("inspect-model --model " + quote((exp / "fold_subject_1.svm").string()),
              dir / "inspect_svm.txt");
}

std::vector<fs::path> relative_files(const fs::path &root) {
  std::vector<fs::path> out;
  for (const auto &e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

Outcome check_reproducibility() {
  const auto a = g_work / "c12_a";
  const auto b = g_work / "c12_b";
  run_all_commands(a);
  run_all_commands(b);
  const auto fa = relative_files(a);
  const auto fb = relative_files(b);
  if (fa != fb)
    return {false, "runs produced different file sets"};
  std::vector<std::string> differing;
  for (const auto &rel : fa) {
    if (slurp(a / rel) != slurp(b / rel))
      differing.push_back(rel.string());
  }
  std::string detail = std::to_string(fa.size()) + " files compared";
  for (const auto &d : differing)
    detail += "; differs: " + d;
  return {differing.empty() && fa.size() >= 20, detail};
}

} // namespace

int main(int argc, char **argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <work-dir>\n";
    return 2;
  }
  g_work = fs::absolute(argv[1]);
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  g_log = g_work / "cli.log";

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"layer output lengths and per-layer parameters", check_layer_shapes},
      {"parameter totals", check_totals},
      {"receptive field", check_receptive_field},
      {"gradient check", check_gradients},
      {"conv and pool oracles", check_layer_oracles},
      {"feature oracle and scale covariance", check_features},
      {"ROC and collar", check_postprocessing},
      {"default training configuration", check_default_training},
      {"end-to-end leave-one-out", check_end_to_end},
      {"overfit smoke test", check_overfit},
      {"localization", check_localization},
      {"reproducibility", check_reproducibility},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception &e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << (i + 1) << " ("
              << criteria[i].first << "): " << o.detail << " [" << fmt(seconds_since(t0), 3)
              << " s]" << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
