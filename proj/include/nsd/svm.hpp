#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nsd/error.hpp"
#include "nsd/features.hpp"
#include "nsd/postproc.hpp"
#include "nsd/rng.hpp"
#include "nsd/text_io.hpp"

namespace nsd::svm {

struct SvmModel {
  Eigen::MatrixXd support_vectors; // m x dim, normalized feature space
  Eigen::VectorXd alphas_signed;   // alpha_i * y_i
  double bias{0.0};
  double gamma{1.0};
  double platt_a{-1.0};
  double platt_b{0.0};
  features::FeatureNormalizer normalizer{};
  bool converged{true};

  Eigen::Index dim() const { return support_vectors.cols(); }
};

struct SmoOptions {
  double tolerance{1e-3};
  int max_passes{200};
  std::uint64_t seed{1};
};

struct SvmTrainConfig {
  std::vector<double> c_grid{0.5, 1.0, 2.0, 4.0, 8.0};
  std::vector<double> gamma_grid{1.0 / 220.0, 1.0 / 55.0, 4.0 / 55.0, 16.0 / 55.0};
  int folds{5};
  double smo_tolerance{1e-3};
  int max_passes{200};
  std::uint64_t seed{1};
};

inline Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd &x, double gamma) {
  const Eigen::Index n = x.rows();
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd k = x * x.transpose();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      k(i, j) = std::exp(-gamma * std::max(0.0, sq(i) + sq(j) - 2.0 * k(i, j)));
  return k;
}

struct DualSolution {
  Eigen::VectorXd alpha;
  double bias{0.0};
  bool converged{true};
};

namespace detail {

// Sequential minimal optimization over a precomputed kernel. Each KKT-violating
// first index is paired with a random second index; when that pair makes no
// progress the max |E_i - E_j| heuristic and then a full scan are tried.
class SmoSolver {
public:
  SmoSolver(const Eigen::MatrixXd &kernel, std::span<const int> y, double c,
            const SmoOptions &opts)
      : k_(kernel), y_(y.begin(), y.end()), c_(c), opts_(opts), rng_(opts.seed) {
    const auto n = static_cast<Eigen::Index>(y_.size());
    alpha_ = Eigen::VectorXd::Zero(n);
    // f = 0 initially, so E_i = -y_i.
    err_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i)
      err_(i) = -static_cast<double>(y_[static_cast<std::size_t>(i)]);
  }

  DualSolution solve() {
    const auto n = static_cast<Eigen::Index>(y_.size());
    bool examine_all = true;
    int changed = 0;
    int sweeps = 0;
    bool converged = true;
    while (changed > 0 || examine_all) {
      if (sweeps++ >= opts_.max_passes) {
        converged = false;
        break;
      }
      changed = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (examine_all || is_free(i))
          changed += examine(i) ? 1 : 0;
      if (examine_all)
        examine_all = false;
      else if (changed == 0)
        examine_all = true;
    }
    return {alpha_, bias_, converged};
  }

private:
  bool is_free(Eigen::Index i) const { return alpha_(i) > 0.0 && alpha_(i) < c_; }
  double y(Eigen::Index i) const { return y_[static_cast<std::size_t>(i)]; }

  bool violates(Eigen::Index i) const {
    const double r = err_(i) * y(i);
    return (r < -opts_.tolerance && alpha_(i) < c_) || (r > opts_.tolerance && alpha_(i) > 0.0);
  }

  bool examine(Eigen::Index i) {
    if (!violates(i))
      return false;
    const auto n = static_cast<Eigen::Index>(y_.size());
    if (n < 2)
      return false;
    auto j = static_cast<Eigen::Index>(rng_.below(static_cast<std::uint64_t>(n - 1)));
    if (j >= i)
      ++j;
    if (take_step(i, j))
      return true;
    Eigen::Index best = -1;
    double gap = -1.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (k == i || !is_free(k))
        continue;
      const double d = std::abs(err_(i) - err_(k));
      if (d > gap) {
        gap = d;
        best = k;
      }
    }
    if (best >= 0 && take_step(i, best))
      return true;
    const auto offset = static_cast<Eigen::Index>(rng_.below(static_cast<std::uint64_t>(n)));
    for (Eigen::Index s = 0; s < n; ++s) {
      const Eigen::Index k = (s + offset) % n;
      if (k != i && take_step(i, k))
        return true;
    }
    return false;
  }

  bool take_step(Eigen::Index i, Eigen::Index j) {
    if (i == j)
      return false;
    const double ai = alpha_(i), aj = alpha_(j);
    const double yi = y(i), yj = y(j);
    double lo, hi;
    if (yi != yj) {
      lo = std::max(0.0, aj - ai);
      hi = std::min(c_, c_ + aj - ai);
    } else {
      lo = std::max(0.0, ai + aj - c_);
      hi = std::min(c_, ai + aj);
    }
    if (hi - lo < 1e-14)
      return false;
    const double eta = 2.0 * k_(i, j) - k_(i, i) - k_(j, j);
    if (eta > -1e-12)
      return false;
    double aj_new = aj - yj * (err_(i) - err_(j)) / eta;
    aj_new = std::clamp(aj_new, lo, hi);
    if (std::abs(aj_new - aj) < 1e-12 * (aj_new + aj + 1e-12))
      return false;
    const double ai_new = ai + yi * yj * (aj - aj_new);
    const double di = yi * (ai_new - ai), dj = yj * (aj_new - aj);
    const double b1 = bias_ - err_(i) - di * k_(i, i) - dj * k_(i, j);
    const double b2 = bias_ - err_(j) - di * k_(i, j) - dj * k_(j, j);
    double b_new;
    if (ai_new > 0.0 && ai_new < c_)
      b_new = b1;
    else if (aj_new > 0.0 && aj_new < c_)
      b_new = b2;
    else
      b_new = 0.5 * (b1 + b2);
    err_ += di * k_.col(i) + dj * k_.col(j);
    err_.array() += b_new - bias_;
    bias_ = b_new;
    alpha_(i) = ai_new;
    alpha_(j) = aj_new;
    return true;
  }

  const Eigen::MatrixXd &k_;
  std::vector<int> y_;
  double c_;
  SmoOptions opts_;
  Rng rng_;
  Eigen::VectorXd alpha_;
  Eigen::VectorXd err_;
  double bias_{0.0};
};

inline void check_labels(std::span<const int> y) {
  bool pos = false, neg = false;
  for (int v : y) {
    if (v != 1 && v != -1)
      throw DataError("svm: labels must be +1 or -1");
    pos |= v == 1;
    neg |= v == -1;
  }
  if (!pos || !neg)
    throw DataError("svm: training data must contain both classes");
}

} // namespace detail

inline DualSolution smo_solve(const Eigen::MatrixXd &kernel, std::span<const int> y, double c,
                              const SmoOptions &opts = {}) {
  detail::check_labels(y);
  if (!(c > 0.0))
    throw ConfigError("svm: C must be positive");
  return detail::SmoSolver(kernel, y, c, opts).solve();
}

inline SvmModel model_from_dual(const Eigen::MatrixXd &x, std::span<const int> y,
                                const DualSolution &sol, double gamma) {
  std::vector<Eigen::Index> sv;
  for (Eigen::Index i = 0; i < sol.alpha.size(); ++i)
    if (sol.alpha(i) > 0.0)
      sv.push_back(i);
  SvmModel model;
  model.gamma = gamma;
  model.bias = sol.bias;
  model.converged = sol.converged;
  model.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
  model.alphas_signed.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    model.support_vectors.row(r) = x.row(sv[k]);
    model.alphas_signed(r) = sol.alpha(sv[k]) * y[static_cast<std::size_t>(sv[k])];
  }
  return model;
}

// Uncalibrated Gaussian-kernel SVM on already-normalized rows.
inline SvmModel smo_train(const Eigen::MatrixXd &x, std::span<const int> y, double c,
                          double gamma, const SmoOptions &opts = {}) {
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw DataError("svm: row/label count mismatch");
  if (!(gamma > 0.0))
    throw ConfigError("svm: gamma must be positive");
  const Eigen::MatrixXd kernel = rbf_kernel(x, gamma);
  return model_from_dual(x, y, smo_solve(kernel, y, c, opts), gamma);
}

inline double decision_function(const SvmModel &model, std::span<const double> x) {
  if (static_cast<Eigen::Index>(x.size()) != model.dim())
    throw DataError("svm: feature dimension mismatch");
  double f = model.bias;
  for (Eigen::Index i = 0; i < model.support_vectors.rows(); ++i) {
    double d2 = 0.0;
    for (Eigen::Index j = 0; j < model.dim(); ++j) {
      const double d = model.support_vectors(i, j) - x[static_cast<std::size_t>(j)];
      d2 += d * d;
    }
    f += model.alphas_signed(i) * std::exp(-model.gamma * d2);
  }
  return f;
}

inline double decision_function(const SvmModel &model, const features::FeatureVector &x) {
  return decision_function(model, std::span<const double>(x.values));
}

inline double sigmoid_probability(double margin, double a, double b) {
  const double z = a * margin + b;
  return z >= 0.0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
}

struct PlattParams {
  double a{0.0};
  double b{0.0};
};

// Regularized cross-entropy of the sigmoid fit with Platt's smoothed targets.
inline double platt_loss(std::span<const double> margins, std::span<const int> labels,
                         double a, double b) {
  std::size_t n_pos = 0;
  for (int l : labels)
    n_pos += l > 0 ? 1 : 0;
  const double n_neg = static_cast<double>(labels.size() - n_pos);
  const double hi = (static_cast<double>(n_pos) + 1.0) / (static_cast<double>(n_pos) + 2.0);
  const double lo = 1.0 / (n_neg + 2.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    const double t = labels[i] > 0 ? hi : lo;
    const double z = margins[i] * a + b;
    loss += z >= 0.0 ? t * z + std::log1p(std::exp(-z)) : (t - 1.0) * z + std::log1p(std::exp(z));
  }
  return loss;
}

// Newton iterations with backtracking line search.
inline PlattParams fit_platt(std::span<const double> margins, std::span<const int> labels) {
  if (margins.size() != labels.size())
    throw DataError("fit_platt: margin/label count mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels)
    (l > 0 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw DataError("fit_platt: both classes must be present");
  const double hi = (static_cast<double>(n_pos) + 1.0) / (static_cast<double>(n_pos) + 2.0);
  const double lo = 1.0 / (static_cast<double>(n_neg) + 2.0);
  constexpr int max_iter = 200;
  constexpr double min_step = 1e-12, sigma = 1e-12, grad_tol = 1e-8;

  double a = 0.0;
  double b = std::log((static_cast<double>(n_neg) + 1.0) / (static_cast<double>(n_pos) + 1.0));
  double fval = platt_loss(margins, labels, a, b);
  for (int it = 0; it < max_iter; ++it) {
    double h11 = sigma, h22 = sigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < margins.size(); ++i) {
      const double f = margins[i];
      const double t = labels[i] > 0 ? hi : lo;
      const double z = f * a + b;
      double p, q;
      if (z >= 0.0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += f * f * d2;
      h22 += d2;
      h21 += f * d2;
      const double d1 = t - p;
      g1 += f * d1;
      g2 += d1;
    }
    if (std::hypot(g1, g2) < grad_tol)
      break;
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1.0;
    bool accepted = false;
    while (step >= min_step) {
      const double na = a + step * da, nb = b + step * db;
      const double nf = platt_loss(margins, labels, na, nb);
      if (nf <= fval + 1e-4 * step * gd) {
        a = na;
        b = nb;
        fval = nf;
        accepted = true;
        break;
      }
      step /= 2.0;
    }
    if (!accepted)
      break;
  }
  return {a, b};
}

// Probability of the seizure class for a normalized feature vector.
inline double predict_probability(const SvmModel &model, std::span<const double> x) {
  return sigmoid_probability(decision_function(model, x), model.platt_a, model.platt_b);
}

inline double predict_probability(const SvmModel &model, const features::FeatureVector &x) {
  return predict_probability(model, std::span<const double>(x.values));
}

struct GridPoint {
  double c{0.0};
  double gamma{0.0};
  double mean_auc{0.0};
  std::vector<double> fold_aucs;
};

struct GridSearchResult {
  double best_c{0.0};
  double best_gamma{0.0};
  std::vector<double> fold_aucs;
  std::vector<GridPoint> grid;
  // Out-of-fold margins of the selected point, in input row order.
  std::vector<double> oof_margins;
};

// Row order that depends only on row contents.
inline std::vector<Eigen::Index> canonical_order(const Eigen::MatrixXd &x, std::span<const int> y) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (y[static_cast<std::size_t>(a)] != y[static_cast<std::size_t>(b)])
      return y[static_cast<std::size_t>(a)] < y[static_cast<std::size_t>(b)];
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (x(a, j) != x(b, j))
        return x(a, j) < x(b, j);
    return false;
  });
  return order;
}

// Fold index per row: stratified, seeded, invariant to input row order.
inline std::vector<int> stratified_folds(const Eigen::MatrixXd &x, std::span<const int> y,
                                         int folds, std::uint64_t seed) {
  const auto order = canonical_order(x, y);
  std::vector<int> fold(order.size(), 0);
  for (int cls : {-1, 1}) {
    std::vector<Eigen::Index> members;
    for (auto i : order)
      if (y[static_cast<std::size_t>(i)] == cls)
        members.push_back(i);
    Rng rng = Rng::stream(seed, cls > 0 ? 1 : 0);
    rng.shuffle(std::span<Eigen::Index>(members));
    for (std::size_t k = 0; k < members.size(); ++k)
      fold[static_cast<std::size_t>(members[k])] = static_cast<int>(k % static_cast<std::size_t>(folds));
  }
  return fold;
}

inline GridSearchResult grid_search_cv(const Eigen::MatrixXd &x, std::span<const int> y,
                                       const SvmTrainConfig &cfg) {
  if (cfg.c_grid.empty() || cfg.gamma_grid.empty())
    throw ConfigError("grid_search_cv: empty hyper-parameter grid");
  if (cfg.folds < 2)
    throw ConfigError("grid_search_cv: need at least two folds");
  detail::check_labels(y);
  int n_pos = 0, n_neg = 0;
  for (int v : y)
    (v > 0 ? n_pos : n_neg)++;
  if (n_pos < cfg.folds || n_neg < cfg.folds)
    throw DataError("grid_search_cv: need at least one example per class per fold");

  const auto order = canonical_order(x, y);
  const auto fold = stratified_folds(x, y, cfg.folds, cfg.seed);

  std::vector<double> c_grid = cfg.c_grid, g_grid = cfg.gamma_grid;
  std::sort(c_grid.begin(), c_grid.end());
  std::sort(g_grid.begin(), g_grid.end());

  GridSearchResult result;
  double best = -1.0;
  for (double gamma : g_grid) {
    const Eigen::MatrixXd kernel = rbf_kernel(x, gamma);
    for (double c : c_grid) {
      GridPoint point{c, gamma, 0.0, {}};
      std::vector<double> oof(y.size(), 0.0);
      for (int f = 0; f < cfg.folds; ++f) {
        std::vector<Eigen::Index> train, test;
        for (auto i : order)
          (fold[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
        const auto nt = static_cast<Eigen::Index>(train.size());
        Eigen::MatrixXd k_train(nt, nt);
        std::vector<int> y_train(train.size());
        for (Eigen::Index a = 0; a < nt; ++a) {
          y_train[static_cast<std::size_t>(a)] = y[static_cast<std::size_t>(train[static_cast<std::size_t>(a)])];
          for (Eigen::Index b = 0; b < nt; ++b)
            k_train(a, b) = kernel(train[static_cast<std::size_t>(a)], train[static_cast<std::size_t>(b)]);
        }
        SmoOptions opts{cfg.smo_tolerance, cfg.max_passes,
                        splitmix64(cfg.seed + static_cast<std::uint64_t>(f))};
        const auto sol = smo_solve(k_train, y_train, c, opts);
        std::vector<double> scores;
        std::vector<std::uint8_t> labels;
        for (auto t : test) {
          double m = sol.bias;
          for (Eigen::Index a = 0; a < nt; ++a)
            if (sol.alpha(a) > 0.0)
              m += sol.alpha(a) * y_train[static_cast<std::size_t>(a)] *
                   kernel(train[static_cast<std::size_t>(a)], t);
          oof[static_cast<std::size_t>(t)] = m;
          scores.push_back(m);
          labels.push_back(y[static_cast<std::size_t>(t)] > 0 ? 1 : 0);
        }
        point.fold_aucs.push_back(postproc::auc(scores, labels));
      }
      point.mean_auc = std::accumulate(point.fold_aucs.begin(), point.fold_aucs.end(), 0.0) /
                       static_cast<double>(cfg.folds);
      // Strict improvement keeps the smaller C / gamma on ties.
      bool better = point.mean_auc > best;
      if (!better && point.mean_auc == best)
        better = c < result.best_c || (c == result.best_c && gamma < result.best_gamma);
      if (better) {
        best = point.mean_auc;
        result.best_c = c;
        result.best_gamma = gamma;
        result.fold_aucs = point.fold_aucs;
        result.oof_margins = oof;
      }
      result.grid.push_back(std::move(point));
    }
  }
  return result;
}

// Full training: normalizer, grid search, final fit on all rows, Platt
// calibration on the pooled out-of-fold margins of the chosen point.
inline SvmModel train_svm(std::span<const features::FeatureVector> rows, std::span<const int> y,
                          const SvmTrainConfig &cfg) {
  if (rows.size() != y.size())
    throw DataError("train_svm: row/label count mismatch");
  // Canonical row order up front so every accumulation is independent of input order.
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(features::kNumFeatures));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < features::kNumFeatures; ++j)
      raw(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  const auto order = canonical_order(raw, y);
  std::vector<features::FeatureVector> sorted(rows.size());
  std::vector<int> yc(y.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted[k] = rows[static_cast<std::size_t>(order[k])];
    yc[k] = y[static_cast<std::size_t>(order[k])];
  }
  const auto norm = features::fit_normalizer(sorted);
  Eigen::MatrixXd x(raw.rows(), raw.cols());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto z = norm.apply(sorted[i]);
    for (std::size_t j = 0; j < features::kNumFeatures; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = z[j];
  }
  const auto search = grid_search_cv(x, yc, cfg);
  SvmModel model = smo_train(x, yc, search.best_c, search.best_gamma,
                             {cfg.smo_tolerance, cfg.max_passes, cfg.seed});
  const auto platt = fit_platt(search.oof_margins, yc);
  model.platt_a = platt.a;
  model.platt_b = platt.b;
  model.normalizer = norm;
  return model;
}

inline double predict_probability_raw(const SvmModel &model, const features::FeatureVector &fv) {
  return predict_probability(model, model.normalizer.apply(fv));
}

// Binary model file: "SVM1", then little-endian m, dim (u64), gamma, bias, a, b
// (f64), normalizer means and stds (dim f64 each), then m rows of
// (signed alpha, vector) as f64.
inline void save_model(const SvmModel &model, const std::string &path) {
  auto out = text::open_output(path, true);
  out.write("SVM1", 4);
  const auto m = static_cast<std::uint64_t>(model.support_vectors.rows());
  const auto dim = static_cast<std::uint64_t>(model.dim());
  if (dim != features::kNumFeatures)
    throw DataError("svm: model dimension must be 55");
  text::write_le(out, m);
  text::write_le(out, dim);
  text::write_le(out, model.gamma);
  text::write_le(out, model.bias);
  text::write_le(out, model.platt_a);
  text::write_le(out, model.platt_b);
  for (double v : model.normalizer.mean)
    text::write_le(out, v);
  for (double v : model.normalizer.stdev)
    text::write_le(out, v);
  for (Eigen::Index i = 0; i < model.support_vectors.rows(); ++i) {
    text::write_le(out, model.alphas_signed(i));
    for (Eigen::Index j = 0; j < model.dim(); ++j)
      text::write_le(out, model.support_vectors(i, j));
  }
  if (!out)
    throw IoError("write failed for '" + path + "'");
}

inline SvmModel load_model(const std::string &path) {
  auto in = text::open_input(path, true);
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "SVM1")
    throw FormatError(path + ": not an SVM1 model file");
  const auto m = text::read_le<std::uint64_t>(in, "support vector count");
  const auto dim = text::read_le<std::uint64_t>(in, "dimension");
  if (dim != features::kNumFeatures || m == 0 || m > (1ULL << 32))
    throw FormatError(path + ": implausible model dimensions");
  SvmModel model;
  model.gamma = text::read_le<double>(in, "gamma");
  model.bias = text::read_le<double>(in, "bias");
  model.platt_a = text::read_le<double>(in, "platt a");
  model.platt_b = text::read_le<double>(in, "platt b");
  for (auto &v : model.normalizer.mean)
    v = text::read_le<double>(in, "normalizer mean");
  for (auto &v : model.normalizer.stdev)
    v = text::read_le<double>(in, "normalizer std");
  model.support_vectors.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
  model.alphas_signed.resize(static_cast<Eigen::Index>(m));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(m); ++i) {
    model.alphas_signed(i) = text::read_le<double>(in, "alpha");
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(dim); ++j)
      model.support_vectors(i, j) = text::read_le<double>(in, "support vector");
  }
  return model;
}

} // namespace nsd::svm
