#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nsd/error.hpp"
#include "nsd/rng.hpp"
#include "nsd/text_io.hpp"

namespace nsd::fcnn {

inline constexpr int kKernel = 4;
inline constexpr int kMaps = 32;
inline constexpr int kClasses = 2;
inline constexpr int kInputLength = 256;
inline constexpr int kSeizureClass = 1;
inline constexpr int kNumConv = 6;
// Temporal lengths after conv1, conv2, conv3, pool1, conv4, conv5, pool2, conv6.
inline constexpr std::array<int, 8> kLayerLengths{253, 250, 247, 120, 117, 114, 56, 53};

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T> using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Batch of feature maps: one row per map, columns grouped per example
// (column b * length + i holds time step i of example b).
template <typename T> struct Maps {
  Matrix<T> data;
  int batch{0};
  int length{0};

  int maps() const { return static_cast<int>(data.rows()); }

  static Maps zeros(int maps, int batch, int length) {
    return {Matrix<T>::Zero(maps, static_cast<Eigen::Index>(batch) * length), batch, length};
  }
  // Columns of one example.
  auto example(int b) { return data.middleCols(static_cast<Eigen::Index>(b) * length, length); }
  auto example(int b) const {
    return data.middleCols(static_cast<Eigen::Index>(b) * length, length);
  }
};

// Weights are stored [out x (in * 4)], column c * 4 + j holding W[k][c][j].
template <typename T> struct ConvLayer {
  Matrix<T> weights;
  Vector<T> bias;

  int out_maps() const { return static_cast<int>(weights.rows()); }
  int in_maps() const { return static_cast<int>(weights.cols()) / kKernel; }
  T &w(int k, int c, int j) { return weights(k, c * kKernel + j); }
  T w(int k, int c, int j) const { return weights(k, c * kKernel + j); }

  static ConvLayer zeros(int in, int out) {
    return {Matrix<T>::Zero(out, in * kKernel), Vector<T>::Zero(out)};
  }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(weights.size() + bias.size());
  }
};

template <typename T> struct BatchNormLayer {
  static constexpr double epsilon = 1e-5;
  static constexpr double momentum = 0.9;
  Vector<T> gamma;
  Vector<T> beta;
  Vector<T> running_mean;
  Vector<T> running_var;

  static BatchNormLayer identity(int maps) {
    return {Vector<T>::Ones(maps), Vector<T>::Zero(maps), Vector<T>::Zero(maps),
            Vector<T>::Ones(maps)};
  }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(gamma.size() + beta.size());
  }
};

// conv1-conv3 (1->32->32->32), batch norm, avg pool (8, 2), conv4-conv5,
// avg pool (4, 2), conv6 (32->2), global average pooling, softmax. Every
// convolution is followed by a ReLU.
template <typename T> struct FcnnModel {
  std::array<ConvLayer<T>, kNumConv> conv;
  BatchNormLayer<T> bn;

  static FcnnModel zeros() {
    FcnnModel m;
    m.conv[0] = ConvLayer<T>::zeros(1, kMaps);
    for (int i = 1; i < 5; ++i)
      m.conv[static_cast<std::size_t>(i)] = ConvLayer<T>::zeros(kMaps, kMaps);
    m.conv[5] = ConvLayer<T>::zeros(kMaps, kClasses);
    m.bn = BatchNormLayer<T>::identity(kMaps);
    return m;
  }

  template <typename U> FcnnModel<U> cast() const {
    FcnnModel<U> out;
    for (std::size_t i = 0; i < conv.size(); ++i) {
      out.conv[i].weights = conv[i].weights.template cast<U>();
      out.conv[i].bias = conv[i].bias.template cast<U>();
    }
    out.bn.gamma = bn.gamma.template cast<U>();
    out.bn.beta = bn.beta.template cast<U>();
    out.bn.running_mean = bn.running_mean.template cast<U>();
    out.bn.running_var = bn.running_var.template cast<U>();
    return out;
  }

  bool operator==(const FcnnModel &o) const {
    for (std::size_t i = 0; i < conv.size(); ++i)
      if (conv[i].weights != o.conv[i].weights || conv[i].bias != o.conv[i].bias)
        return false;
    return bn.gamma == o.bn.gamma && bn.beta == o.bn.beta &&
           bn.running_mean == o.bn.running_mean && bn.running_var == o.bn.running_var;
  }
};

// Trainable tensors in layer order: conv1.W, conv1.b, conv2.W, conv2.b,
// conv3.W, conv3.b, bn.gamma, bn.beta, conv4.W, ..., conv6.b.
template <typename Model, typename F> void for_each_parameter(Model &model, F &&fn) {
  auto conv = [&](std::size_t i) {
    fn(std::span(model.conv[i].weights.data(), static_cast<std::size_t>(model.conv[i].weights.size())));
    fn(std::span(model.conv[i].bias.data(), static_cast<std::size_t>(model.conv[i].bias.size())));
  };
  conv(0);
  conv(1);
  conv(2);
  fn(std::span(model.bn.gamma.data(), static_cast<std::size_t>(model.bn.gamma.size())));
  fn(std::span(model.bn.beta.data(), static_cast<std::size_t>(model.bn.beta.size())));
  conv(3);
  conv(4);
  conv(5);
}

template <typename T> std::vector<T> to_flat(const FcnnModel<T> &model) {
  std::vector<T> flat;
  for_each_parameter(model, [&](auto span) { flat.insert(flat.end(), span.begin(), span.end()); });
  return flat;
}

template <typename T> void from_flat(FcnnModel<T> &model, std::span<const T> flat) {
  std::size_t offset = 0;
  for_each_parameter(model, [&](auto span) {
    if (offset + span.size() > flat.size())
      throw DataError("fcnn: flat parameter vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), span.size(), span.begin());
    offset += span.size();
  });
  if (offset != flat.size())
    throw DataError("fcnn: flat parameter vector has the wrong length");
}

struct ParamCount {
  // conv1, conv2, conv3, batch norm, conv4, conv5, conv6.
  std::array<std::size_t, 7> per_layer{};
  std::size_t total_with_bn{0};
  std::size_t total_without_bn{0};
};

template <typename T> ParamCount count_params(const FcnnModel<T> &model) {
  ParamCount pc;
  pc.per_layer = {model.conv[0].parameter_count(), model.conv[1].parameter_count(),
                  model.conv[2].parameter_count(), model.bn.parameter_count(),
                  model.conv[3].parameter_count(), model.conv[4].parameter_count(),
                  model.conv[5].parameter_count()};
  pc.total_with_bn = std::accumulate(pc.per_layer.begin(), pc.per_layer.end(), std::size_t{0});
  pc.total_without_bn = pc.total_with_bn - pc.per_layer[3];
  return pc;
}

struct ReceptiveField {
  int size{1};
  int jump{1};
};

// Receptive field of convolution layer 1..6 in input samples.
inline ReceptiveField receptive_field(int layer_index) {
  if (layer_index < 1 || layer_index > kNumConv)
    throw DataError("receptive_field: layer index must be in 1..6");
  ReceptiveField rf;
  auto conv = [&] { rf.size += (kKernel - 1) * rf.jump; };
  auto pool = [&](int width, int stride) {
    rf.size += (width - 1) * rf.jump;
    rf.jump *= stride;
  };
  for (int layer = 1; layer <= layer_index; ++layer) {
    if (layer == 4)
      pool(8, 2);
    if (layer == 6)
      pool(4, 2);
    conv();
  }
  return rf;
}

template <typename T> ConvLayer<T> glorot_conv(Rng &rng, int in, int out) {
  ConvLayer<T> layer = ConvLayer<T>::zeros(in, out);
  const double bound = std::sqrt(6.0 / static_cast<double>(in * kKernel + out * kKernel));
  for (Eigen::Index i = 0; i < layer.weights.size(); ++i)
    layer.weights.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
  return layer;
}

// Glorot-uniform weights, zero biases, identity batch norm.
template <typename T = float> FcnnModel<T> init_model(std::uint64_t seed) {
  Rng rng(seed);
  FcnnModel<T> m;
  m.conv[0] = glorot_conv<T>(rng, 1, kMaps);
  for (std::size_t i = 1; i < 5; ++i)
    m.conv[i] = glorot_conv<T>(rng, kMaps, kMaps);
  m.conv[5] = glorot_conv<T>(rng, kMaps, kClasses);
  m.bn = BatchNormLayer<T>::identity(kMaps);
  return m;
}

namespace detail {

// Examples per im2col block.
inline int chunk_examples(int length) { return std::max(1, 65536 / std::max(length, 1)); }

template <typename T>
void im2col(const Maps<T> &x, int b0, int nb, int out_len, Matrix<T> &cols) {
  const int in = x.maps();
  cols.resize(static_cast<Eigen::Index>(in) * kKernel, static_cast<Eigen::Index>(nb) * out_len);
  for (int c = 0; c < in; ++c)
    for (int j = 0; j < kKernel; ++j) {
      auto dst = cols.row(static_cast<Eigen::Index>(c) * kKernel + j);
      for (int b = 0; b < nb; ++b)
        dst.segment(static_cast<Eigen::Index>(b) * out_len, out_len) =
            x.data.row(c).segment(static_cast<Eigen::Index>(b0 + b) * x.length + j, out_len);
    }
}

} // namespace detail

// Valid cross-correlation, stride 1: y[k][i] = sum_c sum_j W[k][c][j] x[c][i+j] + b[k].
template <typename T> Maps<T> conv1d_forward(const Maps<T> &x, const ConvLayer<T> &layer) {
  if (x.length < kKernel)
    throw DataError("conv1d: input shorter than the kernel");
  if (x.maps() != layer.in_maps())
    throw DataError("conv1d: input map count does not match the layer");
  const int out_len = x.length - kKernel + 1;
  Maps<T> y{Matrix<T>(layer.out_maps(), static_cast<Eigen::Index>(x.batch) * out_len), x.batch,
            out_len};
  const int chunk = detail::chunk_examples(out_len);
  Matrix<T> cols;
  for (int b0 = 0; b0 < x.batch; b0 += chunk) {
    const int nb = std::min(chunk, x.batch - b0);
    detail::im2col(x, b0, nb, out_len, cols);
    y.data.middleCols(static_cast<Eigen::Index>(b0) * out_len, static_cast<Eigen::Index>(nb) * out_len)
        .noalias() = layer.weights * cols;
  }
  y.data.colwise() += layer.bias;
  return y;
}

// Accumulates weight/bias gradients; returns the input gradient when requested.
template <typename T>
Maps<T> conv1d_backward(const Maps<T> &x, const ConvLayer<T> &layer, const Maps<T> &dy,
                        ConvLayer<T> &grad, bool need_input_grad) {
  const int out_len = dy.length;
  Maps<T> dx;
  if (need_input_grad)
    dx = Maps<T>::zeros(x.maps(), x.batch, x.length);
  grad.bias += dy.data.rowwise().sum();
  const int chunk = detail::chunk_examples(out_len);
  Matrix<T> cols, dcols;
  for (int b0 = 0; b0 < x.batch; b0 += chunk) {
    const int nb = std::min(chunk, x.batch - b0);
    const auto dy_block = dy.data.middleCols(static_cast<Eigen::Index>(b0) * out_len,
                                             static_cast<Eigen::Index>(nb) * out_len);
    detail::im2col(x, b0, nb, out_len, cols);
    grad.weights.noalias() += dy_block * cols.transpose();
    if (!need_input_grad)
      continue;
    dcols.noalias() = layer.weights.transpose() * dy_block;
    for (int c = 0; c < x.maps(); ++c)
      for (int j = 0; j < kKernel; ++j) {
        const auto src = dcols.row(static_cast<Eigen::Index>(c) * kKernel + j);
        for (int b = 0; b < nb; ++b)
          dx.data.row(c).segment(static_cast<Eigen::Index>(b0 + b) * x.length + j, out_len) +=
              src.segment(static_cast<Eigen::Index>(b) * out_len, out_len);
      }
  }
  return dx;
}

template <typename T> Maps<T> relu(Maps<T> x) {
  x.data = x.data.cwiseMax(T(0));
  return x;
}

// Gradient through a ReLU whose output is `out`.
template <typename T> void relu_backward(const Maps<T> &out, Maps<T> &grad) {
  grad.data = (out.data.array() > T(0)).select(grad.data, T(0));
}

template <typename T> Maps<T> avgpool_forward(const Maps<T> &x, int width, int stride) {
  if (x.length < width)
    throw DataError("avgpool: input shorter than the pooling window");
  const int out_len = (x.length - width) / stride + 1;
  Maps<T> y = Maps<T>::zeros(x.maps(), x.batch, out_len);
  const T scale = T(1) / static_cast<T>(width);
  for (int k = 0; k < x.maps(); ++k)
    for (int b = 0; b < x.batch; ++b) {
      const T *src = x.data.row(k).data() + static_cast<std::ptrdiff_t>(b) * x.length;
      T *dst = y.data.row(k).data() + static_cast<std::ptrdiff_t>(b) * out_len;
      for (int i = 0; i < out_len; ++i) {
        T s = 0;
        for (int w = 0; w < width; ++w)
          s += src[i * stride + w];
        dst[i] = s * scale;
      }
    }
  return y;
}

template <typename T>
Maps<T> avgpool_backward(const Maps<T> &dy, int in_length, int width, int stride) {
  Maps<T> dx = Maps<T>::zeros(dy.maps(), dy.batch, in_length);
  const T scale = T(1) / static_cast<T>(width);
  for (int k = 0; k < dy.maps(); ++k)
    for (int b = 0; b < dy.batch; ++b) {
      const T *src = dy.data.row(k).data() + static_cast<std::ptrdiff_t>(b) * dy.length;
      T *dst = dx.data.row(k).data() + static_cast<std::ptrdiff_t>(b) * in_length;
      for (int i = 0; i < dy.length; ++i)
        for (int w = 0; w < width; ++w)
          dst[i * stride + w] += src[i] * scale;
    }
  return dx;
}

enum class Mode { train, infer };

template <typename T> struct BatchNormCache {
  Matrix<T> normalized; // x-hat
  Vector<T> mean;
  Vector<T> var;
  Vector<T> inv_std;
};

template <typename T>
Maps<T> batchnorm_forward(const Maps<T> &x, const BatchNormLayer<T> &layer, Mode mode,
                          BatchNormCache<T> &cache) {
  const Eigen::Index count = x.data.cols();
  if (mode == Mode::train) {
    if (count < 2)
      throw DataError("batchnorm: training mode needs batch * length >= 2");
    cache.mean = x.data.rowwise().mean();
    cache.var = (x.data.colwise() - cache.mean).array().square().rowwise().mean();
  } else {
    cache.mean = layer.running_mean;
    cache.var = layer.running_var;
  }
  cache.inv_std = (cache.var.array() + static_cast<T>(layer.epsilon)).rsqrt();
  cache.normalized = (x.data.colwise() - cache.mean).array().colwise() * cache.inv_std.array();
  Maps<T> y{cache.normalized, x.batch, x.length};
  y.data = (y.data.array().colwise() * layer.gamma.array()).colwise() + layer.beta.array();
  return y;
}

template <typename T>
void update_running_stats(BatchNormLayer<T> &layer, const BatchNormCache<T> &cache) {
  const T mom = static_cast<T>(BatchNormLayer<T>::momentum);
  layer.running_mean = mom * layer.running_mean + (T(1) - mom) * cache.mean;
  layer.running_var = mom * layer.running_var + (T(1) - mom) * cache.var;
}

template <typename T>
Maps<T> batchnorm_backward(const Maps<T> &dy, const BatchNormLayer<T> &layer,
                           const BatchNormCache<T> &cache, Mode mode, BatchNormLayer<T> &grad) {
  grad.gamma += (dy.data.array() * cache.normalized.array()).rowwise().sum().matrix();
  grad.beta += dy.data.rowwise().sum();
  Maps<T> dx{Matrix<T>(dy.data.rows(), dy.data.cols()), dy.batch, dy.length};
  const Matrix<T> dxhat = dy.data.array().colwise() * layer.gamma.array();
  if (mode == Mode::infer) {
    dx.data = dxhat.array().colwise() * cache.inv_std.array();
    return dx;
  }
  const T m = static_cast<T>(dy.data.cols());
  const Vector<T> sum_dxhat = dxhat.rowwise().sum();
  const Vector<T> sum_dxhat_xhat = (dxhat.array() * cache.normalized.array()).rowwise().sum();
  dx.data = ((dxhat * m).colwise() - sum_dxhat -
             (cache.normalized.array().colwise() * sum_dxhat_xhat.array()).matrix());
  dx.data = dx.data.array().colwise() * (cache.inv_std.array() / m);
  return dx;
}

// Per-map temporal mean: [maps x batch].
template <typename T> Matrix<T> gap(const Maps<T> &x) {
  Matrix<T> out(x.maps(), x.batch);
  for (int b = 0; b < x.batch; ++b)
    out.col(b) = x.example(b).rowwise().mean();
  return out;
}

// Column-wise softmax with max subtraction.
template <typename T> Matrix<T> softmax(const Matrix<T> &logits) {
  Matrix<T> p(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const T mx = logits.col(b).maxCoeff();
    const auto e = (logits.col(b).array() - mx).exp();
    p.col(b) = e / e.sum();
  }
  return p;
}

template <typename T> struct ForwardTrace {
  Mode mode{Mode::infer};
  Maps<T> input;
  Maps<T> a1, a2, a3;
  BatchNormCache<T> bn_cache;
  Maps<T> bn_out;
  Maps<T> p1, a4, a5, p2;
  Maps<T> z6, a6;
  Matrix<T> logits;        // [2 x batch]
  Matrix<T> probabilities; // [2 x batch]

  int batch() const { return input.batch; }
  std::array<int, 8> lengths() const {
    return {a1.length, a2.length, a3.length, p1.length, a4.length, a5.length, p2.length, a6.length};
  }
};

// Input: [1 x batch * 256], one standardized epoch per example.
template <typename T>
ForwardTrace<T> forward(const FcnnModel<T> &model, const Maps<T> &input, Mode mode) {
  if (input.maps() != 1 || input.length != kInputLength || input.batch < 1 ||
      input.data.cols() != static_cast<Eigen::Index>(input.batch) * kInputLength)
    throw DataError("fcnn: input must be a batch of 256-sample single-channel epochs");
  ForwardTrace<T> t;
  t.mode = mode;
  t.input = input;
  t.a1 = relu(conv1d_forward(input, model.conv[0]));
  t.a2 = relu(conv1d_forward(t.a1, model.conv[1]));
  t.a3 = relu(conv1d_forward(t.a2, model.conv[2]));
  t.bn_out = batchnorm_forward(t.a3, model.bn, mode, t.bn_cache);
  t.p1 = avgpool_forward(t.bn_out, 8, 2);
  t.a4 = relu(conv1d_forward(t.p1, model.conv[3]));
  t.a5 = relu(conv1d_forward(t.a4, model.conv[4]));
  t.p2 = avgpool_forward(t.a5, 4, 2);
  t.z6 = conv1d_forward(t.p2, model.conv[5]);
  t.a6 = relu(t.z6);
  t.logits = gap(t.a6);
  t.probabilities = softmax(t.logits);
  if (t.lengths() != kLayerLengths)
    throw NumericalError("fcnn: layer shape chain deviates from the architecture");
  return t;
}

template <typename T> Maps<T> make_input(std::span<const T> epochs, int batch) {
  if (epochs.size() != static_cast<std::size_t>(batch) * kInputLength)
    throw DataError("fcnn: input buffer size does not match batch * 256");
  Maps<T> in{Matrix<T>(1, static_cast<Eigen::Index>(batch) * kInputLength), batch, kInputLength};
  std::copy(epochs.begin(), epochs.end(), in.data.data());
  return in;
}

// Mean categorical cross-entropy computed from logits via log-sum-exp.
template <typename T> double mean_cross_entropy(const Matrix<T> &logits, std::span<const int> targets) {
  double total = 0.0;
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const double mx = static_cast<double>(logits.col(b).maxCoeff());
    double s = 0.0;
    for (Eigen::Index k = 0; k < logits.rows(); ++k)
      s += std::exp(static_cast<double>(logits(k, b)) - mx);
    total += mx + std::log(s) - static_cast<double>(logits(targets[static_cast<std::size_t>(b)], b));
  }
  return total / static_cast<double>(logits.cols());
}

// Exact gradients of the mean cross-entropy for every trainable parameter.
// Running statistics in the returned structure are zero.
template <typename T>
FcnnModel<T> backward(const FcnnModel<T> &model, const ForwardTrace<T> &t,
                      std::span<const int> targets) {
  const int batch = t.batch();
  if (targets.size() != static_cast<std::size_t>(batch))
    throw DataError("fcnn: target count does not match the batch");
  FcnnModel<T> g = FcnnModel<T>::zeros();
  g.bn.gamma.setZero();
  g.bn.running_var.setZero();

  Matrix<T> dlogits = t.probabilities;
  for (int b = 0; b < batch; ++b) {
    const int target = targets[static_cast<std::size_t>(b)];
    if (target < 0 || target >= kClasses)
      throw DataError("fcnn: target class out of range");
    dlogits(target, b) -= T(1);
  }
  dlogits /= static_cast<T>(batch);

  Maps<T> d6 = Maps<T>::zeros(kClasses, batch, t.a6.length);
  for (int b = 0; b < batch; ++b)
    d6.example(b).colwise() = dlogits.col(b) / static_cast<T>(t.a6.length);
  relu_backward(t.a6, d6);
  Maps<T> dp2 = conv1d_backward(t.p2, model.conv[5], d6, g.conv[5], true);
  Maps<T> da5 = avgpool_backward(dp2, t.a5.length, 4, 2);
  relu_backward(t.a5, da5);
  Maps<T> da4 = conv1d_backward(t.a4, model.conv[4], da5, g.conv[4], true);
  relu_backward(t.a4, da4);
  Maps<T> dp1 = conv1d_backward(t.p1, model.conv[3], da4, g.conv[3], true);
  Maps<T> dbn = avgpool_backward(dp1, t.bn_out.length, 8, 2);
  Maps<T> da3 = batchnorm_backward(dbn, model.bn, t.bn_cache, t.mode, g.bn);
  relu_backward(t.a3, da3);
  Maps<T> da2 = conv1d_backward(t.a2, model.conv[2], da3, g.conv[2], true);
  relu_backward(t.a2, da2);
  Maps<T> da1 = conv1d_backward(t.a1, model.conv[1], da2, g.conv[1], true);
  relu_backward(t.a1, da1);
  conv1d_backward(t.input, model.conv[0], da1, g.conv[0], false);
  return g;
}

// Seizure probability per example, inference mode, in batches.
template <typename T>
std::vector<double> predict_seizure(const FcnnModel<T> &model, std::span<const T> epochs,
                                    int max_batch = 512) {
  const auto n = static_cast<int>(epochs.size() / kInputLength);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int b0 = 0; b0 < n; b0 += max_batch) {
    const int nb = std::min(max_batch, n - b0);
    const auto in = make_input<T>(
        epochs.subspan(static_cast<std::size_t>(b0) * kInputLength,
                       static_cast<std::size_t>(nb) * kInputLength),
        nb);
    const auto trace = forward(model, in, Mode::infer);
    for (int b = 0; b < nb; ++b)
      out.push_back(static_cast<double>(trace.probabilities(kSeizureClass, b)));
  }
  return out;
}

struct LocalizedWindow {
  int index{0};
  int start_sample{0}; // inclusive
  int end_sample{0};   // exclusive
  double score{0.0};   // seizure-map pre-activation
};

// Input window of final-layer position i: [4i, 4i + 47) clipped to the epoch.
inline std::pair<int, int> final_layer_window(int index) {
  const auto rf = receptive_field(kNumConv);
  const int start = index * rf.jump;
  return {std::clamp(start, 0, kInputLength), std::clamp(start + rf.size, 0, kInputLength)};
}

// Top final-layer positions of the seizure map, traced back to input windows.
template <typename T>
std::vector<LocalizedWindow> localize(const FcnnModel<T> &model, std::span<const T> epoch,
                                      int top_n) {
  const auto trace = forward(model, make_input<T>(epoch, 1), Mode::infer);
  const int n = trace.z6.length;
  top_n = std::clamp(top_n, 0, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const auto row = trace.z6.data.row(kSeizureClass);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return row(a) > row(b); });
  std::vector<LocalizedWindow> out;
  for (int r = 0; r < top_n; ++r) {
    const int i = order[static_cast<std::size_t>(r)];
    const auto [start, end] = final_layer_window(i);
    out.push_back({i, start, end, static_cast<double>(row(i))});
  }
  return out;
}

// "FCN1", u16 version, then conv1, conv2, conv3, batch norm, conv4, conv5,
// conv6. A conv layer is u32 out, u32 in, u32 kernel, weights [out][in][kernel],
// u32 out, bias. Batch norm is u32 maps, then gamma, beta, running mean,
// running variance. All values little-endian float32.
inline constexpr std::uint16_t kFormatVersion = 1;

inline void save_model(const FcnnModel<float> &model, const std::string &path) {
  auto out = text::open_output(path, true);
  out.write("FCN1", 4);
  text::write_le(out, kFormatVersion);
  auto write_vec = [&](const auto &v) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      text::write_le(out, static_cast<float>(v.data()[i]));
  };
  auto write_conv = [&](const ConvLayer<float> &c) {
    text::write_le(out, static_cast<std::uint32_t>(c.out_maps()));
    text::write_le(out, static_cast<std::uint32_t>(c.in_maps()));
    text::write_le(out, static_cast<std::uint32_t>(kKernel));
    write_vec(c.weights);
    text::write_le(out, static_cast<std::uint32_t>(c.bias.size()));
    write_vec(c.bias);
  };
  write_conv(model.conv[0]);
  write_conv(model.conv[1]);
  write_conv(model.conv[2]);
  text::write_le(out, static_cast<std::uint32_t>(model.bn.gamma.size()));
  write_vec(model.bn.gamma);
  write_vec(model.bn.beta);
  write_vec(model.bn.running_mean);
  write_vec(model.bn.running_var);
  write_conv(model.conv[3]);
  write_conv(model.conv[4]);
  write_conv(model.conv[5]);
  if (!out)
    throw IoError("write failed for '" + path + "'");
}

inline FcnnModel<float> load_model(const std::string &path) {
  auto in = text::open_input(path, true);
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "FCN1")
    throw FormatError(path + ": not an FCN1 model file");
  const auto version = text::read_le<std::uint16_t>(in, "format version");
  if (version != kFormatVersion)
    throw FormatError(path + ": unsupported model format version " + std::to_string(version));
  FcnnModel<float> model = FcnnModel<float>::zeros();
  auto read_vec = [&](auto &v, const char *what) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v.data()[i] = text::read_le<float>(in, what);
  };
  auto read_conv = [&](ConvLayer<float> &c, const char *name) {
    const auto out_maps = text::read_le<std::uint32_t>(in, name);
    const auto in_maps = text::read_le<std::uint32_t>(in, name);
    const auto kernel = text::read_le<std::uint32_t>(in, name);
    if (static_cast<int>(out_maps) != c.out_maps() || static_cast<int>(in_maps) != c.in_maps() ||
        kernel != static_cast<std::uint32_t>(kKernel))
      throw FormatError(path + ": unexpected dimensions for " + name);
    read_vec(c.weights, name);
    if (text::read_le<std::uint32_t>(in, name) != out_maps)
      throw FormatError(path + ": unexpected bias length for " + name);
    read_vec(c.bias, name);
  };
  read_conv(model.conv[0], "conv1");
  read_conv(model.conv[1], "conv2");
  read_conv(model.conv[2], "conv3");
  if (text::read_le<std::uint32_t>(in, "batch norm") != static_cast<std::uint32_t>(kMaps))
    throw FormatError(path + ": unexpected batch norm size");
  read_vec(model.bn.gamma, "batch norm");
  read_vec(model.bn.beta, "batch norm");
  read_vec(model.bn.running_mean, "batch norm");
  read_vec(model.bn.running_var, "batch norm");
  read_conv(model.conv[3], "conv4");
  read_conv(model.conv[4], "conv5");
  read_conv(model.conv[5], "conv6");
  for (Eigen::Index i = 0; i < model.bn.running_var.size(); ++i)
    if (!(model.bn.running_var(i) >= 0.0f))
      throw FormatError(path + ": negative running variance");
  return model;
}

} // namespace nsd::fcnn
