#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/model.hpp"
#include "fedbench/core/rng.hpp"
#include "fedbench/core/tensor.hpp"

namespace fedbench {

// Dropout is active only in train mode.
enum class Mode { train, eval };

struct GradientResult {
  double loss = 0.0;
  ParamVector grad;
};

// Everything one reverse pass can produce. input_grad / target_grad are
// filled only when requested.
struct FullGradient {
  double loss = 0.0;
  ParamVector grad;
  Tensor probs;
  Tensor input_grad;
  Tensor target_grad;
};

struct BackpropOptions {
  Mode mode = Mode::eval;
  std::uint64_t dropout_seed = 0;
  bool param_grad = true;
  bool input_grad = false;
  bool target_grad = false;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
};

inline Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw ConfigError("label " + std::to_string(labels[i]) + " outside [0," + std::to_string(classes) + ")");
    t[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return t;
}

inline void softmax_rows(std::span<double> z, std::size_t cols) {
  for (std::size_t r = 0; r * cols < z.size(); ++r) {
    double* row = z.data() + r * cols;
    const double m = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += (row[c] = std::exp(row[c] - m));
    for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
  }
}

// Multiply-adds per sample for one forward pass (2 FLOPs per MAC).
inline double forward_flops(const ModelSpec& spec) {
  const auto shapes = infer_shapes(spec);
  double flops = 0.0;
  Shape prev = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (const auto* d = std::get_if<DenseLayer>(&spec.layers[i])) {
      flops += 2.0 * static_cast<double>(d->in * d->out);
    } else if (const auto* c = std::get_if<ConvLayer>(&spec.layers[i])) {
      flops += 2.0 * static_cast<double>(c->kernel * c->kernel * prev[2] * shape_size(shapes[i]));
    }
    prev = shapes[i];
  }
  return flops;
}

// Forward + backward is costed at three forward passes.
inline double train_flops(const ModelSpec& spec) { return 3.0 * forward_flops(spec); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

inline void activate(std::span<double> v, Activation a) {
  switch (a) {
    case Activation::linear: break;
    case Activation::relu:
      for (double& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::sigmoid:
      for (double& x : v) x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      break;
  }
}

// grad *= act'(z) expressed through the activation output y.
inline void activation_backward(std::span<double> grad, std::span<const double> y, Activation a) {
  switch (a) {
    case Activation::linear: break;
    case Activation::relu:
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(y[i] > 0.0)) grad[i] = 0.0;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= y[i] * (1.0 - y[i]);
      break;
  }
}

class Network {
 public:
  Network(const ModelSpec& spec, const ParamVector& params) : spec_(spec), params_(params) {
    shapes_ = infer_shapes(spec);
    if (!(*ParamLayout::of(spec) == params.layout()))
      throw ConfigError("parameter layout does not match model spec");
  }

  // Logits for the batch; keeps every layer output for a later backward().
  Tensor forward(const Tensor& batch, Mode mode, std::uint64_t dropout_seed) {
    const std::size_t n = batch.rows();
    if (batch.rank() < 2 || batch.row_size() != shape_size(spec_.input))
      throw ConfigError("batch shape " + shape_str(batch.shape()) + " does not match model input " +
                        shape_str(spec_.input));
    if (batch.rank() > 2 && Shape(batch.shape().begin() + 1, batch.shape().end()) != spec_.input)
      throw ConfigError("batch shape " + shape_str(batch.shape()) + " does not match model input " +
                        shape_str(spec_.input));
    acts_.clear();
    masks_.assign(spec_.layers.size(), {});
    Shape in_shape = {n};
    in_shape.insert(in_shape.end(), spec_.input.begin(), spec_.input.end());
    acts_.push_back(batch.reshaped(in_shape));
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const Tensor& x = acts_.back();
      Shape out_shape = {n};
      out_shape.insert(out_shape.end(), shapes_[i].begin(), shapes_[i].end());
      Tensor y(out_shape);
      std::visit([&](const auto& l) { forward_layer(i, l, x, y, mode, dropout_seed); }, spec_.layers[i]);
      if (!y.all_finite()) throw NumericError("non-finite activation in forward pass", i);
      acts_.push_back(std::move(y));
    }
    return acts_.back();
  }

  // Back-propagates d(loss)/d(logits). Returns d(loss)/d(input) if asked.
  Tensor backward(const Tensor& dlogits, ParamVector* grad, bool want_input) {
    Tensor g = dlogits;
    for (std::size_t i = spec_.layers.size(); i-- > 0;) {
      const bool need_dx = want_input || i > 0;
      Tensor dx(acts_[i].shape());
      std::visit([&](const auto& l) { backward_layer(i, l, g, dx, grad, need_dx); }, spec_.layers[i]);
      g = std::move(dx);
    }
    return g;
  }

 private:
  const ParamEntry& entry(std::size_t layer, std::string_view name) const {
    const auto* e = params_.layout().find(layer, name);
    if (!e) throw ConfigError("missing parameters for layer " + std::to_string(layer));
    return *e;
  }

  void forward_layer(std::size_t i, const DenseLayer& l, const Tensor& x, Tensor& y, Mode, std::uint64_t) {
    const std::size_t n = x.rows();
    const auto& ke = entry(i, "kernel");
    const auto& be = entry(i, "bias");
    ConstMatMap X(x.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(l.in));
    ConstMatMap W(params_.slice(ke).data(), static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
    ConstVecMap b(params_.slice(be).data(), static_cast<Eigen::Index>(l.out));
    MatMap Y(y.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(l.out));
    Y.noalias() = X * W.transpose();
    Y.rowwise() += b.transpose();
    activate(y.data(), l.activation);
  }

  void backward_layer(std::size_t i, const DenseLayer& l, Tensor& g, Tensor& dx, ParamVector* grad, bool need_dx) {
    const std::size_t n = g.rows();
    activation_backward(g.data(), acts_[i + 1].data(), l.activation);
    const auto& ke = entry(i, "kernel");
    const auto& be = entry(i, "bias");
    ConstMatMap G(g.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(l.out));
    ConstMatMap X(acts_[i].data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(l.in));
    if (grad) {
      MatMap dW(grad->slice(ke).data(), static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
      dW.noalias() = G.transpose() * X;
      Eigen::Map<Eigen::VectorXd> db(grad->slice(be).data(), static_cast<Eigen::Index>(l.out));
      db = G.colwise().sum().transpose();
    }
    if (need_dx) {
      ConstMatMap W(params_.slice(ke).data(), static_cast<Eigen::Index>(l.out), static_cast<Eigen::Index>(l.in));
      MatMap dX(dx.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(l.in));
      dX.noalias() = G * W;
    }
  }

  void forward_layer(std::size_t i, const ConvLayer& l, const Tensor& x, Tensor& y, Mode, std::uint64_t) {
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
    const std::size_t oh = y.dim(1), ow = y.dim(2), co = l.channels, k = l.kernel, s = l.stride;
    (void)h;
    const auto kern = params_.slice(entry(i, "kernel"));
    const auto bias = params_.slice(entry(i, "bias"));
    const auto xs = x.data();
    auto ys = y.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t c = 0; c < co; ++c) {
            double acc = bias[c];
            for (std::size_t ky = 0; ky < k; ++ky) {
              const double* xrow = &xs[((b * x.dim(1) + oy * s + ky) * w + ox * s) * cin];
              const double* krow = &kern[((c * k + ky) * k) * cin];
              for (std::size_t t = 0; t < k * cin; ++t) acc += xrow[t] * krow[t];
            }
            ys[((b * oh + oy) * ow + ox) * co + c] = acc;
          }
    activate(ys, l.activation);
  }

  void backward_layer(std::size_t i, const ConvLayer& l, Tensor& g, Tensor& dx, ParamVector* grad, bool need_dx) {
    activation_backward(g.data(), acts_[i + 1].data(), l.activation);
    const Tensor& x = acts_[i];
    const std::size_t n = x.dim(0), w = x.dim(2), cin = x.dim(3);
    const std::size_t oh = g.dim(1), ow = g.dim(2), co = l.channels, k = l.kernel, s = l.stride;
    const auto& ke = entry(i, "kernel");
    const auto& be = entry(i, "bias");
    const auto kern = params_.slice(ke);
    const auto xs = x.data();
    const auto gs = g.data();
    auto dxs = dx.data();
    std::span<double> dk, db;
    if (grad) {
      dk = grad->slice(ke);
      db = grad->slice(be);
    }
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t c = 0; c < co; ++c) {
            const double gv = gs[((b * oh + oy) * ow + ox) * co + c];
            if (gv == 0.0) continue;
            if (grad) db[c] += gv;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::size_t xoff = ((b * x.dim(1) + oy * s + ky) * w + ox * s) * cin;
              const std::size_t koff = ((c * k + ky) * k) * cin;
              for (std::size_t t = 0; t < k * cin; ++t) {
                if (grad) dk[koff + t] += gv * xs[xoff + t];
                if (need_dx) dxs[xoff + t] += gv * kern[koff + t];
              }
            }
          }
  }

  void forward_layer(std::size_t, const AvgPoolLayer&, const Tensor& x, Tensor& y, Mode, std::uint64_t) {
    const std::size_t n = x.dim(0), w = x.dim(2), c = x.dim(3), oh = y.dim(1), ow = y.dim(2);
    const auto xs = x.data();
    auto ys = y.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dxp = 0; dxp < 2; ++dxp)
                acc += xs[((b * x.dim(1) + 2 * oy + dy) * w + 2 * ox + dxp) * c + ch];
            ys[((b * oh + oy) * ow + ox) * c + ch] = 0.25 * acc;
          }
  }

  void backward_layer(std::size_t i, const AvgPoolLayer&, Tensor& g, Tensor& dx, ParamVector*, bool) {
    const Tensor& x = acts_[i];
    const std::size_t n = x.dim(0), w = x.dim(2), c = x.dim(3), oh = g.dim(1), ow = g.dim(2);
    const auto gs = g.data();
    auto dxs = dx.data();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double gv = 0.25 * gs[((b * oh + oy) * ow + ox) * c + ch];
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dxp = 0; dxp < 2; ++dxp) dxs[((b * x.dim(1) + 2 * oy + dy) * w + 2 * ox + dxp) * c + ch] = gv;
          }
  }

  void forward_layer(std::size_t, const FlattenLayer&, const Tensor& x, Tensor& y, Mode, std::uint64_t) {
    std::copy(x.data().begin(), x.data().end(), y.data().begin());
  }

  void backward_layer(std::size_t, const FlattenLayer&, Tensor& g, Tensor& dx, ParamVector*, bool) {
    std::copy(g.data().begin(), g.data().end(), dx.data().begin());
  }

  void forward_layer(std::size_t i, const DropoutLayer& l, const Tensor& x, Tensor& y, Mode mode, std::uint64_t seed) {
    std::copy(x.data().begin(), x.data().end(), y.data().begin());
    if (mode != Mode::train || l.rate == 0.0) return;
    auto rng = Rng::stream(seed, "dropout", i);
    auto& mask = masks_[i];
    mask.resize(y.size());
    const double keep = 1.0 / (1.0 - l.rate);
    auto ys = y.data();
    for (std::size_t j = 0; j < ys.size(); ++j) {
      mask[j] = rng.uniform() < l.rate ? 0.0 : keep;
      ys[j] *= mask[j];
    }
  }

  void backward_layer(std::size_t i, const DropoutLayer&, Tensor& g, Tensor& dx, ParamVector*, bool) {
    std::copy(g.data().begin(), g.data().end(), dx.data().begin());
    const auto& mask = masks_[i];
    if (mask.empty()) return;
    auto d = dx.data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] *= mask[j];
  }

  const ModelSpec& spec_;
  const ParamVector& params_;
  std::vector<Shape> shapes_;
  std::vector<Tensor> acts_;
  std::vector<std::vector<double>> masks_;
};

}  // namespace detail

// Class probabilities (softmax of the logits), one row per sample.
inline Tensor forward(const ModelSpec& spec, const ParamVector& params, const Tensor& batch, Mode mode = Mode::eval,
                      std::uint64_t dropout_seed = 0) {
  detail::Network net(spec, params);
  Tensor out = net.forward(batch, mode, dropout_seed);
  softmax_rows(out.data(), out.row_size());
  if (!out.all_finite()) throw NumericError("non-finite softmax output", spec.layers.size());
  return out;
}

// Mean soft-target cross-entropy and its gradients. `targets` holds one
// distribution (or one-hot row) per sample.
inline FullGradient backprop(const ModelSpec& spec, const ParamVector& params, const Tensor& batch,
                             const Tensor& targets, const BackpropOptions& opt = {}) {
  const std::size_t n = batch.rows();
  if (n == 0) throw PreconditionError("gradient of an empty batch");
  detail::Network net(spec, params);
  Tensor logits = net.forward(batch, opt.mode, opt.dropout_seed);
  const std::size_t c = logits.row_size();
  if (targets.rows() != n || targets.row_size() != c)
    throw ConfigError("targets shape " + shape_str(targets.shape()) + " does not match logits " +
                      shape_str(logits.shape()));

  FullGradient out;
  out.probs = logits;
  softmax_rows(out.probs.data(), c);
  Tensor dlogits({n, c});
  if (opt.target_grad) out.target_grad = Tensor({n, c});
  const double inv_n = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* z = &logits[r * c];
    const double m = *std::max_element(z, z + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - m);
    const double lse = m + std::log(s);
    double tsum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = targets[r * c + j];
      const double logp = z[j] - lse;
      loss -= t * logp;
      tsum += t;
      if (opt.target_grad) out.target_grad[r * c + j] = -logp * inv_n;
    }
    for (std::size_t j = 0; j < c; ++j)
      dlogits[r * c + j] = (out.probs[r * c + j] * tsum - targets[r * c + j]) * inv_n;
  }
  out.loss = loss * inv_n;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss", spec.layers.size());

  if (opt.param_grad) out.grad = ParamVector(params.layout_ptr());
  Tensor dx = net.backward(dlogits, opt.param_grad ? &out.grad : nullptr, opt.input_grad);
  if (opt.input_grad) out.input_grad = std::move(dx).reshaped(batch.shape());
  return out;
}

inline GradientResult gradients(const ModelSpec& spec, const ParamVector& params, const Tensor& batch,
                                const Tensor& targets, Mode mode = Mode::eval, std::uint64_t dropout_seed = 0) {
  auto full = backprop(spec, params, batch, targets, {mode, dropout_seed, true, false, false});
  return {full.loss, std::move(full.grad)};
}

inline GradientResult gradients(const ModelSpec& spec, const ParamVector& params, const Tensor& batch,
                                std::span<const int> labels, Mode mode = Mode::eval, std::uint64_t dropout_seed = 0) {
  if (batch.rows() == 0) throw PreconditionError("gradient of an empty batch");
  if (labels.size() != batch.rows()) throw ConfigError("label count does not match batch size");
  return gradients(spec, params, batch, one_hot(labels, n_classes(spec)), mode, dropout_seed);
}

inline std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// Mean loss and accuracy in eval mode, processed in chunks to bound memory.
inline Evaluation evaluate(const ModelSpec& spec, const ParamVector& params, const Tensor& images,
                           std::span<const int> labels, std::size_t chunk = 1024) {
  Evaluation ev;
  ev.n = images.rows();
  if (ev.n == 0) return ev;
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ev.n; start += chunk) {
    const std::size_t end = std::min(ev.n, start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Tensor probs = forward(spec, params, images.select_rows(idx));
    for (std::size_t i = start; i < end; ++i) {
      const auto row = probs.row(i - start);
      const double p = std::max(row[static_cast<std::size_t>(labels[i])], std::numeric_limits<double>::min());
      loss -= std::log(p);
      if (argmax(row) == static_cast<std::size_t>(labels[i])) ++correct;
    }
  }
  ev.loss = loss / static_cast<double>(ev.n);
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(ev.n);
  return ev;
}

inline std::vector<int> predict(const ModelSpec& spec, const ParamVector& params, const Tensor& images) {
  const Tensor probs = forward(spec, params, images);
  std::vector<int> out(probs.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(argmax(probs.row(i)));
  return out;
}

}  // namespace fedbench
