#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fedbench/attacks/capture.hpp"
#include "fedbench/core/error.hpp"
#include "fedbench/core/nn.hpp"
#include "fedbench/core/rng.hpp"

namespace fedbench {

struct DlgConfig {
  std::size_t iterations = 300;
  double lr = 0.1;
  std::uint64_t init_seed = 0;
  double fd_eps = 1e-4;        // reference finite-difference step
  double direction_eps = 1e-4;  // step along the residual for the directional path
  bool accelerate = true;
  std::size_t check_coords = 16;
  double check_tol = 1e-3;
  std::size_t patience = 100;  // consecutive non-improving iterations before giving up
  double grow = 1.2;           // lr factor after an accepted step
  std::optional<Tensor> init_images;  // overrides the random start
  std::optional<Tensor> init_logits;
};

namespace detail {

// Dummy variables (x', logits y') and the gradient-matching objective
// D = || grad_W L(W; x', softmax(y')) - target ||^2.
class DlgProblem {
 public:
  DlgProblem(const ModelSpec& spec, const ParamVector& target, std::size_t n)
      : spec_(spec), target_(target), n_(n), classes_(n_classes(spec)), pixels_(shape_size(spec.input)) {
    Shape s{n};
    s.insert(s.end(), spec.input.begin(), spec.input.end());
    image_shape_ = s;
  }

  std::size_t n_vars() const { return n_ * (pixels_ + classes_); }
  std::size_t n_pixel_vars() const { return n_ * pixels_; }

  Tensor images(std::span<const double> v) const {
    return Tensor(image_shape_, std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_pixel_vars())));
  }

  Tensor targets(std::span<const double> v) const {
    Tensor t({n_, classes_}, std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(n_pixel_vars()), v.end()));
    softmax_rows(t.data(), classes_);
    return t;
  }

  double objective(std::span<const double> v) const {
    return objective_at(v, nullptr);
  }

  // Central finite differences of D, one coordinate.
  double fd_partial(std::vector<double>& v, std::size_t i, double eps) const {
    const double keep = v[i];
    v[i] = keep + eps;
    const double up = objective(v);
    v[i] = keep - eps;
    const double down = objective(v);
    v[i] = keep;
    return (up - down) / (2.0 * eps);
  }

  std::vector<double> fd_gradient(std::vector<double>& v, double eps) const {
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) g[i] = fd_partial(v, i, eps);
    return g;
  }

  // grad_v D = 2 J^T r with r = g(v) - target. J^T r is the gradient over v of
  // the directional derivative of L along r in weight space, taken here as a
  // central difference of grad_v L at W +- h r.
  std::vector<double> directional_gradient(std::span<const double> v, double h) const {
    ParamVector residual;
    objective_at(v, &residual);
    double norm = 0.0;
    for (double x : residual.values()) norm = std::max(norm, std::abs(x));
    std::vector<double> g(v.size(), 0.0);
    if (norm == 0.0) return g;
    const double step = h / norm;
    ParamVector plus = base_params(), minus = base_params();
    for (std::size_t i = 0; i < plus.size(); ++i) {
      plus[i] += step * residual[i];
      minus[i] -= step * residual[i];
    }
    const auto gp = input_gradients(plus, v);
    const auto gm = input_gradients(minus, v);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (gp[i] - gm[i]) / (2.0 * step);
    return g;
  }

  void set_params(const ParamVector& w) { params_ = w; }
  const ParamVector& base_params() const { return params_; }

 private:
  double objective_at(std::span<const double> v, ParamVector* residual) const {
    const Tensor x = images(v);
    const Tensor t = targets(v);
    auto full = backprop(spec_, params_, x, t, {Mode::eval, 0, true, false, false});
    double d = 0.0;
    auto g = full.grad.values();
    const auto tg = target_.values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] -= tg[i];
      d += g[i] * g[i];
    }
    if (residual) *residual = std::move(full.grad);
    return d;
  }

  // grad over (x', logits) of L at weights w.
  std::vector<double> input_gradients(const ParamVector& w, std::span<const double> v) const {
    const Tensor x = images(v);
    const Tensor t = targets(v);
    auto full = backprop(spec_, w, x, t, {Mode::eval, 0, false, true, true});
    std::vector<double> out(v.size());
    std::copy(full.input_grad.values().begin(), full.input_grad.values().end(), out.begin());
    // softmax chain rule: dz = t * (dt - <dt, t>)
    for (std::size_t r = 0; r < n_; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < classes_; ++j) dot += full.target_grad[r * classes_ + j] * t[r * classes_ + j];
      for (std::size_t j = 0; j < classes_; ++j)
        out[n_pixel_vars() + r * classes_ + j] = t[r * classes_ + j] * (full.target_grad[r * classes_ + j] - dot);
    }
    return out;
  }

  const ModelSpec& spec_;
  const ParamVector& target_;
  ParamVector params_;
  std::size_t n_, classes_, pixels_;
  Shape image_shape_;
};

inline bool twice_differentiable_spec(const ModelSpec& spec) {
  for (const auto& l : spec.layers) {
    if (const auto* d = std::get_if<DenseLayer>(&l); d && d->activation == Activation::relu) return false;
    if (const auto* c = std::get_if<ConvLayer>(&l); c && c->activation == Activation::relu) return false;
  }
  return true;
}

}  // namespace detail

// Checks the directional outer gradient against central finite differences
// of D on a few sampled coordinates. Returns the worst relative error.
inline double dlg_check_outer_gradient(detail::DlgProblem& problem, std::vector<double>& v, const DlgConfig& cfg,
                                       std::uint64_t seed) {
  const auto fast = problem.directional_gradient(v, cfg.direction_eps);
  double scale = 0.0;
  for (double g : fast) scale = std::max(scale, std::abs(g));
  auto rng = Rng::stream(seed, "dlg-check");
  double worst = 0.0;
  for (std::size_t k = 0; k < cfg.check_coords; ++k) {
    // Half the probes on label logits, which are few but matter most.
    const std::size_t i = (k % 2 == 0) ? static_cast<std::size_t>(rng.below(problem.n_pixel_vars()))
                                       : problem.n_pixel_vars() +
                                             static_cast<std::size_t>(rng.below(problem.n_vars() - problem.n_pixel_vars()));
    const double ref = problem.fd_partial(v, i, cfg.fd_eps);
    const double denom = std::max({std::abs(ref), std::abs(fast[i]), 1e-3 * scale, 1e-12});
    worst = std::max(worst, std::abs(ref - fast[i]) / denom);
  }
  return worst;
}

// Gradient matching by projected gradient descent with backtracking on
// (x', logits y'). Reconstructions come back unordered.
inline AttackResult dlg_attack(const ParamVector& grad, const ModelSpec& spec, const ParamVector& params,
                               std::size_t n_images, const DlgConfig& cfg = {}) {
  if (!detail::twice_differentiable_spec(spec))
    throw PreconditionError("dlg_attack: model must be twice differentiable (no ReLU); see twice_differentiable()");
  if (n_images == 0) throw PreconditionError("dlg_attack: n_images must be >= 1");
  require_same_layout(grad, params, "dlg_attack");
  const ModelSpec& net = spec;  // eval mode: dropout is the identity
  detail::DlgProblem problem(net, grad, n_images);
  problem.set_params(params);

  const std::size_t pixels = problem.n_pixel_vars();
  const std::size_t classes = n_classes(net);
  std::vector<double> v(problem.n_vars());
  auto rng = Rng::stream(cfg.init_seed, "dlg-init");
  for (std::size_t i = 0; i < pixels; ++i) v[i] = rng.uniform();
  for (std::size_t i = pixels; i < v.size(); ++i) v[i] = rng.normal();
  if (cfg.init_images) {
    if (cfg.init_images->size() != pixels) throw ConfigError("dlg_attack: init_images has the wrong size");
    std::copy(cfg.init_images->values().begin(), cfg.init_images->values().end(), v.begin());
  }
  if (cfg.init_logits) {
    if (cfg.init_logits->size() != v.size() - pixels) throw ConfigError("dlg_attack: init_logits has the wrong size");
    std::copy(cfg.init_logits->values().begin(), cfg.init_logits->values().end(), v.begin() + static_cast<std::ptrdiff_t>(pixels));
  }

  AttackResult r;
  r.method = "dlg";
  bool fast = cfg.accelerate;
  if (fast && cfg.iterations > 0) fast = dlg_check_outer_gradient(problem, v, cfg, cfg.init_seed) < cfg.check_tol;
  r.outer_gradient = fast ? "directional" : "finite_difference";

  double d = problem.objective(v);
  double lr = cfg.lr;
  std::size_t stale = 0;
  std::vector<double> g, trial(v.size());
  bool have_grad = false;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    r.iterations_used = it + 1;
    if (!have_grad) {
      g = fast ? problem.directional_gradient(v, cfg.direction_eps) : problem.fd_gradient(v, cfg.fd_eps);
      have_grad = true;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      trial[i] = v[i] - lr * g[i];
      if (i < pixels) trial[i] = std::clamp(trial[i], 0.0, 1.0);
    }
    const double dt = problem.objective(trial);
    if (dt < d) {
      v.swap(trial);
      d = dt;
      lr *= cfg.grow;
      stale = 0;
      have_grad = false;
    } else {
      lr *= 0.5;
      if (++stale >= cfg.patience) {
        r.failed = true;
        r.failure = "objective did not improve for " + std::to_string(cfg.patience) + " iterations";
        break;
      }
    }
  }
  if (cfg.iterations == 0) {
    r.failed = true;
    r.failure = "no iterations";
  }
  r.final_objective = d;

  Shape one = net.input;
  for (std::size_t k = 0; k < n_images; ++k) {
    std::vector<double> img(v.begin() + static_cast<std::ptrdiff_t>(k * (pixels / n_images)),
                            v.begin() + static_cast<std::ptrdiff_t>((k + 1) * (pixels / n_images)));
    r.images.emplace_back(one, std::move(img));
    const auto logits = std::span<const double>(v).subspan(pixels + k * classes, classes);
    r.labels.push_back(static_cast<int>(argmax(logits)));
  }
  return r;
}

}  // namespace fedbench
