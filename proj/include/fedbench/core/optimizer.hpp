#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/model.hpp"

namespace fedbench {

enum class OptimizerKind { sgd, momentum, adam };

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "momentum") return OptimizerKind::momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.01;
  double momentum = 0.9;  // momentum only
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

inline std::size_t moment_count(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return 0;
    case OptimizerKind::momentum: return 1;
    case OptimizerKind::adam: return 2;
  }
  return 0;
}

// Optimizer hyper-parameters plus accumulated moments. Plain value; the
// update function below never mutates its inputs.
struct OptimizerState {
  OptimizerConfig config;
  std::vector<ParamVector> moments;
  std::uint64_t step_count = 0;

  static OptimizerState fresh(const OptimizerConfig& config, const std::shared_ptr<const ParamLayout>& layout) {
    if (!(config.lr >= 0.0)) throw ConfigError("optimizer learning rate must be >= 0");
    OptimizerState s{config, {}, 0};
    for (std::size_t i = 0; i < moment_count(config.kind); ++i) s.moments.emplace_back(layout);
    return s;
  }
};

inline std::pair<ParamVector, OptimizerState> optimizer_apply(OptimizerState state, ParamVector params,
                                                              const ParamVector& grad) {
  require_same_layout(params, grad, "optimizer_apply");
  if (state.moments.size() != moment_count(state.config.kind))
    throw ConfigError("optimizer state has " + std::to_string(state.moments.size()) + " moments, '" +
                      std::string(to_string(state.config.kind)) + "' needs " +
                      std::to_string(moment_count(state.config.kind)));
  for (const auto& m : state.moments) require_same_layout(params, m, "optimizer_apply moments");

  const auto& c = state.config;
  auto p = params.values();
  const auto g = grad.values();
  ++state.step_count;
  switch (c.kind) {
    case OptimizerKind::sgd:
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= c.lr * g[i];
      break;
    case OptimizerKind::momentum: {
      auto v = state.moments[0].values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = c.momentum * v[i] + g[i];
        p[i] -= c.lr * v[i];
      }
      break;
    }
    case OptimizerKind::adam: {
      auto m = state.moments[0].values();
      auto v = state.moments[1].values();
      const double t = static_cast<double>(state.step_count);
      const double bc1 = 1.0 - std::pow(c.beta1, t);
      const double bc2 = 1.0 - std::pow(c.beta2, t);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
      }
      break;
    }
  }
  return {std::move(params), std::move(state)};
}

}  // namespace fedbench
