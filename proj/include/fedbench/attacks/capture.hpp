#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/model.hpp"
#include "fedbench/core/optimizer.hpp"
#include "fedbench/core/tensor.hpp"
#include "fedbench/data/dataset.hpp"
#include "fedbench/protocol/strategy.hpp"

namespace fedbench {

struct DerivedGradient {
  ParamVector grad;
  bool approximate = false;  // true unless the step was plain SGD
};

// (before - after) / lr. Exact for one SGD step; for momentum/Adam it is the
// effective update direction only.
inline DerivedGradient derive_gradient(const ParamVector& before, const ParamVector& after,
                                       const OptimizerConfig& optimizer) {
  require_same_layout(before, after, "derive_gradient");
  if (!(optimizer.lr > 0.0)) throw PreconditionError("derive_gradient: lr must be > 0");
  DerivedGradient d{ParamVector(before.layout_ptr()), optimizer.kind != OptimizerKind::sgd};
  const auto b = before.values();
  const auto a = after.values();
  auto g = d.grad.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (b[i] - a[i]) / optimizer.lr;
  return d;
}

struct GradientCapture {
  ParamVector params_before;
  ParamVector params_after;
  OptimizerConfig optimizer;
  ParamVector derived_gradient;
  bool approximate = false;
  std::size_t n_images = 0;
  std::size_t epochs = 1;
  std::size_t steps = 0;
};

// One client update on `data` observed from outside: the attacker sees only
// the weights before and after. Dropout is off so the target is
// deterministic. B = nullopt with E = 1 is a FedSGD step.
inline GradientCapture capture_update(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                                      std::optional<std::size_t> B, std::size_t E, const OptimizerConfig& optimizer,
                                      std::uint64_t seed) {
  ClientDataset client;
  client.train = data;
  auto u = client_update_fedavg(spec, params, client, B, E, OptimizerState::fresh(optimizer, params.layout_ptr()),
                                seed, Mode::eval);
  GradientCapture c;
  c.params_before = params;
  c.optimizer = optimizer;
  auto d = derive_gradient(params, u.weights, optimizer);
  c.params_after = std::move(u.weights);
  c.derived_gradient = std::move(d.grad);
  c.approximate = d.approximate || u.steps > 1;
  c.n_images = data.size();
  c.epochs = E;
  c.steps = u.steps;
  return c;
}

// Attack output. Scores are filled in by score_attack.
struct AttackResult {
  std::string method;  // "fc" or "dlg"
  std::vector<Tensor> images;
  std::vector<int> labels;  // DLG only
  bool failed = false;
  std::string failure;
  std::size_t iterations_used = 0;
  double final_objective = 0.0;
  std::string outer_gradient;  // DLG: "directional" or "finite_difference"
  std::string optimizer = "gd_backtracking";
  double label_accuracy = 0.0;
  double l2_distance = 0.0;
};

}  // namespace fedbench
