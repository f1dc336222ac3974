#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "fedbench/core/nn.hpp"
#include "fedbench/core/optimizer.hpp"
#include "fedbench/data/dataset.hpp"
#include "fedbench/data/partition.hpp"
#include "fedbench/metrics/accuracy.hpp"
#include "fedbench/protocol/strategy.hpp"

namespace fedbench {

// Plain (non-federated) mini-batch training with early stopping on
// validation loss.
struct TrainerConfig {
  OptimizerConfig optimizer{OptimizerKind::adam, 1e-3};
  std::optional<std::size_t> B = 32;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;  // 0 disables early stopping
  std::uint64_t seed = 0;
  Mode mode = Mode::train;
};

struct TrainedModel {
  ParamVector params;  // best validation-loss checkpoint
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

inline TrainedModel train_model(const ModelSpec& spec, const ParamVector& initial, const Dataset& train,
                                const Dataset& val, const TrainerConfig& cfg) {
  ClientDataset local;
  local.train = train;
  TrainedModel out{initial, 0, 0, std::numeric_limits<double>::infinity()};
  ParamVector params = initial;
  OptimizerState state = OptimizerState::fresh(cfg.optimizer, initial.layout_ptr());
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto u = client_update_fedavg(spec, params, local, cfg.B, 1, std::move(state), hash64(cfg.seed, "epoch", epoch),
                                  cfg.mode);
    params = std::move(u.weights);
    state = std::move(u.state);
    out.epochs = epoch;
    // Without validation data the last epoch is the checkpoint.
    const double vloss = val.empty() ? -static_cast<double>(epoch) : evaluate(spec, params, val.images, val.labels).loss;
    if (vloss < out.best_val_loss) {
      out.best_val_loss = vloss;
      out.params = params;
      out.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  return out;
}

struct BaselineResult {
  double local_acc = 0.0;
  double central_acc = 0.0;
  std::vector<double> local_per_client;
  std::vector<double> central_per_client;
};

// LocalAcc: each client trains alone on its train split. CentralAcc: one
// model trained on the pooled train splits. Both are scored on the client
// test splits and combined with p_k = n_k / n.
inline BaselineResult run_baselines(const ModelSpec& spec, const std::vector<ClientDataset>& clients,
                                    const ParamVector& initial, const TrainerConfig& cfg) {
  if (clients.empty()) throw PreconditionError("run_baselines needs clients");
  BaselineResult r;
  std::vector<std::size_t> n_k;
  for (const auto& c : clients) {
    if (c.test.empty()) throw MetricError("client " + std::to_string(c.client_id) + " has an empty test set");
    n_k.push_back(c.n_k());
  }
  for (const auto& c : clients) {
    TrainerConfig local_cfg = cfg;
    local_cfg.seed = hash64(cfg.seed, "local", c.client_id);
    const auto m = train_model(spec, initial, c.train, c.val, local_cfg);
    r.local_per_client.push_back(evaluate(spec, m.params, c.test.images, c.test.labels).accuracy);
  }
  const Dataset train = pooled(clients, &ClientDataset::train);
  const Dataset val = pooled(clients, &ClientDataset::val);
  TrainerConfig central_cfg = cfg;
  central_cfg.seed = hash64(cfg.seed, "central");
  const auto central = train_model(spec, initial, train, val, central_cfg);
  for (const auto& c : clients)
    r.central_per_client.push_back(evaluate(spec, central.params, c.test.images, c.test.labels).accuracy);
  r.local_acc = weighted_accuracy(r.local_per_client, n_k);
  r.central_acc = weighted_accuracy(r.central_per_client, n_k);
  return r;
}

}  // namespace fedbench
