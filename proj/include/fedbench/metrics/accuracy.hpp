#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/nn.hpp"
#include "fedbench/data/dataset.hpp"

namespace fedbench {

// n_k-weighted mean of per-client accuracies.
inline double weighted_accuracy(std::span<const double> acc, std::span<const std::size_t> n_k) {
  if (acc.size() != n_k.size() || acc.empty()) throw MetricError("weighted_accuracy: mismatched or empty inputs");
  double total = 0.0, s = 0.0;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    s += static_cast<double>(n_k[i]) * acc[i];
    total += static_cast<double>(n_k[i]);
  }
  if (total <= 0.0) throw MetricError("weighted_accuracy: zero total weight");
  return s / total;
}

struct FlAccuracy {
  double fl_acc = 0.0;
  std::vector<double> per_client;
  std::vector<std::size_t> n_k;
};

// One global model scored on every client's test split, weighted by n_k.
inline FlAccuracy fl_accuracy(const ModelSpec& spec, const ParamVector& params, const std::vector<ClientDataset>& clients) {
  if (clients.empty()) throw MetricError("fl_accuracy: no clients");
  FlAccuracy r;
  for (const auto& c : clients) {
    if (c.test.empty()) throw MetricError("client " + std::to_string(c.client_id) + " has an empty test set");
    r.per_client.push_back(evaluate(spec, params, c.test.images, c.test.labels).accuracy);
    r.n_k.push_back(c.n_k());
  }
  r.fl_acc = weighted_accuracy(r.per_client, r.n_k);
  return r;
}

inline bool delta_accuracy_loss(double fl_acc, double central_acc, double delta) {
  if (!(delta > 0.0)) throw PreconditionError("delta_accuracy_loss: delta must be > 0");
  return std::abs(fl_acc - central_acc) < delta;
}

}  // namespace fedbench
