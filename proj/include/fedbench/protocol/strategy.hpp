#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/nn.hpp"
#include "fedbench/core/optimizer.hpp"
#include "fedbench/core/rng.hpp"
#include "fedbench/data/dataset.hpp"

namespace fedbench {

enum class StrategyName { fedsgd, fedavg, local_only, central };

inline std::string_view to_string(StrategyName s) {
  switch (s) {
    case StrategyName::fedsgd: return "fedsgd";
    case StrategyName::fedavg: return "fedavg";
    case StrategyName::local_only: return "local_only";
    case StrategyName::central: return "central";
  }
  return "?";
}

inline StrategyName parse_strategy(std::string_view s) {
  if (s == "fedsgd") return StrategyName::fedsgd;
  if (s == "fedavg") return StrategyName::fedavg;
  if (s == "local_only") return StrategyName::local_only;
  if (s == "central") return StrategyName::central;
  throw ConfigError("strategy.name: unknown strategy '" + std::string(s) + "'");
}

struct StrategyConfig {
  StrategyName name = StrategyName::fedavg;
  std::optional<std::size_t> B;  // nullopt = full batch (B = inf)
  double C = 1.0;
  std::size_t E = 1;
  OptimizerConfig optimizer;
  bool aggregate_moments = true;
  std::uint64_t seed = 0;

  // FedSGD is pinned to B = inf, C = 1, E = 1.
  StrategyConfig normalized() const {
    StrategyConfig s = *this;
    if (s.name == StrategyName::fedsgd) {
      s.B.reset();
      s.C = 1.0;
      s.E = 1;
    }
    return s;
  }

  void validate() const {
    if (!(C > 0.0 && C <= 1.0)) throw ConfigError("strategy.C must be in (0,1], got " + std::to_string(C));
    if (E < 1) throw ConfigError("strategy.E must be >= 1");
    if (B && *B < 1) throw ConfigError("strategy.B must be >= 1 or inf");
    if (!(optimizer.lr >= 0.0) || !std::isfinite(optimizer.lr)) throw ConfigError("strategy.lr must be >= 0");
  }
};

// max(1, round(C * n)) with ties to even.
inline std::size_t selected_count(std::size_t n_clients, double C) {
  const double x = std::nearbyint(C * static_cast<double>(n_clients));  // default FE_TONEAREST
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(0.0, x)), 1, std::max<std::size_t>(1, n_clients));
}

// Uniform sample without replacement, sorted ascending; deterministic in
// (seed, round).
inline std::vector<std::size_t> select_clients(std::size_t n_clients, double C, std::uint64_t round,
                                               std::uint64_t seed) {
  if (!(C > 0.0 && C <= 1.0)) throw PreconditionError("select_clients: C must be in (0,1]");
  const std::size_t m = selected_count(n_clients, C);
  std::vector<std::size_t> ids(n_clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  if (m >= n_clients) return ids;
  auto rng = Rng::stream(seed, "select", round);
  for (std::size_t i = 0; i < m; ++i) std::swap(ids[i], ids[i + static_cast<std::size_t>(rng.below(n_clients - i))]);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// p_k = n_k / sum_j n_j over the participants.
struct AggregationWeights {
  std::vector<double> p;

  static AggregationWeights from_counts(std::span<const std::size_t> n_k) {
    const double total = static_cast<double>(std::accumulate(n_k.begin(), n_k.end(), std::size_t{0}));
    if (n_k.empty() || total <= 0.0) throw PreconditionError("aggregation weights need a positive sample count");
    AggregationWeights w;
    for (std::size_t n : n_k) w.p.push_back(static_cast<double>(n) / total);
    return w;
  }

  void validate() const {
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw ConfigError("aggregation weight is negative");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-12) throw ConfigError("aggregation weights do not sum to 1");
  }
};

// Component-wise sum_k p_k v_k.
inline ParamVector aggregate(std::span<const ParamVector> uploads, const AggregationWeights& weights) {
  if (uploads.empty()) throw PreconditionError("aggregate: no uploads");
  if (uploads.size() != weights.p.size()) throw ConfigError("aggregate: weight count does not match uploads");
  weights.validate();
  for (const auto& u : uploads) require_same_layout(uploads.front(), u, "aggregate");
  ParamVector out(uploads.front().layout_ptr());
  auto o = out.values();
  for (std::size_t k = 0; k < uploads.size(); ++k) {
    const auto v = uploads[k].values();
    const double p = weights.p[k];
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += p * v[i];
  }
  return out;
}

// Full-batch gradient of the client's mean training loss (one pass).
inline GradientResult client_update_fedsgd(const ModelSpec& spec, const ParamVector& params,
                                           const ClientDataset& client, std::uint64_t dropout_seed = 0,
                                           Mode mode = Mode::train) {
  if (client.train.empty()) throw PreconditionError("client " + std::to_string(client.client_id) + " has no training data");
  auto g = gradients(spec, params, client.train.images, client.train.labels, mode, dropout_seed);
  if (!std::isfinite(g.loss) || !g.grad.all_finite())
    throw DivergedError("client " + std::to_string(client.client_id) + " produced a non-finite gradient");
  return g;
}

struct LocalUpdate {
  ParamVector weights;
  OptimizerState state;
  std::size_t steps = 0;
  double last_loss = 0.0;
};

// Called after every local optimizer step with (step index, before, after).
using StepObserver = std::function<void(std::size_t, const ParamVector&, const ParamVector&)>;

// E epochs of shuffled mini-batch steps from `params`. Batch order for epoch e
// is drawn from stream (seed, "epoch", e); a full batch keeps data order.
// B = nullopt means full batch.
inline LocalUpdate client_update_fedavg(const ModelSpec& spec, const ParamVector& params, const ClientDataset& client,
                                        std::optional<std::size_t> B, std::size_t E, OptimizerState state,
                                        std::uint64_t seed, Mode mode = Mode::train,
                                        const StepObserver& observer = {}) {
  if (client.train.empty()) throw PreconditionError("client " + std::to_string(client.client_id) + " has no training data");
  if (E < 1) throw PreconditionError("client_update_fedavg: E must be >= 1");
  if (B && *B < 1) throw PreconditionError("client_update_fedavg: B must be >= 1");
  const std::size_t n = client.train.size();
  const std::size_t batch = B ? std::min(*B, n) : n;
  const std::size_t classes = n_classes(spec);
  LocalUpdate out{params, std::move(state), 0, 0.0};
  std::vector<std::size_t> order(n);
  for (std::size_t e = 0; e < E; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (batch < n) {
      auto rng = Rng::stream(seed, "epoch", e);
      rng.shuffle(std::span(order));
    }
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(batch, n - start));
      const Tensor x = client.train.images.select_rows(idx);
      std::vector<int> y;
      y.reserve(idx.size());
      for (std::size_t i : idx) y.push_back(client.train.labels[i]);
      auto g = gradients(spec, out.weights, x, one_hot(y, classes), mode, hash64(seed, "dropout", out.steps));
      if (!std::isfinite(g.loss) || !g.grad.all_finite())
        throw DivergedError("client " + std::to_string(client.client_id) + " diverged during local training");
      out.last_loss = g.loss;
      if (observer) {
        ParamVector before = out.weights;
        auto [w, s] = optimizer_apply(std::move(out.state), std::move(out.weights), g.grad);
        out.weights = std::move(w);
        out.state = std::move(s);
        observer(out.steps, before, out.weights);
      } else {
        auto [w, s] = optimizer_apply(std::move(out.state), std::move(out.weights), g.grad);
        out.weights = std::move(w);
        out.state = std::move(s);
      }
      ++out.steps;
    }
  }
  return out;
}

}  // namespace fedbench
