#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/nn.hpp"
#include "fedbench/core/optimizer.hpp"
#include "fedbench/data/dataset.hpp"
#include "fedbench/protocol/network.hpp"
#include "fedbench/protocol/strategy.hpp"
#include "fedbench/protocol/wire.hpp"

namespace fedbench {

enum class Substep : std::size_t { init, tra_req, tra_run, tra_sync, tra_agg, val_req, val_run, val_sync, val_agg };

inline constexpr std::size_t kSubsteps = 9;
inline constexpr std::array<std::string_view, kSubsteps> kSubstepNames = {
    "Init", "TraReq", "TraRun", "TraSync", "TraAgg", "ValReq", "ValRun", "ValSync", "ValAgg"};

enum class DurationsMode { simulated, measured };
enum class ValidationMode { all, lazy };
enum class StopReason { early_stop, max_round, diverged };

inline std::string_view to_string(DurationsMode m) { return m == DurationsMode::simulated ? "simulated" : "measured"; }
inline std::string_view to_string(ValidationMode m) { return m == ValidationMode::all ? "all" : "lazy"; }
inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::early_stop: return "early_stop";
    case StopReason::max_round: return "max_round";
    case StopReason::diverged: return "diverged";
  }
  return "?";
}

struct StopRule {
  std::size_t max_round = 500;
  std::size_t patience = 20;  // 0 disables early stopping
};

// Simulated-duration cost model: compute = seconds_per_flop * FLOPs, plus a
// fixed server bookkeeping overhead on server-side substeps.
struct CostModel {
  double seconds_per_flop = 1e-9;
  double server_overhead_s = 1e-3;
};

struct RoundTrace {
  std::size_t round = 0;
  std::array<Nanos, kSubsteps> durations{};
  std::uint64_t bytes_server_sent = 0;
  std::uint64_t bytes_server_received = 0;
  std::vector<std::size_t> participating_clients;
  std::vector<std::size_t> validating_clients;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_acc = std::numeric_limits<double>::quiet_NaN();

  Nanos& at(Substep s) { return durations[static_cast<std::size_t>(s)]; }
  Nanos at(Substep s) const { return durations[static_cast<std::size_t>(s)]; }
  double seconds(Substep s) const { return to_seconds(at(s)); }
  Nanos total() const { return std::accumulate(durations.begin(), durations.end(), Nanos{0}); }
};

struct MessageRecord {
  MessageKind kind;
  std::uint32_t round;
  std::uint32_t sender;
  std::uint32_t receiver;
  std::size_t bytes;
};

struct TrainingRun {
  std::vector<RoundTrace> traces;
  StopReason stop_reason = StopReason::max_round;
  std::string diverged_message;
  ParamVector best_params;
  std::size_t best_round = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  ParamVector final_params;
  Nanos time_all = 0;
  std::vector<std::uint64_t> client_sent;
  std::vector<std::uint64_t> client_received;
  std::vector<MessageRecord> message_log;  // filled when EngineOptions::keep_message_log

  std::size_t comm_round() const noexcept { return traces.size(); }
  double time_all_seconds() const { return to_seconds(time_all); }
};

struct EngineOptions {
  NetworkModel network;
  StopRule stop;
  DurationsMode durations = DurationsMode::simulated;
  CostModel cost;
  ValidationMode validation = ValidationMode::all;
  Mode train_mode = Mode::train;  // Mode::eval turns dropout off for local training
  std::size_t jobs = 1;
  bool keep_message_log = false;
};

namespace detail {

enum class ServerPhase { idle, init, train_requested, training, aggregating, val_requested, validating, done };
enum class ClientPhase { idle, training, validating };

inline const char* phase_name(ServerPhase p) {
  constexpr const char* names[] = {"idle", "init", "train_requested", "training", "aggregating",
                                   "val_requested", "validating", "done"};
  return names[static_cast<int>(p)];
}

class Simulation {
 public:
  Simulation(const ModelSpec& spec, const StrategyConfig& strategy, const std::vector<ClientDataset>& clients,
             const ParamVector& initial, const EngineOptions& opt)
      : spec_(spec), clients_(clients), opt_(opt) {
    strategy_ = strategy.normalized();
    if (clients.empty()) throw PreconditionError("run_training needs at least one client");
    if (strategy_.name != StrategyName::fedsgd && strategy_.name != StrategyName::fedavg)
      throw ConfigError("strategy.name: run_training supports fedsgd and fedavg");
    strategy_.validate();
    opt_.network.validate();
    if (!(*ParamLayout::of(spec) == initial.layout())) throw ConfigError("initial parameters do not match model spec");
    layout_ = initial.layout_ptr();
    params_ = initial;
    server_opt_ = OptimizerState::fresh(strategy_.optimizer, layout_);
    nodes_.resize(clients.size());
    for (auto& n : nodes_) n.opt = OptimizerState::fresh(strategy_.optimizer, layout_);
    run_.client_sent.assign(clients.size(), 0);
    run_.client_received.assign(clients.size(), 0);
    train_flops_ = train_flops(spec);
    forward_flops_ = forward_flops(spec);
  }

  TrainingRun run() {
    run_.best_params = params_;
    std::size_t since_best = 0;
    for (std::size_t r = 1; r <= opt_.stop.max_round; ++r) {
      RoundTrace trace;
      trace.round = r;
      trace_ = &trace;
      try {
        play_round(r);
      } catch (const DivergedError& e) {
        diverge(trace, e.what());
        break;
      } catch (const NumericError& e) {
        diverge(trace, e.what());
        break;
      }
      run_.traces.push_back(trace);
      if (trace.val_loss < run_.best_val_loss) {
        run_.best_val_loss = trace.val_loss;
        run_.best_params = params_;
        run_.best_round = r;
        since_best = 0;
      } else if (++since_best >= opt_.stop.patience && opt_.stop.patience > 0) {
        run_.stop_reason = StopReason::early_stop;
        break;
      }
    }
    trace_ = nullptr;
    run_.final_params = params_;
    run_.time_all = 0;
    for (const auto& t : run_.traces) run_.time_all += t.total();
    return std::move(run_);
  }

 private:
  struct Node {
    ClientPhase phase = ClientPhase::idle;
    std::optional<ParamVector> weights;  // latest weights received from the server
    OptimizerState opt;
    std::uint64_t server_step = 0;
  };

  struct Upload {
    std::vector<double> values;
    Nanos cost = 0;
  };

  void diverge(RoundTrace& trace, const std::string& why) {
    run_.stop_reason = StopReason::diverged;
    run_.diverged_message = why;
    run_.traces.push_back(trace);
  }

  void enter(ServerPhase from, ServerPhase to) {
    if (phase_ != from)
      throw ProtocolError(std::string("server in phase ") + phase_name(phase_) + ", expected " + phase_name(from));
    phase_ = to;
  }

  bool moments_travel() const {
    return strategy_.name == StrategyName::fedavg && strategy_.aggregate_moments && !server_opt_.moments.empty();
  }

  std::vector<double> weight_payload() const {
    std::vector<double> v = params_.raw();
    if (moments_travel())
      for (const auto& m : server_opt_.moments) v.insert(v.end(), m.raw().begin(), m.raw().end());
    return v;
  }

  // Encodes, meters and decodes one message; returns the receiver's view.
  Message deliver(Message m) {
    const auto bytes = encode(m, opt_.network.precision);
    const std::size_t size = bytes.size();
    if (m.sender == kServerId) {
      trace_->bytes_server_sent += size;
      run_.client_received[m.receiver] += size;
    } else {
      trace_->bytes_server_received += size;
      run_.client_sent[m.sender] += size;
    }
    if (opt_.keep_message_log) run_.message_log.push_back({m.kind, m.round, m.sender, m.receiver, size});
    last_size_ = size;
    return decode(bytes);
  }

  // Client side of a weight message: weights and, when present, moments.
  void receive_weights(std::size_t k, const Message& m) {
    const std::size_t P = layout_->total();
    if (m.values.size() % P != 0) throw ProtocolError("weight payload is not a multiple of the parameter count");
    Node& node = nodes_[k];
    node.weights = ParamVector(layout_, std::vector<double>(m.values.begin(), m.values.begin() + static_cast<std::ptrdiff_t>(P)));
    const std::size_t extra = m.values.size() / P - 1;
    if (extra > 0) {
      if (extra != node.opt.moments.size()) throw ProtocolError("moment payload does not match optimizer");
      for (std::size_t j = 0; j < extra; ++j) {
        auto begin = m.values.begin() + static_cast<std::ptrdiff_t>((j + 1) * P);
        node.opt.moments[j] = ParamVector(layout_, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(P)));
      }
    }
  }

  template <typename F>
  Nanos timed(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
  }

  bool simulated() const { return opt_.durations == DurationsMode::simulated; }
  Nanos compute_cost(double flops) const { return to_nanos(opt_.cost.seconds_per_flop * flops); }
  Nanos overhead() const { return to_nanos(opt_.cost.server_overhead_s); }

  std::vector<std::size_t> recipients_for(std::size_t next_round) const {
    if (opt_.validation == ValidationMode::all) {
      std::vector<std::size_t> all(clients_.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      return all;
    }
    return select_clients(clients_.size(), strategy_.C, next_round, strategy_.seed);
  }

  // Runs `work(i)` for every index, possibly on worker threads; results are
  // stored by index so folding order never depends on scheduling.
  template <typename R, typename F>
  std::vector<R> for_each_client(std::size_t count, F&& work) {
    std::vector<R> out(count);
    if (opt_.jobs <= 1 || count <= 1) {
      for (std::size_t i = 0; i < count; ++i) out[i] = work(i);
      return out;
    }
    std::vector<std::future<void>> pending;
    const std::size_t jobs = std::min(opt_.jobs, count);
    for (std::size_t j = 0; j < jobs; ++j)
      pending.push_back(std::async(std::launch::async, [&, j] {
        for (std::size_t i = j; i < count; i += jobs) out[i] = work(i);
      }));
    for (auto& f : pending) f.get();
    return out;
  }

  void play_round(std::size_t r) {
    RoundTrace& t = *trace_;
    const auto round = static_cast<std::uint32_t>(r);

    // Step 1: initialization / client selection.
    enter(ServerPhase::idle, ServerPhase::init);
    std::vector<std::size_t> sizes;
    const Nanos select_ns = timed([&] { t.participating_clients = select_clients(clients_.size(), strategy_.C, r, strategy_.seed); });
    if (r == 1) {
      const auto first = recipients_for(1);
      const auto payload = weight_payload();
      for (std::size_t k : first) {
        receive_weights(k, deliver({MessageKind::init, round, kServerId, static_cast<std::uint32_t>(k), payload}));
        sizes.push_back(last_size_);
      }
    }
    t.at(Substep::init) = (simulated() ? overhead() : select_ns) + fan_out_time(opt_.network, sizes);

    // Step 2: training.
    enter(ServerPhase::init, ServerPhase::train_requested);
    sizes.clear();
    const auto& part = t.participating_clients;
    const double batch_code = strategy_.B ? static_cast<double>(*strategy_.B) : 0.0;
    for (std::size_t k : part) {
      const Message req = deliver({MessageKind::train_request, round, kServerId, static_cast<std::uint32_t>(k),
                                   {static_cast<double>(r), batch_code, static_cast<double>(strategy_.E),
                                    strategy_.optimizer.lr, static_cast<double>(server_opt_.step_count)}});
      sizes.push_back(last_size_);
      if (!nodes_[k].weights) throw ProtocolError("client " + std::to_string(k) + " asked to train without weights");
      nodes_[k].phase = ClientPhase::training;
      nodes_[k].server_step = static_cast<std::uint64_t>(req.values[4]);
    }
    t.at(Substep::tra_req) = fan_out_time(opt_.network, sizes);

    enter(ServerPhase::train_requested, ServerPhase::training);
    std::vector<Upload> uploads = for_each_client<Upload>(part.size(), [&](std::size_t i) { return local_train(r, part[i]); });
    Nanos slowest = 0;
    for (const auto& u : uploads) slowest = std::max(slowest, u.cost);
    t.at(Substep::tra_run) = slowest;

    sizes.clear();
    std::vector<Message> received;
    for (std::size_t i = 0; i < part.size(); ++i) {
      received.push_back(deliver({MessageKind::weight_upload, round, static_cast<std::uint32_t>(part[i]), kServerId,
                                  std::move(uploads[i].values)}));
      sizes.push_back(last_size_);
      nodes_[part[i]].phase = ClientPhase::idle;
    }
    t.at(Substep::tra_sync) = fan_in_time(opt_.network, sizes);

    enter(ServerPhase::training, ServerPhase::aggregating);
    const Nanos agg_ns = timed([&] { server_aggregate(part, received); });
    const double agg_flops = 2.0 * static_cast<double>(part.size()) * static_cast<double>(received.front().values.size());
    t.at(Substep::tra_agg) = simulated() ? overhead() + compute_cost(agg_flops) : agg_ns;

    // Step 3: validation.
    enter(ServerPhase::aggregating, ServerPhase::val_requested);
    t.validating_clients = recipients_for(r + 1);
    const auto& val = t.validating_clients;
    sizes.clear();
    const auto payload = weight_payload();
    for (std::size_t k : val) {
      receive_weights(k, deliver({MessageKind::weight_broadcast, round, kServerId, static_cast<std::uint32_t>(k), payload}));
      sizes.push_back(last_size_);
      nodes_[k].phase = ClientPhase::validating;
    }
    t.at(Substep::val_req) = fan_out_time(opt_.network, sizes);

    enter(ServerPhase::val_requested, ServerPhase::validating);
    struct ValOut {
      Evaluation ev;
      Nanos cost = 0;
    };
    auto results = for_each_client<ValOut>(val.size(), [&](std::size_t i) {
      const auto& c = clients_[val[i]];
      ValOut o;
      const Nanos wall = timed([&] { o.ev = evaluate(spec_, *nodes_[val[i]].weights, c.val.images, c.val.labels); });
      o.cost = simulated() ? compute_cost(forward_flops_ * static_cast<double>(c.val.size())) : wall;
      return o;
    });
    slowest = 0;
    for (const auto& o : results) slowest = std::max(slowest, o.cost);
    t.at(Substep::val_run) = slowest;

    sizes.clear();
    double loss = 0.0, acc = 0.0, weight = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const std::size_t k = val[i];
      const Message m = deliver({MessageKind::val_result, round, static_cast<std::uint32_t>(k), kServerId,
                                 {results[i].ev.loss, results[i].ev.accuracy, static_cast<double>(clients_[k].n_k()),
                                  static_cast<double>(results[i].ev.n)}});
      sizes.push_back(last_size_);
      nodes_[k].phase = ClientPhase::idle;
      if (m.values[3] > 0) {
        loss += m.values[2] * m.values[0];
        acc += m.values[2] * m.values[1];
        weight += m.values[2];
      }
    }
    t.at(Substep::val_sync) = fan_in_time(opt_.network, sizes);

    enter(ServerPhase::validating, ServerPhase::done);
    const Nanos val_agg_ns = timed([&] {
      if (weight > 0) {
        t.val_loss = loss / weight;
        t.val_acc = acc / weight;
      }
    });
    t.at(Substep::val_agg) = simulated() ? overhead() + compute_cost(4.0 * static_cast<double>(val.size())) : val_agg_ns;
    if (!std::isfinite(t.val_loss) && weight > 0) throw DivergedError("validation loss is not finite");
    phase_ = ServerPhase::idle;
  }

  Upload local_train(std::size_t r, std::size_t k) {
    const ClientDataset& c = clients_[k];
    Node& node = nodes_[k];
    Upload up;
    double samples = 0;
    const Nanos wall = timed([&] {
      if (strategy_.name == StrategyName::fedsgd) {
        auto g = client_update_fedsgd(spec_, *node.weights, c, hash64(strategy_.seed, "fedsgd-dropout", r, k),
                                      opt_.train_mode);
        up.values = std::move(g.grad.raw());
        samples = static_cast<double>(c.n_k());
      } else {
        OptimizerState st = node.opt;
        if (moments_travel()) st.step_count = node.server_step;
        auto u = client_update_fedavg(spec_, *node.weights, c, strategy_.B, strategy_.E, std::move(st),
                                      hash64(strategy_.seed, "local", r, k), opt_.train_mode);
        node.opt = u.state;
        up.values = std::move(u.weights.raw());
        if (moments_travel()) {
          for (const auto& m : u.state.moments) up.values.insert(up.values.end(), m.raw().begin(), m.raw().end());
          up.values.push_back(static_cast<double>(u.state.step_count));
        }
        samples = static_cast<double>(c.n_k() * strategy_.E);
      }
    });
    up.cost = simulated() ? compute_cost(train_flops_ * samples) : wall;
    return up;
  }

  void server_aggregate(const std::vector<std::size_t>& part, const std::vector<Message>& received) {
    const std::size_t P = layout_->total();
    std::vector<std::size_t> n_k;
    for (std::size_t k : part) n_k.push_back(clients_[k].n_k());
    const auto w = AggregationWeights::from_counts(n_k);
    const auto slice = [&](const Message& m, std::size_t block) {
      auto begin = m.values.begin() + static_cast<std::ptrdiff_t>(block * P);
      return ParamVector(layout_, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(P)));
    };
    if (strategy_.name == StrategyName::fedsgd) {
      std::vector<ParamVector> grads;
      for (const auto& m : received) {
        if (m.values.size() != P) throw ProtocolError("gradient upload has wrong length");
        grads.push_back(slice(m, 0));
      }
      const ParamVector g = aggregate(grads, w);
      auto [p, s] = optimizer_apply(std::move(server_opt_), std::move(params_), g);
      params_ = std::move(p);
      server_opt_ = std::move(s);
      return;
    }
    // weights [| moment_1 .. moment_j | step count]
    const bool with_moments = moments_travel();
    const std::size_t blocks = 1 + (with_moments ? server_opt_.moments.size() : 0);
    std::vector<ParamVector> weights;
    std::uint64_t steps = 0;
    for (const auto& m : received) {
      if (m.values.size() != blocks * P + (with_moments ? 1 : 0)) throw ProtocolError("weight upload has wrong length");
      weights.push_back(slice(m, 0));
      if (with_moments) steps = std::max(steps, static_cast<std::uint64_t>(m.values.back()));
    }
    params_ = aggregate(weights, w);
    if (with_moments) {
      for (std::size_t j = 0; j + 1 < blocks; ++j) {
        std::vector<ParamVector> mom;
        for (const auto& m : received) mom.push_back(slice(m, j + 1));
        server_opt_.moments[j] = aggregate(mom, w);
      }
      server_opt_.step_count = steps;
    }
  }

  const ModelSpec& spec_;
  StrategyConfig strategy_;
  const std::vector<ClientDataset>& clients_;
  EngineOptions opt_;
  std::shared_ptr<const ParamLayout> layout_;
  ParamVector params_;
  OptimizerState server_opt_;
  std::vector<Node> nodes_;
  TrainingRun run_;
  RoundTrace* trace_ = nullptr;
  ServerPhase phase_ = ServerPhase::idle;
  std::size_t last_size_ = 0;
  double train_flops_ = 0.0;
  double forward_flops_ = 0.0;
};

}  // namespace detail

// Executes federated rounds (selection, training, aggregation, validation)
// over the simulated network until early stopping or max_round.
inline TrainingRun run_training(const ModelSpec& spec, const StrategyConfig& strategy,
                                const std::vector<ClientDataset>& clients, const ParamVector& initial,
                                const EngineOptions& options = {}) {
  detail::Simulation sim(spec, strategy, clients, initial, options);
  return sim.run();
}

}  // namespace fedbench
