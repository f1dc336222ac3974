#pragma once

#include <chrono>
#include <ctime>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fedbench/bench/config.hpp"
#include "fedbench/data/idx.hpp"
#include "fedbench/data/partition.hpp"
#include "fedbench/metrics/accuracy.hpp"
#include "fedbench/metrics/report.hpp"
#include "fedbench/protocol/baselines.hpp"
#include "fedbench/protocol/engine.hpp"

namespace fedbench {

inline std::string timestamp_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%d %H:%M:%S");
  return os.str();
}

// Source rows [offset, offset + limit) of the configured dataset.
inline Dataset load_source(const DatasetConfig& d) {
  Dataset all;
  if (d.source == "mnist") {
    all = load_idx(d.images, d.labels, 10);
  } else if (d.source == "synth") {
    all = synth_dataset(d.synth_n, d.synth_classes, d.synth_side, d.seed.value_or(0), d.synth_sigma);
  } else {
    throw ConfigError("dataset.source '" + d.source + "' has no flat source");
  }
  if (d.offset > all.size()) throw ConfigError("dataset.offset is past the end of the data");
  const std::size_t n = d.limit ? std::min(d.limit, all.size() - d.offset) : all.size() - d.offset;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), d.offset);
  return all.subset(idx);
}

inline std::vector<ClientDataset> load_clients(const DatasetConfig& d) {
  if (d.source == "dir") return load_client_dir(d.dir);
  PartitionPlan plan;
  plan.mode = d.partition;
  plan.n_clients = d.n_clients;
  plan.max_per_client = d.max_per_client;
  plan.k = d.k;
  plan.seed = d.seed.value_or(0);
  plan.size_jitter = d.size_jitter;
  return partition(load_source(d), plan);
}

struct ExperimentOutcome {
  Json record;
  TrainingRun run;
  ExperimentConfig resolved;
};

inline std::string iid_label(const DatasetConfig& d) {
  if (d.source == "dir") return "natural";
  return d.partition == PartitionMode::iid ? "iid" : std::to_string(d.k) + "-class";
}

// Baselines (when enabled) plus federated training; one ACTPR record.
inline ExperimentOutcome run_experiment(ExperimentConfig cfg, std::size_t jobs = 1, const std::string& cell = "") {
  validate_config(cfg);
  if (!cfg.dataset.seed) cfg.dataset.seed = cfg.seed;
  const auto clients = load_clients(cfg.dataset);
  const Shape input = clients.front().train.sample_shape();
  const std::size_t classes = clients.front().train.n_classes;
  cfg = resolve(std::move(cfg), input, classes);
  const ModelSpec spec = build_model(cfg.model, input, classes);
  const ParamVector initial = init_params(spec, hash64(cfg.seed, "init"));

  StrategyConfig strategy = cfg.strategy;
  strategy.seed = hash64(cfg.seed, "strategy");
  EngineOptions opt;
  opt.network = cfg.network;
  opt.stop = cfg.stop;
  opt.durations = cfg.durations;
  opt.cost = cfg.cost;
  opt.validation = cfg.validation;
  opt.train_mode = cfg.dropout_at_train ? Mode::train : Mode::eval;
  opt.jobs = jobs;

  ExperimentOutcome out;
  out.run = run_training(spec, strategy, clients, initial, opt);

  AccuracyReport acc;
  const auto fl = fl_accuracy(spec, out.run.best_params, clients);
  acc.fl_acc = fl.fl_acc;
  acc.per_client_acc = fl.per_client;
  if (cfg.baselines.enabled) {
    TrainerConfig tc;
    tc.optimizer = cfg.strategy.optimizer;
    tc.optimizer.lr = *cfg.baselines.lr;
    tc.B = cfg.baselines.B;
    tc.max_epochs = cfg.baselines.max_epochs;
    tc.patience = cfg.baselines.patience;
    tc.seed = hash64(cfg.seed, "baselines");
    tc.mode = opt.train_mode;
    const auto b = run_baselines(spec, clients, initial, tc);
    acc.local_acc = b.local_acc;
    acc.central_acc = b.central_acc;
  }

  RecordContext ctx;
  ctx.time = timestamp_now();
  ctx.dataset = cfg.dataset.source;
  ctx.model = model_label(cfg.model);
  ctx.optimizer = std::string(to_string(cfg.strategy.optimizer.kind));
  ctx.strategy = std::string(to_string(cfg.strategy.name));
  ctx.non_iid = cfg.dataset.source == "dir" || cfg.dataset.partition != PartitionMode::iid;
  ctx.iid_strategy = iid_label(cfg.dataset);
  ctx.B = cfg.strategy.B;
  ctx.C = cfg.strategy.C;
  ctx.E = cfg.strategy.E;
  ctx.lr = cfg.strategy.optimizer.lr;
  ctx.patience = cfg.stop.patience;
  ctx.max_round = cfg.stop.max_round;
  ctx.n_clients = clients.size();
  ctx.seed = cfg.seed;
  ctx.durations = std::string(to_string(cfg.durations));
  ctx.validation = std::string(to_string(cfg.validation));
  ctx.dropout_at_train = cfg.dropout_at_train;
  ctx.aggregate_moments = cfg.strategy.aggregate_moments;
  ctx.cell = cell;
  Json embedded = to_json(cfg);
  embedded.erase("sweep");
  embedded.erase("attack");
  ctx.config = embedded;
  out.record = compile_reports(out.run, acc, ctx);
  out.resolved = std::move(cfg);
  return out;
}

// Record without the wall-clock stamp, for reproducibility comparisons.
inline Json without_timestamp(Json record) {
  record.erase("time");
  return record;
}

}  // namespace fedbench
