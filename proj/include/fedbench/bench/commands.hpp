#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "fedbench/bench/attack.hpp"
#include "fedbench/bench/config.hpp"
#include "fedbench/bench/experiment.hpp"
#include "fedbench/bench/sweep.hpp"
#include "fedbench/metrics/report.hpp"

namespace fedbench {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;

// Values given on the command line; they override the config file.
struct CliOptions {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::size_t> jobs;
  bool dump_images = false;
  std::optional<std::string> durations;
  std::string input;  // report: JSONL to render
};

inline ExperimentConfig config_from(const CliOptions& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  auto c = load_config(o.config);
  if (o.out) c.output = *o.out;
  if (o.durations) {
    if (*o.durations != "measured" && *o.durations != "simulated")
      throw ConfigError("--durations must be measured or simulated");
    c.durations = *o.durations == "measured" ? DurationsMode::measured : DurationsMode::simulated;
  }
  return c;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DivergedError& e) {
    err << "diverged: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline int cmd_run(const CliOptions& o, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const auto cfg = config_from(o);
    auto outcome = run_experiment(cfg, o.jobs.value_or(1));
    RecordWriter(cfg.output).append(outcome.record);
    const auto& r = outcome.record;
    os << "FLAcc=" << r["FLAcc"].get<double>() << " CommRound=" << r["CommRound"].get<std::size_t>()
       << " TimeAll=" << r["TimeAll"].get<double>() << "s stop=" << r["stop_reason"].get<std::string>() << " -> "
       << cfg.output << '\n';
    if (outcome.run.stop_reason == StopReason::diverged) {
      err << "diverged: " << outcome.run.diverged_message << '\n';
      return kExitDiverged;
    }
    return kExitOk;
  });
}

inline int cmd_sweep(const CliOptions& o, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const auto cfg = config_from(o);
    const auto spec = parse_sweep(cfg);
    const auto result = run_sweep(cfg, cfg.output, o.jobs.value_or(default_jobs()), os);
    os << "ran " << result.ran << ", skipped " << result.skipped << " existing, " << result.failed << " failed\n";
    print_summary(os, result.records, spec.delta, spec.central_acc);
    return result.failed ? kExitFailure : kExitOk;
  });
}

inline int cmd_attack(const CliOptions& o, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const auto cfg = config_from(o);
    std::optional<std::filesystem::path> dump;
    if (o.dump_images) dump = std::filesystem::path(cfg.output).parent_path() / "attack_images";
    const auto campaign = run_attack_campaign(cfg, o.jobs.value_or(default_jobs()), dump);
    RecordWriter writer(cfg.output);
    for (const auto& r : campaign.records) writer.append(r);
    if (campaign.oracle_accuracy) os << "oracle test accuracy " << *campaign.oracle_accuracy << '\n';
    for (const auto& line : campaign.summary) os << line << '\n';
    return kExitOk;
  });
}

// LocalAcc / CentralAcc only.
inline int cmd_baselines(const CliOptions& o, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    auto cfg = config_from(o);
    validate_config(cfg);
    if (!cfg.dataset.seed) cfg.dataset.seed = cfg.seed;
    const auto clients = load_clients(cfg.dataset);
    const Shape input = clients.front().train.sample_shape();
    const std::size_t classes = clients.front().train.n_classes;
    cfg = resolve(std::move(cfg), input, classes);
    const ModelSpec spec = build_model(cfg.model, input, classes);
    TrainerConfig tc;
    tc.optimizer = cfg.strategy.optimizer;
    tc.optimizer.lr = *cfg.baselines.lr;
    tc.B = cfg.baselines.B;
    tc.max_epochs = cfg.baselines.max_epochs;
    tc.patience = cfg.baselines.patience;
    tc.seed = hash64(cfg.seed, "baselines");
    tc.mode = cfg.dropout_at_train ? Mode::train : Mode::eval;
    const auto b = run_baselines(spec, clients, init_params(spec, hash64(cfg.seed, "init")), tc);
    Json r;
    r["time"] = timestamp_now();
    r["dataset"] = cfg.dataset.source;
    r["model"] = model_label(cfg.model);
    r["optimizer"] = std::string(to_string(cfg.strategy.optimizer.kind));
    r["IID"] = cfg.dataset.partition == PartitionMode::iid && cfg.dataset.source != "dir" ? 0 : 1;
    r["IID-Strategy"] = iid_label(cfg.dataset);
    r["batch-size"] = detail::batch_json(tc.B);
    r["LR"] = tc.optimizer.lr;
    r["max-epoch"] = tc.max_epochs;
    r["early-stop-patience"] = tc.patience;
    r["LocalAcc"] = b.local_acc;
    r["CentralAcc"] = b.central_acc;
    r["local_per_client"] = b.local_per_client;
    r["central_per_client"] = b.central_per_client;
    r["seed"] = cfg.seed;
    Json embedded = to_json(cfg);
    embedded.erase("sweep");
    embedded.erase("attack");
    r["config"] = embedded;
    RecordWriter(cfg.output).append(r);
    os << "LocalAcc=" << b.local_acc << " CentralAcc=" << b.central_acc << " -> " << cfg.output << '\n';
    return kExitOk;
  });
}

// JSONL -> CSV (to --out or stdout) plus the sweep summary when records
// carry FLAcc.
inline int cmd_report(const CliOptions& o, std::ostream& os = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    if (o.input.empty()) throw ConfigError("report needs an input JSONL file");
    if (!std::filesystem::exists(o.input)) throw ConfigError("no such file: " + o.input);
    const auto records = read_jsonl(o.input);
    const std::string csv = to_csv(records);
    if (o.out) {
      std::ofstream f(*o.out);
      if (!f) throw Error("cannot write " + *o.out);
      f << csv;
      os << records.size() << " records -> " << *o.out << '\n';
    } else {
      os << csv;
    }
    bool any_fl = false;
    for (const auto& r : records) any_fl = any_fl || r.contains("FLAcc");
    if (any_fl && o.out) print_summary(os, records, 0.01);
    return kExitOk;
  });
}

}  // namespace fedbench
