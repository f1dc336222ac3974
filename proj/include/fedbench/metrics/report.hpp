#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedbench/core/error.hpp"
#include "fedbench/protocol/engine.hpp"

namespace fedbench {

using Json = nlohmann::ordered_json;

inline constexpr double kMiB = 1024.0 * 1024.0;

struct AccuracyReport {
  double fl_acc = 0.0;
  std::optional<double> local_acc;
  std::optional<double> central_acc;
  std::vector<double> per_client_acc;
};

struct CommReport {
  std::size_t comm_round = 0;
  std::uint64_t server_sent_bytes = 0;
  std::uint64_t server_received_bytes = 0;
  double avg_client_sent_bytes = 0.0;
  double avg_client_received_bytes = 0.0;
};

struct TimeReport {
  double time_all = 0.0;  // seconds
  std::array<double, kSubsteps> mean{};
  std::array<double, kSubsteps> total{};
};

inline CommReport comm_report(const TrainingRun& run) {
  CommReport r;
  r.comm_round = run.comm_round();
  for (const auto& t : run.traces) {
    r.server_sent_bytes += t.bytes_server_sent;
    r.server_received_bytes += t.bytes_server_received;
  }
  const std::size_t n = run.client_sent.size();
  if (n > 0) {
    std::uint64_t sent = 0, received = 0;
    for (std::size_t k = 0; k < n; ++k) {
      sent += run.client_sent[k];
      received += run.client_received[k];
    }
    r.avg_client_sent_bytes = static_cast<double>(sent) / static_cast<double>(n);
    r.avg_client_received_bytes = static_cast<double>(received) / static_cast<double>(n);
  }
  return r;
}

inline TimeReport time_report(const TrainingRun& run) {
  TimeReport r;
  std::array<Nanos, kSubsteps> total{};
  for (const auto& t : run.traces)
    for (std::size_t s = 0; s < kSubsteps; ++s) total[s] += t.durations[s];
  r.time_all = to_seconds(run.time_all);
  for (std::size_t s = 0; s < kSubsteps; ++s) {
    r.total[s] = to_seconds(total[s]);
    r.mean[s] = run.traces.empty() ? 0.0 : r.total[s] / static_cast<double>(run.traces.size());
  }
  return r;
}

// FLAcc per setting and strategy; deltas are iid minus setting.
struct RobustnessReport {
  std::map<std::string, std::map<std::string, double>> fl_acc;  // setting -> strategy -> FLAcc

  void add(const std::string& setting, const std::string& strategy, double acc) { fl_acc[setting][strategy] = acc; }

  double delta(const std::string& setting, const std::string& strategy) const {
    const auto base = fl_acc.find("iid");
    const auto other = fl_acc.find(setting);
    if (base == fl_acc.end() || other == fl_acc.end()) throw MetricError("robustness: missing setting " + setting);
    const auto a = base->second.find(strategy);
    const auto b = other->second.find(strategy);
    if (a == base->second.end() || b == other->second.end()) throw MetricError("robustness: missing strategy " + strategy);
    return a->second - b->second;
  }
};

// Descriptive fields of a record that do not come from the run itself.
struct RecordContext {
  std::string time;  // wall-clock stamp; the only field allowed to differ between reruns
  std::string dataset = "mnist";
  std::string model = "MLP";
  std::string optimizer = "adam";
  std::string strategy = "fedavg";
  bool non_iid = false;
  std::string iid_strategy = "iid";
  std::optional<std::size_t> B;
  double C = 1.0;
  std::size_t E = 1;
  double lr = 1e-3;
  std::size_t patience = 20;
  std::size_t max_round = 500;
  std::size_t n_clients = 0;
  std::uint64_t seed = 0;
  std::string durations = "simulated";
  std::string validation = "all";
  bool dropout_at_train = true;
  bool aggregate_moments = true;
  std::string log_file;
  std::string cell;
  Json config = Json::object();
};

// Frozen column order. Classic result-line names first, then raw/extra fields.
inline const std::vector<std::string>& record_columns() {
  static const std::vector<std::string> cols = {
      "time", "dataset", "model", "optimizer", "gradient_filter", "IID", "IID-Strategy", "compress", "compress-rate",
      "B", "C", "E", "LR", "EarlyStopPatience", "Device", "LocalAcc", "CentralAcc", "FLAcc", "TimeAll", "Time-Init",
      "Time-TrainReq", "Time-TrainRun", "Time-TrainSync", "Time-TrainAgg", "Time-ValReq", "Time-ValRun",
      "Time-ValSync", "Time-ValAgg", "CommRound", "CommAmount(Server Send)", "CommAmount(Server Receive)", "LogFile",
      "batch-size", "max-epoch", "early-stop-patience", "strategy", "n_clients", "seed", "durations", "validation",
      "dropout_at_train", "aggregate_moments", "flacc_split", "checkpoint", "stop_reason", "best_round",
      "best_val_loss", "CommAmountBytes(Server Send)", "CommAmountBytes(Server Receive)", "CommAmountUnit",
      "AvgClientSendBytes", "AvgClientReceiveBytes", "AvgClientCommRound", "per_client_acc", "cell", "config"};
  return cols;
}

inline Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json compile_reports(const TrainingRun& run, const AccuracyReport& acc, const RecordContext& ctx) {
  const auto comm = comm_report(run);
  const auto time = time_report(run);
  Json r;
  r["time"] = ctx.time;
  r["dataset"] = ctx.dataset;
  r["model"] = ctx.model;
  r["optimizer"] = ctx.optimizer;
  r["gradient_filter"] = "None";
  r["IID"] = ctx.non_iid ? 1 : 0;
  r["IID-Strategy"] = ctx.iid_strategy;
  r["compress"] = "no-compress";
  r["compress-rate"] = 1.0;
  r["B"] = ctx.B ? Json(*ctx.B) : Json("inf");
  r["C"] = ctx.C;
  r["E"] = ctx.E;
  r["LR"] = ctx.lr;
  r["EarlyStopPatience"] = ctx.patience;
  r["Device"] = "sim";
  r["LocalAcc"] = optional_number(acc.local_acc);
  r["CentralAcc"] = optional_number(acc.central_acc);
  r["FLAcc"] = acc.fl_acc;
  r["TimeAll"] = time.time_all;
  static constexpr const char* names[] = {"Time-Init",  "Time-TrainReq", "Time-TrainRun", "Time-TrainSync", "Time-TrainAgg",
                                          "Time-ValReq", "Time-ValRun",   "Time-ValSync",  "Time-ValAgg"};
  for (std::size_t s = 0; s < kSubsteps; ++s) r[names[s]] = time.mean[s];
  r["CommRound"] = comm.comm_round;
  r["CommAmount(Server Send)"] = static_cast<double>(comm.server_sent_bytes) / kMiB;
  r["CommAmount(Server Receive)"] = static_cast<double>(comm.server_received_bytes) / kMiB;
  r["LogFile"] = ctx.log_file;
  r["batch-size"] = r["B"];
  r["max-epoch"] = ctx.max_round;
  r["early-stop-patience"] = ctx.patience;
  r["strategy"] = ctx.strategy;
  r["n_clients"] = ctx.n_clients;
  r["seed"] = ctx.seed;
  r["durations"] = ctx.durations;
  r["validation"] = ctx.validation;
  r["dropout_at_train"] = ctx.dropout_at_train;
  r["aggregate_moments"] = ctx.aggregate_moments;
  r["flacc_split"] = "test";
  r["checkpoint"] = "best_val_loss";
  r["stop_reason"] = to_string(run.stop_reason);
  r["best_round"] = run.best_round;
  r["best_val_loss"] = std::isfinite(run.best_val_loss) ? Json(run.best_val_loss) : Json(nullptr);
  r["CommAmountBytes(Server Send)"] = comm.server_sent_bytes;
  r["CommAmountBytes(Server Receive)"] = comm.server_received_bytes;
  r["CommAmountUnit"] = "MiB";
  r["AvgClientSendBytes"] = comm.avg_client_sent_bytes;
  r["AvgClientReceiveBytes"] = comm.avg_client_received_bytes;
  // Validation-on-all means every client takes part in every round.
  double rounds = 0.0;
  for (const auto& t : run.traces) rounds += static_cast<double>(t.validating_clients.size());
  r["AvgClientCommRound"] = ctx.n_clients ? rounds / static_cast<double>(ctx.n_clients) : 0.0;
  r["per_client_acc"] = acc.per_client_acc;
  r["cell"] = ctx.cell;
  r["config"] = ctx.config;
  return r;
}

// ---------------------------------------------------------------------------
// JSONL / CSV

inline std::vector<Json> read_jsonl(const std::string& path) {
  std::vector<Json> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw MetricError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// Serializes appends from concurrent producers.
class RecordWriter {
 public:
  explicit RecordWriter(std::string path) : path_(std::move(path)) {}

  void append(const Json& record) {
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("cannot open " + path_ + " for writing");
    out << record.dump() << '\n';
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::mutex mu_;
};

inline std::string csv_cell(const Json& v) {
  std::string s;
  if (v.is_string())
    s = v.get<std::string>();
  else if (v.is_null())
    s = "None";
  else
    s = v.dump();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

// Columns: the frozen list first, then any extra keys in first-seen order.
inline std::string to_csv(const std::vector<Json>& records) {
  std::vector<std::string> cols;
  std::map<std::string, bool> seen;
  for (const auto& c : record_columns()) {
    for (const auto& r : records)
      if (r.contains(c)) {
        cols.push_back(c);
        seen[c] = true;
        break;
      }
  }
  for (const auto& r : records)
    for (const auto& [k, _] : r.items())
      if (!seen[k]) {
        cols.push_back(k);
        seen[k] = true;
      }
  std::ostringstream out;
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << csv_cell(Json(cols[i]));
  out << '\n';
  for (const auto& r : records) {
    for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << (r.contains(cols[i]) ? csv_cell(r[cols[i]]) : "");
    out << '\n';
  }
  return out.str();
}

}  // namespace fedbench
