#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <future>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fedbench/bench/config.hpp"
#include "fedbench/bench/experiment.hpp"
#include "fedbench/metrics/accuracy.hpp"
#include "fedbench/metrics/report.hpp"

namespace fedbench {

// Runs fn(i) for i in [0, count) on up to `jobs` threads.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> workers;
  for (std::size_t j = 0; j < jobs; ++j)
    workers.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    }));
  for (auto& w : workers) w.get();
}

inline std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

struct SweepSpec {
  std::vector<std::optional<std::size_t>> B;
  std::vector<double> C;
  std::vector<std::size_t> E;
  std::vector<double> lr;
  std::vector<OptimizerKind> optimizer;
  std::vector<std::size_t> k;  // 0 = iid
  std::size_t repeats = 1;
  double delta = 0.01;
  std::optional<double> central_acc;
};

inline SweepSpec parse_sweep(const ExperimentConfig& base) {
  using detail::Fields;
  SweepSpec s;
  const Json empty = Json::object();
  const Json& j = base.sweep.is_null() ? empty : base.sweep;
  Fields f(j, "sweep");
  const auto list = [&](const char* key) -> const Json* {
    if (!f.has(key)) return nullptr;
    const Json& v = f.raw(key);
    if (!v.is_array() || v.empty()) throw ConfigError(f.at(key) + " must be a non-empty list");
    return &v;
  };
  const auto item = [&](const char* key, std::size_t i) { return f.at(key) + "[" + std::to_string(i) + "]"; };
  if (const Json* v = list("B"))
    for (std::size_t i = 0; i < v->size(); ++i) s.B.push_back(detail::parse_batch((*v)[i], item("B", i)));
  if (const Json* v = list("C"))
    for (std::size_t i = 0; i < v->size(); ++i) s.C.push_back(Fields::convert<double>((*v)[i], item("C", i)));
  if (const Json* v = list("E"))
    for (std::size_t i = 0; i < v->size(); ++i) s.E.push_back(Fields::convert<std::size_t>((*v)[i], item("E", i)));
  if (const Json* v = list("lr"))
    for (std::size_t i = 0; i < v->size(); ++i) s.lr.push_back(Fields::convert<double>((*v)[i], item("lr", i)));
  if (const Json* v = list("optimizer"))
    for (std::size_t i = 0; i < v->size(); ++i)
      s.optimizer.push_back(detail::parse_enum(item("optimizer", i), Fields::convert<std::string>((*v)[i], item("optimizer", i)),
                                               parse_optimizer));
  if (const Json* v = list("k"))
    for (std::size_t i = 0; i < v->size(); ++i) {
      const Json& x = (*v)[i];
      s.k.push_back(x.is_string() && x.get<std::string>() == "iid" ? 0 : Fields::convert<std::size_t>(x, item("k", i)));
    }
  s.repeats = f.get<std::size_t>("repeats", s.repeats);
  s.delta = f.get<double>("delta", s.delta);
  if (f.has("central_acc")) s.central_acc = f.get<double>("central_acc", 0.0);
  f.finish();
  if (s.repeats < 1) throw ConfigError("sweep.repeats must be >= 1");
  if (!(s.delta > 0.0)) throw ConfigError("sweep.delta must be > 0");
  const auto& st = base.strategy;
  if (s.B.empty()) s.B.push_back(st.B);
  if (s.C.empty()) s.C.push_back(st.C);
  if (s.E.empty()) s.E.push_back(st.E);
  if (s.lr.empty()) s.lr.push_back(st.optimizer.lr);
  if (s.optimizer.empty()) s.optimizer.push_back(st.optimizer.kind);
  if (s.k.empty()) s.k.push_back(base.dataset.partition == PartitionMode::iid ? 0 : base.dataset.k);
  return s;
}

struct SweepCell {
  std::string key;
  ExperimentConfig config;
};

// Cartesian product in a fixed axis order. Each cell's seed is
// hash64(base seed, key), so adding axis values never moves existing cells.
inline std::vector<SweepCell> enumerate_cells(const ExperimentConfig& base, const SweepSpec& s) {
  std::vector<SweepCell> cells;
  const auto num = [](double x) { return Json(x).dump(); };
  for (const auto& b : s.B)
    for (double c : s.C)
      for (std::size_t e : s.E)
        for (double lr : s.lr)
          for (auto opt : s.optimizer)
            for (std::size_t k : s.k)
              for (std::size_t rep = 0; rep < s.repeats; ++rep) {
                SweepCell cell;
                cell.key = "B=" + (b ? std::to_string(*b) : std::string("inf")) + "|C=" + num(c) +
                           "|E=" + std::to_string(e) + "|lr=" + num(lr) + "|optimizer=" + std::string(to_string(opt)) +
                           "|partition=" + (k == 0 ? std::string("iid") : std::to_string(k) + "-class") +
                           "|rep=" + std::to_string(rep);
                ExperimentConfig cfg = base;
                cfg.sweep = Json();
                cfg.strategy.B = b;
                cfg.strategy.C = c;
                cfg.strategy.E = e;
                cfg.strategy.optimizer.lr = lr;
                cfg.strategy.optimizer.kind = opt;
                cfg.dataset.partition = k == 0 ? PartitionMode::iid : PartitionMode::k_class;
                if (k) cfg.dataset.k = k;
                if (!cfg.dataset.seed) cfg.dataset.seed = base.seed;
                cfg.seed = hash64(base.seed, cell.key);
                cell.config = std::move(cfg);
                cells.push_back(std::move(cell));
              }
  return cells;
}

inline std::optional<double> number_field(const Json& r, const char* key) {
  if (!r.contains(key) || !r[key].is_number()) return std::nullopt;
  return r[key].get<double>();
}

// Lowest TimeAll among records with delta-accuracy loss; if none, highest
// FLAcc. CentralAcc comes from the record or the fallback.
inline std::optional<std::size_t> select_best(const std::vector<Json>& records, double delta,
                                              std::optional<double> central_fallback = std::nullopt) {
  std::optional<std::size_t> best_time, best_acc;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto fl = number_field(records[i], "FLAcc");
    const auto time = number_field(records[i], "TimeAll");
    if (!fl || !time) continue;
    auto central = number_field(records[i], "CentralAcc");
    if (!central) central = central_fallback;
    if (central && delta_accuracy_loss(*fl, *central, delta)) {
      if (!best_time || *time < *number_field(records[*best_time], "TimeAll")) best_time = i;
    }
    if (!best_acc || *fl > *number_field(records[*best_acc], "FLAcc")) best_acc = i;
  }
  return best_time ? best_time : best_acc;
}

struct SweepOutcome {
  std::size_t total = 0;
  std::size_t skipped = 0;
  std::size_t ran = 0;
  std::size_t failed = 0;
  std::vector<Json> records;  // this sweep's records, in cell order
  std::optional<std::size_t> best;
};

// Runs every cell whose record is not already in `out_path`.
inline SweepOutcome run_sweep(const ExperimentConfig& base, const std::string& out_path, std::size_t jobs,
                              std::ostream& log, const std::vector<std::size_t>* order = nullptr) {
  validate_config(base);
  const SweepSpec spec = parse_sweep(base);
  const auto cells = enumerate_cells(base, spec);
  SweepOutcome out;
  out.total = cells.size();
  log << "sweep: " << cells.size() << " cells\n";

  std::set<std::string> done;
  for (const auto& r : read_jsonl(out_path))
    if (r.contains("cell") && r["cell"].is_string()) done.insert(r["cell"].get<std::string>());
  std::vector<std::size_t> todo;
  if (order) {
    for (std::size_t i : *order)
      if (!done.count(cells.at(i).key)) todo.push_back(i);
  } else {
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (!done.count(cells[i].key)) todo.push_back(i);
  }
  out.skipped = cells.size() - todo.size();
  RecordWriter writer(out_path);
  std::atomic<std::size_t> failed{0};
  parallel_for(todo.size(), jobs, [&](std::size_t t) {
    const SweepCell& cell = cells[todo[t]];
    try {
      writer.append(run_experiment(cell.config, 1, cell.key).record);
    } catch (const std::exception& e) {
      ++failed;
      Json r;
      r["cell"] = cell.key;
      r["error"] = e.what();
      r["config"] = to_json(cell.config);
      writer.append(r);
    }
  });
  out.ran = todo.size();
  out.failed = failed;

  std::map<std::string, Json> by_cell;
  for (auto& r : read_jsonl(out_path))
    if (r.contains("cell") && r["cell"].is_string()) by_cell[r["cell"].get<std::string>()] = r;
  for (const auto& c : cells)
    if (auto it = by_cell.find(c.key); it != by_cell.end()) out.records.push_back(it->second);
  out.best = select_best(out.records, spec.delta, spec.central_acc);
  return out;
}

// Cells sorted by TimeAll, delta-loss cells first; best cell marked '*'.
inline void print_summary(std::ostream& os, const std::vector<Json>& records, double delta,
                          std::optional<double> central_fallback = std::nullopt) {
  const auto best = select_best(records, delta, central_fallback);
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto within = [&](std::size_t i) {
    const auto fl = number_field(records[i], "FLAcc");
    auto central = number_field(records[i], "CentralAcc");
    if (!central) central = central_fallback;
    return fl && central && delta_accuracy_loss(*fl, *central, delta);
  };
  const auto time = [&](std::size_t i) { return number_field(records[i], "TimeAll").value_or(INFINITY); };
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (within(a) != within(b)) return within(a);
    return time(a) < time(b);
  });
  os << "  cell | FLAcc | TimeAll(s) | CommRound | delta-loss\n";
  for (std::size_t i : idx) {
    const auto& r = records[i];
    os << (best && *best == i ? "* " : "  ") << r.value("cell", std::string("?")) << " | ";
    if (r.contains("error")) {
      os << "error: " << r["error"].get<std::string>() << '\n';
      continue;
    }
    os << number_field(r, "FLAcc").value_or(NAN) << " | " << time(i) << " | " << r.value("CommRound", 0) << " | "
       << (within(i) ? "yes" : "no") << '\n';
  }
}

}  // namespace fedbench
