#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fedbench/attacks/capture.hpp"
#include "fedbench/attacks/dlg.hpp"
#include "fedbench/attacks/fc.hpp"
#include "fedbench/attacks/scoring.hpp"
#include "fedbench/bench/config.hpp"
#include "fedbench/bench/experiment.hpp"
#include "fedbench/bench/sweep.hpp"
#include "fedbench/metrics/report.hpp"

namespace fedbench {

struct AttackSpec {
  std::string kind = "fc";  // fc | dlg
  std::vector<std::size_t> n_images{1};
  std::vector<std::size_t> E{1};
  std::size_t seeds = 3;
  std::size_t B = 1;          // local batch size when E > 1
  double client_lr = 0.1;     // plain SGD on the victim client
  std::size_t iterations = 300;
  std::size_t iterations_per_image = 32;  // lower bound: iterations >= this * n
  double dlg_lr = 0.1;
  std::size_t truth_pool = 1000;  // last rows of the source, held out from the oracle
  std::size_t oracle_epochs = 40;
};

inline AttackSpec parse_attack(const ExperimentConfig& base) {
  using detail::Fields;
  AttackSpec a;
  const Json empty = Json::object();
  const Json& j = base.attack.is_null() ? empty : base.attack;
  Fields f(j, "attack");
  a.kind = f.get<std::string>("kind", a.kind);
  if (a.kind != "fc" && a.kind != "dlg") throw ConfigError("attack.kind must be fc or dlg");
  const auto sizes = [&](const char* key, std::vector<std::size_t>& into) {
    if (!f.has(key)) return;
    const Json& v = f.raw(key);
    if (!v.is_array() || v.empty()) throw ConfigError(f.at(key) + " must be a non-empty list");
    into.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      into.push_back(Fields::convert<std::size_t>(v[i], f.at(key) + "[" + std::to_string(i) + "]"));
      if (into.back() < 1) throw ConfigError(f.at(key) + " values must be >= 1");
    }
  };
  sizes("n_images", a.n_images);
  sizes("E", a.E);
  a.seeds = f.get<std::size_t>("seeds", a.seeds);
  a.B = f.get<std::size_t>("B", a.B);
  a.client_lr = f.get<double>("client_lr", a.client_lr);
  a.iterations = f.get<std::size_t>("iterations", a.iterations);
  a.iterations_per_image = f.get<std::size_t>("iterations_per_image", a.iterations_per_image);
  a.dlg_lr = f.get<double>("dlg_lr", a.dlg_lr);
  a.truth_pool = f.get<std::size_t>("truth_pool", a.truth_pool);
  a.oracle_epochs = f.get<std::size_t>("oracle_epochs", a.oracle_epochs);
  f.finish();
  if (a.seeds < 1) throw ConfigError("attack.seeds must be >= 1");
  if (a.B < 1) throw ConfigError("attack.B must be >= 1");
  if (!(a.client_lr > 0.0)) throw ConfigError("attack.client_lr must be > 0");
  if (!(a.dlg_lr > 0.0)) throw ConfigError("attack.dlg_lr must be > 0");
  return a;
}

inline Json to_json(const AttackSpec& a) {
  return {{"kind", a.kind},           {"n_images", a.n_images},
          {"E", a.E},                 {"seeds", a.seeds},
          {"B", a.B},                 {"client_lr", a.client_lr},
          {"iterations", a.iterations}, {"iterations_per_image", a.iterations_per_image},
          {"dlg_lr", a.dlg_lr},       {"truth_pool", a.truth_pool},
          {"oracle_epochs", a.oracle_epochs}};
}

// e.g. "FC-MLP-FedSGD"; E > 1 is a FedAvg capture.
inline std::string attack_label(const std::string& kind, const std::string& model, std::size_t E) {
  std::string k = kind;
  std::transform(k.begin(), k.end(), k.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  return k + "-" + model + "-" + (E > 1 ? "FedAvg" : "FedSGD");
}

// Model attacked by each method: a wide ReLU MLP for FC (more units driven by a
// single image), the sigmoid-substituted MLP for DLG.
inline ModelSpec attack_model(const AttackSpec& a, const ExperimentConfig& cfg, const Shape& input, std::size_t classes) {
  if (!cfg.model.spec.empty() || cfg.model.name != "mlp") {
    const ModelSpec s = build_model(cfg.model, input, classes);
    return a.kind == "dlg" ? twice_differentiable(s) : s;
  }
  if (a.kind == "fc") return make_mlp(input, {512, 512}, classes, Activation::relu);
  return twice_differentiable(make_mlp(input, cfg.model.hidden, classes, Activation::relu));
}

struct AttackCampaign {
  std::vector<Json> records;
  std::vector<std::string> summary;  // one printed line per (n_images, E)
  std::optional<double> oracle_accuracy;
};

// One record per (n_images, E, seed). Cells that throw are recorded with an
// error and the campaign continues.
inline AttackCampaign run_attack_campaign(ExperimentConfig cfg, std::size_t jobs,
                                          const std::optional<std::filesystem::path>& dump_dir = std::nullopt) {
  const AttackSpec a = parse_attack(cfg);
  if (cfg.dataset.source == "dir") throw ConfigError("dataset.source: attacks need a flat dataset (mnist or synth)");
  validate_config(cfg);
  if (!cfg.dataset.seed) cfg.dataset.seed = cfg.seed;
  const Dataset source = load_source(cfg.dataset);
  if (a.truth_pool < 1 || a.truth_pool >= source.size())
    throw ConfigError("attack.truth_pool must be in [1, dataset size)");
  const std::size_t split = source.size() - a.truth_pool;
  std::vector<std::size_t> pool_idx(a.truth_pool);
  std::iota(pool_idx.begin(), pool_idx.end(), split);
  const Dataset pool = source.subset(pool_idx);

  const Shape input = source.sample_shape();
  const std::size_t classes = source.n_classes;
  const ModelSpec spec = attack_model(a, cfg, input, classes);
  const std::string model = model_label(cfg.model);

  AttackCampaign out;
  std::optional<OracleClassifier> oracle;
  if (a.kind == "fc") {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < split; ++i) (i % 10 == 9 ? va : tr).push_back(i);
    oracle = train_oracle(source.subset(tr), source.subset(va), pool, hash64(cfg.seed, "oracle"), a.oracle_epochs);
    out.oracle_accuracy = oracle->test_accuracy;
  }

  struct Cell {
    std::size_t n, E, seed;
  };
  std::vector<Cell> cells;
  for (std::size_t n : a.n_images)
    for (std::size_t E : a.E)
      for (std::size_t s = 0; s < a.seeds; ++s) cells.push_back({n, E, s});
  out.records.resize(cells.size());

  Json embedded = to_json(cfg);
  embedded.erase("sweep");
  embedded["attack"] = to_json(a);

  parallel_for(cells.size(), jobs, [&](std::size_t i) {
    const Cell& c = cells[i];
    const std::string label = attack_label(a.kind, model, c.E);
    const std::uint64_t seed = hash64(cfg.seed, "attack", a.kind, c.n, c.E, c.seed);
    Json r;
    r["attack"] = a.kind;
    r["label"] = label;
    r["n_images"] = c.n;
    r["E"] = c.E;
    r["B"] = c.E > 1 ? Json(a.B) : Json("inf");
    r["seed_index"] = c.seed;
    r["seed"] = seed;
    r["model_spec"] = to_string(spec);
    r["cell"] = label + "|n=" + std::to_string(c.n) + "|E=" + std::to_string(c.E) + "|seed=" + std::to_string(c.seed);
    try {
      if (c.n > pool.size()) throw ConfigError("attack.n_images exceeds attack.truth_pool");
      auto rng = Rng::stream(seed, "truth");
      std::vector<std::size_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t k = 0; k < c.n; ++k) std::swap(idx[k], idx[k + rng.below(idx.size() - k)]);
      idx.resize(c.n);
      const Dataset truth = pool.subset(idx);
      const ParamVector params = init_params(spec, hash64(seed, "victim"));
      const std::optional<std::size_t> B = c.E > 1 ? std::optional<std::size_t>(a.B) : std::nullopt;
      const auto cap = capture_update(spec, params, truth, B, c.E, {OptimizerKind::sgd, a.client_lr}, seed);
      AttackResult res;
      if (a.kind == "fc") {
        res = fc_attack(cap.derived_gradient, spec, c.n);
      } else {
        DlgConfig dc;
        dc.iterations = a.iterations == 0 ? 0 : std::max(a.iterations, a.iterations_per_image * c.n);
        dc.lr = a.dlg_lr;
        dc.init_seed = hash64(seed, "dlg");
        res = dlg_attack(cap.derived_gradient, spec, params, c.n, dc);
      }
      const auto score = score_attack(res, truth, oracle ? &*oracle : nullptr);
      r["LabelAcc"] = score.label_accuracy;
      r["L2-Distance"] = std::isfinite(score.l2_distance) ? Json(score.l2_distance) : Json(nullptr);
      r["n_reconstructed"] = res.images.size();
      r["failed"] = res.failed;
      r["failure"] = res.failure;
      r["approximate_gradient"] = cap.approximate;
      if (a.kind == "dlg") {
        r["iterations"] = res.iterations_used;
        r["final_objective"] = res.final_objective;
        r["outer_gradient"] = res.outer_gradient;
        r["optimizer"] = res.optimizer;
      }
      if (dump_dir)
        dump_attack_images(*dump_dir / (label + "_n" + std::to_string(c.n) + "_e" + std::to_string(c.E) + "_s" +
                                        std::to_string(c.seed)),
                           truth, res, score);
    } catch (const std::exception& e) {
      r["failed"] = true;
      r["error"] = e.what();
    }
    if (oracle) r["oracle_accuracy"] = oracle->test_accuracy;
    r["config"] = embedded;
    out.records[i] = std::move(r);
  });

  // Mean over seeds per (n, E), one summary line each.
  for (std::size_t n : a.n_images)
    for (std::size_t E : a.E) {
      double acc = 0.0, l2 = 0.0;
      std::size_t count = 0, l2_count = 0;
      for (const auto& r : out.records) {
        if (r["n_images"] != n || r["E"] != E || !r.contains("LabelAcc")) continue;
        acc += r["LabelAcc"].get<double>();
        ++count;
        if (r["L2-Distance"].is_number()) {
          l2 += r["L2-Distance"].get<double>();
          ++l2_count;
        }
      }
      char line[256];
      std::snprintf(line, sizeof line, "%s #Images=%zu #Epochs=%zu LabelAcc=%.3f L2-Distance=%.17g",
                    attack_label(a.kind, model, E).c_str(), n, E, count ? acc / static_cast<double>(count) : 0.0,
                    l2_count ? l2 / static_cast<double>(l2_count) : NAN);
      out.summary.emplace_back(line);
    }
  return out;
}

}  // namespace fedbench
