#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fedbench/attacks/capture.hpp"
#include "fedbench/attacks/fc.hpp"
#include "fedbench/core/error.hpp"
#include "fedbench/core/nn.hpp"
#include "fedbench/data/dataset.hpp"
#include "fedbench/protocol/baselines.hpp"

namespace fedbench {

// Minimum-cost assignment of every row to a distinct column (rows <= cols).
// Returns the column of each row. O(n^2 m) shortest augmenting paths.
inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const std::size_t m = cost.front().size();
  if (m < n) throw PreconditionError("hungarian: more rows than columns");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] = row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assign(n);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) assign[p[j] - 1] = j - 1;
  return assign;
}

// A centrally trained classifier used to label FC reconstructions.
struct OracleClassifier {
  ModelSpec spec;
  ParamVector params;
  double test_accuracy = 0.0;
  static constexpr double kRequired = 0.95;

  bool trained() const { return params.size() > 0 && test_accuracy >= kRequired; }
};

inline OracleClassifier train_oracle(const Dataset& train, const Dataset& val, const Dataset& test,
                                     std::uint64_t seed, std::size_t max_epochs = 40) {
  OracleClassifier o;
  o.spec = make_mlp(train.sample_shape(), {256, 256}, train.n_classes, Activation::relu, 0.2);
  TrainerConfig cfg;
  cfg.optimizer = {OptimizerKind::adam, 1e-3};
  cfg.B = 64;
  cfg.max_epochs = max_epochs;
  cfg.patience = 5;
  cfg.seed = hash64(seed, "oracle");
  o.params = train_model(o.spec, init_params(o.spec, hash64(seed, "oracle-init")), train, val, cfg).params;
  o.test_accuracy = evaluate(o.spec, o.params, test.images, test.labels).accuracy;
  return o;
}

struct AttackScore {
  double label_accuracy = 0.0;
  double l2_distance = 0.0;
  std::vector<std::size_t> matching;  // truth index for each reconstruction
};

// Hungarian matching on per-pixel MSE. DLG is scored with its own labels, FC
// with the oracle's prediction on each reconstruction.
inline AttackScore score_attack(const AttackResult& result, const Dataset& truth,
                                const OracleClassifier* oracle = nullptr) {
  const std::size_t n = result.images.size();
  if (n > truth.size()) throw PreconditionError("score_attack: more reconstructions than truth images");
  const bool use_oracle = result.labels.size() != n;
  if (use_oracle && (!oracle || !oracle->trained()))
    throw ConfigError("score_attack: oracle classifier missing or below " + std::to_string(OracleClassifier::kRequired) +
                      " test accuracy");
  AttackScore s;
  if (n == 0) {
    s.l2_distance = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  std::vector<std::vector<double>> cost(n, std::vector<double>(truth.size()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < truth.size(); ++j) cost[i][j] = pixel_mse(result.images[i].values(), truth.images.row(j));
  s.matching = hungarian(cost);
  std::vector<int> labels = result.labels;
  if (use_oracle) {
    Shape shape{n};
    const Shape one = truth.sample_shape();
    shape.insert(shape.end(), one.begin(), one.end());
    std::vector<double> flat;
    for (const auto& img : result.images) flat.insert(flat.end(), img.values().begin(), img.values().end());
    labels = predict(oracle->spec, oracle->params, Tensor(shape, std::move(flat)));
  }
  std::size_t correct = 0;
  double l2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    l2 += cost[i][s.matching[i]];
    if (labels[i] == truth.labels[s.matching[i]]) ++correct;
  }
  s.l2_distance = l2 / static_cast<double>(n);
  s.label_accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  return s;
}

// Binary 8-bit PGM (P5) of an HxWx1 image in [0,1].
inline void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  const std::size_t h = s.size() >= 2 ? s[0] : 1;
  const std::size_t w = s.size() >= 2 ? s[1] : image.size();
  if (h * w != image.size()) throw PreconditionError("write_pgm: expected a single-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : image.values()) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
}

// truth_<i>.pgm for every truth image; recon_<i>.pgm in matched order so that
// recon_i sits next to the truth image it was scored against.
inline void dump_attack_images(const std::filesystem::path& dir, const Dataset& truth, const AttackResult& result,
                               const AttackScore& score) {
  std::filesystem::create_directories(dir);
  for (std::size_t j = 0; j < truth.size(); ++j) {
    Shape one = truth.sample_shape();
    const auto row = truth.images.row(j);
    write_pgm(dir / ("truth_" + std::to_string(j) + ".pgm"), Tensor(one, std::vector<double>(row.begin(), row.end())));
  }
  for (std::size_t i = 0; i < result.images.size(); ++i) {
    const std::size_t j = i < score.matching.size() ? score.matching[i] : i;
    write_pgm(dir / ("recon_" + std::to_string(j) + ".pgm"), result.images[i]);
  }
}

}  // namespace fedbench
