#pragma once

#include <algorithm>
#include <cmath>
#include <variant>
#include <vector>

#include "fedbench/attacks/capture.hpp"
#include "fedbench/core/error.hpp"
#include "fedbench/core/model.hpp"

namespace fedbench {

struct FcConfig {
  double tau = 1e-8;      // bias-gradient floor
  double tau_dup = 1e-3;  // per-pixel MSE below which candidates merge
  // Slots not taken by multi-member clusters go to the singleton with the
  // most candidates within this MSE radius, skipping ones that near an
  // already chosen image. 0 ranks by member count only.
  double fill_radius = 0.02;
};

inline double pixel_mse(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

// For a dense first layer dl/dW1[i,:] = dl/db1[i] * x when unit i is driven
// by a single sample, so row i over the bias gradient is that sample.
inline AttackResult fc_attack(const ParamVector& grad, const ModelSpec& spec, std::size_t n_images_hint,
                              const FcConfig& cfg = {}) {
  std::size_t first = spec.layers.size();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (std::holds_alternative<FlattenLayer>(spec.layers[i])) continue;
    if (std::holds_alternative<DenseLayer>(spec.layers[i])) first = i;
    break;
  }
  if (first == spec.layers.size()) throw PreconditionError("fc_attack: first layer must be dense with bias");
  const auto& layer = std::get<DenseLayer>(spec.layers[first]);
  const ParamEntry* w = grad.layout().find(first, "kernel");
  const ParamEntry* b = grad.layout().find(first, "bias");
  if (!w || !b) throw PreconditionError("fc_attack: first dense layer has no bias");
  const auto gw = grad.slice(*w);
  const auto gb = grad.slice(*b);

  AttackResult r;
  r.method = "fc";
  std::vector<std::size_t> units;
  for (std::size_t i = 0; i < layer.out; ++i)
    if (std::abs(gb[i]) > cfg.tau) units.push_back(i);
  if (units.empty()) {
    r.failed = true;
    r.failure = "all bias gradients below tau";
    return r;
  }
  std::stable_sort(units.begin(), units.end(), [&](std::size_t a, std::size_t c) { return std::abs(gb[a]) > std::abs(gb[c]); });

  struct Cluster {
    std::vector<double> rep;
    std::size_t members = 0;
  };
  std::vector<Cluster> clusters;
  std::vector<double> cand(layer.in);
  for (std::size_t i : units) {
    for (std::size_t j = 0; j < layer.in; ++j) cand[j] = std::clamp(gw[i * layer.in + j] / gb[i], 0.0, 1.0);
    bool merged = false;
    for (auto& c : clusters)
      if (pixel_mse(c.rep, cand) < cfg.tau_dup) {
        ++c.members;
        merged = true;
        break;
      }
    if (!merged) clusters.push_back({cand, 1});
  }
  std::stable_sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& c) { return a.members > c.members; });
  const std::size_t keep = std::min(clusters.size(), std::max<std::size_t>(1, n_images_hint));
  std::vector<std::size_t> chosen;
  if (cfg.fill_radius <= 0.0) {
    for (std::size_t k = 0; k < keep; ++k) chosen.push_back(k);
  } else {
    for (std::size_t k = 0; k < clusters.size() && chosen.size() < keep; ++k)
      if (clusters[k].members > 1 || k == 0) chosen.push_back(k);
    std::vector<char> out(clusters.size(), 0);
    for (std::size_t k : chosen) out[k] = 1;
    std::vector<std::size_t> density(clusters.size(), 0);
    if (chosen.size() < keep)
      for (std::size_t i = 0; i < clusters.size(); ++i)
        for (std::size_t j = i; j < clusters.size(); ++j)
          if (j == i || pixel_mse(clusters[i].rep, clusters[j].rep) < cfg.fill_radius) {
            density[i] += clusters[j].members;
            if (j != i) density[j] += clusters[i].members;
          }
    while (chosen.size() < keep) {
      std::size_t best = clusters.size(), best_density = 0;
      for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (out[i]) continue;
        bool near = false;
        for (std::size_t k : chosen)
          if (pixel_mse(clusters[k].rep, clusters[i].rep) < cfg.fill_radius) {
            near = true;
            break;
          }
        if (near) {
          out[i] = 1;
          continue;
        }
        if (best == clusters.size() || density[i] > best_density) {
          best = i;
          best_density = density[i];
        }
      }
      if (best == clusters.size()) break;
      out[best] = 1;
      chosen.push_back(best);
    }
  }
  for (std::size_t k : chosen) r.images.emplace_back(spec.input, std::move(clusters[k].rep));
  return r;
}

}  // namespace fedbench
