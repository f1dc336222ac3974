#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedbench/fedbench.hpp"

namespace fedbench::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  auto rng = Rng::stream(seed, "tensor");
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  auto rng = Rng::stream(seed, "labels");
  std::vector<int> out(n);
  for (int& l : out) l = static_cast<int>(rng.below(classes));
  return out;
}

inline ParamVector random_params(const ModelSpec& spec, std::uint64_t seed, double scale = 0.5) {
  ParamVector p(ParamLayout::of(spec));
  auto rng = Rng::stream(seed, "params");
  for (double& v : p.values()) v = rng.uniform(-scale, scale);
  return p;
}

inline ParamVector vec(std::vector<double> v) {
  const std::size_t n = v.size();
  auto layout = std::make_shared<const ParamLayout>(std::vector<ParamEntry>{{0, "kernel", {n}, 0}});
  return ParamVector(layout, std::move(v));
}

// Small synthetic federation: 8x8 images, 10 classes.
inline std::vector<ClientDataset> synth_clients(std::size_t n_clients, std::size_t per_client, std::uint64_t seed,
                                                PartitionMode mode = PartitionMode::iid, std::size_t k = 1) {
  const Dataset d = synth_dataset(n_clients * per_client + 100, 10, 8, seed, 0.2);
  PartitionPlan plan;
  plan.mode = mode;
  plan.n_clients = n_clients;
  plan.max_per_client = per_client;
  plan.k = k;
  plan.seed = seed;
  return partition(d, plan);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fedbench_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path source_dir() { return FEDBENCH_SOURCE_DIR; }

}  // namespace fedbench::test
