#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/rng.hpp"
#include "fedbench/data/dataset.hpp"
#include "fedbench/data/idx.hpp"

namespace fedbench {

// Class-c images are a fixed binary template plus N(0, sigma) noise, clipped
// to [0, 1]. Labels cycle through the classes in a seeded order.
inline Dataset synth_dataset(std::size_t n, std::size_t n_classes, std::size_t image_side, std::uint64_t seed,
                             double sigma = 0.1) {
  if (n_classes == 0 || n < n_classes) throw PreconditionError("synth_dataset needs n >= n_classes >= 1");
  const std::size_t pixels = image_side * image_side;
  std::vector<std::vector<double>> templates(n_classes, std::vector<double>(pixels));
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto rng = Rng::stream(seed, "template", c);
    for (double& v : templates[c]) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % n_classes);
  auto order_rng = Rng::stream(seed, "labels");
  order_rng.shuffle(std::span(labels));

  auto noise = Rng::stream(seed, "noise");
  std::vector<double> px(n * pixels);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = templates[static_cast<std::size_t>(labels[i])];
    for (std::size_t p = 0; p < pixels; ++p) {
      const double v = sigma > 0.0 ? t[p] + sigma * noise.normal() : t[p];
      px[i * pixels + p] = std::clamp(v, 0.0, 1.0);
    }
  }
  Dataset d;
  d.images = Tensor({n, image_side, image_side, 1}, std::move(px));
  d.labels = std::move(labels);
  d.n_classes = n_classes;
  return d;
}

enum class PartitionMode { iid, k_class };

struct PartitionPlan {
  PartitionMode mode = PartitionMode::iid;
  std::size_t n_clients = 10;
  std::size_t max_per_client = 200;
  std::size_t k = 1;  // classes per client, k_class mode
  std::uint64_t seed = 0;
  // IID only: each client's size is drawn uniformly from
  // [ (1 - size_jitter) * max_per_client, max_per_client ].
  double size_jitter = 0.0;
};

// 80/10/10 split of one client's allocation: floor for val and test, the
// remainder goes to train.
inline ClientDataset split_client(const Dataset& source, std::size_t client_id, std::vector<std::size_t> alloc,
                                  std::uint64_t seed) {
  auto rng = Rng::stream(seed, "split", client_id);
  rng.shuffle(std::span(alloc));
  const std::size_t n = alloc.size();
  const std::size_t n_val = n / 10;
  const std::size_t n_test = n / 10;
  const std::size_t n_train = n - n_val - n_test;
  ClientDataset c;
  c.client_id = client_id;
  c.train_index.assign(alloc.begin(), alloc.begin() + static_cast<std::ptrdiff_t>(n_train));
  c.val_index.assign(alloc.begin() + static_cast<std::ptrdiff_t>(n_train),
                     alloc.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  c.test_index.assign(alloc.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), alloc.end());
  c.train = source.subset(c.train_index);
  c.val = source.subset(c.val_index);
  c.test = source.subset(c.test_index);
  return c;
}

// Distributes dataset rows over clients without replacement.
//
// k_class: rows are grouped by label (each class shuffled), every class pool
// is cut into contiguous chunks, and chunk slots are dealt round-robin so
// client c receives classes (c*k + j) mod n_classes for j < k, i.e. exactly
// k distinct classes when k <= n_classes.
inline std::vector<ClientDataset> partition(const Dataset& data, const PartitionPlan& plan) {
  data.validate();
  if (plan.n_clients == 0) throw PreconditionError("partition needs at least one client");
  if (plan.max_per_client == 0) throw PreconditionError("partition needs max_per_client >= 1");
  const std::size_t N = data.size();
  std::vector<std::vector<std::size_t>> alloc(plan.n_clients);

  if (plan.mode == PartitionMode::iid) {
    if (!(plan.size_jitter >= 0.0 && plan.size_jitter <= 1.0))
      throw ConfigError("partition: size_jitter must be in [0,1]");
    std::vector<std::size_t> sizes(plan.n_clients, plan.max_per_client);
    if (plan.size_jitter > 0.0) {
      auto rng = Rng::stream(plan.seed, "jitter");
      const auto lo = static_cast<std::size_t>(std::ceil((1.0 - plan.size_jitter) * static_cast<double>(plan.max_per_client)));
      for (auto& s : sizes) s = std::max<std::size_t>(1, lo + static_cast<std::size_t>(rng.below(plan.max_per_client - lo + 1)));
    }
    const std::size_t need = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (need > N)
      throw PartitionError("iid partition needs " + std::to_string(need) + " samples but the dataset has " +
                           std::to_string(N) + " (shortfall " + std::to_string(need - N) + ")");
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = Rng::stream(plan.seed, "iid");
    rng.shuffle(std::span(order));
    std::size_t pos = 0;
    for (std::size_t c = 0; c < plan.n_clients; ++c) {
      alloc[c].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                      order.begin() + static_cast<std::ptrdiff_t>(pos + sizes[c]));
      pos += sizes[c];
    }
  } else {
    const std::size_t C = data.n_classes;
    if (plan.k < 1 || plan.k > C)
      throw ConfigError("partition: k must be in [1," + std::to_string(C) + "], got " + std::to_string(plan.k));
    std::vector<std::vector<std::size_t>> pools(C);
    for (std::size_t i = 0; i < N; ++i) pools[static_cast<std::size_t>(data.labels[i])].push_back(i);
    for (std::size_t c = 0; c < C; ++c) {
      auto rng = Rng::stream(plan.seed, "class-pool", c);
      rng.shuffle(std::span(pools[c]));
    }
    // chunk j of client c has size base (+1 for the first `extra` chunks)
    const std::size_t base = plan.max_per_client / plan.k;
    const std::size_t extra = plan.max_per_client % plan.k;
    if (base == 0) throw PartitionError("partition: max_per_client smaller than k");
    std::vector<std::size_t> demand(C, 0);
    for (std::size_t c = 0; c < plan.n_clients; ++c)
      for (std::size_t j = 0; j < plan.k; ++j) demand[(c * plan.k + j) % C] += base + (j < extra ? 1 : 0);
    std::ostringstream shortfall;
    for (std::size_t c = 0; c < C; ++c)
      if (demand[c] > pools[c].size())
        shortfall << " class " << c << " needs " << demand[c] << " has " << pools[c].size() << " (short "
                  << demand[c] - pools[c].size() << ");";
    if (!shortfall.str().empty()) throw PartitionError("k_class partition: insufficient samples:" + shortfall.str());
    std::vector<std::size_t> cursor(C, 0);
    for (std::size_t c = 0; c < plan.n_clients; ++c)
      for (std::size_t j = 0; j < plan.k; ++j) {
        const std::size_t cls = (c * plan.k + j) % C;
        const std::size_t len = base + (j < extra ? 1 : 0);
        alloc[c].insert(alloc[c].end(), pools[cls].begin() + static_cast<std::ptrdiff_t>(cursor[cls]),
                        pools[cls].begin() + static_cast<std::ptrdiff_t>(cursor[cls] + len));
        cursor[cls] += len;
      }
  }

  std::vector<ClientDataset> clients;
  clients.reserve(plan.n_clients);
  for (std::size_t c = 0; c < plan.n_clients; ++c) clients.push_back(split_client(data, c, std::move(alloc[c]), plan.seed));
  return clients;
}

// Pre-partitioned layout: <root>/clients/<id>/{train,val,test}-{images,labels}.idx
inline std::vector<ClientDataset> load_client_dir(const std::filesystem::path& root, std::size_t n_classes = 0) {
  namespace fs = std::filesystem;
  const fs::path dir = root / "clients";
  if (!fs::is_directory(dir)) throw IngestionError(dir.string(), "not a directory");
  std::map<std::size_t, fs::path> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_directory()) continue;
    const auto name = e.path().filename().string();
    if (name.empty() || !std::all_of(name.begin(), name.end(), [](char ch) { return ch >= '0' && ch <= '9'; }))
      continue;
    ids.emplace(std::stoul(name), e.path());
  }
  if (ids.empty()) throw IngestionError(dir.string(), "no client directories");
  std::vector<ClientDataset> clients;
  std::size_t classes = n_classes;
  for (const auto& [id, path] : ids) {
    ClientDataset c;
    c.client_id = id;
    const auto load = [&](const char* split) {
      return load_idx((path / (std::string(split) + "-images.idx")).string(),
                      (path / (std::string(split) + "-labels.idx")).string(), n_classes);
    };
    c.train = load("train");
    c.val = load("val");
    c.test = load("test");
    for (const Dataset* d : {&c.train, &c.val, &c.test}) classes = std::max(classes, d->n_classes);
    clients.push_back(std::move(c));
  }
  for (auto& c : clients)
    for (Dataset* d : {&c.train, &c.val, &c.test}) d->n_classes = classes;
  return clients;
}

inline void write_client_dir(const std::filesystem::path& root, const std::vector<ClientDataset>& clients) {
  namespace fs = std::filesystem;
  for (const auto& c : clients) {
    const fs::path path = root / "clients" / std::to_string(c.client_id);
    fs::create_directories(path);
    const auto save = [&](const Dataset& d, const char* split) {
      write_idx(d, (path / (std::string(split) + "-images.idx")).string(),
                (path / (std::string(split) + "-labels.idx")).string());
    };
    save(c.train, "train");
    save(c.val, "val");
    save(c.test, "test");
  }
}

// All clients' train (or val/test) sets concatenated.
inline Dataset pooled(const std::vector<ClientDataset>& clients, Dataset ClientDataset::*split) {
  std::vector<const Dataset*> parts;
  for (const auto& c : clients)
    if ((c.*split).size() > 0) parts.push_back(&(c.*split));
  return concat(parts);
}

}  // namespace fedbench
