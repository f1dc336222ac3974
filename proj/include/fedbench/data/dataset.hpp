#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/tensor.hpp"

namespace fedbench {

// Images are N x H x W x C with values in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t n_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

  void validate() const {
    if (images.rows() != labels.size())
      throw ConfigError("dataset has " + std::to_string(images.rows()) + " images but " +
                        std::to_string(labels.size()) + " labels");
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= n_classes)
        throw ConfigError("label " + std::to_string(l) + " outside [0," + std::to_string(n_classes) + ")");
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d;
    if (images.rank() == 0) {
      d.images = Tensor(Shape{0});
    } else {
      d.images = images.select_rows(idx);
    }
    d.labels.reserve(idx.size());
    for (std::size_t i : idx) d.labels.push_back(labels.at(i));
    d.n_classes = n_classes;
    return d;
  }

  Dataset head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return subset(idx);
  }
};

// Concatenates datasets with identical sample shapes.
inline Dataset concat(std::span<const Dataset* const> parts) {
  Dataset out;
  if (parts.empty()) return out;
  Shape shape = parts.front()->images.shape();
  shape[0] = 0;
  std::vector<double> values;
  for (const Dataset* d : parts) {
    if (d->images.rank() != shape.size() ||
        !std::equal(shape.begin() + 1, shape.end(), d->images.shape().begin() + 1))
      throw ConfigError("concat: datasets have different sample shapes");
    shape[0] += d->size();
    values.insert(values.end(), d->images.values().begin(), d->images.values().end());
    out.labels.insert(out.labels.end(), d->labels.begin(), d->labels.end());
    out.n_classes = std::max(out.n_classes, d->n_classes);
  }
  out.images = Tensor(shape, std::move(values));
  return out;
}

// One participant's local data. `*_index` record the source-dataset rows each
// split was drawn from (empty for pre-partitioned data).
struct ClientDataset {
  std::size_t client_id = 0;
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> val_index;
  std::vector<std::size_t> test_index;

  std::size_t n_k() const noexcept { return train.size(); }
};

}  // namespace fedbench
