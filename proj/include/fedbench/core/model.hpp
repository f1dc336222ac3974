#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/rng.hpp"
#include "fedbench/core/tensor.hpp"

namespace fedbench {

enum class Activation { linear, sigmoid, relu };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "linear") return Activation::linear;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::linear;
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Valid-padding convolution over NHWC input; input channels come from the
// preceding shape.
struct ConvLayer {
  std::size_t channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  Activation activation = Activation::linear;
  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

// 2x2 average pooling, stride 2 (odd trailing row/column dropped).
struct AvgPoolLayer {
  friend bool operator==(const AvgPoolLayer&, const AvgPoolLayer&) = default;
};

struct FlattenLayer {
  friend bool operator==(const FlattenLayer&, const FlattenLayer&) = default;
};

struct DropoutLayer {
  double rate = 0.0;
  friend bool operator==(const DropoutLayer&, const DropoutLayer&) = default;
};

using Layer = std::variant<DenseLayer, ConvLayer, AvgPoolLayer, FlattenLayer, DropoutLayer>;

// Layer stack ending in logits; the loss is always softmax cross-entropy.
struct ModelSpec {
  Shape input;  // per-sample shape, e.g. {28, 28, 1}
  std::vector<Layer> layers;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

// Per-sample output shape of every layer; throws ConfigError if the stack
// does not compose.
inline std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  if (spec.input.empty() || shape_size(spec.input) == 0) throw ConfigError("model input shape is empty");
  if (spec.layers.empty()) throw ConfigError("model has no layers");
  std::vector<Shape> shapes;
  Shape cur = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto where = [&] { return "layer " + std::to_string(i) + ": "; };
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            if (cur.size() != 1) throw ConfigError(where() + "dense layer needs flat input, got " + shape_str(cur));
            if (cur[0] != l.in)
              throw ConfigError(where() + "dense expects " + std::to_string(l.in) + " inputs, got " +
                                std::to_string(cur[0]));
            if (l.out == 0) throw ConfigError(where() + "dense layer with zero outputs");
            cur = {l.out};
          } else if constexpr (std::is_same_v<T, ConvLayer>) {
            if (cur.size() != 3) throw ConfigError(where() + "conv needs HxWxC input, got " + shape_str(cur));
            if (l.kernel == 0 || l.stride == 0 || l.channels == 0)
              throw ConfigError(where() + "conv kernel/stride/channels must be positive");
            if (cur[0] < l.kernel || cur[1] < l.kernel)
              throw ConfigError(where() + "conv kernel larger than input " + shape_str(cur));
            cur = {(cur[0] - l.kernel) / l.stride + 1, (cur[1] - l.kernel) / l.stride + 1, l.channels};
          } else if constexpr (std::is_same_v<T, AvgPoolLayer>) {
            if (cur.size() != 3 || cur[0] < 2 || cur[1] < 2)
              throw ConfigError(where() + "avgpool needs HxWxC input with H,W >= 2, got " + shape_str(cur));
            cur = {cur[0] / 2, cur[1] / 2, cur[2]};
          } else if constexpr (std::is_same_v<T, FlattenLayer>) {
            cur = {shape_size(cur)};
          } else if constexpr (std::is_same_v<T, DropoutLayer>) {
            if (!(l.rate >= 0.0 && l.rate < 1.0)) throw ConfigError(where() + "dropout rate must be in [0,1)");
          }
        },
        spec.layers[i]);
    shapes.push_back(cur);
  }
  if (shapes.back().size() != 1) throw ConfigError("model output must be flat logits");
  return shapes;
}

inline std::size_t n_classes(const ModelSpec& spec) { return infer_shapes(spec).back()[0]; }

// ---------------------------------------------------------------------------
// Parameter layout

struct ParamEntry {
  std::size_t layer = 0;
  std::string name;  // "kernel" or "bias"
  Shape shape;
  std::size_t offset = 0;
  std::size_t size() const { return shape_size(shape); }
  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Ordered (layer, name, shape) index. Dense kernels are stored out x in so
// that unit i's incoming weights are one contiguous row; conv kernels are
// channels x k x k x in_channels.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(std::vector<ParamEntry> entries) : entries_(std::move(entries)) {
    total_ = 0;
    for (auto& e : entries_) {
      e.offset = total_;
      total_ += e.size();
    }
  }

  static std::shared_ptr<const ParamLayout> of(const ModelSpec& spec) {
    const auto shapes = infer_shapes(spec);
    std::vector<ParamEntry> entries;
    Shape prev = spec.input;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      if (const auto* d = std::get_if<DenseLayer>(&spec.layers[i])) {
        entries.push_back({i, "kernel", {d->out, d->in}, 0});
        entries.push_back({i, "bias", {d->out}, 0});
      } else if (const auto* c = std::get_if<ConvLayer>(&spec.layers[i])) {
        entries.push_back({i, "kernel", {c->channels, c->kernel, c->kernel, prev[2]}, 0});
        entries.push_back({i, "bias", {c->channels}, 0});
      }
      prev = shapes[i];
    }
    return std::make_shared<const ParamLayout>(std::move(entries));
  }

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::size_t total() const noexcept { return total_; }

  // First entry for a layer with the given name, if any.
  const ParamEntry* find(std::size_t layer, std::string_view name) const {
    for (const auto& e : entries_)
      if (e.layer == layer && e.name == name) return &e;
    return nullptr;
  }

  friend bool operator==(const ParamLayout& a, const ParamLayout& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

// Flat, ordered view of all model parameters. The unit of exchange,
// aggregation and byte accounting.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::shared_ptr<const ParamLayout> layout, double fill = 0.0)
      : layout_(std::move(layout)), values_(layout_ ? layout_->total() : 0, fill) {}
  ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values)
      : layout_(std::move(layout)), values_(std::move(values)) {
    if (!layout_ || layout_->total() != values_.size())
      throw ConfigError("parameter vector length " + std::to_string(values_.size()) + " does not match layout");
  }

  const std::shared_ptr<const ParamLayout>& layout_ptr() const noexcept { return layout_; }
  const ParamLayout& layout() const { return *layout_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& raw() noexcept { return values_; }
  const std::vector<double>& raw() const noexcept { return values_; }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> slice(const ParamEntry& e) { return {values_.data() + e.offset, e.size()}; }
  std::span<const double> slice(const ParamEntry& e) const { return {values_.data() + e.offset, e.size()}; }

  bool same_layout(const ParamVector& other) const {
    if (layout_ == other.layout_) return true;
    return layout_ && other.layout_ && *layout_ == *other.layout_;
  }

  bool all_finite() const noexcept {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Bitwise equality of values plus layout equality.
  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.same_layout(b) && a.values_ == b.values_;
  }

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> values_;
};

inline void require_same_layout(const ParamVector& a, const ParamVector& b, std::string_view what) {
  if (!a.same_layout(b)) throw ConfigError(std::string(what) + ": parameter layouts differ");
}

// Structured (per-entry tensors) <-> flat conversion.
inline std::vector<Tensor> unflatten_params(const ModelSpec& spec, const ParamVector& params) {
  const auto layout = ParamLayout::of(spec);
  if (!(*layout == params.layout())) throw ConfigError("unflatten: parameter layout does not match spec");
  std::vector<Tensor> out;
  for (const auto& e : layout->entries()) {
    auto s = params.slice(e);
    out.emplace_back(e.shape, std::vector<double>(s.begin(), s.end()));
  }
  return out;
}

inline ParamVector flatten_params(const ModelSpec& spec, const std::vector<Tensor>& tensors) {
  auto layout = ParamLayout::of(spec);
  if (tensors.size() != layout->entries().size())
    throw ConfigError("flatten: expected " + std::to_string(layout->entries().size()) + " tensors");
  std::vector<double> values;
  values.reserve(layout->total());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].shape() != layout->entries()[i].shape)
      throw ConfigError("flatten: tensor " + std::to_string(i) + " has shape " + shape_str(tensors[i].shape()));
    values.insert(values.end(), tensors[i].values().begin(), tensors[i].values().end());
  }
  return ParamVector(std::move(layout), std::move(values));
}

// Glorot-uniform kernels, zero biases. Each layer draws from its own stream
// so editing one layer leaves the others' initial values unchanged.
inline ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector p(ParamLayout::of(spec));
  for (const auto& e : p.layout().entries()) {
    if (e.name != "kernel") continue;
    double fan_in = 0, fan_out = 0;
    if (e.shape.size() == 2) {
      fan_out = static_cast<double>(e.shape[0]);
      fan_in = static_cast<double>(e.shape[1]);
    } else {
      const double receptive = static_cast<double>(e.shape[1] * e.shape[2]);
      fan_out = static_cast<double>(e.shape[0]) * receptive;
      fan_in = static_cast<double>(e.shape[3]) * receptive;
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    auto rng = Rng::stream(seed, "init", e.layer);
    for (double& v : p.slice(e)) v = rng.uniform(-limit, limit);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Spec utilities

// Replaces activations so the network is smooth enough for gradient
// inversion: relu becomes sigmoid in dense layers and linear in conv layers.
inline ModelSpec twice_differentiable(ModelSpec spec) {
  for (auto& layer : spec.layers) {
    if (auto* d = std::get_if<DenseLayer>(&layer); d && d->activation == Activation::relu)
      d->activation = Activation::sigmoid;
    if (auto* c = std::get_if<ConvLayer>(&layer); c && c->activation == Activation::relu)
      c->activation = Activation::linear;
  }
  return spec;
}

inline ModelSpec without_dropout(ModelSpec spec) {
  std::erase_if(spec.layers, [](const Layer& l) { return std::holds_alternative<DropoutLayer>(l); });
  return spec;
}

// flatten -> [dense(hidden) -> dropout]* -> dense(n_classes, linear)
inline ModelSpec make_mlp(Shape input, std::vector<std::size_t> hidden, std::size_t classes,
                          Activation activation = Activation::relu, double dropout = 0.0) {
  ModelSpec spec{std::move(input), {FlattenLayer{}}};
  std::size_t in = shape_size(spec.input);
  for (std::size_t h : hidden) {
    spec.layers.push_back(DenseLayer{in, h, activation});
    if (dropout > 0.0) spec.layers.push_back(DropoutLayer{dropout});
    in = h;
  }
  spec.layers.push_back(DenseLayer{in, classes, Activation::linear});
  return spec;
}

// Small LeNet-like network: conv5 -> pool -> conv5 -> pool -> dense.
inline ModelSpec make_lenet_lite(Shape input, std::size_t classes, Activation activation = Activation::relu) {
  ModelSpec spec{std::move(input), {}};
  spec.layers.push_back(ConvLayer{6, 5, 1, activation});
  spec.layers.push_back(AvgPoolLayer{});
  spec.layers.push_back(ConvLayer{16, 5, 1, activation});
  spec.layers.push_back(AvgPoolLayer{});
  spec.layers.push_back(FlattenLayer{});
  const auto shapes = infer_shapes(spec);
  spec.layers.push_back(DenseLayer{shapes.back()[0], 64, activation});
  spec.layers.push_back(DenseLayer{64, classes, Activation::linear});
  return spec;
}

// Canonical text form, e.g.
//   input=28x28x1; flatten; dense(784,64,relu); dropout(0.2); dense(64,10,linear)
inline std::string to_string(const ModelSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "input=";
  for (std::size_t i = 0; i < spec.input.size(); ++i) os << (i ? "x" : "") << spec.input[i];
  for (const auto& layer : spec.layers) {
    os << "; ";
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, DenseLayer>)
            os << "dense(" << l.in << ',' << l.out << ',' << to_string(l.activation) << ')';
          else if constexpr (std::is_same_v<T, ConvLayer>)
            os << "conv(" << l.channels << ',' << l.kernel << ',' << l.stride << ',' << to_string(l.activation) << ')';
          else if constexpr (std::is_same_v<T, AvgPoolLayer>)
            os << "avgpool";
          else if constexpr (std::is_same_v<T, FlattenLayer>)
            os << "flatten";
          else
            os << "dropout(" << l.rate << ')';
        },
        layer);
  }
  return os.str();
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return parts;
}

inline std::size_t parse_size(std::string_view s, std::string_view ctx) {
  std::size_t v = 0;
  if (s.empty()) throw ConfigError("model spec: empty number in " + std::string(ctx));
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw ConfigError("model spec: bad integer '" + std::string(s) + "' in " + std::string(ctx));
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

}  // namespace detail

inline ModelSpec parse_model_spec(std::string_view text) {
  using detail::parse_size;
  ModelSpec spec;
  bool have_input = false;
  for (auto item : detail::split(text, ';')) {
    if (item.empty()) continue;
    if (item.starts_with("input=")) {
      for (auto d : detail::split(item.substr(6), 'x')) spec.input.push_back(parse_size(d, item));
      have_input = true;
      continue;
    }
    const auto open = item.find('(');
    const auto name = detail::trim(item.substr(0, open));
    std::vector<std::string_view> args;
    if (open != std::string_view::npos) {
      if (item.back() != ')') throw ConfigError("model spec: missing ')' in '" + std::string(item) + "'");
      args = detail::split(item.substr(open + 1, item.size() - open - 2), ',');
    }
    const auto need = [&](std::size_t n) {
      if (args.size() != n)
        throw ConfigError("model spec: '" + std::string(name) + "' takes " + std::to_string(n) + " arguments");
    };
    if (name == "dense") {
      need(3);
      spec.layers.push_back(DenseLayer{parse_size(args[0], item), parse_size(args[1], item), parse_activation(args[2])});
    } else if (name == "conv") {
      need(4);
      spec.layers.push_back(ConvLayer{parse_size(args[0], item), parse_size(args[1], item), parse_size(args[2], item),
                                      parse_activation(args[3])});
    } else if (name == "avgpool") {
      need(0);
      spec.layers.push_back(AvgPoolLayer{});
    } else if (name == "flatten") {
      need(0);
      spec.layers.push_back(FlattenLayer{});
    } else if (name == "dropout") {
      need(1);
      try {
        spec.layers.push_back(DropoutLayer{std::stod(std::string(args[0]))});
      } catch (const std::logic_error&) {
        throw ConfigError("model spec: bad dropout rate '" + std::string(args[0]) + "'");
      }
    } else {
      throw ConfigError("model spec: unknown layer '" + std::string(name) + "'");
    }
  }
  if (!have_input) throw ConfigError("model spec: missing input=HxWxC");
  infer_shapes(spec);
  return spec;
}

}  // namespace fedbench
