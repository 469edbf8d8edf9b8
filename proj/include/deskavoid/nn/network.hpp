#pragma once

#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "deskavoid/nn/layers.hpp"

namespace deskavoid::nn {

/// Parameter gradients, aligned with BasicNetwork::parameters().
template <class T>
using GradientsT = std::vector<BasicTensor<T>>;
using Gradients = GradientsT<float>;

namespace detail {

template <class L>
constexpr bool has_params = requires(L l) { l.initialize(std::declval<Rng&>()); };

template <class L>
std::vector<int> layer_output_shape(const L& layer, const std::vector<int>& in) {
  if constexpr (requires { layer.output_shape(in); }) {
    return layer.output_shape(in);
  } else {
    return in;
  }
}

template <class L>
constexpr bool is_batch_norm = requires(L l) { l.running_mean; };

}  // namespace detail

/// Feed-forward stack of layers with hand-derived gradients.
template <class T>
class BasicNetwork {
 public:
  using Scalar = T;
  using TensorType = BasicTensor<T>;

  struct Cache {
    std::vector<LayerCache<T>> layers;
  };

  BasicNetwork() = default;

  /// Builds and randomly initializes a network; shapes are checked layer by layer.
  BasicNetwork(std::vector<int> input_shape, std::vector<LayerT<T>> layers, Rng& rng)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    for (auto& layer : layers_) {
      std::visit(
          [&](auto& l) {
            if constexpr (detail::has_params<std::decay_t<decltype(l)>>) l.initialize(rng);
          },
          layer);
    }
    output_shape_ = infer_shapes();
  }

  [[nodiscard]] const std::vector<int>& input_shape() const { return input_shape_; }
  [[nodiscard]] const std::vector<int>& output_shape() const { return output_shape_; }
  [[nodiscard]] const std::vector<LayerT<T>>& layers() const { return layers_; }
  [[nodiscard]] std::vector<LayerT<T>>& layers() { return layers_; }

  /// Pure forward pass. Train mode normalizes with batch statistics but leaves the running
  /// statistics alone; commit_batch_stats folds them in.
  TensorType forward(const TensorType& x, Mode mode, Cache* cache = nullptr) const {
    check_input(x);
    Cache scratch;
    Cache& c = cache ? *cache : scratch;
    c.layers.assign(layers_.size(), {});
    TensorType h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = std::visit([&](const auto& l) { return l.forward(h, mode, c.layers[i]); }, layers_[i]);
      if (!cache) c.layers[i] = {};
    }
    return h;
  }

  void commit_batch_stats(const Cache& cache) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (auto* bn = std::get_if<BatchNormT<T>>(&layers_[i])) bn->commit(cache.layers[i]);
    }
  }

  /// Train-mode forward that also updates running statistics.
  TensorType train_forward(const TensorType& x, Cache& cache) {
    TensorType y = forward(x, Mode::train, &cache);
    commit_batch_stats(cache);
    return y;
  }

  [[nodiscard]] TensorType infer(const TensorType& x) const { return forward(x, Mode::eval); }

  /// Accumulates parameter gradients into `grads` (skipped when null); returns the input gradient.
  TensorType backward(const Cache& cache, const TensorType& output_grad, GradientsT<T>* grads) const {
    std::vector<std::size_t> offsets;
    std::size_t k = 0;
    for (const auto& layer : layers_) {
      offsets.push_back(k);
      k += param_count(layer);
    }
    TensorType g = output_grad;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      std::span<TensorType> slot;
      if (grads) slot = std::span<TensorType>(grads->data() + offsets[i], param_count(layers_[i]));
      g = std::visit([&](const auto& l) { return l.backward(cache.layers[i], g, slot); }, layers_[i]);
    }
    return g;
  }

  /// Learned parameters in layer order (weight then bias, or gamma then beta).
  std::vector<TensorType*> parameters() {
    std::vector<TensorType*> out;
    for (auto& layer : layers_) {
      std::visit(
          [&](auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (detail::is_batch_norm<L>) {
              out.push_back(&l.gamma);
              out.push_back(&l.beta);
            } else if constexpr (detail::has_params<L>) {
              out.push_back(&l.weight);
              out.push_back(&l.bias);
            }
          },
          layer);
    }
    return out;
  }

  [[nodiscard]] std::vector<const TensorType*> parameters() const {
    std::vector<const TensorType*> out;
    for (TensorType* t : const_cast<BasicNetwork*>(this)->parameters()) out.push_back(t);
    return out;
  }

  /// Parameters plus batch-norm running statistics, i.e. everything that is serialized.
  std::vector<TensorType*> state() {
    std::vector<TensorType*> out;
    for (auto& layer : layers_) {
      std::visit(
          [&](auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (detail::is_batch_norm<L>) {
              out.insert(out.end(), {&l.gamma, &l.beta, &l.running_mean, &l.running_var});
            } else if constexpr (detail::has_params<L>) {
              out.insert(out.end(), {&l.weight, &l.bias});
            }
          },
          layer);
    }
    return out;
  }

  [[nodiscard]] GradientsT<T> zero_gradients() const {
    GradientsT<T> g;
    for (const TensorType* p : parameters()) g.emplace_back(p->shape);
    return g;
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const TensorType* p : parameters()) n += p->size();
    return n;
  }

  [[nodiscard]] std::size_t batch_norm_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) n += std::holds_alternative<BatchNormT<T>>(layer) ? 1 : 0;
    return n;
  }

  /// Same architecture and values in another scalar type.
  template <class U>
  [[nodiscard]] BasicNetwork<U> cast() const {
    std::vector<LayerT<U>> out;
    for (const auto& layer : layers_) {
      out.push_back(std::visit(
          [](const auto& l) -> LayerT<U> {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, DenseT<T>>) {
              return DenseT<U>{l.in, l.out, l.weight.template cast<U>(), l.bias.template cast<U>()};
            } else if constexpr (std::is_same_v<L, Conv2dT<T>>) {
              return Conv2dT<U>{l.in_ch, l.out_ch, l.kernel, l.stride, l.weight.template cast<U>(),
                                l.bias.template cast<U>()};
            } else if constexpr (std::is_same_v<L, ConvTranspose2dT<T>>) {
              return ConvTranspose2dT<U>{l.in_ch,   l.out_ch,         l.kernel,
                                         l.stride,  l.padding,        l.output_padding,
                                         l.weight.template cast<U>(), l.bias.template cast<U>()};
            } else if constexpr (std::is_same_v<L, BatchNormT<T>>) {
              return BatchNormT<U>{l.features,
                                   l.momentum,
                                   l.eps,
                                   l.gamma.template cast<U>(),
                                   l.beta.template cast<U>(),
                                   l.running_mean.template cast<U>(),
                                   l.running_var.template cast<U>()};
            } else if constexpr (std::is_same_v<L, ReluT<T>>) {
              return ReluT<U>{};
            } else if constexpr (std::is_same_v<L, TanhT<T>>) {
              return TanhT<U>{};
            } else if constexpr (std::is_same_v<L, SigmoidT<T>>) {
              return SigmoidT<U>{};
            } else {
              return ReshapeT<U>{l.shape};
            }
          },
          layer));
    }
    return BasicNetwork<U>::from_layers(input_shape_, std::move(out));
  }

  /// Wraps already-populated layers (deserialization, casting).
  static BasicNetwork from_layers(std::vector<int> input_shape, std::vector<LayerT<T>> layers) {
    BasicNetwork net;
    net.input_shape_ = std::move(input_shape);
    net.layers_ = std::move(layers);
    net.output_shape_ = net.infer_shapes();
    return net;
  }

 private:
  static std::size_t param_count(const LayerT<T>& layer) {
    return std::visit([](const auto& l) -> std::size_t { return detail::has_params<std::decay_t<decltype(l)>> ? 2 : 0; },
                      layer);
  }

  std::vector<int> infer_shapes() const {
    std::vector<int> s = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        s = std::visit([&](const auto& l) { return detail::layer_output_shape(l, s); }, layers_[i]);
      } catch (const ValidationError& e) {
        throw ValidationError("layer " + std::to_string(i) + ": " + e.what());
      }
    }
    return s;
  }

  void check_input(const TensorType& x) const {
    if (x.shape.empty() || std::vector<int>(x.shape.begin() + 1, x.shape.end()) != input_shape_) {
      throw ValidationError("layer 0: input shape " + shape_string(x.shape) + " does not match network input " +
                            shape_string(input_shape_));
    }
  }

  std::vector<int> input_shape_;
  std::vector<int> output_shape_;
  std::vector<LayerT<T>> layers_;
};

using Network = BasicNetwork<float>;

}  // namespace deskavoid::nn
