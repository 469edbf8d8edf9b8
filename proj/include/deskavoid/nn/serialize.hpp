#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "deskavoid/codec.hpp"
#include "deskavoid/nn/network.hpp"

namespace deskavoid::nn {

using nlohmann::json;

namespace detail {

inline json tensor_to_json(const std::string& name, const Tensor& t) {
  const auto bytes = floats_to_le_bytes(t.data);
  return {{"name", name}, {"shape", t.shape}, {"data", base64_encode(bytes)}};
}

inline Tensor tensor_from_json(const json& j, const std::vector<int>& expected, const std::string& name) {
  if (j.at("name").get<std::string>() != name) {
    throw ValidationError("weights: expected tensor '" + name + "', found '" + j.at("name").get<std::string>() + "'");
  }
  auto shape = j.at("shape").get<std::vector<int>>();
  if (shape != expected) {
    throw ValidationError("weights: tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                          shape_string(expected));
  }
  return Tensor(std::move(shape), le_bytes_to_floats(base64_decode(j.at("data").get<std::string>())));
}

}  // namespace detail

inline json layer_spec_to_json(const Layer& layer) {
  return std::visit(
      [](const auto& l) -> json {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Dense>) return {{"type", "dense"}, {"in", l.in}, {"out", l.out}};
        if constexpr (std::is_same_v<L, Conv2d>) {
          return {{"type", "conv"}, {"in_ch", l.in_ch}, {"out_ch", l.out_ch}, {"kernel", l.kernel}, {"stride", l.stride}};
        }
        if constexpr (std::is_same_v<L, ConvTranspose2d>) {
          return {{"type", "conv_transpose"}, {"in_ch", l.in_ch},    {"out_ch", l.out_ch},
                  {"kernel", l.kernel},       {"stride", l.stride},  {"padding", l.padding},
                  {"output_padding", l.output_padding}};
        }
        if constexpr (std::is_same_v<L, BatchNorm>) {
          return {{"type", "batch_norm"}, {"features", l.features}, {"momentum", l.momentum}, {"eps", l.eps}};
        }
        if constexpr (std::is_same_v<L, ReluT<float>>) return {{"type", "relu"}};
        if constexpr (std::is_same_v<L, TanhT<float>>) return {{"type", "tanh"}};
        if constexpr (std::is_same_v<L, SigmoidT<float>>) return {{"type", "sigmoid"}};
        if constexpr (std::is_same_v<L, ReshapeT<float>>) return {{"type", "reshape"}, {"shape", l.shape}};
      },
      layer);
}

inline Layer layer_spec_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "dense") return dense(j.at("in"), j.at("out"));
  if (type == "conv") return conv(j.at("in_ch"), j.at("out_ch"), j.at("kernel"), j.at("stride"));
  if (type == "conv_transpose") {
    return conv_transpose(j.at("in_ch"), j.at("out_ch"), j.at("kernel"), j.at("stride"), j.at("padding"),
                          j.at("output_padding"));
  }
  if (type == "batch_norm") return batch_norm(j.at("features"), j.at("momentum"), j.at("eps"));
  if (type == "relu") return relu();
  if (type == "tanh") return tanh_layer();
  if (type == "sigmoid") return sigmoid();
  if (type == "reshape") return reshape(j.at("shape").get<std::vector<int>>());
  throw ValidationError("unknown layer type '" + type + "'");
}

/// Manifest of layer specs plus base64 little-endian float32 tensors in layer order.
/// Batch-norm running statistics are stored after gamma and beta.
inline json network_to_json(const Network& net) {
  json layers = json::array();
  json tensors = json::array();
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& layer = net.layers()[i];
    layers.push_back(layer_spec_to_json(layer));
    const std::string p = std::to_string(i) + ".";
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, BatchNorm>) {
            tensors.push_back(detail::tensor_to_json(p + "gamma", l.gamma));
            tensors.push_back(detail::tensor_to_json(p + "beta", l.beta));
            tensors.push_back(detail::tensor_to_json(p + "running_mean", l.running_mean));
            tensors.push_back(detail::tensor_to_json(p + "running_var", l.running_var));
          } else if constexpr (nn::detail::has_params<L>) {
            tensors.push_back(detail::tensor_to_json(p + "weight", l.weight));
            tensors.push_back(detail::tensor_to_json(p + "bias", l.bias));
          }
        },
        layer);
  }
  return {{"format", "deskavoid-weights-v1"}, {"input_shape", net.input_shape()}, {"layers", layers},
          {"tensors", tensors}};
}

inline Network network_from_json(const json& j) {
  try {
    std::vector<Layer> layers;
    for (const auto& spec : j.at("layers")) layers.push_back(layer_spec_from_json(spec));
    Rng rng(0);
    Network shaped(j.at("input_shape").get<std::vector<int>>(), std::move(layers), rng);
    const auto& tensors = j.at("tensors");
    std::size_t k = 0;
    const auto next = [&](const std::string& name, const Tensor& like) {
      if (k >= tensors.size()) throw ValidationError("weights: missing tensor '" + name + "'");
      return detail::tensor_from_json(tensors[k++], like.shape, name);
    };
    for (std::size_t i = 0; i < shaped.layers().size(); ++i) {
      const std::string p = std::to_string(i) + ".";
      std::visit(
          [&](auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, BatchNorm>) {
              l.gamma = next(p + "gamma", l.gamma);
              l.beta = next(p + "beta", l.beta);
              l.running_mean = next(p + "running_mean", l.running_mean);
              l.running_var = next(p + "running_var", l.running_var);
            } else if constexpr (nn::detail::has_params<L>) {
              l.weight = next(p + "weight", l.weight);
              l.bias = next(p + "bias", l.bias);
            }
          },
          shaped.layers()[i]);
    }
    if (k != tensors.size()) throw ValidationError("weights: unexpected extra tensors");
    return shaped;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed weights: ") + e.what());
  }
}

inline void save_network(const std::string& path, const Network& net) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path);
  out << network_to_json(net).dump() << '\n';
}

inline Network load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open weights file " + path);
  return network_from_json(json::parse(in));
}

}  // namespace deskavoid::nn
