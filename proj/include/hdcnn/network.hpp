// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hdcnn/rng.hpp"
#include "hdcnn/tensor.hpp"

namespace hdcnn {

enum class LayerKind { kConv2d, kMaxPool, kAvgPool, kRelu, kFullyConnected, kSoftmax, kFlatten };

std::string_view layer_kind_name(LayerKind kind);

/// One layer of a linear chain. Field use depends on the kind:
///   conv2d          in/out channels, kernel, stride, pad
///   maxpool/avgpool kernel (window), stride
///   fully-connected in/out units
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
                          std::size_t pad = 0) {
    return {LayerKind::kConv2d, in, out, kernel, stride, pad};
  }
  static LayerSpec maxpool(std::size_t kernel, std::size_t stride) {
    return {LayerKind::kMaxPool, 0, 0, kernel, stride, 0};
  }
  static LayerSpec avgpool(std::size_t kernel, std::size_t stride) {
    return {LayerKind::kAvgPool, 0, 0, kernel, stride, 0};
  }
  static LayerSpec relu() { return {LayerKind::kRelu}; }
  static LayerSpec fully_connected(std::size_t in, std::size_t out) {
    return {LayerKind::kFullyConnected, in, out, 0, 1, 0};
  }
  static LayerSpec softmax() { return {LayerKind::kSoftmax}; }
  static LayerSpec flatten() { return {LayerKind::kFlatten}; }

  bool has_params() const { return kind == LayerKind::kConv2d || kind == LayerKind::kFullyConnected; }
  Shape weight_shape() const;
  Shape bias_shape() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Ordered layer chain plus the per-sample input shape. `split_index`
/// separates the shared prefix [0, split_index) from the rear layers.
struct NetworkSpec {
  Shape input;
  std::vector<LayerSpec> layers;
  std::size_t split_index = 0;

  /// Per-sample shape before layer 0 and after every layer (size L+1).
  /// Throws InputError when the chain is not shape-compatible.
  std::vector<Shape> shapes() const;
  void validate() const;
  /// Width of the softmax output, or 0 if the chain does not end in softmax.
  std::size_t label_count() const;
  /// Layers [first, last) with the matching input shape; split_index reset to 0.
  NetworkSpec slice(std::size_t first, std::size_t last) const;
  /// Index of the last parameterized layer (the final classifier).
  std::size_t classifier_index() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

std::string format_spec(const NetworkSpec& spec);
NetworkSpec parse_spec(std::string_view text);
NetworkSpec read_spec_file(const std::filesystem::path& path);
void write_spec_file(const NetworkSpec& spec, const std::filesystem::path& path);

struct LayerParams {
  Tensor weight;
  Tensor bias;
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};
using ParamSet = std::vector<LayerParams>;

ParamSet zeros_like(const ParamSet& params);
void add_into(ParamSet& acc, const ParamSet& g);
void scale_in_place(ParamSet& g, double factor);
bool all_finite(const ParamSet& params);
std::size_t parameter_count(const ParamSet& params);

/// Zero-mean uniform in +-sqrt(6 / fan_in); zero bias.
void init_layer(const LayerSpec& layer, LayerParams& params, Rng& rng);

class Network {
 public:
  Network() = default;
  /// All parameters zero.
  explicit Network(NetworkSpec spec);
  static Network initialized(NetworkSpec spec, Rng& rng);

  const NetworkSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  std::size_t label_count() const { return spec_.label_count(); }
  std::size_t parameter_count() const { return hdcnn::parameter_count(params_); }
  /// Per-sample output shape.
  Shape output_shape() const { return spec_.shapes().back(); }

  /// Sub-chain [first, last) sharing copies of the parameters.
  Network slice(std::size_t first, std::size_t last) const;

  friend bool operator==(const Network&, const Network&) = default;

 private:
  NetworkSpec spec_;
  ParamSet params_;
};

/// Input batch followed by the output of every layer.
struct Activations {
  std::vector<Tensor> values;
  const Tensor& output() const { return values.back(); }
};

Activations forward(const Network& net, const Tensor& batch);
/// Final-layer output only.
Tensor predict(const Network& net, const Tensor& batch);

struct Gradients {
  ParamSet params;
  Tensor input;  // empty unless requested
};

/// Backpropagate `output_grad` (dLoss/dOutput) through the chain.
Gradients backward(const Network& net, const Activations& acts, const Tensor& output_grad,
                   bool want_input_grad = false);

/// Binary parameter checkpoint: "HDW1", then for each tensor of every
/// parameterized layer (weight, then bias): rank u32, dims u32..., f64 payload.
void write_checkpoint(const ParamSet& params, const std::filesystem::path& path);
std::string encode_checkpoint(const ParamSet& params);
/// Load into a network whose spec already fixes every tensor shape.
void read_checkpoint(Network& net, const std::filesystem::path& path);
void decode_checkpoint(Network& net, std::string_view bytes);

}  // namespace hdcnn
