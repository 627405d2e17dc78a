// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hdcnn/conditional.hpp"
#include "hdcnn/model.hpp"
#include "hdcnn/network.hpp"
#include "hdcnn/pq.hpp"
#include "hdcnn/tensor.hpp"

namespace hdcnn {

inline constexpr std::size_t kEvalBatchSize = 50;
inline constexpr std::size_t kViewCount = 10;

/// Crop of `crop` x `crop` at (top, left) from an [N, C, H, W] batch,
/// optionally mirrored left to right.
Tensor crop_batch(const Tensor& batch, std::size_t crop, std::size_t top, std::size_t left, bool flip);
Tensor center_crop(const Tensor& batch, std::size_t crop);

/// The ten test views: the four corner crops and the center crop, each
/// followed by its horizontal reflection.
std::vector<Tensor> ten_views(const Tensor& batch, std::size_t crop);

/// Probabilities [N, C] for a batch and the number of executed fine
/// components per image (empty for plain networks).
struct BatchPrediction {
  Tensor probs;
  std::vector<double> executed;
};
using Predictor = std::function<BatchPrediction(const Tensor& batch)>;

Predictor network_predictor(const Network& net);
/// Mean of the probability vectors of several networks.
Predictor averaged_predictor(std::span<const Network> nets);
Predictor model_predictor(const HdcnnModel& model, const ExecPolicy& policy);

enum class ViewMode { kSingle, kTen };

/// Single view is the center crop; ten views are averaged per image.
BatchPrediction multiview_predict(const Predictor& predictor, const Tensor& batch, std::size_t crop, ViewMode mode);

struct EvalReport {
  double top1_err = 0.0;               // percent
  std::optional<double> top5_err;      // percent, only when C >= 5
  double mean_executed_components = 0.0;
  double wall_time_sec = 0.0;
  std::size_t images = 0;
  std::size_t workers = 1;
  std::size_t parameter_bytes_raw = 0;
  std::size_t parameter_bytes_compressed = 0;
};

/// Rank of `label` when `p` is sorted by decreasing probability with ties
/// broken toward the lower index.
std::size_t label_rank(std::span<const double> p, std::size_t label);

struct EvalOptions {
  ViewMode view = ViewMode::kSingle;
  std::size_t crop = 0;  // 0: network input size equals image size
  std::size_t batch_size = kEvalBatchSize;
  std::size_t workers = 1;
};

/// Runs `predictor` over [N, C, H, W] images in fixed-size batches. Labels
/// are 0-based. Parameter byte counts are left for the caller.
EvalReport evaluate(const Predictor& predictor, const Tensor& images, std::span<const int> labels,
                    const EvalOptions& options);

/// Product quantization of one rear weight matrix. component is -1 for the
/// coarse rear and the fine component id otherwise. name() is
/// "coarse.<layer>" or "fine<component + 1>.<layer>" with the layer counted
/// from 0 within the rear network.
struct QuantizedLayer {
  int component = -1;
  std::size_t layer = 0;  // index into the rear network
  std::uint64_t seed = 0;
  QuantizedMatrix matrix;

  std::string name() const;
};

struct CompressedModel {
  HdcnnModel model;  // rear weights replaced by their reconstructions
  std::vector<QuantizedLayer> layers;
};

/// Rear layer indices of the two largest weight matrices, counted over the
/// coarse rear and all fine components together.
std::vector<std::size_t> largest_rear_layers(const HdcnnModel& model, std::size_t count = 2);

/// Weight matrix of a parameterized layer viewed as [out, fan_in].
Tensor weight_matrix(const LayerParams& params);

/// Quantizes the chosen rear layers of every component with segment width s
/// and k centers; k is lowered to the row count of matrices with fewer rows.
/// Each matrix gets its own seed derived from `seed`.
CompressedModel compress_model(const HdcnnModel& model, std::span<const std::size_t> rear_layers, std::size_t s,
                               std::size_t k, std::uint64_t seed);

/// Copy of `model` with every listed rear matrix replaced by its
/// reconstruction.
HdcnnModel with_quantized(const HdcnnModel& model, std::span<const QuantizedLayer> layers);

/// Bytes of double-precision parameter storage.
std::size_t raw_parameter_bytes(const HdcnnModel& model);
/// Raw bytes with each quantized matrix counted at its encoded size.
std::size_t compressed_parameter_bytes(const CompressedModel& compressed);

}  // namespace hdcnn
