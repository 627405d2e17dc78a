// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hdcnn/rng.hpp"
#include "hdcnn/trainer.hpp"

namespace hdcnn {

/// 8-bit images stored row-major as N x H x W x Ch with 1-based labels.
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t num_classes = 0;
  std::vector<std::uint16_t> labels;  // in [1, num_classes]
  std::vector<std::uint8_t> pixels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return height * width * channels; }
  std::vector<std::size_t> class_sizes() const;
  /// Throws InputError when a label is out of range or the pixel count is
  /// wrong. `require_all_classes` also rejects empty classes.
  void validate(bool require_all_classes = false) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

std::string encode_dataset(const Dataset& d);
Dataset decode_dataset(std::string_view bytes);
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

struct SynthSpec {
  std::size_t groups = 4;
  std::size_t fine_per_group = 4;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  double similarity = 0.8;  // weight of the shared group pattern
  double noise = 0.5;       // pixel noise standard deviation, in pattern units
  std::size_t max_shift = 2;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;

  std::size_t num_classes() const { return groups * fine_per_group; }
  void validate() const;
};

struct SynthData {
  Dataset train;
  Dataset test;
};

/// Every group has a base pattern and every class a pattern of its own. An
/// image is similarity * base + (1 - similarity) * class pattern, circularly
/// shifted by up to max_shift pixels, plus Gaussian noise. Classes in group g
/// are labels g*f + 1 .. g*f + f.
SynthData synth_dataset(const SynthSpec& spec, Rng& rng);

/// Per-channel mean and standard deviation of a dataset's pixels.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

Normalization fit_normalization(const Dataset& d);

/// [N, Ch, H, W] standardized images with 0-based labels.
LabeledImages to_labeled_images(const Dataset& d, const Normalization& norm);

}  // namespace hdcnn
