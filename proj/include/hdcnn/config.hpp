// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hdcnn/dataset.hpp"
#include "hdcnn/network.hpp"
#include "hdcnn/trainer.hpp"

namespace hdcnn {

/// INI text: "[section]" headers, "key = value" lines, '#' comments.
class IniFile {
 public:
  static IniFile parse(std::string_view text);
  static IniFile load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, std::string value);
  const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

/// Building block used when the config names no spec file: two conv + pool
/// stages, one fully-connected layer and softmax on 28x28 crops, split after
/// the first pool.
NetworkSpec default_block_spec(std::size_t channels, std::size_t num_classes, std::size_t input_size = 28);

struct ExperimentConfig {
  // [data]
  std::optional<std::filesystem::path> train_path;
  std::optional<std::filesystem::path> test_path;
  SynthSpec synth;
  // [model]
  std::optional<std::filesystem::path> spec_path;
  std::optional<std::size_t> split_index;  // overrides the spec's split
  std::size_t input_size = 28;             // default spec only
  // [hierarchy]
  std::size_t num_coarse = 4;
  double gamma = 5.0;
  std::size_t per_class_heldout = 20;
  // [train.block], [train.fine], [train.finetune]
  TrainConfig block;
  TrainConfig fine;
  TrainConfig finetune;
  bool finetune_enabled = true;
  // [runtime]
  std::vector<double> betas{1.0, 2.0, 4.0, 8.0, 16.0, std::numeric_limits<double>::infinity()};
  std::size_t pq_s = 4;
  std::size_t pq_k = 4;
  bool ten_view = true;
  // [baselines]
  std::size_t averaging_models = 2;
  bool doubled_width = true;
  // [seed]
  std::uint64_t seed = 1;
  // Not part of the file: set from the command line.
  std::size_t workers = 1;

  void validate() const;
};

/// Unknown sections or keys are rejected. Relative paths resolve against
/// `base_dir`.
ExperimentConfig parse_experiment_config(const IniFile& ini, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig default_experiment_config();

std::vector<double> parse_double_list(std::string_view text);

}  // namespace hdcnn
