// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "binary_io.hpp"
#include "hdcnn/errors.hpp"

namespace hdcnn {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string where(std::string_view section, std::string_view key) {
  return "[" + std::string(section) + "] " + std::string(key);
}

double to_double(std::string_view text, const std::string& what) {
  const std::string_view t = trim(text);
  if (t == "inf" || t == "infinity") return std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || std::isnan(v))
    throw InputError(what + ": \"" + std::string(t) + "\" is not a number");
  return v;
}

std::uint64_t to_uint(std::string_view text, const std::string& what) {
  const std::string_view t = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw InputError(what + ": \"" + std::string(t) + "\" is not a non-negative integer");
  return v;
}

bool to_bool(std::string_view text, const std::string& what) {
  const std::string_view t = trim(text);
  if (t == "true" || t == "yes" || t == "1" || t == "on") return true;
  if (t == "false" || t == "no" || t == "0" || t == "off") return false;
  throw InputError(what + ": \"" + std::string(t) + "\" is not a boolean");
}

}  // namespace

IniFile IniFile::parse(std::string_view text) {
  IniFile ini;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw InputError("config line " + std::to_string(line_no) + ": unterminated section");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) throw InputError("config line " + std::to_string(line_no) + ": empty section name");
      ini.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw InputError("config line " + std::to_string(line_no) + ": expected key = value");
    if (section.empty()) throw InputError("config line " + std::to_string(line_no) + ": key outside any section");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw InputError("config line " + std::to_string(line_no) + ": empty key");
    auto& keys = ini.sections_[section];
    if (keys.count(key)) throw InputError("config line " + std::to_string(line_no) + ": duplicate key " + key);
    keys[key] = std::string(trim(line.substr(eq + 1)));
  }
  return ini;
}

IniFile IniFile::load(const std::filesystem::path& path) { return parse(detail::read_file(path)); }

bool IniFile::has(const std::string& section, const std::string& key) const { return get(section, key).has_value(); }

std::optional<std::string> IniFile::get(const std::string& section, const std::string& key) const {
  const auto s = sections_.find(section);
  if (s == sections_.end()) return std::nullopt;
  const auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

void IniFile::set(const std::string& section, const std::string& key, std::string value) {
  sections_[section][key] = std::move(value);
}

std::vector<double> parse_double_list(std::string_view text) {
  std::vector<double> out;
  while (true) {
    const auto comma = text.find(',');
    const std::string_view item = trim(text.substr(0, comma));
    if (item.empty()) throw InputError("empty entry in list \"" + std::string(text) + "\"");
    out.push_back(to_double(item, "list entry"));
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  return out;
}

NetworkSpec default_block_spec(std::size_t channels, std::size_t num_classes, std::size_t input_size) {
  if (input_size % 4 != 0) throw InputError("default network input size must be a multiple of 4");
  NetworkSpec spec;
  spec.input = {channels, input_size, input_size};
  const std::size_t flat = 16 * (input_size / 4) * (input_size / 4);
  spec.layers = {LayerSpec::conv2d(channels, 8, 5, 1, 2), LayerSpec::relu(),    LayerSpec::maxpool(2, 2),
                 LayerSpec::conv2d(8, 16, 3, 1, 1),       LayerSpec::relu(),    LayerSpec::maxpool(2, 2),
                 LayerSpec::flatten(),                    LayerSpec::fully_connected(flat, num_classes),
                 LayerSpec::softmax()};
  spec.split_index = 3;
  spec.validate();
  return spec;
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.synth.noise = 1.0;
  c.block.batch_size = 64;
  c.block.epochs = 20;
  c.block.schedule = {0.01, 10.0, 500};
  c.block.crop = 28;
  c.block.flip = true;
  c.block.log_every = 50;
  c.fine = c.block;
  c.fine.epochs = 20;
  c.fine.schedule = {0.01, 10.0, 150};
  c.finetune = c.block;
  c.finetune.epochs = 3;
  c.finetune.schedule = {0.001, 10.0, 0};
  c.finetune.lambda = kDefaultConsistencyWeight;
  return c;
}

void ExperimentConfig::validate() const {
  if (train_path.has_value() != test_path.has_value())
    throw InputError("[data] needs both train and test paths, or neither");
  if (!train_path) synth.validate();
  for (const auto& p : {train_path, test_path, spec_path})
    if (p && !std::filesystem::exists(*p)) throw InputError("file " + p->string() + " does not exist");
  if (num_coarse == 0) throw InputError("[hierarchy] K must be at least 1");
  if (!train_path && num_coarse > synth.num_classes()) throw InputError("[hierarchy] K exceeds the class count");
  if (!(gamma > 0.0)) throw InputError("[hierarchy] gamma must be positive");
  if (per_class_heldout == 0) throw InputError("[hierarchy] per_class_heldout must be positive");
  block.validate();
  fine.validate();
  finetune.validate();
  for (double b : betas)
    if (!(b > 0.0)) throw InputError("[runtime] betas must be positive");
  if (pq_s == 0 || pq_k == 0) throw InputError("[runtime] pq_s and pq_k must be positive");
  if (averaging_models == 0) throw InputError("[baselines] averaging_models must be at least 1");
  if (workers == 0) throw InputError("workers must be at least 1");
}

ExperimentConfig parse_experiment_config(const IniFile& ini, const std::filesystem::path& base_dir) {
  ExperimentConfig c = default_experiment_config();
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto path_of = [&](const std::string& v) {
    const std::filesystem::path p(v);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  auto train_keys = [](TrainConfig& t) {
    return std::map<std::string, Setter>{
        {"batch_size", [&t](auto& w, auto& v) { t.batch_size = to_uint(v, w); }},
        {"epochs", [&t](auto& w, auto& v) { t.epochs = to_uint(v, w); }},
        {"lr", [&t](auto& w, auto& v) { t.schedule.initial_lr = to_double(v, w); }},
        {"lr_drop_factor", [&t](auto& w, auto& v) { t.schedule.drop_factor = to_double(v, w); }},
        {"lr_drop_every", [&t](auto& w, auto& v) { t.schedule.drop_every = static_cast<long>(to_uint(v, w)); }},
        {"momentum", [&t](auto& w, auto& v) { t.momentum = to_double(v, w); }},
        {"weight_decay", [&t](auto& w, auto& v) { t.weight_decay = to_double(v, w); }},
        {"lambda", [&t](auto& w, auto& v) { t.lambda = to_double(v, w); }},
        {"crop", [&t](auto& w, auto& v) { t.crop = to_uint(v, w); }},
        {"flip", [&t](auto& w, auto& v) { t.flip = to_bool(v, w); }},
        {"log_every", [&t](auto& w, auto& v) { t.log_every = to_uint(v, w); }},
    };
  };
  std::map<std::string, std::map<std::string, Setter>> schema{
      {"data",
       {{"train", [&](auto&, auto& v) { c.train_path = path_of(v); }},
        {"test", [&](auto&, auto& v) { c.test_path = path_of(v); }},
        {"groups", [&](auto& w, auto& v) { c.synth.groups = to_uint(v, w); }},
        {"fine_per_group", [&](auto& w, auto& v) { c.synth.fine_per_group = to_uint(v, w); }},
        {"height", [&](auto& w, auto& v) { c.synth.height = to_uint(v, w); }},
        {"width", [&](auto& w, auto& v) { c.synth.width = to_uint(v, w); }},
        {"channels", [&](auto& w, auto& v) { c.synth.channels = to_uint(v, w); }},
        {"similarity", [&](auto& w, auto& v) { c.synth.similarity = to_double(v, w); }},
        {"noise", [&](auto& w, auto& v) { c.synth.noise = to_double(v, w); }},
        {"max_shift", [&](auto& w, auto& v) { c.synth.max_shift = to_uint(v, w); }},
        {"train_per_class", [&](auto& w, auto& v) { c.synth.train_per_class = to_uint(v, w); }},
        {"test_per_class", [&](auto& w, auto& v) { c.synth.test_per_class = to_uint(v, w); }}}},
      {"model",
       {{"spec", [&](auto&, auto& v) { c.spec_path = path_of(v); }},
        {"split_index", [&](auto& w, auto& v) { c.split_index = to_uint(v, w); }},
        {"input_size", [&](auto& w, auto& v) { c.input_size = to_uint(v, w); }}}},
      {"hierarchy",
       {{"K", [&](auto& w, auto& v) { c.num_coarse = to_uint(v, w); }},
        {"gamma", [&](auto& w, auto& v) { c.gamma = to_double(v, w); }},
        {"per_class_heldout", [&](auto& w, auto& v) { c.per_class_heldout = to_uint(v, w); }}}},
      {"train.block", train_keys(c.block)},
      {"train.fine", train_keys(c.fine)},
      {"train.finetune", train_keys(c.finetune)},
      {"runtime",
       {{"betas", [&](auto&, auto& v) { c.betas = parse_double_list(v); }},
        {"pq_s", [&](auto& w, auto& v) { c.pq_s = to_uint(v, w); }},
        {"pq_k", [&](auto& w, auto& v) { c.pq_k = to_uint(v, w); }},
        {"ten_view", [&](auto& w, auto& v) { c.ten_view = to_bool(v, w); }}}},
      {"baselines",
       {{"averaging_models", [&](auto& w, auto& v) { c.averaging_models = to_uint(v, w); }},
        {"doubled_width", [&](auto& w, auto& v) { c.doubled_width = to_bool(v, w); }}}},
      {"seed", {{"seed", [&](auto& w, auto& v) { c.seed = to_uint(v, w); }}}},
  };
  schema["train.finetune"]["enabled"] = [&](auto& w, auto& v) { c.finetune_enabled = to_bool(v, w); };

  for (const auto& [section, keys] : ini.sections()) {
    const auto s = schema.find(section);
    if (s == schema.end()) throw InputError("unknown config section [" + section + "]");
    for (const auto& [key, value] : keys) {
      const auto k = s->second.find(key);
      if (k == s->second.end()) throw InputError("unknown config key " + where(section, key));
      k->second(where(section, key), value);
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(IniFile::load(path), path.parent_path());
}

}  // namespace hdcnn
