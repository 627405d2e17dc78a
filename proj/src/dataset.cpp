// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "binary_io.hpp"
#include "hdcnn/errors.hpp"

namespace hdcnn {

namespace {

constexpr std::string_view kDatasetMagic = "HDC1";
constexpr std::size_t kGratingsPerPattern = 3;
constexpr double kPixelScale = 40.0;
constexpr double kPixelOffset = 128.0;

}  // namespace

std::vector<std::size_t> Dataset::class_sizes() const {
  std::vector<std::size_t> sizes(num_classes, 0);
  for (std::uint16_t y : labels) {
    if (y < 1 || y > num_classes) throw InputError("label " + std::to_string(y) + " outside [1, C]");
    ++sizes[y - 1u];
  }
  return sizes;
}

void Dataset::validate(bool require_all_classes) const {
  if (pixels.size() != size() * image_bytes()) throw InputError("pixel count does not match N x H x W x Ch");
  const auto sizes = class_sizes();
  if (require_all_classes) {
    for (std::size_t j = 0; j < sizes.size(); ++j)
      if (sizes[j] == 0) throw InputError("class " + std::to_string(j + 1) + " has no images");
  }
}

std::string encode_dataset(const Dataset& d) {
  d.validate();
  detail::ByteWriter w;
  w.magic(kDatasetMagic);
  for (std::size_t v : {d.size(), d.height, d.width, d.channels, d.num_classes}) w.u32(static_cast<std::uint32_t>(v));
  for (std::uint16_t y : d.labels) w.u16(y);
  w.bytes(d.pixels.data(), d.pixels.size());
  return w.take();
}

Dataset decode_dataset(std::string_view bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kDatasetMagic);
  Dataset d;
  const std::size_t n = r.u32("image count");
  d.height = r.u32("height");
  d.width = r.u32("width");
  d.channels = r.u32("channels");
  d.num_classes = r.u32("class count");
  if (d.num_classes == 0) throw ParseError("class count is zero", r.offset() - 4);
  r.need(2 * n, "label table");
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    d.labels[i] = r.u16("label table");
    if (d.labels[i] < 1 || d.labels[i] > d.num_classes) {
      throw ParseError("label " + std::to_string(d.labels[i]) + " outside [1, " + std::to_string(d.num_classes) + "]",
                       at);
    }
  }
  const std::size_t payload = n * d.image_bytes();
  const std::string_view px = r.take(payload, "pixel payload");
  d.pixels.assign(px.begin(), px.end());
  if (!r.done()) throw ParseError("trailing bytes after pixel payload", r.offset());
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) { detail::write_file(path, encode_dataset(d)); }

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(detail::read_file(path)); }

void SynthSpec::validate() const {
  if (groups == 0 || fine_per_group == 0) throw InputError("synthetic data needs at least one group and class");
  if (height == 0 || width == 0 || channels == 0) throw InputError("synthetic image size must be positive");
  if (!(similarity >= 0.0 && similarity <= 1.0)) throw InputError("similarity must lie in [0, 1]");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw InputError("noise must be finite and non-negative");
  if (num_classes() > 65535) throw InputError("too many classes for 16-bit labels");
  if (train_per_class == 0) throw InputError("every class needs training images");
}

namespace {

// Sum of random sinusoidal gratings, scaled to unit RMS. [Ch, H, W].
std::vector<double> random_pattern(const SynthSpec& spec, Rng& rng) {
  const std::size_t h = spec.height, w = spec.width, ch = spec.channels;
  std::vector<double> p(ch * h * w, 0.0);
  for (std::size_t g = 0; g < kGratingsPerPattern; ++g) {
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double freq = rng.uniform(1.5, 6.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double fy = freq * std::sin(angle) / static_cast<double>(h);
    const double fx = freq * std::cos(angle) / static_cast<double>(w);
    for (std::size_t c = 0; c < ch; ++c) {
      const double gain = rng.uniform(0.5, 1.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          p[(c * h + y) * w + x] +=
              gain * std::sin(2.0 * std::numbers::pi * (fy * static_cast<double>(y) + fx * static_cast<double>(x)) + phase);
    }
  }
  double ss = 0.0;
  for (double v : p) ss += v * v;
  const double rms = std::sqrt(ss / static_cast<double>(p.size()));
  if (rms > 0.0)
    for (double& v : p) v /= rms;
  return p;
}

void append_sample(Dataset& d, const SynthSpec& spec, const std::vector<double>& pattern, std::uint16_t label,
                   Rng& rng) {
  const std::size_t h = spec.height, w = spec.width, ch = spec.channels;
  const std::size_t span = 2 * spec.max_shift + 1;
  const std::size_t dy = static_cast<std::size_t>(rng.below(span)), dx = static_cast<std::size_t>(rng.below(span));
  const std::size_t oy = (dy + h * span - spec.max_shift) % h, ox = (dx + w * span - spec.max_shift) % w;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < ch; ++c) {
        double v = pattern[(c * h + (y + oy) % h) * w + (x + ox) % w];
        if (spec.noise > 0.0) v += spec.noise * rng.normal();
        const double px = std::round(kPixelOffset + kPixelScale * v);
        d.pixels.push_back(static_cast<std::uint8_t>(std::clamp(px, 0.0, 255.0)));
      }
    }
  }
  d.labels.push_back(label);
}

}  // namespace

SynthData synth_dataset(const SynthSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t c = spec.num_classes();
  std::vector<std::vector<double>> mixed(c);
  for (std::size_t g = 0; g < spec.groups; ++g) {
    const std::vector<double> base = random_pattern(spec, rng);
    for (std::size_t f = 0; f < spec.fine_per_group; ++f) {
      const std::vector<double> own = random_pattern(spec, rng);
      auto& m = mixed[g * spec.fine_per_group + f];
      m.resize(base.size());
      for (std::size_t i = 0; i < base.size(); ++i) m[i] = spec.similarity * base[i] + (1.0 - spec.similarity) * own[i];
    }
  }
  SynthData out;
  for (Dataset* d : {&out.train, &out.test}) {
    d->height = spec.height;
    d->width = spec.width;
    d->channels = spec.channels;
    d->num_classes = c;
  }
  Rng train_rng = rng.substream(1), test_rng = rng.substream(2);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < spec.train_per_class; ++i)
      append_sample(out.train, spec, mixed[j], static_cast<std::uint16_t>(j + 1), train_rng);
    for (std::size_t i = 0; i < spec.test_per_class; ++i)
      append_sample(out.test, spec, mixed[j], static_cast<std::uint16_t>(j + 1), test_rng);
  }
  return out;
}

Normalization fit_normalization(const Dataset& d) {
  d.validate();
  if (d.size() == 0) throw InputError("cannot normalize an empty dataset");
  Normalization norm{std::vector<double>(d.channels, 0.0), std::vector<double>(d.channels, 0.0)};
  const std::size_t per_channel = d.size() * d.height * d.width;
  for (std::size_t i = 0; i < d.pixels.size(); ++i) norm.mean[i % d.channels] += d.pixels[i];
  for (double& m : norm.mean) m /= static_cast<double>(per_channel);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    const double t = d.pixels[i] - norm.mean[i % d.channels];
    norm.stddev[i % d.channels] += t * t;
  }
  for (double& s : norm.stddev) {
    s = std::sqrt(s / static_cast<double>(per_channel));
    if (s == 0.0) s = 1.0;
  }
  return norm;
}

LabeledImages to_labeled_images(const Dataset& d, const Normalization& norm) {
  d.validate();
  if (norm.mean.size() != d.channels || norm.stddev.size() != d.channels)
    throw InputError("normalization channel count differs from the dataset");
  const std::size_t n = d.size(), h = d.height, w = d.width, ch = d.channels;
  LabeledImages out{Tensor({n, ch, h, w}), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = static_cast<int>(d.labels[i]) - 1;
    const std::uint8_t* src = d.pixels.data() + i * d.image_bytes();
    double* dst = out.images.data() + i * ch * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < ch; ++c)
          dst[(c * h + y) * w + x] = (src[(y * w + x) * ch + c] - norm.mean[c]) / norm.stddev[c];
  }
  return out;
}

}  // namespace hdcnn
