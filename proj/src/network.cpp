// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "hdcnn/errors.hpp"

namespace hdcnn {

namespace {

constexpr std::string_view kCheckpointMagic = "HDW1";

struct KindName {
  LayerKind kind;
  std::string_view name;
};
constexpr KindName kKindNames[] = {
    {LayerKind::kConv2d, "conv2d"},   {LayerKind::kMaxPool, "maxpool"},
    {LayerKind::kAvgPool, "avgpool"}, {LayerKind::kRelu, "relu"},
    {LayerKind::kFullyConnected, "fully-connected"},
    {LayerKind::kSoftmax, "softmax"}, {LayerKind::kFlatten, "flatten"},
};

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

// Copies the receptive fields of one CHW image into a [in*k*k, oh*ow] matrix.
void im2col(const double* img, std::size_t ch, std::size_t h, std::size_t w, const LayerSpec& l,
            std::size_t oh, std::size_t ow, double* col) {
  const std::size_t k = l.kernel;
  const std::size_t pix = oh * ow;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = col + ((c * k + ky) * k + kx) * pix;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long y = static_cast<long>(oy * l.stride + ky) - static_cast<long>(l.pad);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long x = static_cast<long>(ox * l.stride + kx) - static_cast<long>(l.pad);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<long>(h) && x < static_cast<long>(w);
            dst[oy * ow + ox] = inside ? img[(c * h + y) * w + x] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t ch, std::size_t h, std::size_t w, const LayerSpec& l,
            std::size_t oh, std::size_t ow, double* img) {
  const std::size_t k = l.kernel;
  const std::size_t pix = oh * ow;
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* src = col + ((c * k + ky) * k + kx) * pix;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long y = static_cast<long>(oy * l.stride + ky) - static_cast<long>(l.pad);
          if (y < 0 || y >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long x = static_cast<long>(ox * l.stride + kx) - static_cast<long>(l.pad);
            if (x < 0 || x >= static_cast<long>(w)) continue;
            img[(c * h + y) * w + x] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

Shape batch_shape(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void forward_layer(const LayerSpec& l, const LayerParams& p, const Shape& in_shape, const Shape& out_shape,
                   const Tensor& x, Tensor& y) {
  const std::size_t n = x.dim(0);
  const std::size_t in_size = shape_size(in_shape);
  const std::size_t out_size = shape_size(out_shape);
  switch (l.kind) {
    case LayerKind::kConv2d: {
      const std::size_t h = in_shape[1], w = in_shape[2];
      const std::size_t oh = out_shape[1], ow = out_shape[2];
      const std::size_t pix = oh * ow;
      const std::size_t kc = l.in * l.kernel * l.kernel;
      std::vector<double> col(kc * pix);
      for (std::size_t i = 0; i < n; ++i) {
        im2col(x.data() + i * in_size, l.in, h, w, l, oh, ow, col.data());
        double* out = y.data() + i * out_size;
        for (std::size_t oc = 0; oc < l.out; ++oc) {
          double* o = out + oc * pix;
          std::fill_n(o, pix, p.bias[oc]);
          const double* wr = p.weight.data() + oc * kc;
          for (std::size_t q = 0; q < kc; ++q) {
            const double wv = wr[q];
            const double* cr = col.data() + q * pix;
            for (std::size_t j = 0; j < pix; ++j) o[j] += wv * cr[j];
          }
        }
      }
      break;
    }
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool: {
      const bool is_max = l.kind == LayerKind::kMaxPool;
      const std::size_t ch = in_shape[0], h = in_shape[1], w = in_shape[2];
      const std::size_t oh = out_shape[1], ow = out_shape[2];
      const double inv = 1.0 / static_cast<double>(l.kernel * l.kernel);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < ch; ++c) {
          const double* src = x.data() + i * in_size + c * h * w;
          double* dst = y.data() + i * out_size + c * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
              for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                const double* r = src + (oy * l.stride + ky) * w + ox * l.stride;
                for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                  if (is_max) {
                    if (r[kx] > acc) acc = r[kx];
                  } else {
                    acc += r[kx];
                  }
                }
              }
              dst[oy * ow + ox] = is_max ? acc : acc * inv;
            }
          }
        }
      }
      break;
    }
    case LayerKind::kRelu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case LayerKind::kFullyConnected:
      for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data() + i * l.in;
        double* yi = y.data() + i * l.out;
        for (std::size_t o = 0; o < l.out; ++o) {
          const double* wr = p.weight.data() + o * l.in;
          double acc = 0.0;
          for (std::size_t q = 0; q < l.in; ++q) acc += wr[q] * xi[q];
          yi[o] = acc + p.bias[o];
        }
      }
      break;
    case LayerKind::kSoftmax:
      for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data() + i * in_size;
        double* yi = y.data() + i * in_size;
        const double mx = *std::max_element(xi, xi + in_size);
        double sum = 0.0;
        for (std::size_t j = 0; j < in_size; ++j) {
          yi[j] = std::exp(xi[j] - mx);
          sum += yi[j];
        }
        for (std::size_t j = 0; j < in_size; ++j) yi[j] /= sum;
      }
      break;
    case LayerKind::kFlatten:
      std::copy(x.values().begin(), x.values().end(), y.data());
      break;
  }
}

// Computes parameter gradients into `gp` and, when `gx` is non-null, the
// input gradient into `*gx`.
void backward_layer(const LayerSpec& l, const LayerParams& p, const Shape& in_shape, const Shape& out_shape,
                    const Tensor& x, const Tensor& y, const Tensor& gy, LayerParams& gp, Tensor* gx) {
  const std::size_t n = x.dim(0);
  const std::size_t in_size = shape_size(in_shape);
  const std::size_t out_size = shape_size(out_shape);
  switch (l.kind) {
    case LayerKind::kConv2d: {
      const std::size_t h = in_shape[1], w = in_shape[2];
      const std::size_t oh = out_shape[1], ow = out_shape[2];
      const std::size_t pix = oh * ow;
      const std::size_t kc = l.in * l.kernel * l.kernel;
      std::vector<double> col(kc * pix);
      std::vector<double> dcol(gx ? kc * pix : 0);
      for (std::size_t i = 0; i < n; ++i) {
        im2col(x.data() + i * in_size, l.in, h, w, l, oh, ow, col.data());
        const double* g = gy.data() + i * out_size;
        for (std::size_t oc = 0; oc < l.out; ++oc) {
          const double* go = g + oc * pix;
          double bsum = 0.0;
          for (std::size_t j = 0; j < pix; ++j) bsum += go[j];
          gp.bias[oc] += bsum;
          double* gw = gp.weight.data() + oc * kc;
          for (std::size_t q = 0; q < kc; ++q) {
            const double* cr = col.data() + q * pix;
            double acc = 0.0;
            for (std::size_t j = 0; j < pix; ++j) acc += go[j] * cr[j];
            gw[q] += acc;
          }
        }
        if (gx) {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          for (std::size_t oc = 0; oc < l.out; ++oc) {
            const double* go = g + oc * pix;
            const double* wr = p.weight.data() + oc * kc;
            for (std::size_t q = 0; q < kc; ++q) {
              const double wv = wr[q];
              double* dc = dcol.data() + q * pix;
              for (std::size_t j = 0; j < pix; ++j) dc[j] += wv * go[j];
            }
          }
          col2im(dcol.data(), l.in, h, w, l, oh, ow, gx->data() + i * in_size);
        }
      }
      break;
    }
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool: {
      if (!gx) break;
      const bool is_max = l.kind == LayerKind::kMaxPool;
      const std::size_t ch = in_shape[0], h = in_shape[1], w = in_shape[2];
      const std::size_t oh = out_shape[1], ow = out_shape[2];
      const double inv = 1.0 / static_cast<double>(l.kernel * l.kernel);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < ch; ++c) {
          const double* src = x.data() + i * in_size + c * h * w;
          const double* g = gy.data() + i * out_size + c * oh * ow;
          double* dst = gx->data() + i * in_size + c * h * w;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const double go = g[oy * ow + ox];
              if (is_max) {
                // First maximal element in row-major window order wins.
                std::size_t best = (oy * l.stride) * w + ox * l.stride;
                for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                  for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                    const std::size_t idx = (oy * l.stride + ky) * w + ox * l.stride + kx;
                    if (src[idx] > src[best]) best = idx;
                  }
                }
                dst[best] += go;
              } else {
                for (std::size_t ky = 0; ky < l.kernel; ++ky)
                  for (std::size_t kx = 0; kx < l.kernel; ++kx)
                    dst[(oy * l.stride + ky) * w + ox * l.stride + kx] += go * inv;
              }
            }
          }
        }
      }
      break;
    }
    case LayerKind::kRelu:
      if (gx)
        for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] = x[i] > 0.0 ? gy[i] : 0.0;
      break;
    case LayerKind::kFullyConnected:
      for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data() + i * l.in;
        const double* gi = gy.data() + i * l.out;
        for (std::size_t o = 0; o < l.out; ++o) {
          const double go = gi[o];
          gp.bias[o] += go;
          double* gw = gp.weight.data() + o * l.in;
          for (std::size_t q = 0; q < l.in; ++q) gw[q] += go * xi[q];
        }
        if (gx) {
          double* dx = gx->data() + i * l.in;
          for (std::size_t o = 0; o < l.out; ++o) {
            const double go = gi[o];
            const double* wr = p.weight.data() + o * l.in;
            for (std::size_t q = 0; q < l.in; ++q) dx[q] += wr[q] * go;
          }
        }
      }
      break;
    case LayerKind::kSoftmax:
      if (!gx) break;
      for (std::size_t i = 0; i < n; ++i) {
        const double* yi = y.data() + i * in_size;
        const double* gi = gy.data() + i * in_size;
        double dot = 0.0;
        for (std::size_t j = 0; j < in_size; ++j) dot += gi[j] * yi[j];
        double* dx = gx->data() + i * in_size;
        for (std::size_t j = 0; j < in_size; ++j) dx[j] = yi[j] * (gi[j] - dot);
      }
      break;
    case LayerKind::kFlatten:
      if (gx) std::copy(gy.values().begin(), gy.values().end(), gx->data());
      break;
  }
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  for (const auto& kn : kKindNames)
    if (kn.kind == kind) return kn.name;
  return "?";
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::kConv2d) return {out, in, kernel, kernel};
  if (kind == LayerKind::kFullyConnected) return {out, in};
  return {};
}

Shape LayerSpec::bias_shape() const {
  if (has_params()) return {out};
  return {};
}

std::vector<Shape> NetworkSpec::shapes() const {
  if (input.empty() || shape_size(input) == 0) throw InputError("network input shape is empty");
  std::vector<Shape> out{input};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const Shape& s = out.back();
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(layer_kind_name(l.kind)) + ")";
    switch (l.kind) {
      case LayerKind::kConv2d: {
        if (s.size() != 3) throw InputError(where + " needs a CHW input, got " + shape_string(s));
        if (l.in == 0 || l.out == 0 || l.kernel == 0 || l.stride == 0)
          throw InputError(where + " hyperparameters must be positive");
        if (l.pad >= l.kernel) throw InputError(where + " padding must be smaller than the kernel");
        if (s[0] != l.in) throw InputError(where + " expects " + std::to_string(l.in) + " channels, got " + shape_string(s));
        const std::size_t oh = conv_out(s[1], l.kernel, l.stride, l.pad);
        const std::size_t ow = conv_out(s[2], l.kernel, l.stride, l.pad);
        if (oh == 0 || ow == 0) throw InputError(where + " kernel larger than padded input");
        out.push_back({l.out, oh, ow});
        break;
      }
      case LayerKind::kMaxPool:
      case LayerKind::kAvgPool: {
        if (s.size() != 3) throw InputError(where + " needs a CHW input, got " + shape_string(s));
        if (l.kernel == 0 || l.stride == 0) throw InputError(where + " hyperparameters must be positive");
        const std::size_t oh = conv_out(s[1], l.kernel, l.stride, 0);
        const std::size_t ow = conv_out(s[2], l.kernel, l.stride, 0);
        if (oh == 0 || ow == 0) throw InputError(where + " window larger than input");
        out.push_back({s[0], oh, ow});
        break;
      }
      case LayerKind::kRelu:
        out.push_back(s);
        break;
      case LayerKind::kFullyConnected:
        if (l.in == 0 || l.out == 0) throw InputError(where + " unit counts must be positive");
        if (s.size() != 1 || s[0] != l.in)
          throw InputError(where + " expects a flat input of " + std::to_string(l.in) + ", got " + shape_string(s));
        out.push_back({l.out});
        break;
      case LayerKind::kSoftmax:
        if (s.size() != 1) throw InputError(where + " needs a flat input, got " + shape_string(s));
        out.push_back(s);
        break;
      case LayerKind::kFlatten:
        out.push_back({shape_size(s)});
        break;
    }
  }
  return out;
}

void NetworkSpec::validate() const {
  shapes();
  if (split_index > layers.size()) throw InputError("split index beyond the layer count");
}

std::size_t NetworkSpec::label_count() const {
  if (layers.empty() || layers.back().kind != LayerKind::kSoftmax) return 0;
  return shape_size(shapes().back());
}

NetworkSpec NetworkSpec::slice(std::size_t first, std::size_t last) const {
  if (first > last || last > layers.size()) throw InputError("invalid layer slice");
  NetworkSpec out;
  out.input = shapes()[first];
  out.layers.assign(layers.begin() + static_cast<long>(first), layers.begin() + static_cast<long>(last));
  out.split_index = 0;
  return out;
}

std::size_t NetworkSpec::classifier_index() const {
  for (std::size_t i = layers.size(); i-- > 0;)
    if (layers[i].has_params()) return i;
  throw InputError("network has no parameterized layer");
}

std::string format_spec(const NetworkSpec& spec) {
  std::ostringstream os;
  if (spec.input.size() == 3) {
    os << "input channels=" << spec.input[0] << " height=" << spec.input[1] << " width=" << spec.input[2] << "\n";
  } else if (spec.input.size() == 1) {
    os << "input units=" << spec.input[0] << "\n";
  } else {
    throw InputError("unsupported input rank " + shape_string(spec.input));
  }
  os << "split index=" << spec.split_index << "\n";
  for (const LayerSpec& l : spec.layers) {
    os << layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::kConv2d:
        os << " in=" << l.in << " out=" << l.out << " kernel=" << l.kernel << " stride=" << l.stride
           << " pad=" << l.pad;
        break;
      case LayerKind::kMaxPool:
      case LayerKind::kAvgPool:
        os << " kernel=" << l.kernel << " stride=" << l.stride;
        break;
      case LayerKind::kFullyConnected:
        os << " in=" << l.in << " out=" << l.out;
        break;
      default:
        break;
    }
    os << "\n";
  }
  return os.str();
}

NetworkSpec parse_spec(std::string_view text) {
  NetworkSpec spec;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  bool have_input = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    std::map<std::string, std::size_t> kv;
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0)
        throw InputError("spec line " + std::to_string(lineno) + ": expected key=value, got '" + tok + "'");
      const std::string value = tok.substr(eq + 1);
      std::size_t used = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != value.size() || value.empty() || value[0] == '-')
        throw InputError("spec line " + std::to_string(lineno) + ": bad integer '" + value + "'");
      kv[tok.substr(0, eq)] = static_cast<std::size_t>(v);
    }
    auto get = [&](const char* key) -> std::size_t {
      auto it = kv.find(key);
      if (it == kv.end()) throw InputError("spec line " + std::to_string(lineno) + ": missing '" + key + "'");
      return it->second;
    };
    auto get_or = [&](const char* key, std::size_t dflt) {
      auto it = kv.find(key);
      return it == kv.end() ? dflt : it->second;
    };
    if (kind == "input") {
      if (kv.count("units")) {
        spec.input = {get("units")};
      } else {
        spec.input = {get("channels"), get("height"), get("width")};
      }
      have_input = true;
    } else if (kind == "split") {
      spec.split_index = get("index");
    } else if (kind == "conv2d") {
      spec.layers.push_back(LayerSpec::conv2d(get("in"), get("out"), get("kernel"), get_or("stride", 1), get_or("pad", 0)));
    } else if (kind == "maxpool") {
      spec.layers.push_back(LayerSpec::maxpool(get("kernel"), get_or("stride", get("kernel"))));
    } else if (kind == "avgpool") {
      spec.layers.push_back(LayerSpec::avgpool(get("kernel"), get_or("stride", get("kernel"))));
    } else if (kind == "relu") {
      spec.layers.push_back(LayerSpec::relu());
    } else if (kind == "fully-connected") {
      spec.layers.push_back(LayerSpec::fully_connected(get("in"), get("out")));
    } else if (kind == "softmax") {
      spec.layers.push_back(LayerSpec::softmax());
    } else if (kind == "flatten") {
      spec.layers.push_back(LayerSpec::flatten());
    } else {
      throw InputError("spec line " + std::to_string(lineno) + ": unknown layer kind '" + kind + "'");
    }
  }
  if (!have_input) throw InputError("spec has no input line");
  spec.validate();
  return spec;
}

NetworkSpec read_spec_file(const std::filesystem::path& path) { return parse_spec(detail::read_file(path)); }

void write_spec_file(const NetworkSpec& spec, const std::filesystem::path& path) {
  detail::write_file(path, format_spec(spec));
}

ParamSet zeros_like(const ParamSet& params) {
  ParamSet out;
  out.reserve(params.size());
  for (const auto& p : params) {
    if (p.weight.empty() && p.bias.empty()) {
      out.emplace_back();
    } else {
      out.push_back({Tensor(p.weight.shape()), Tensor(p.bias.shape())});
    }
  }
  return out;
}

void add_into(ParamSet& acc, const ParamSet& g) {
  if (acc.size() != g.size()) throw InputError("parameter set size mismatch");
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (acc[i].weight.shape() != g[i].weight.shape() || acc[i].bias.shape() != g[i].bias.shape())
      throw InputError("parameter shape mismatch at layer " + std::to_string(i));
    for (std::size_t j = 0; j < acc[i].weight.size(); ++j) acc[i].weight[j] += g[i].weight[j];
    for (std::size_t j = 0; j < acc[i].bias.size(); ++j) acc[i].bias[j] += g[i].bias[j];
  }
}

void scale_in_place(ParamSet& g, double factor) {
  for (auto& p : g) {
    for (double& v : p.weight.values()) v *= factor;
    for (double& v : p.bias.values()) v *= factor;
  }
}

bool all_finite(const ParamSet& params) {
  return std::all_of(params.begin(), params.end(),
                     [](const LayerParams& p) { return p.weight.all_finite() && p.bias.all_finite(); });
}

std::size_t parameter_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.weight.size() + p.bias.size();
  return n;
}

void init_layer(const LayerSpec& layer, LayerParams& params, Rng& rng) {
  if (!layer.has_params()) return;
  const std::size_t fan_in = params.weight.size() / layer.out;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : params.weight.values()) v = rng.uniform(-bound, bound);
  params.bias.fill(0.0);
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  params_.reserve(spec_.layers.size());
  for (const LayerSpec& l : spec_.layers) {
    if (l.has_params()) {
      params_.push_back({Tensor(l.weight_shape()), Tensor(l.bias_shape())});
    } else {
      params_.emplace_back();
    }
  }
}

Network Network::initialized(NetworkSpec spec, Rng& rng) {
  Network net(std::move(spec));
  for (std::size_t i = 0; i < net.spec_.layers.size(); ++i) init_layer(net.spec_.layers[i], net.params_[i], rng);
  return net;
}

Network Network::slice(std::size_t first, std::size_t last) const {
  Network out(spec_.slice(first, last));
  for (std::size_t i = first; i < last; ++i) out.params_[i - first] = params_[i];
  return out;
}

Activations forward(const Network& net, const Tensor& batch) {
  const auto shapes = net.spec().shapes();
  if (batch.rank() != shapes[0].size() + 1 ||
      !std::equal(shapes[0].begin(), shapes[0].end(), batch.shape().begin() + 1)) {
    throw InputError("batch shape " + shape_string(batch.shape()) + " does not match network input " +
                     shape_string(shapes[0]));
  }
  const std::size_t n = batch.dim(0);
  Activations acts;
  acts.values.reserve(shapes.size());
  acts.values.push_back(batch);
  for (std::size_t i = 0; i < net.spec().layers.size(); ++i) {
    Tensor y(batch_shape(n, shapes[i + 1]));
    forward_layer(net.spec().layers[i], net.params()[i], shapes[i], shapes[i + 1], acts.values[i], y);
    acts.values.push_back(std::move(y));
  }
  return acts;
}

Tensor predict(const Network& net, const Tensor& batch) {
  Activations acts = forward(net, batch);
  return std::move(acts.values.back());
}

Gradients backward(const Network& net, const Activations& acts, const Tensor& output_grad, bool want_input_grad) {
  const auto& layers = net.spec().layers;
  if (acts.values.size() != layers.size() + 1) throw StateError("activations do not belong to this network");
  const auto shapes = net.spec().shapes();
  const std::size_t n = acts.values[0].dim(0);
  for (std::size_t i = 0; i <= layers.size(); ++i) {
    if (acts.values[i].shape() != batch_shape(n, shapes[i]))
      throw StateError("activation " + std::to_string(i) + " has shape " + shape_string(acts.values[i].shape()));
  }
  if (output_grad.shape() != acts.values.back().shape())
    throw InputError("output gradient shape " + shape_string(output_grad.shape()) + " does not match output " +
                     shape_string(acts.values.back().shape()));

  Gradients grads;
  grads.params = zeros_like(net.params());
  Tensor g = output_grad;
  for (std::size_t i = layers.size(); i-- > 0;) {
    // Input gradient is needed for every layer except possibly the first.
    const bool need_gx = i > 0 || want_input_grad;
    bool has_earlier_params = false;
    for (std::size_t j = 0; j < i; ++j) has_earlier_params = has_earlier_params || layers[j].has_params();
    if (i > 0 && !has_earlier_params && !want_input_grad) {
      backward_layer(layers[i], net.params()[i], shapes[i], shapes[i + 1], acts.values[i], acts.values[i + 1], g,
                     grads.params[i], nullptr);
      return grads;
    }
    Tensor gx;
    if (need_gx) gx = Tensor(acts.values[i].shape());
    backward_layer(layers[i], net.params()[i], shapes[i], shapes[i + 1], acts.values[i], acts.values[i + 1], g,
                   grads.params[i], need_gx ? &gx : nullptr);
    g = std::move(gx);
  }
  if (want_input_grad) grads.input = std::move(g);
  return grads;
}

std::string encode_checkpoint(const ParamSet& params) {
  detail::ByteWriter w;
  w.magic(kCheckpointMagic);
  auto put = [&](const Tensor& t) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
  };
  for (const auto& p : params) {
    if (p.weight.empty() && p.bias.empty()) continue;
    put(p.weight);
    put(p.bias);
  }
  return w.take();
}

void write_checkpoint(const ParamSet& params, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(params));
}

void decode_checkpoint(Network& net, std::string_view bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kCheckpointMagic);
  auto get = [&](Tensor& t) {
    const std::size_t at = r.offset();
    const std::uint32_t rank = r.u32("tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("tensor dim");
    if (shape != t.shape())
      throw ParseError("tensor shape " + shape_string(shape) + " does not match expected " + shape_string(t.shape()), at);
    for (double& v : t.values()) v = r.f64("tensor payload");
  };
  for (auto& p : net.params()) {
    if (p.weight.empty() && p.bias.empty()) continue;
    get(p.weight);
    get(p.bias);
  }
  if (!r.done()) throw ParseError("trailing bytes in checkpoint", r.offset());
}

void read_checkpoint(Network& net, const std::filesystem::path& path) {
  decode_checkpoint(net, detail::read_file(path));
}

}  // namespace hdcnn
