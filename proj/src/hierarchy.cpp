// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "hdcnn/hierarchy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "binary_io.hpp"
#include "hdcnn/eigh.hpp"
#include "hdcnn/errors.hpp"
#include "hdcnn/kmeans.hpp"

namespace hdcnn {

namespace {

constexpr double kSimplexTolerance = 1e-6;
constexpr double kAffinityFloor = 1e-8;

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

void check_labels(std::span<const int> labels, std::size_t num_classes) {
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
}

double parse_number(std::string_view s, const std::string& what) {
  if (s == "inf") return kGammaInfinity;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw InputError("bad number '" + std::string(s) + "' in " + what);
  return v;
}

}  // namespace

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

HeldOutSplit sample_held_out(std::span<const int> labels, std::size_t num_classes, std::size_t per_class_count,
                             Rng& rng) {
  check_labels(labels, num_classes);
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  HeldOutSplit split;
  split.per_class_count = per_class_count;
  std::vector<char> taken(labels.size(), 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (by_class[c].size() < per_class_count)
      throw InputError("class " + std::to_string(c + 1) + " has " + std::to_string(by_class[c].size()) +
                       " images, fewer than the " + std::to_string(per_class_count) + " held out per class");
    rng.shuffle(by_class[c]);
    for (std::size_t i = 0; i < per_class_count; ++i) taken[by_class[c][i]] = 1;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) (taken[i] ? split.heldout : split.remainder).push_back(i);
  return split;
}

Tensor confusion_from_predictions(const Tensor& probs, std::span<const int> labels, std::size_t num_classes) {
  if (probs.rank() != 2 || probs.dim(1) != num_classes)
    throw InputError("predictions must be [n, " + std::to_string(num_classes) + "]");
  if (probs.dim(0) != labels.size()) throw InputError("prediction and label counts differ");
  check_labels(labels, num_classes);
  Tensor f({num_classes, num_classes});
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    f.at(y, argmax_row(probs.row(i))) += 1.0;
    ++counts[y];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) throw InputError("class " + std::to_string(c + 1) + " has no held-out images");
    for (std::size_t l = 0; l < num_classes; ++l) f.at(c, l) /= static_cast<double>(counts[c]);
  }
  return f;
}

Tensor confusion_matrix(const Network& net, const Tensor& images, std::span<const int> labels,
                        std::size_t batch_size) {
  const std::size_t c = net.label_count();
  if (c == 0) throw InputError("confusion matrix needs a classifier ending in softmax");
  const std::size_t n = images.dim(0);
  Tensor probs({n, c});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const Tensor p = predict(net, gather_rows(images, idx));
    std::copy(p.values().begin(), p.values().end(), probs.data() + start * c);
  }
  return confusion_from_predictions(probs, labels, c);
}

Tensor distance_from_confusion(const Tensor& confusion) {
  if (confusion.rank() != 2 || confusion.dim(0) != confusion.dim(1)) throw InputError("confusion matrix must be square");
  const std::size_t c = confusion.dim(0);
  Tensor d({c, c});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) d.at(i, j) = i == j ? 0.0 : 1.0 - confusion.at(i, j);
  Tensor out({c, c});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = 0.5 * (d.at(i, j) + d.at(j, i));
  return out;
}

std::vector<int> spectral_cluster(const Tensor& distance, std::size_t num_coarse, Rng& rng) {
  if (distance.rank() != 2 || distance.dim(0) != distance.dim(1)) throw InputError("distance matrix must be square");
  const std::size_t c = distance.dim(0);
  if (num_coarse < 1 || num_coarse > c)
    throw InputError("coarse category count " + std::to_string(num_coarse) + " outside [1, " + std::to_string(c) + "]");
  if (num_coarse == 1) return std::vector<int>(c, 0);

  Tensor affinity({c, c});
  bool degenerate = false;
  for (std::size_t i = 0; i < c; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      affinity.at(i, j) = 1.0 - distance.at(i, j);
      row += affinity.at(i, j);
    }
    if (row <= 0.0) degenerate = true;
  }
  if (degenerate)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j)
        if (i != j) affinity.at(i, j) += kAffinityFloor;

  std::vector<double> inv_sqrt_deg(c);
  for (std::size_t i = 0; i < c; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < c; ++j) deg += affinity.at(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  Tensor laplacian({c, c});
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      laplacian.at(i, j) = (i == j ? 1.0 : 0.0) - inv_sqrt_deg[i] * affinity.at(i, j) * inv_sqrt_deg[j];

  const EigenDecomposition eig = eigh_symmetric(laplacian);
  Tensor embedding({c, num_coarse});
  for (std::size_t i = 0; i < c; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < num_coarse; ++k) norm += eig.vectors.at(i, k) * eig.vectors.at(i, k);
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < num_coarse; ++k) embedding.at(i, k) = norm > 0 ? eig.vectors.at(i, k) / norm : 0.0;
  }

  const std::uint64_t base = rng.next_u64();
  for (int attempt = 0; attempt < kSpectralAttempts; ++attempt) {
    KMeansResult best;
    bool have = false;
    for (int restart = 0; restart < kSpectralRestarts; ++restart) {
      Rng sub(Rng::mix_seed(base, static_cast<std::uint64_t>(attempt * kSpectralRestarts + restart)));
      KMeansResult r = kmeans(embedding, static_cast<int>(num_coarse), sub);
      if (!have || r.sse < best.sse) {
        best = std::move(r);
        have = true;
      }
    }
    std::vector<int> relabel(num_coarse, -1);
    int next = 0;
    std::vector<int> out(c);
    for (std::size_t i = 0; i < c; ++i) {
      int& id = relabel[static_cast<std::size_t>(best.assignment[i])];
      if (id < 0) id = next++;
      out[i] = id;
    }
    if (static_cast<std::size_t>(next) == num_coarse) return out;
  }
  throw InputError("spectral clustering left a coarse category empty after " + std::to_string(kSpectralAttempts) +
                   " attempts");
}

CoarseMapping disjoint_as_mapping(std::span<const int> disjoint) {
  CoarseMapping m;
  m.reserve(disjoint.size());
  for (int k : disjoint) m.push_back({k});
  return m;
}

Tensor aggregate_coarse(const Tensor& fine_probs, const CoarseMapping& mapping, std::size_t num_coarse) {
  if (fine_probs.rank() != 2 || fine_probs.dim(1) != mapping.size())
    throw InputError("fine predictions must be [n, " + std::to_string(mapping.size()) + "]");
  const std::size_t n = fine_probs.dim(0), c = mapping.size();
  Tensor out({n, num_coarse});
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = fine_probs.at(i, j);
      if (p < -kSimplexTolerance) throw InputError("negative fine probability in row " + std::to_string(i));
      row_sum += p;
      for (int k : mapping[j]) out.at(i, static_cast<std::size_t>(k)) += p;
    }
    if (std::abs(row_sum - 1.0) > kSimplexTolerance)
      throw InputError("fine prediction row " + std::to_string(i) + " sums to " + format_double(row_sum));
    double total = 0.0;
    for (std::size_t k = 0; k < num_coarse; ++k) total += out.at(i, k);
    if (total > 0.0)
      for (std::size_t k = 0; k < num_coarse; ++k) out.at(i, k) /= total;
  }
  return out;
}

Tensor misclassification_likelihood(const Tensor& coarse_probs, std::span<const int> labels, std::size_t num_fine) {
  if (coarse_probs.rank() != 2 || coarse_probs.dim(0) != labels.size())
    throw InputError("coarse predictions must be [n, K] with one label per row");
  check_labels(labels, num_fine);
  const std::size_t k_count = coarse_probs.dim(1);
  Tensor u({k_count, num_fine});
  std::vector<std::size_t> counts(num_fine, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t j = static_cast<std::size_t>(labels[i]);
    ++counts[j];
    for (std::size_t k = 0; k < k_count; ++k) u.at(k, j) += coarse_probs.at(i, k);
  }
  for (std::size_t j = 0; j < num_fine; ++j) {
    if (counts[j] == 0) throw InputError("class " + std::to_string(j + 1) + " is absent from the held-out set");
    for (std::size_t k = 0; k < k_count; ++k) u.at(k, j) /= static_cast<double>(counts[j]);
  }
  return u;
}

double Hierarchy::threshold() const {
  if (std::isinf(gamma)) return 0.0;
  return 1.0 / (gamma * static_cast<double>(num_coarse));
}

std::vector<std::vector<int>> partial_sets_of(const CoarseMapping& mapping, std::size_t num_coarse) {
  std::vector<std::vector<int>> sets(num_coarse);
  for (std::size_t j = 0; j < mapping.size(); ++j)
    for (int k : mapping[j]) sets[static_cast<std::size_t>(k)].push_back(static_cast<int>(j));
  return sets;
}

Hierarchy extend_overlapping(std::span<const int> disjoint, const Tensor& likelihood, double gamma) {
  if (!(gamma > 0.0)) throw InputError("gamma must be positive");
  if (likelihood.rank() != 2 || likelihood.dim(1) != disjoint.size())
    throw InputError("likelihood must be [K, C] with C matching the disjoint mapping");
  Hierarchy h;
  h.num_coarse = likelihood.dim(0);
  h.num_fine = disjoint.size();
  h.gamma = gamma;
  h.disjoint.assign(disjoint.begin(), disjoint.end());
  h.likelihood = likelihood;
  const double ut = h.threshold();
  h.overlapping.resize(h.num_fine);
  for (std::size_t j = 0; j < h.num_fine; ++j) {
    for (std::size_t k = 0; k < h.num_coarse; ++k) {
      if (static_cast<int>(k) == h.disjoint[j] || likelihood.at(k, j) >= ut) h.overlapping[j].push_back(static_cast<int>(k));
    }
  }
  h.partial_sets = partial_sets_of(h.overlapping, h.num_coarse);
  h.validate();
  return h;
}

Hierarchy single_coarse_hierarchy(std::size_t num_fine) {
  return extend_overlapping(std::vector<int>(num_fine, 0), Tensor({1, num_fine}, 1.0), kGammaInfinity);
}

void Hierarchy::validate() const {
  if (num_coarse == 0 || num_fine == 0) throw InputError("hierarchy needs at least one coarse and one fine category");
  if (disjoint.size() != num_fine || overlapping.size() != num_fine) throw InputError("hierarchy mapping size mismatch");
  if (partial_sets.size() != num_coarse) throw InputError("hierarchy partial set count mismatch");
  std::vector<char> covered(num_fine, 0);
  for (std::size_t j = 0; j < num_fine; ++j) {
    const int d = disjoint[j];
    if (d < 0 || static_cast<std::size_t>(d) >= num_coarse)
      throw InputError("fine class " + std::to_string(j + 1) + " maps outside the coarse range");
    if (!std::is_sorted(overlapping[j].begin(), overlapping[j].end()) ||
        std::adjacent_find(overlapping[j].begin(), overlapping[j].end()) != overlapping[j].end())
      throw InputError("overlapping set of fine class " + std::to_string(j + 1) + " must be sorted and unique");
    if (!std::binary_search(overlapping[j].begin(), overlapping[j].end(), d))
      throw InputError("overlapping set of fine class " + std::to_string(j + 1) + " lacks its disjoint coarse class");
    for (int k : overlapping[j])
      if (k < 0 || static_cast<std::size_t>(k) >= num_coarse)
        throw InputError("fine class " + std::to_string(j + 1) + " maps outside the coarse range");
  }
  if (partial_sets != partial_sets_of(overlapping, num_coarse)) throw InputError("partial sets disagree with the mapping");
  for (std::size_t k = 0; k < num_coarse; ++k) {
    if (partial_sets[k].empty()) throw InputError("coarse category " + std::to_string(k + 1) + " is empty");
    for (int j : partial_sets[k]) covered[static_cast<std::size_t>(j)] = 1;
  }
  if (std::find(covered.begin(), covered.end(), 0) != covered.end())
    throw InputError("partial sets do not cover every fine category");
  if (!likelihood.empty() && (likelihood.rank() != 2 || likelihood.dim(0) != num_coarse || likelihood.dim(1) != num_fine))
    throw InputError("likelihood matrix shape mismatch");
}

std::string format_hierarchy(const Hierarchy& h) {
  std::ostringstream os;
  os << "K=" << h.num_coarse << " gamma=" << format_double(h.gamma) << "\n";
  for (std::size_t j = 0; j < h.num_fine; ++j) {
    os << "fine " << j + 1 << " disjoint " << h.disjoint[j] + 1 << " overlapping ";
    for (std::size_t i = 0; i < h.overlapping[j].size(); ++i) os << (i ? "," : "") << h.overlapping[j][i] + 1;
    os << "\n";
  }
  return os.str();
}

std::string format_likelihood_csv(const Tensor& u) {
  std::string out;
  for (std::size_t k = 0; k < u.dim(0); ++k) {
    for (std::size_t j = 0; j < u.dim(1); ++j) {
      if (j) out += ",";
      out += format_double(u.at(k, j));
    }
    out += "\n";
  }
  return out;
}

Hierarchy parse_hierarchy(std::string_view text, std::string_view likelihood_csv) {
  std::istringstream in{std::string(text)};
  std::string line;
  Hierarchy h;
  if (!std::getline(in, line)) throw InputError("empty hierarchy file");
  {
    std::istringstream ls(line);
    std::string a, b;
    if (!(ls >> a >> b) || a.rfind("K=", 0) != 0 || b.rfind("gamma=", 0) != 0)
      throw InputError("hierarchy header must read 'K=<int> gamma=<float>'");
    h.num_coarse = static_cast<std::size_t>(parse_number(std::string_view(a).substr(2), "K"));
    h.gamma = parse_number(std::string_view(b).substr(6), "gamma");
  }
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kw_fine, kw_dis, kw_over, sets;
    std::size_t j = 0, d = 0;
    if (!(ls >> kw_fine)) continue;
    if (!(ls >> j >> kw_dis >> d >> kw_over >> sets) || kw_fine != "fine" || kw_dis != "disjoint" ||
        kw_over != "overlapping")
      throw InputError("bad hierarchy line '" + line + "'");
    if (j != h.num_fine + 1) throw InputError("hierarchy fine classes must be listed in order");
    if (d < 1) throw InputError("coarse ids are 1-based");
    h.disjoint.push_back(static_cast<int>(d) - 1);
    std::vector<int> over;
    std::istringstream ss(sets);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const double v = parse_number(tok, "overlapping set");
      if (v < 1) throw InputError("coarse ids are 1-based");
      over.push_back(static_cast<int>(v) - 1);
    }
    h.overlapping.push_back(std::move(over));
    ++h.num_fine;
  }
  h.partial_sets = partial_sets_of(h.overlapping, h.num_coarse);
  if (!likelihood_csv.empty()) {
    std::vector<double> values;
    std::istringstream cs{std::string(likelihood_csv)};
    std::size_t rows = 0;
    while (std::getline(cs, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string tok;
      std::size_t cols = 0;
      while (std::getline(ls, tok, ',')) {
        values.push_back(parse_number(tok, "likelihood csv"));
        ++cols;
      }
      if (cols != h.num_fine) throw InputError("likelihood csv row width differs from the fine class count");
      ++rows;
    }
    h.likelihood = Tensor({rows, h.num_fine}, std::move(values));
  }
  h.validate();
  return h;
}

void write_hierarchy_files(const Hierarchy& h, const std::filesystem::path& text_path,
                           const std::filesystem::path& csv_path) {
  detail::write_file(text_path, format_hierarchy(h));
  detail::write_file(csv_path, format_likelihood_csv(h.likelihood));
}

Hierarchy read_hierarchy_files(const std::filesystem::path& text_path, const std::filesystem::path& csv_path) {
  const std::string csv = std::filesystem::exists(csv_path) ? detail::read_file(csv_path) : std::string();
  return parse_hierarchy(detail::read_file(text_path), csv);
}

}  // namespace hdcnn
