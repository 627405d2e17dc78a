// Copyright 2026 The hdcnn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hdcnn/network.hpp"
#include "hdcnn/rng.hpp"
#include "hdcnn/tensor.hpp"

namespace hdcnn {

// Category ids are 0-based in memory. Text formats on disk are 1-based.

/// Balanced held-out sample of a labeled training set (indices into it).
struct HeldOutSplit {
  std::vector<std::size_t> heldout;    // ascending
  std::vector<std::size_t> remainder;  // ascending
  std::size_t per_class_count = 0;
};

/// Draws exactly `per_class_count` images of every class into the held-out
/// part. Throws InputError naming the first class that is too small.
HeldOutSplit sample_held_out(std::span<const int> labels, std::size_t num_classes, std::size_t per_class_count,
                             Rng& rng);

/// Row-normalized confusion counts of argmax predictions (lowest index wins
/// ties). Every class must be present in `labels`.
Tensor confusion_from_predictions(const Tensor& probs, std::span<const int> labels, std::size_t num_classes);
/// Evaluates `net` on `images` and returns the confusion matrix.
Tensor confusion_matrix(const Network& net, const Tensor& images, std::span<const int> labels,
                        std::size_t batch_size = 100);

/// D = 1 - F, zero diagonal, then D <- (D + D^T) / 2.
Tensor distance_from_confusion(const Tensor& confusion);

inline constexpr int kSpectralAttempts = 5;
inline constexpr int kSpectralRestarts = 10;

/// Normalized spectral clustering of the categories behind a distance
/// matrix. Affinity is 1 - D off the diagonal; the K eigenvectors of the
/// symmetric normalized Laplacian with the smallest eigenvalues are
/// row-normalized and clustered by k-means (best of kSpectralRestarts).
/// Cluster ids are canonical: numbered by first appearance in category order.
std::vector<int> spectral_cluster(const Tensor& distance, std::size_t num_coarse, Rng& rng);

/// Fine -> set of coarse ids, one entry per fine category.
using CoarseMapping = std::vector<std::vector<int>>;

CoarseMapping disjoint_as_mapping(std::span<const int> disjoint);

/// B_ik = sum over fine j mapped to k of p_ij, then each row L1-normalized.
/// Rows of `fine_probs` must sum to 1 within 1e-6.
Tensor aggregate_coarse(const Tensor& fine_probs, const CoarseMapping& mapping, std::size_t num_coarse);

/// u[k][j]: mean over held-out images of true class j of the disjoint coarse
/// probability B^d_ik. Returns a [K, C] matrix whose columns sum to 1.
Tensor misclassification_likelihood(const Tensor& coarse_probs, std::span<const int> labels,
                                    std::size_t num_fine);

inline constexpr double kGammaInfinity = std::numeric_limits<double>::infinity();

struct Hierarchy {
  std::size_t num_coarse = 0;
  std::size_t num_fine = 0;
  double gamma = 0.0;                          // infinity: every fine class in every coarse class
  std::vector<int> disjoint;                   // fine -> coarse
  CoarseMapping overlapping;                   // fine -> sorted coarse ids, contains disjoint[j]
  std::vector<std::vector<int>> partial_sets;  // coarse -> sorted fine ids
  Tensor likelihood;                           // [K, C]

  /// Throws InputError when an invariant does not hold.
  void validate() const;
  double threshold() const;  // u_t = 1 / (gamma K)

  friend bool operator==(const Hierarchy&, const Hierarchy&) = default;
};

/// Adds fine class j to coarse class k whenever u[k][j] >= 1/(gamma K).
Hierarchy extend_overlapping(std::span<const int> disjoint, const Tensor& likelihood, double gamma);

/// Hierarchy with K = 1 holding every fine category.
Hierarchy single_coarse_hierarchy(std::size_t num_fine);

std::vector<std::vector<int>> partial_sets_of(const CoarseMapping& mapping, std::size_t num_coarse);

/// Text format: "K=<int> gamma=<float>" then one
/// "fine <j> disjoint <k> overlapping <k1,k2,...>" line per fine class.
std::string format_hierarchy(const Hierarchy& h);
/// Likelihood matrix as CSV: K rows of C values.
std::string format_likelihood_csv(const Tensor& u);
Hierarchy parse_hierarchy(std::string_view text, std::string_view likelihood_csv = {});
void write_hierarchy_files(const Hierarchy& h, const std::filesystem::path& text_path,
                           const std::filesystem::path& csv_path);
Hierarchy read_hierarchy_files(const std::filesystem::path& text_path, const std::filesystem::path& csv_path);

std::string format_double(double v);

}  // namespace hdcnn
