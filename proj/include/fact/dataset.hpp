// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fact/numerics.hpp"

namespace fact {

enum class Split { train, test };

struct LabeledDataset {
  std::vector<Vec> features;
  std::vector<int> labels;
  Split split = Split::train;
  /// Optional display names, indexed by label.
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t dim() const { return features.empty() ? 0 : features.front().size(); }

  /// Distinct labels in ascending order.
  std::vector<int> classes() const;
  std::size_t count(int label) const;

  /// Throws DimensionMismatch / RaggedRows / InvalidParameter on a malformed dataset.
  void validate() const;

  LabeledDataset subset(std::span<const std::size_t> indices) const;
  /// Rows whose label is in [first, last).
  LabeledDataset filter_labels(int first, int last) const;

  bool operator==(const LabeledDataset&) const = default;
};

/// Concatenate rows; splits must agree.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

struct GaussianSpec {
  std::size_t num_classes = 10;
  std::size_t dim = 16;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 50;
  double center_scale = 3.0;
  double sigma = 1.0;
};

/// Class centers uniform on the sphere of radius center_scale, instances are
/// center + N(0, σ²I). Returns (train, test).
std::pair<LabeledDataset, LabeledDataset> generate_gaussians(const GaussianSpec& spec, std::uint64_t seed);

/// CSV rows "label,f1,...,fD". Labels are strings mapped to dense indices in
/// first-appearance order. A header row is skipped when its second field is
/// not numeric.
LabeledDataset load_csv(const std::filesystem::path& path, Split split = Split::train);
LabeledDataset parse_csv(const std::string& text, Split split = Split::train);

/// Parse two CSV files sharing a label vocabulary (train names first).
std::pair<LabeledDataset, LabeledDataset> load_csv_pair(const std::filesystem::path& train_path,
                                                         const std::filesystem::path& test_path);

}  // namespace fact
