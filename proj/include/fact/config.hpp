// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat "key = value" lines with section prefixes
// (data., train., loss., infer., protocol.). '#' starts a comment.
// See docs/config.md for the full key list.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "fact/dataset.hpp"
#include "fact/incremental.hpp"
#include "fact/protocol.hpp"
#include "fact/trainer.hpp"

namespace fact {

enum class DataSource { synthetic, csv };

struct RunConfig {
  std::uint64_t seed = 0;

  DataSource source = DataSource::synthetic;
  GaussianSpec gaussian;
  std::filesystem::path train_csv;
  std::filesystem::path test_csv;

  TrainConfig train;
  std::size_t mid_dim = 32;
  std::size_t embed_dim = 16;
  double scale = 16.0;
  /// Unset means V = |Y₀|.
  std::optional<std::size_t> num_virtual;

  InferConfig infer;
  StreamSpec protocol;
  AdaptConfig adapt;

  std::filesystem::path output_dir;

  std::size_t resolved_num_virtual() const { return num_virtual.value_or(protocol.num_base); }
  /// Throws InvalidParameter when any nested constraint fails.
  void validate() const;
};

/// Throws ParseError (with line number) on malformed or unknown keys.
/// Relative CSV paths are resolved against base_dir.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
/// Also checks that referenced CSV files exist (IoError otherwise).
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical rendering; parse_run_config(render_run_config(c)) reproduces c.
std::string render_run_config(const RunConfig& cfg);

/// (train, test) for the configured data source.
std::pair<LabeledDataset, LabeledDataset> load_datasets(const RunConfig& cfg);

}  // namespace fact
