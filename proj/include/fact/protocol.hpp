// SPDX-License-Identifier: Apache-2.0
//
// Few-shot class-incremental protocol: session stream construction, the
// cumulative-test evaluation loop and the reported metrics.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fact/dataset.hpp"
#include "fact/incremental.hpp"

namespace fact {

struct SessionSplit {
  LabeledDataset train;  // N-way K-shot
  LabeledDataset test;

  bool operator==(const SessionSplit&) const = default;
};

/// Labels are re-indexed so that base classes are 0..num_base−1 and session b
/// holds num_base + (b−1)·way ... num_base + b·way − 1. class_order maps a
/// stream label back to the source dataset label.
struct SessionStream {
  LabeledDataset base_train;
  LabeledDataset base_test;
  std::vector<SessionSplit> sessions;
  std::size_t num_base = 0;
  std::size_t way = 0;
  std::size_t shot = 0;
  std::vector<int> class_order;

  std::size_t num_sessions() const { return sessions.size(); }
  /// Number of classes seen after session b.
  std::size_t classes_through(std::size_t b) const { return num_base + b * way; }
  /// Union of the test splits of sessions 0..b.
  LabeledDataset cumulative_test(std::size_t b) const;

  bool operator==(const SessionStream&) const = default;
};

struct StreamSpec {
  std::size_t num_base = 6;
  std::size_t way = 2;
  std::size_t shot = 5;
  std::size_t sessions = 2;
};

/// Deterministic seeded class shuffle and K-shot subsampling. Throws
/// InsufficientClasses or InsufficientShots.
SessionStream build_stream(const LabeledDataset& train, const LabeledDataset& test, const StreamSpec& spec,
                           std::uint64_t seed);

enum class InferMode { fact, protonet };

/// Predicted head index for an input.
using Predictor = std::function<std::size_t(std::span<const double>)>;

Predictor make_predictor(const SessionState& state, InferMode mode, const InferConfig& cfg);

/// Top-1 accuracy over the cumulative test union of sessions 0..b. Throws
/// CoverageMismatch if the state lacks any class of those sessions.
double evaluate_session(const SessionState& state, const SessionStream& stream, std::size_t b, InferMode mode,
                        const InferConfig& cfg);

/// Accuracy of an arbitrary predictor on a labeled set; predictions are head
/// indices and are compared through the registry.
struct AccuracySplit {
  double all = 0.0;
  double base = 0.0;
  std::optional<double> novel;  // absent when the set has no incremental-class rows
};
AccuracySplit split_accuracy(const SessionState& state, const Predictor& predict, const LabeledDataset& data,
                             std::size_t num_base);

/// A₀ − A_B. Throws EmptySequence.
double performance_drop(std::span<const double> acc);

/// 2ab/(a+b), and 0 when a + b = 0.
double harmonic_mean(double base_acc, double new_acc);

/// counts[c][v] = number of base-train rows of class c whose pseudo virtual
/// label is virtual prototype v.
std::vector<std::vector<std::size_t>> assignment_matrix(const SessionState& state, const LabeledDataset& base_train);

struct SessionRecord {
  std::size_t session = 0;
  double acc = 0.0;
  double base_acc = 0.0;
  std::optional<double> new_acc;
  std::optional<double> hmean;

  bool operator==(const SessionRecord&) const = default;
};

struct SessionMetrics {
  std::string method;
  std::vector<SessionRecord> sessions;
  double pd = 0.0;
  std::vector<std::vector<std::size_t>> assignment;

  std::vector<double> accuracies() const;
  bool operator==(const SessionMetrics&) const = default;
};

enum class Method { fact, protonet, finetune, kd };

/// Throws Usage on an unknown name.
Method parse_method(const std::string& name);
std::string to_string(Method method);

/// Runs sessions 1..B from a base-trained state, evaluating A_b after each.
SessionMetrics run_sessions(const SessionState& base_state, const SessionStream& stream, Method method,
                            const InferConfig& infer, const AdaptConfig& adapt);

/// Line-oriented report: "method=..." then one "session=... acc=... base_acc=...
/// new_acc=... hmean=..." line per session (percentages, "na" when undefined)
/// and a final "pd=..." line.
void write_run_report(std::ostream& out, const SessionMetrics& metrics);
SessionMetrics read_run_report(std::istream& in);

}  // namespace fact
