// SPDX-License-Identifier: Apache-2.0
//
// Base-session training: per mini-batch virtual loss on real instances plus
// forecasting loss on manifold-mixed pairs, SGD with momentum and a cosine
// annealed learning rate.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fact/dataset.hpp"
#include "fact/losses.hpp"
#include "fact/network.hpp"

namespace fact {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr_init = 0.1;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  LossConfig loss;
  double mix_alpha = 0.5;
  /// When false the forecasting loss (L3 + γ·L4) is skipped entirely.
  bool forecast = true;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double train_acc = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double final_train_acc = 0.0;
  double elapsed_seconds = 0.0;
  std::vector<std::string> warnings;
};

/// One line per epoch: "epoch=E lr=... l1=... l2=... l3=... l4=... total=... train_acc=...".
void write_train_report(std::ostream& out, const TrainReport& report);

/// lr_init · ½(1 + cos(π·epoch/epochs)). Throws EpochOutOfRange.
double lr_schedule(const TrainConfig& cfg, std::size_t epoch);

/// v ← momentum·v + g; θ ← θ − lr·v.
void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum);
void sgd_step(EmbeddingNet& net, CosineHead& head, const GradBuffer& grads, GradBuffer& velocity, double lr,
              double momentum);

struct BatchResult {
  LossBreakdown loss;      // L_v terms averaged over the batch, L_f terms over valid pairs
  std::size_t num_pairs = 0;
  std::size_t correct = 0;  // known-block argmax hits on the real instances
  GradBuffer grads;
};

/// Loss and gradient of one mini-batch. mix_rng drives the pairing permutation and λ draws.
BatchResult batch_loss_and_grad(const EmbeddingNet& net, const CosineHead& head, const LabeledDataset& data,
                                std::span<const std::size_t> batch, const TrainConfig& cfg, Rng& mix_rng);

struct TrainResult {
  EmbeddingNet net;
  CosineHead head;
  TrainReport report;
};

/// Labels of data must be 0..|W|−1. Throws EmptyDataset, DimensionMismatch,
/// or NumericalFailure when a loss or gradient becomes non-finite.
TrainResult train_base(const LabeledDataset& data, EmbeddingNet net, CosineHead head, const TrainConfig& cfg);

/// Fraction of rows whose known-block cosine argmax equals the label.
double known_block_accuracy(const EmbeddingNet& net, const CosineHead& head, const LabeledDataset& data);

}  // namespace fact
