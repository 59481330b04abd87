// SPDX-License-Identifier: Apache-2.0
//
// Session-time machinery. After base training the embedding is frozen; each
// incremental session appends the mean embedding of every new class to the
// known block of the head. Predictions either marginalize over the virtual
// prototypes (infer_fact) or use the known prototypes alone (infer_protonet).
// Finetune and KD are the forgetting-prone baselines and do move the embedding.
#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "fact/dataset.hpp"
#include "fact/network.hpp"

namespace fact {

enum class PriorMode {
  gaussian,  // keep the prototype-similarity factor m(w_i, p_v)
  uniform,   // drop it: uniform class prior given the virtual class
};

struct InferConfig {
  double eta = 0.5;
  PriorMode prior = PriorMode::gaussian;
  double tau = 1.0;

  void validate() const;
};

struct SessionState {
  EmbeddingNet net;
  CosineHead head;
  std::size_t session_index = 0;
  /// registry[k] is the dataset label held by known prototype k.
  std::vector<int> registry;

  /// Head index for a dataset label, or -1.
  int head_index(int label) const;

  bool operator==(const SessionState&) const = default;
};

/// Wraps a trained base model; registry is 0..|W|−1.
SessionState make_session_state(EmbeddingNet net, CosineHead head);

/// Unit-normalized mean embedding per class, summed in row order.
/// Throws EmptyDataset or EmptyClass.
std::map<int, Vec> class_prototypes(const EmbeddingNet& net, const LabeledDataset& data);

/// Appends prototypes (ascending label order) to the known block. Throws
/// DuplicateLabel if any label is already registered.
SessionState expand_head(SessionState state, const std::map<int, Vec>& prototypes);

/// Overwrites the known prototype of every registered class present in data
/// with that class's normalized mean embedding. Throws CoverageMismatch if a
/// class in data is not registered.
SessionState replace_with_prototypes(SessionState state, const LabeledDataset& data);

/// Probabilities over the |W| known classes for an input x.
Vec infer_fact(const SessionState& state, const InferConfig& cfg, std::span<const double> x);
/// Same, for an embedding that has already been computed.
Vec infer_fact_embedding(const CosineHead& head, const InferConfig& cfg, std::span<const double> emb);

/// softmax(τ·cos(w_i, φ(x))) over known classes.
Vec infer_protonet(const SessionState& state, std::span<const double> x, double tau = 1.0);
Vec infer_protonet_embedding(const CosineHead& head, std::span<const double> emb, double tau = 1.0);

/// (1−λ)·CE(new, y) + λ·Σ_k −softmax(old)_k · log softmax(new[:|old|])_k.
struct KdLoss {
  double value = 0.0;
  double ce = 0.0;
  double kd = 0.0;
  Vec dlogits;  // w.r.t. new_logits
};
KdLoss kd_loss(std::span<const double> old_logits, std::span<const double> new_logits, std::size_t y,
               double lambda_kd);

struct AdaptConfig {
  std::size_t steps = 50;
  double lr = 0.05;
  double momentum = 0.9;
  double lambda_kd = 0.5;
};

/// Full-batch cross-entropy SGD on the session data only, over every parameter
/// (the embedding is unfrozen). The session classes must already be in the
/// head (see expand_head). Throws EmptyDataset or CoverageMismatch.
SessionState finetune_session(SessionState state, const LabeledDataset& session, const AdaptConfig& cfg);

/// As finetune_session, but the loss is kd_loss against the pre-adaptation
/// model's logits over the classes known before this session.
SessionState kd_session(SessionState state, const LabeledDataset& session, const AdaptConfig& cfg);

}  // namespace fact
