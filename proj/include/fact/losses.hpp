// SPDX-License-Identifier: Apache-2.0
//
// Virtual-prototype loss (L1 + γ·L2), forecasting loss on mixed instances
// (L3 + γ·L4), the pseudo-label rules behind them, and the closed-form
// negative gradients they reduce to for unit vectors and a dot-product head.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fact/network.hpp"
#include "fact/numerics.hpp"

namespace fact {

struct LossConfig {
  double gamma = 0.01;
  std::size_t num_virtual = 1;
  /// Number of known classes in the head while training (|Y₀| in the base session).
  std::size_t num_base = 0;

  void validate() const;
};

/// Argmax over the virtual block, returned as an index into the full logit vector.
std::size_t pseudo_virtual_label(std::span<const double> logits, const LossConfig& cfg);
/// Argmax over the known block.
std::size_t pseudo_known_label(std::span<const double> logits, const LossConfig& cfg);

/// Cross-entropy value and its gradient w.r.t. logits.
struct CrossEntropy {
  double value = 0.0;
  Vec dlogits;
};

/// −log softmax(logits)[target].
CrossEntropy cross_entropy(std::span<const double> logits, std::size_t target);
/// −log masked_softmax(logits, masked)[target]; the masked entry gets zero gradient.
CrossEntropy masked_cross_entropy(std::span<const double> logits, std::size_t masked, std::size_t target);

struct VirtualLoss {
  double l1 = 0.0;
  double l2 = 0.0;
  double value = 0.0;  // l1 + γ·l2
  std::size_t y_hat = 0;
  Vec dlogits;
};

/// L1 = CE(logits, y); L2 = CE(Mask(logits, y), ŷ).
VirtualLoss virtual_loss(std::span<const double> logits, std::size_t y, const LossConfig& cfg);

struct ForecastLoss {
  double l3 = 0.0;
  double l4 = 0.0;
  double value = 0.0;  // l3 + γ·l4
  std::size_t y_hat = 0;
  std::size_t y_hathat = 0;
  Vec dlogits;
};

/// L3 = CE(logits_z, ŷ); L4 = CE(Mask(logits_z, ŷ), ŷ̂), with both pseudo
/// labels taken from the mixed instance's own logits.
ForecastLoss forecast_loss(std::span<const double> logits_z, const LossConfig& cfg);

struct LossBreakdown {
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double l4 = 0.0;
  double total = 0.0;

  static LossBreakdown combine(double l1, double l2, double l3, double l4, double gamma);
  bool operator==(const LossBreakdown&) const = default;
};

// Closed-form negative gradients for logits a = softmax([W, P_v]ᵀ φ) with unit
// φ and prototypes. Throw AssumptionViolated otherwise.

struct EmbeddingOracle {
  Vec embedding;                // −∇_φ
  std::vector<Vec> prototypes;  // −∇_{w_k}, unified [W, P_v] order
  Vec probabilities;            // a_k (a_y = 0 for the masked variant)
};

struct MixedOracle {
  Vec mixed;                    // −∇_z
  std::vector<Vec> prototypes;  // −∇_{w_k}
  Vec component_i;              // −∇_{φ(x_i)} = λ·(−∇_z)
  Vec component_j;              // −∇_{φ(x_j)} = (1−λ)·(−∇_z)
  Vec probabilities;
};

/// L1: w_y − Σ a_i w_i; prototypes (1−a_y)φ for i = y, −a_i φ otherwise.
EmbeddingOracle oracle_l1(const CosineHead& head, std::span<const double> emb, std::size_t y);
/// L2: same with a_y = 0 removed from the support and target ŷ.
EmbeddingOracle oracle_l2(const CosineHead& head, std::span<const double> emb, std::size_t y, std::size_t y_hat);
/// L3 with identity g: z = λφ_i + (1−λ)φ_j, target ŷ.
MixedOracle oracle_l3(const CosineHead& head, std::span<const double> emb_i, std::span<const double> emb_j,
                      double lambda, std::size_t y_hat);
/// L4 with identity g: ŷ masked out, target ŷ̂.
MixedOracle oracle_l4(const CosineHead& head, std::span<const double> emb_i, std::span<const double> emb_j,
                      double lambda, std::size_t y_hat, std::size_t y_hathat);

}  // namespace fact
