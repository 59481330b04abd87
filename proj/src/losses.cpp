// SPDX-License-Identifier: Apache-2.0
#include "fact/losses.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "fact/error.hpp"

namespace fact {

namespace {

void check_layout(std::span<const double> logits, const LossConfig& cfg) {
  cfg.validate();
  if (logits.size() != cfg.num_base + cfg.num_virtual) {
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(cfg.num_base + cfg.num_virtual) +
                                                  " logits, got " + std::to_string(logits.size()));
  }
  if (!all_finite(logits)) throw Error(ErrorCode::NonFiniteInput, "non-finite logits");
}

// −log p_t = log1p(Σ_{k≠t} exp(z_k − z_t)) when z_t is the largest logit, which
// keeps full relative precision for confident predictions. p_t − 1 is likewise
// formed as −Σ_{k≠t} p_k.
CrossEntropy from_probabilities(std::span<const double> logits, Vec p, std::size_t target,
                                std::optional<std::size_t> masked) {
  CrossEntropy ce;
  double rest = 0.0;
  double ratio = 0.0;
  bool target_is_max = true;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    if (k == target || (masked && k == *masked)) continue;
    rest += p[k];
    const double diff = logits[k] - logits[target];
    if (diff > 0.0) target_is_max = false;
    ratio += std::exp(diff);
  }
  ce.value = target_is_max ? std::log1p(ratio) : -std::log(p[target]);
  p[target] = -rest;
  ce.dlogits = std::move(p);
  return ce;
}

constexpr double kUnitTolerance = 1e-9;

void require_unit(std::span<const double> v, const char* what) {
  if (std::abs(l2_norm(v) - 1.0) > kUnitTolerance) {
    throw Error(ErrorCode::AssumptionViolated, std::string(what) + " is not unit-normalized");
  }
}

void require_unit_head(const CosineHead& head) {
  for (std::size_t k = 0; k < head.num_logits(); ++k) require_unit(head.prototype(k), "prototype");
}

EmbeddingOracle embedding_oracle(const CosineHead& head, std::span<const double> emb, std::optional<std::size_t> masked,
                                 std::size_t target) {
  require_unit(emb, "embedding");
  require_unit_head(head);
  const std::size_t n = head.num_logits();
  if (target >= n || (masked && *masked >= n)) throw Error(ErrorCode::IndexOutOfRange, "oracle label out of range");

  EmbeddingOracle out;
  out.probabilities = masked_softmax(dot_logits(head, emb), masked);
  out.embedding = head.prototype(target);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& w = head.prototype(i);
    for (std::size_t d = 0; d < w.size(); ++d) out.embedding[d] -= out.probabilities[i] * w[d];
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double coef = i == target ? 1.0 - out.probabilities[i] : -out.probabilities[i];
    Vec g(emb.begin(), emb.end());
    for (double& x : g) x *= coef;
    out.prototypes.push_back(std::move(g));
  }
  return out;
}

MixedOracle mixed_oracle(const CosineHead& head, std::span<const double> emb_i, std::span<const double> emb_j,
                         double lambda, std::optional<std::size_t> masked, std::size_t target) {
  require_unit(emb_i, "component i");
  require_unit(emb_j, "component j");
  require_unit_head(head);
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::LambdaOutOfRange, "lambda outside [0, 1]");
  const std::size_t n = head.num_logits();
  if (target >= n || (masked && *masked >= n)) throw Error(ErrorCode::IndexOutOfRange, "oracle label out of range");
  if (emb_i.size() != emb_j.size()) throw Error(ErrorCode::DimensionMismatch, "mixup components differ in size");

  Vec z(emb_i.size());
  for (std::size_t d = 0; d < z.size(); ++d) z[d] = lambda * emb_i[d] + (1.0 - lambda) * emb_j[d];

  MixedOracle out;
  out.probabilities = masked_softmax(dot_logits(head, z), masked);
  out.mixed = head.prototype(target);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec& w = head.prototype(k);
    for (std::size_t d = 0; d < w.size(); ++d) out.mixed[d] -= out.probabilities[k] * w[d];
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double coef = k == target ? 1.0 - out.probabilities[k] : -out.probabilities[k];
    Vec g = z;
    for (double& x : g) x *= coef;
    out.prototypes.push_back(std::move(g));
  }
  out.component_i = out.mixed;
  out.component_j = out.mixed;
  for (double& x : out.component_i) x *= lambda;
  for (double& x : out.component_j) x *= 1.0 - lambda;
  return out;
}

}  // namespace

void LossConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw Error(ErrorCode::InvalidParameter, "gamma must be >= 0");
  if (num_virtual < 1) throw Error(ErrorCode::InvalidParameter, "at least one virtual prototype is required");
  if (num_base < 1) throw Error(ErrorCode::InvalidParameter, "at least one known class is required");
}

std::size_t pseudo_virtual_label(std::span<const double> logits, const LossConfig& cfg) {
  check_layout(logits, cfg);
  return argmax(logits, cfg.num_base, logits.size());
}

std::size_t pseudo_known_label(std::span<const double> logits, const LossConfig& cfg) {
  check_layout(logits, cfg);
  return argmax(logits, 0, cfg.num_base);
}

CrossEntropy cross_entropy(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) throw Error(ErrorCode::IndexOutOfRange, "cross-entropy target out of range");
  return from_probabilities(logits, softmax(logits), target, std::nullopt);
}

CrossEntropy masked_cross_entropy(std::span<const double> logits, std::size_t masked, std::size_t target) {
  if (target >= logits.size()) throw Error(ErrorCode::IndexOutOfRange, "cross-entropy target out of range");
  if (target == masked) throw Error(ErrorCode::InvalidParameter, "target coincides with the masked class");
  return from_probabilities(logits, masked_softmax(logits, masked), target, masked);
}

VirtualLoss virtual_loss(std::span<const double> logits, std::size_t y, const LossConfig& cfg) {
  check_layout(logits, cfg);
  if (y >= cfg.num_base) throw Error(ErrorCode::IndexOutOfRange, "ground-truth label is not a known class");
  VirtualLoss out;
  out.y_hat = argmax(logits, cfg.num_base, logits.size());
  const CrossEntropy first = cross_entropy(logits, y);
  const CrossEntropy second = masked_cross_entropy(logits, y, out.y_hat);
  out.l1 = first.value;
  out.l2 = second.value;
  out.value = out.l1 + cfg.gamma * out.l2;
  out.dlogits = first.dlogits;
  for (std::size_t k = 0; k < logits.size(); ++k) out.dlogits[k] += cfg.gamma * second.dlogits[k];
  return out;
}

ForecastLoss forecast_loss(std::span<const double> logits_z, const LossConfig& cfg) {
  check_layout(logits_z, cfg);
  ForecastLoss out;
  out.y_hat = argmax(logits_z, cfg.num_base, logits_z.size());
  out.y_hathat = argmax(logits_z, 0, cfg.num_base);
  const CrossEntropy third = cross_entropy(logits_z, out.y_hat);
  const CrossEntropy fourth = masked_cross_entropy(logits_z, out.y_hat, out.y_hathat);
  out.l3 = third.value;
  out.l4 = fourth.value;
  out.value = out.l3 + cfg.gamma * out.l4;
  out.dlogits = third.dlogits;
  for (std::size_t k = 0; k < logits_z.size(); ++k) out.dlogits[k] += cfg.gamma * fourth.dlogits[k];
  return out;
}

LossBreakdown LossBreakdown::combine(double l1, double l2, double l3, double l4, double gamma) {
  return LossBreakdown{l1, l2, l3, l4, l1 + gamma * l2 + l3 + gamma * l4};
}

EmbeddingOracle oracle_l1(const CosineHead& head, std::span<const double> emb, std::size_t y) {
  return embedding_oracle(head, emb, std::nullopt, y);
}

EmbeddingOracle oracle_l2(const CosineHead& head, std::span<const double> emb, std::size_t y, std::size_t y_hat) {
  if (y == y_hat) throw Error(ErrorCode::InvalidParameter, "pseudo label coincides with the masked class");
  return embedding_oracle(head, emb, y, y_hat);
}

MixedOracle oracle_l3(const CosineHead& head, std::span<const double> emb_i, std::span<const double> emb_j,
                      double lambda, std::size_t y_hat) {
  return mixed_oracle(head, emb_i, emb_j, lambda, std::nullopt, y_hat);
}

MixedOracle oracle_l4(const CosineHead& head, std::span<const double> emb_i, std::span<const double> emb_j,
                      double lambda, std::size_t y_hat, std::size_t y_hathat) {
  if (y_hat == y_hathat) throw Error(ErrorCode::InvalidParameter, "pseudo labels coincide");
  return mixed_oracle(head, emb_i, emb_j, lambda, y_hat, y_hathat);
}

}  // namespace fact
