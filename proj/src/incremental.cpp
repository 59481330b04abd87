// SPDX-License-Identifier: Apache-2.0
#include "fact/incremental.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "fact/error.hpp"
#include "fact/losses.hpp"
#include "fact/trainer.hpp"

namespace fact {

namespace {

// log(η·e^a + (1−η)·e^b) without overflow.
double log_mix(double eta, double a, double b) {
  if (eta >= 1.0) return a;
  if (eta <= 0.0) return b;
  const double m = std::max(a, b);
  return m + std::log(eta * std::exp(a - m) + (1.0 - eta) * std::exp(b - m));
}

std::vector<Vec> normalized(const std::vector<Vec>& protos) {
  std::vector<Vec> out;
  out.reserve(protos.size());
  for (const auto& p : protos) out.push_back(l2_normalize(p));
  return out;
}

Vec tempered_similarities(const std::vector<Vec>& unit_protos, std::span<const double> unit_emb, double tau) {
  Vec s(unit_protos.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = tau * dot(unit_protos[i], unit_emb);
  return s;
}

Vec known_logits(const CosineHead& head, std::span<const double> emb) {
  Vec logits = cosine_logits(head, emb, true);
  logits.resize(head.num_known());
  return logits;
}

const LabeledDataset& require_session(const LabeledDataset& session) {
  if (session.empty()) throw Error(ErrorCode::EmptyDataset, "session dataset is empty");
  session.validate();
  return session;
}

using LossFn = std::function<CrossEntropy(std::size_t row, std::span<const double> known)>;

// Full-batch SGD over every parameter; loss_fn sees the known-block logits.
void adapt(SessionState& state, const LabeledDataset& session, const AdaptConfig& cfg, const LossFn& loss_fn) {
  GradBuffer velocity = GradBuffer::zeros_like(state.net, state.head);
  const double inv_n = 1.0 / static_cast<double>(session.size());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    GradBuffer grads = GradBuffer::zeros_like(state.net, state.head);
    for (std::size_t i = 0; i < session.size(); ++i) {
      const ForwardCache fc = forward(state.net, session.features[i]);
      const Vec logits = known_logits(state.head, fc.embedding);
      CrossEntropy ce = loss_fn(i, logits);
      Vec dlogits(state.head.num_logits(), 0.0);
      for (std::size_t k = 0; k < ce.dlogits.size(); ++k) dlogits[k] = ce.dlogits[k] * inv_n;
      const Vec demb = cosine_head_backward(state.head, fc.embedding, dlogits, true, grads);
      const Vec dmid = backward_g(state.net, fc.g, demb, grads);
      backward_h(state.net, fc.h, dmid, grads);
    }
    if (!grads.all_finite()) throw Error(ErrorCode::NumericalFailure, "non-finite gradient during session adaptation");
    sgd_step(state.net, state.head, grads, velocity, cfg.lr, cfg.momentum);
  }
}

std::size_t registered_index(const SessionState& state, int label) {
  const int k = state.head_index(label);
  if (k < 0) throw Error(ErrorCode::CoverageMismatch, "label " + std::to_string(label) + " is not in the head");
  return static_cast<std::size_t>(k);
}

}  // namespace

void InferConfig::validate() const {
  if (!(eta >= 0.0 && eta <= 1.0)) throw Error(ErrorCode::InvalidParameter, "eta must be in [0, 1]");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorCode::InvalidParameter, "tau must be > 0");
}

int SessionState::head_index(int label) const {
  const auto it = std::find(registry.begin(), registry.end(), label);
  return it == registry.end() ? -1 : static_cast<int>(it - registry.begin());
}

SessionState make_session_state(EmbeddingNet net, CosineHead head) {
  SessionState state{std::move(net), std::move(head), 0, {}};
  for (std::size_t k = 0; k < state.head.num_known(); ++k) state.registry.push_back(static_cast<int>(k));
  return state;
}

std::map<int, Vec> class_prototypes(const EmbeddingNet& net, const LabeledDataset& data) {
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "no instances to build prototypes from");
  std::map<int, Vec> sums;
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vec e = embed(net, data.features[i]);
    auto [it, inserted] = sums.try_emplace(data.labels[i], e.size(), 0.0);
    for (std::size_t d = 0; d < e.size(); ++d) it->second[d] += e[d];
    ++counts[data.labels[i]];
  }
  std::map<int, Vec> out;
  for (auto& [label, sum] : sums) {
    const double n = static_cast<double>(counts[label]);
    for (double& x : sum) x /= n;
    out.emplace(label, l2_normalize(sum));
  }
  return out;
}

SessionState expand_head(SessionState state, const std::map<int, Vec>& prototypes) {
  for (const auto& [label, proto] : prototypes) {
    if (state.head_index(label) >= 0) {
      throw Error(ErrorCode::DuplicateLabel, "label " + std::to_string(label) + " is already in the head");
    }
    if (proto.size() != state.head.dim()) throw Error(ErrorCode::DimensionMismatch, "prototype dimension mismatch");
  }
  for (const auto& [label, proto] : prototypes) {
    state.head.known.push_back(l2_normalize(proto));
    state.registry.push_back(label);
  }
  return state;
}

SessionState replace_with_prototypes(SessionState state, const LabeledDataset& data) {
  for (const auto& [label, proto] : class_prototypes(state.net, data)) {
    const int k = state.head_index(label);
    if (k < 0) throw Error(ErrorCode::CoverageMismatch, "label " + std::to_string(label) + " is not in the head");
    state.head.known[static_cast<std::size_t>(k)] = proto;
  }
  return state;
}

Vec infer_fact_embedding(const CosineHead& head, const InferConfig& cfg, std::span<const double> emb) {
  cfg.validate();
  if (head.num_virtual() < 1) throw Error(ErrorCode::NoVirtualPrototypes, "FACT inference needs virtual prototypes");
  if (head.num_known() < 1) throw Error(ErrorCode::InvalidParameter, "head has no known classes");
  const Vec phi = l2_normalize(emb);
  const auto w = normalized(head.known);
  const auto p = normalized(head.virtual_protos);
  const Vec w_phi = tempered_similarities(w, phi, cfg.tau);
  const Vec virtual_posterior = softmax(tempered_similarities(p, phi, cfg.tau));

  Vec out(w.size(), 0.0);
  Vec log_scores(w.size());
  for (std::size_t v = 0; v < p.size(); ++v) {
    const double p_phi = cfg.tau * dot(p[v], phi);
    for (std::size_t i = 0; i < w.size(); ++i) {
      double a = w_phi[i];
      double b = p_phi;
      if (cfg.prior == PriorMode::gaussian) {
        const double w_p = cfg.tau * dot(w[i], p[v]);
        a += w_p;
        b += w_p;
      }
      log_scores[i] = log_mix(cfg.eta, a, b);
    }
    const Vec row = softmax(log_scores);
    for (std::size_t i = 0; i < w.size(); ++i) out[i] += row[i] * virtual_posterior[v];
  }
  return out;
}

Vec infer_fact(const SessionState& state, const InferConfig& cfg, std::span<const double> x) {
  return infer_fact_embedding(state.head, cfg, embed(state.net, x));
}

Vec infer_protonet_embedding(const CosineHead& head, std::span<const double> emb, double tau) {
  if (head.num_known() < 1) throw Error(ErrorCode::InvalidParameter, "head has no known classes");
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidParameter, "tau must be > 0");
  return softmax(tempered_similarities(normalized(head.known), l2_normalize(emb), tau));
}

Vec infer_protonet(const SessionState& state, std::span<const double> x, double tau) {
  return infer_protonet_embedding(state.head, embed(state.net, x), tau);
}

KdLoss kd_loss(std::span<const double> old_logits, std::span<const double> new_logits, std::size_t y,
               double lambda_kd) {
  if (old_logits.size() > new_logits.size() || old_logits.empty()) {
    throw Error(ErrorCode::DimensionMismatch, "old outputs must be a non-empty prefix of the new outputs");
  }
  if (y >= new_logits.size()) throw Error(ErrorCode::IndexOutOfRange, "KD target out of range");
  if (!(lambda_kd >= 0.0 && lambda_kd <= 1.0)) throw Error(ErrorCode::InvalidParameter, "lambda_kd must be in [0, 1]");

  const std::size_t m = old_logits.size();
  const CrossEntropy ce = cross_entropy(new_logits, y);
  const Vec teacher = softmax(old_logits);
  const std::span<const double> student_old(new_logits.data(), m);
  const Vec student = softmax(student_old);
  const double lse = log_sum_exp(student_old);

  KdLoss out;
  out.ce = ce.value;
  for (std::size_t k = 0; k < m; ++k) out.kd -= teacher[k] * (student_old[k] - lse);
  out.value = (1.0 - lambda_kd) * out.ce + lambda_kd * out.kd;
  out.dlogits = ce.dlogits;
  for (double& g : out.dlogits) g *= 1.0 - lambda_kd;
  for (std::size_t k = 0; k < m; ++k) out.dlogits[k] += lambda_kd * (student[k] - teacher[k]);
  return out;
}

SessionState finetune_session(SessionState state, const LabeledDataset& session, const AdaptConfig& cfg) {
  const LabeledDataset& data = require_session(session);
  std::vector<std::size_t> targets;
  for (int label : data.labels) targets.push_back(registered_index(state, label));
  adapt(state, data, cfg, [&](std::size_t row, std::span<const double> known) {
    return cross_entropy(known, targets[row]);
  });
  return state;
}

SessionState kd_session(SessionState state, const LabeledDataset& session, const AdaptConfig& cfg) {
  const LabeledDataset& data = require_session(session);
  std::vector<std::size_t> targets;
  for (int label : data.labels) targets.push_back(registered_index(state, label));

  // Teacher: the pre-adaptation model restricted to the classes known before this session.
  const auto session_classes = data.classes();
  std::size_t num_old = 0;
  while (num_old < state.registry.size() &&
         !std::binary_search(session_classes.begin(), session_classes.end(), state.registry[num_old])) {
    ++num_old;
  }
  for (std::size_t k = num_old; k < state.registry.size(); ++k) {
    if (!std::binary_search(session_classes.begin(), session_classes.end(), state.registry[k])) {
      throw Error(ErrorCode::CoverageMismatch, "session classes must be the most recently added head entries");
    }
  }
  if (num_old == 0) throw Error(ErrorCode::CoverageMismatch, "KD needs at least one previously known class");
  std::vector<Vec> teacher;
  teacher.reserve(data.size());
  for (const auto& x : data.features) {
    Vec logits = known_logits(state.head, embed(state.net, x));
    logits.resize(num_old);
    teacher.push_back(std::move(logits));
  }

  adapt(state, data, cfg, [&](std::size_t row, std::span<const double> known) {
    const KdLoss kd = kd_loss(teacher[row], known, targets[row], cfg.lambda_kd);
    return CrossEntropy{kd.value, kd.dlogits};
  });
  return state;
}

}  // namespace fact
