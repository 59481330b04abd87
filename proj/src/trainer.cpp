// SPDX-License-Identifier: Apache-2.0
#include "fact/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>

#include "fact/error.hpp"
#include "fact/mixup.hpp"

namespace fact {

namespace {

// Stream ids for Rng::derive. Batch order and mixup pairing never share a stream.
constexpr std::uint64_t kShuffleStream = 0x5155'FF1E;
constexpr std::uint64_t kMixStreamBase = 0x4D49'5800'0000;

LossConfig head_loss_config(const CosineHead& head, double gamma) {
  return LossConfig{gamma, head.num_virtual(), head.num_known()};
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorCode::InvalidParameter, "batch_size must be >= 1");
  if (!(lr_init > 0.0)) throw Error(ErrorCode::InvalidParameter, "lr_init must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::InvalidParameter, "momentum must be in [0, 1)");
  if (!(mix_alpha > 0.0)) throw Error(ErrorCode::InvalidParameter, "mix_alpha must be > 0");
  if (!(loss.gamma >= 0.0)) throw Error(ErrorCode::InvalidParameter, "gamma must be >= 0");
  if (loss.num_virtual < 1) throw Error(ErrorCode::InvalidParameter, "num_virtual must be >= 1");
}

void write_train_report(std::ostream& out, const TrainReport& report) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(10);
  for (const auto& r : report.epochs) {
    out << "epoch=" << r.epoch << " lr=" << r.lr << " l1=" << r.loss.l1 << " l2=" << r.loss.l2 << " l3=" << r.loss.l3
        << " l4=" << r.loss.l4 << " total=" << r.loss.total << " train_acc=" << r.train_acc << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

double lr_schedule(const TrainConfig& cfg, std::size_t epoch) {
  if (epoch >= cfg.epochs) {
    throw Error(ErrorCode::EpochOutOfRange,
                "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  }
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
  return cfg.lr_init * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void sgd_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity, double lr,
              double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw Error(ErrorCode::DimensionMismatch, "sgd_step operands differ in size");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

void sgd_step(EmbeddingNet& net, CosineHead& head, const GradBuffer& grads, GradBuffer& velocity, double lr,
              double momentum) {
  auto params = parameter_views(net, head);
  const auto g = grads.views();
  auto v = velocity.views();
  if (params.size() != g.size() || params.size() != v.size()) {
    throw Error(ErrorCode::DimensionMismatch, "parameter and gradient blocks differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) sgd_step(params[i], g[i], v[i], lr, momentum);
}

BatchResult batch_loss_and_grad(const EmbeddingNet& net, const CosineHead& head, const LabeledDataset& data,
                                std::span<const std::size_t> batch, const TrainConfig& cfg, Rng& mix_rng) {
  if (batch.empty()) throw Error(ErrorCode::EmptyDataset, "empty mini-batch");
  const LossConfig lc = head_loss_config(head, cfg.loss.gamma);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  BatchResult out{{}, 0, 0, GradBuffer::zeros_like(net, head)};
  std::vector<ForwardCache> caches;
  std::vector<int> labels;
  caches.reserve(batch.size());
  labels.reserve(batch.size());

  double l1 = 0.0;
  double l2 = 0.0;
  for (std::size_t idx : batch) {
    const int y = data.labels.at(idx);
    if (y < 0 || static_cast<std::size_t>(y) >= head.num_known()) {
      throw Error(ErrorCode::IndexOutOfRange, "label " + std::to_string(y) + " has no prototype in the head");
    }
    ForwardCache fc = forward(net, data.features[idx]);
    const Vec logits = cosine_logits(head, fc.embedding);
    if (argmax(logits, 0, head.num_known()) == static_cast<std::size_t>(y)) ++out.correct;
    VirtualLoss vl = virtual_loss(logits, static_cast<std::size_t>(y), lc);
    l1 += vl.l1;
    l2 += vl.l2;
    for (double& g : vl.dlogits) g *= inv_n;
    const Vec demb = cosine_head_backward(head, fc.embedding, vl.dlogits, true, out.grads);
    const Vec dmid = backward_g(net, fc.g, demb, out.grads);
    backward_h(net, fc.h, dmid, out.grads);
    caches.push_back(std::move(fc));
    labels.push_back(y);
  }
  l1 *= inv_n;
  l2 *= inv_n;

  double l3 = 0.0;
  double l4 = 0.0;
  if (cfg.forecast) {
    const auto pairs = make_pairs(labels, mix_rng, cfg.mix_alpha);
    out.num_pairs = pairs.size();
    if (!pairs.empty()) {
      const double inv_p = 1.0 / static_cast<double>(pairs.size());
      for (const MixPair& pair : pairs) {
        const ForwardCache& ci = caches[pair.index_i];
        const ForwardCache& cj = caches[pair.index_j];
        const Vec mixed = manifold_mix(ci.mid, cj.mid, pair.lambda);
        const StageOutput z = forward_from_mid(net, mixed);
        const Vec logits_z = cosine_logits(head, z.value);
        ForecastLoss fl = forecast_loss(logits_z, lc);
        l3 += fl.l3;
        l4 += fl.l4;
        for (double& g : fl.dlogits) g *= inv_p;
        const Vec dz = cosine_head_backward(head, z.value, fl.dlogits, true, out.grads);
        const Vec dmid = backward_g(net, z.cache, dz, out.grads);
        Vec dmid_i = dmid;
        Vec dmid_j = dmid;
        for (double& g : dmid_i) g *= pair.lambda;
        for (double& g : dmid_j) g *= 1.0 - pair.lambda;
        backward_h(net, ci.h, dmid_i, out.grads);
        backward_h(net, cj.h, dmid_j, out.grads);
      }
      l3 *= inv_p;
      l4 *= inv_p;
    }
  }
  out.loss = LossBreakdown::combine(l1, l2, l3, l4, lc.gamma);
  return out;
}

double known_block_accuracy(const EmbeddingNet& net, const CosineHead& head, const LabeledDataset& data) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vec logits = cosine_logits(head, embed(net, data.features[i]), false);
    if (argmax(logits, 0, head.num_known()) == static_cast<std::size_t>(data.labels[i])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

TrainResult train_base(const LabeledDataset& data, EmbeddingNet net, CosineHead head, const TrainConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::EmptyDataset, "base training set is empty");
  data.validate();
  net.validate();
  if (data.dim() != net.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "data width " + std::to_string(data.dim()) + " vs network input " +
                                                  std::to_string(net.input_dim()));
  }
  if (head.dim() != net.embed_dim()) throw Error(ErrorCode::DimensionMismatch, "head and embedding dimensions differ");
  if (head.num_virtual() < 1) throw Error(ErrorCode::NoVirtualPrototypes, "base training needs V >= 1");

  TrainResult result{std::move(net), std::move(head), {}};
  if (data.classes().size() < 2) {
    result.report.warnings.push_back("SingleClassDataset: no cross-class pairs, forecasting loss is identically zero");
  }

  GradBuffer velocity = GradBuffer::zeros_like(result.net, result.head);
  Rng shuffle_rng = Rng::derive(cfg.seed, kShuffleStream);
  std::uint64_t batch_counter = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(cfg, epoch);
    const auto order = random_permutation(data.size(), shuffle_rng);

    double sum_l1 = 0.0, sum_l2 = 0.0, sum_l3 = 0.0, sum_l4 = 0.0;
    std::size_t seen = 0, pairs = 0, correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      Rng mix_rng = Rng::derive(cfg.seed, kMixStreamBase + batch_counter++);
      BatchResult br;
      try {
        br = batch_loss_and_grad(result.net, result.head, data, batch, cfg, mix_rng);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteInput && e.code() != ErrorCode::ZeroNorm) throw;
        throw Error(ErrorCode::NumericalFailure, "epoch " + std::to_string(epoch) + ", batch starting at " +
                                                     std::to_string(start) + ": " + e.what());
      }
      if (!std::isfinite(br.loss.total) || !br.grads.all_finite()) {
        throw Error(ErrorCode::NumericalFailure, "non-finite loss or gradient at epoch " + std::to_string(epoch) +
                                                     ", batch starting at " + std::to_string(start) +
                                                     " (total=" + std::to_string(br.loss.total) + ")");
      }
      sgd_step(result.net, result.head, br.grads, velocity, lr, cfg.momentum);

      const double n = static_cast<double>(batch.size());
      const double p = static_cast<double>(br.num_pairs);
      sum_l1 += br.loss.l1 * n;
      sum_l2 += br.loss.l2 * n;
      sum_l3 += br.loss.l3 * p;
      sum_l4 += br.loss.l4 * p;
      seen += batch.size();
      pairs += br.num_pairs;
      correct += br.correct;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const double inv_seen = 1.0 / static_cast<double>(seen);
    const double inv_pairs = pairs > 0 ? 1.0 / static_cast<double>(pairs) : 0.0;
    rec.loss = LossBreakdown::combine(sum_l1 * inv_seen, sum_l2 * inv_seen, sum_l3 * inv_pairs, sum_l4 * inv_pairs,
                                      cfg.loss.gamma);
    rec.train_acc = static_cast<double>(correct) * inv_seen;
    result.report.epochs.push_back(rec);
  }

  result.report.final_train_acc = known_block_accuracy(result.net, result.head, data);
  result.report.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace fact
