// SPDX-License-Identifier: Apache-2.0
//
// Two-stage embedding network φ = g∘h with hand-written backward passes, and
// the cosine head over known-class and virtual prototypes.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fact/numerics.hpp"

namespace fact {

enum class Activation { identity, tanh };

struct DenseLayer {
  Matrix weight;  // out × in
  Vec bias;       // out
  Activation activation = Activation::identity;

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }

  bool operator==(const DenseLayer&) const = default;
};

/// Activations retained by a forward pass through one layer.
struct LayerCache {
  Vec input;
  Vec output;  // post-activation
};
using StageCache = std::vector<LayerCache>;

/// φ(x) = g(h(x)). Either stage may be empty, in which case it is the identity.
struct EmbeddingNet {
  std::vector<DenseLayer> h_layers;
  std::vector<DenseLayer> g_layers;

  std::size_t input_dim() const;
  std::size_t mid_dim() const;
  std::size_t embed_dim() const;

  /// Throws DimensionMismatch if the layer chain is inconsistent.
  void validate() const;

  bool operator==(const EmbeddingNet&) const = default;
};

/// Affine D→m with tanh, then affine m→d. Weights uniform in ±1/√fan_in, biases zero.
EmbeddingNet make_embedding_net(std::size_t input_dim, std::size_t mid_dim, std::size_t embed_dim, Rng& rng);

DenseLayer make_dense_layer(std::size_t in_dim, std::size_t out_dim, Activation activation, Rng& rng);

struct StageOutput {
  Vec value;
  StageCache cache;
};

/// h(x). Throws DimensionMismatch on a wrong-sized input.
StageOutput forward_mid(const EmbeddingNet& net, std::span<const double> x);
/// g(mid). Throws DimensionMismatch or NonFiniteInput.
StageOutput forward_from_mid(const EmbeddingNet& net, std::span<const double> mid);

struct ForwardCache {
  StageCache h;
  StageCache g;
  Vec mid;
  Vec embedding;
};

ForwardCache forward(const EmbeddingNet& net, std::span<const double> x);
Vec embed(const EmbeddingNet& net, std::span<const double> x);

/// Known-class prototypes W followed by virtual prototypes P_v. Stored raw;
/// normalized on every use.
struct CosineHead {
  std::vector<Vec> known;
  std::vector<Vec> virtual_protos;
  double scale = 16.0;
  std::size_t num_base = 0;

  std::size_t num_known() const { return known.size(); }
  std::size_t num_virtual() const { return virtual_protos.size(); }
  std::size_t num_logits() const { return known.size() + virtual_protos.size(); }
  std::size_t dim() const;

  /// Prototype k of the unified list [W, P_v].
  const Vec& prototype(std::size_t k) const;
  Vec& prototype(std::size_t k);

  bool operator==(const CosineHead&) const = default;
};

/// Known and virtual prototypes drawn as independent unit-normalized Gaussians.
CosineHead make_cosine_head(std::size_t num_known, std::size_t num_virtual, std::size_t dim, double scale, Rng& rng);

/// logit_k = s·cos(w_k, emb) (or the bare cosine without scale). Known logits
/// occupy [0, |W|), virtual logits [|W|, |W|+V).
Vec cosine_logits(const CosineHead& head, std::span<const double> emb, bool use_scale = true);

/// Raw inner products [W, P_v]ᵀ emb, no normalization and no scale.
Vec dot_logits(const CosineHead& head, std::span<const double> emb);

struct LayerGrad {
  Matrix weight;
  Vec bias;
};

/// Gradients mirroring the trainable parameters of a net and head.
struct GradBuffer {
  std::vector<LayerGrad> h;
  std::vector<LayerGrad> g;
  std::vector<Vec> known;
  std::vector<Vec> virtual_protos;

  static GradBuffer zeros_like(const EmbeddingNet& net, const CosineHead& head);

  void add(const GradBuffer& other, double weight = 1.0);
  void scale(double factor);
  double max_abs() const;
  bool all_finite() const;

  /// Flat views in the same order as parameter_views().
  std::vector<std::span<double>> views();
  std::vector<std::span<const double>> views() const;
};

/// Flat views of every trainable parameter: h weights/biases, g weights/biases,
/// known prototypes, virtual prototypes.
std::vector<std::span<double>> parameter_views(EmbeddingNet& net, CosineHead& head);

/// Backprop dL/dlogits through the cosine head. Accumulates prototype
/// gradients into grads and returns dL/demb.
Vec cosine_head_backward(const CosineHead& head, std::span<const double> emb, std::span<const double> dlogits,
                         bool use_scale, GradBuffer& grads);

/// Backprop through dot_logits.
Vec dot_head_backward(const CosineHead& head, std::span<const double> emb, std::span<const double> dlogits,
                      GradBuffer& grads);

/// Backprop dL/demb through g; accumulates layer grads, returns dL/dmid.
/// Throws StaleCache if the cache does not match the net.
Vec backward_g(const EmbeddingNet& net, const StageCache& cache, std::span<const double> demb, GradBuffer& grads);
/// Backprop dL/dmid through h; accumulates layer grads, returns dL/dx.
Vec backward_h(const EmbeddingNet& net, const StageCache& cache, std::span<const double> dmid, GradBuffer& grads);

/// Full backward for a single instance through scaled cosine logits.
GradBuffer backward(const EmbeddingNet& net, const CosineHead& head, std::span<const double> dlogits,
                    const ForwardCache& cache, bool use_scale = true);

}  // namespace fact
