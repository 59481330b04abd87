// SPDX-License-Identifier: Apache-2.0
#include "fact/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fact/error.hpp"

namespace fact {

namespace {

void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + ": expected dimension " + std::to_string(want) + ", got " + std::to_string(got));
  }
}

void check_chain(const std::vector<DenseLayer>& layers, std::size_t& dim, const char* stage) {
  for (const auto& layer : layers) {
    if (layer.bias.size() != layer.out_dim() || layer.weight.data.size() != layer.weight.rows * layer.weight.cols) {
      throw Error(ErrorCode::DimensionMismatch, std::string(stage) + " layer has inconsistent bias/weight shape");
    }
    check_dim(layer.in_dim(), dim, stage);
    dim = layer.out_dim();
  }
}

StageOutput run_stage(const std::vector<DenseLayer>& layers, std::span<const double> input) {
  StageOutput out;
  out.value.assign(input.begin(), input.end());
  out.cache.reserve(layers.size());
  for (const auto& layer : layers) {
    LayerCache lc;
    lc.input = out.value;
    Vec pre = layer.weight.apply(lc.input);
    for (std::size_t i = 0; i < pre.size(); ++i) {
      pre[i] += layer.bias[i];
      if (layer.activation == Activation::tanh) pre[i] = std::tanh(pre[i]);
    }
    lc.output = pre;
    out.value = std::move(pre);
    out.cache.push_back(std::move(lc));
  }
  return out;
}

Vec backprop_stage(const std::vector<DenseLayer>& layers, const StageCache& cache, std::span<const double> upstream,
                   std::vector<LayerGrad>& grads, const char* stage) {
  if (cache.size() != layers.size() || grads.size() != layers.size()) {
    throw Error(ErrorCode::StaleCache, std::string(stage) + " cache/grad depth does not match the network");
  }
  Vec delta(upstream.begin(), upstream.end());
  for (std::size_t li = layers.size(); li-- > 0;) {
    const auto& layer = layers[li];
    const auto& lc = cache[li];
    if (lc.input.size() != layer.in_dim() || lc.output.size() != layer.out_dim() || delta.size() != layer.out_dim()) {
      throw Error(ErrorCode::StaleCache, std::string(stage) + " cache shape does not match layer " + std::to_string(li));
    }
    if (layer.activation == Activation::tanh) {
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] *= 1.0 - lc.output[i] * lc.output[i];
    }
    auto& g = grads[li];
    for (std::size_t r = 0; r < layer.out_dim(); ++r) {
      g.bias[r] += delta[r];
      auto row = g.weight.row(r);
      for (std::size_t c = 0; c < layer.in_dim(); ++c) row[c] += delta[r] * lc.input[c];
    }
    delta = layer.weight.apply_transposed(delta);
  }
  return delta;
}

LayerGrad zero_grad(const DenseLayer& layer) {
  return LayerGrad{Matrix(layer.out_dim(), layer.in_dim()), Vec(layer.out_dim(), 0.0)};
}

}  // namespace

std::size_t EmbeddingNet::input_dim() const {
  if (!h_layers.empty()) return h_layers.front().in_dim();
  if (!g_layers.empty()) return g_layers.front().in_dim();
  return 0;
}

std::size_t EmbeddingNet::mid_dim() const {
  if (!h_layers.empty()) return h_layers.back().out_dim();
  if (!g_layers.empty()) return g_layers.front().in_dim();
  return 0;
}

std::size_t EmbeddingNet::embed_dim() const {
  if (!g_layers.empty()) return g_layers.back().out_dim();
  return mid_dim();
}

void EmbeddingNet::validate() const {
  std::size_t dim = input_dim();
  check_chain(h_layers, dim, "h");
  check_chain(g_layers, dim, "g");
}

DenseLayer make_dense_layer(std::size_t in_dim, std::size_t out_dim, Activation activation, Rng& rng) {
  DenseLayer layer{Matrix(out_dim, in_dim), Vec(out_dim, 0.0), activation};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (double& w : layer.weight.data) w = (2.0 * rng.uniform() - 1.0) * bound;
  return layer;
}

EmbeddingNet make_embedding_net(std::size_t input_dim, std::size_t mid_dim, std::size_t embed_dim, Rng& rng) {
  if (input_dim == 0 || mid_dim == 0 || embed_dim == 0) {
    throw Error(ErrorCode::InvalidParameter, "network dimensions must be positive");
  }
  EmbeddingNet net;
  net.h_layers.push_back(make_dense_layer(input_dim, mid_dim, Activation::tanh, rng));
  net.g_layers.push_back(make_dense_layer(mid_dim, embed_dim, Activation::identity, rng));
  return net;
}

namespace {
// A net with no layers at all is the identity map on any dimension.
bool is_identity(const EmbeddingNet& net) { return net.h_layers.empty() && net.g_layers.empty(); }
}  // namespace

StageOutput forward_mid(const EmbeddingNet& net, std::span<const double> x) {
  if (!is_identity(net)) check_dim(x.size(), net.input_dim(), "forward_mid input");
  if (!all_finite(x)) throw Error(ErrorCode::NonFiniteInput, "forward_mid input has non-finite entries");
  return run_stage(net.h_layers, x);
}

StageOutput forward_from_mid(const EmbeddingNet& net, std::span<const double> mid) {
  if (!is_identity(net)) check_dim(mid.size(), net.mid_dim(), "forward_from_mid input");
  if (!all_finite(mid)) throw Error(ErrorCode::NonFiniteInput, "mid-level features have non-finite entries");
  return run_stage(net.g_layers, mid);
}

ForwardCache forward(const EmbeddingNet& net, std::span<const double> x) {
  auto h = forward_mid(net, x);
  auto g = forward_from_mid(net, h.value);
  return ForwardCache{std::move(h.cache), std::move(g.cache), std::move(h.value), std::move(g.value)};
}

Vec embed(const EmbeddingNet& net, std::span<const double> x) { return forward(net, x).embedding; }

std::size_t CosineHead::dim() const {
  if (!known.empty()) return known.front().size();
  if (!virtual_protos.empty()) return virtual_protos.front().size();
  return 0;
}

const Vec& CosineHead::prototype(std::size_t k) const {
  if (k < known.size()) return known[k];
  if (k - known.size() < virtual_protos.size()) return virtual_protos[k - known.size()];
  throw Error(ErrorCode::IndexOutOfRange, "prototype index " + std::to_string(k));
}

Vec& CosineHead::prototype(std::size_t k) {
  return const_cast<Vec&>(static_cast<const CosineHead&>(*this).prototype(k));
}

CosineHead make_cosine_head(std::size_t num_known, std::size_t num_virtual, std::size_t dim, double scale, Rng& rng) {
  if (dim == 0) throw Error(ErrorCode::InvalidParameter, "head dimension must be positive");
  if (!(scale > 0.0)) throw Error(ErrorCode::InvalidParameter, "logit scale must be positive");
  auto draw = [&] {
    Vec v(dim);
    for (double& x : v) x = rng.normal();
    return l2_normalize(v);
  };
  CosineHead head;
  head.scale = scale;
  head.num_base = num_known;
  for (std::size_t i = 0; i < num_known; ++i) head.known.push_back(draw());
  for (std::size_t i = 0; i < num_virtual; ++i) head.virtual_protos.push_back(draw());
  return head;
}

Vec cosine_logits(const CosineHead& head, std::span<const double> emb, bool use_scale) {
  check_dim(emb.size(), head.dim(), "cosine_logits embedding");
  const Vec e = l2_normalize(emb);
  const double s = use_scale ? head.scale : 1.0;
  Vec logits(head.num_logits());
  for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = s * dot(l2_normalize(head.prototype(k)), e);
  return logits;
}

Vec dot_logits(const CosineHead& head, std::span<const double> emb) {
  check_dim(emb.size(), head.dim(), "dot_logits embedding");
  Vec logits(head.num_logits());
  for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = dot(head.prototype(k), emb);
  return logits;
}

GradBuffer GradBuffer::zeros_like(const EmbeddingNet& net, const CosineHead& head) {
  GradBuffer g;
  for (const auto& layer : net.h_layers) g.h.push_back(zero_grad(layer));
  for (const auto& layer : net.g_layers) g.g.push_back(zero_grad(layer));
  for (const auto& w : head.known) g.known.emplace_back(w.size(), 0.0);
  for (const auto& p : head.virtual_protos) g.virtual_protos.emplace_back(p.size(), 0.0);
  return g;
}

std::vector<std::span<double>> GradBuffer::views() {
  std::vector<std::span<double>> out;
  for (auto* stage : {&h, &g}) {
    for (auto& lg : *stage) {
      out.emplace_back(lg.weight.data);
      out.emplace_back(lg.bias);
    }
  }
  for (auto& w : known) out.emplace_back(w);
  for (auto& p : virtual_protos) out.emplace_back(p);
  return out;
}

std::vector<std::span<const double>> GradBuffer::views() const {
  auto mutable_views = const_cast<GradBuffer*>(this)->views();
  return {mutable_views.begin(), mutable_views.end()};
}

void GradBuffer::add(const GradBuffer& other, double weight) {
  auto mine = views();
  const auto theirs = other.views();
  if (mine.size() != theirs.size()) throw Error(ErrorCode::DimensionMismatch, "gradient buffers differ in shape");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    check_dim(theirs[i].size(), mine[i].size(), "gradient buffer block");
    for (std::size_t j = 0; j < mine[i].size(); ++j) mine[i][j] += weight * theirs[i][j];
  }
}

void GradBuffer::scale(double factor) {
  for (auto v : views()) {
    for (double& x : v) x *= factor;
  }
}

double GradBuffer::max_abs() const {
  double m = 0.0;
  for (auto v : views()) {
    for (double x : v) m = std::max(m, std::abs(x));
  }
  return m;
}

bool GradBuffer::all_finite() const {
  const auto vs = views();
  return std::all_of(vs.begin(), vs.end(), [](auto v) { return fact::all_finite(v); });
}

std::vector<std::span<double>> parameter_views(EmbeddingNet& net, CosineHead& head) {
  std::vector<std::span<double>> out;
  for (auto* stage : {&net.h_layers, &net.g_layers}) {
    for (auto& layer : *stage) {
      out.emplace_back(layer.weight.data);
      out.emplace_back(layer.bias);
    }
  }
  for (auto& w : head.known) out.emplace_back(w);
  for (auto& p : head.virtual_protos) out.emplace_back(p);
  return out;
}

Vec cosine_head_backward(const CosineHead& head, std::span<const double> emb, std::span<const double> dlogits,
                         bool use_scale, GradBuffer& grads) {
  check_dim(dlogits.size(), head.num_logits(), "cosine_head_backward upstream");
  check_dim(emb.size(), head.dim(), "cosine_head_backward embedding");
  if (grads.known.size() != head.num_known() || grads.virtual_protos.size() != head.num_virtual()) {
    throw Error(ErrorCode::StaleCache, "gradient buffer does not match head");
  }
  const double s = use_scale ? head.scale : 1.0;
  const double emb_norm = l2_norm(emb);
  const Vec e = l2_normalize(emb);
  Vec demb(emb.size(), 0.0);
  for (std::size_t k = 0; k < head.num_logits(); ++k) {
    const double gk = dlogits[k] * s;
    if (gk == 0.0) continue;
    const Vec& raw = head.prototype(k);
    const double w_norm = l2_norm(raw);
    const Vec u = l2_normalize(raw);
    const double c = dot(u, e);
    Vec& gw = k < head.num_known() ? grads.known[k] : grads.virtual_protos[k - head.num_known()];
    for (std::size_t i = 0; i < e.size(); ++i) {
      demb[i] += gk * (u[i] - c * e[i]) / emb_norm;
      gw[i] += gk * (e[i] - c * u[i]) / w_norm;
    }
  }
  return demb;
}

Vec dot_head_backward(const CosineHead& head, std::span<const double> emb, std::span<const double> dlogits,
                      GradBuffer& grads) {
  check_dim(dlogits.size(), head.num_logits(), "dot_head_backward upstream");
  check_dim(emb.size(), head.dim(), "dot_head_backward embedding");
  if (grads.known.size() != head.num_known() || grads.virtual_protos.size() != head.num_virtual()) {
    throw Error(ErrorCode::StaleCache, "gradient buffer does not match head");
  }
  Vec demb(emb.size(), 0.0);
  for (std::size_t k = 0; k < head.num_logits(); ++k) {
    const Vec& w = head.prototype(k);
    Vec& gw = k < head.num_known() ? grads.known[k] : grads.virtual_protos[k - head.num_known()];
    for (std::size_t i = 0; i < emb.size(); ++i) {
      demb[i] += dlogits[k] * w[i];
      gw[i] += dlogits[k] * emb[i];
    }
  }
  return demb;
}

Vec backward_g(const EmbeddingNet& net, const StageCache& cache, std::span<const double> demb, GradBuffer& grads) {
  return backprop_stage(net.g_layers, cache, demb, grads.g, "g");
}

Vec backward_h(const EmbeddingNet& net, const StageCache& cache, std::span<const double> dmid, GradBuffer& grads) {
  return backprop_stage(net.h_layers, cache, dmid, grads.h, "h");
}

GradBuffer backward(const EmbeddingNet& net, const CosineHead& head, std::span<const double> dlogits,
                    const ForwardCache& cache, bool use_scale) {
  GradBuffer grads = GradBuffer::zeros_like(net, head);
  const Vec demb = cosine_head_backward(head, cache.embedding, dlogits, use_scale, grads);
  const Vec dmid = backward_g(net, cache.g, demb, grads);
  backward_h(net, cache.h, dmid, grads);
  return grads;
}

}  // namespace fact
