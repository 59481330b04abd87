// SPDX-License-Identifier: Apache-2.0
#include "fact/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <iomanip>
#include <map>
#include <ostream>

#include "fact/error.hpp"
#include "fact/losses.hpp"
#include "fact/mixup.hpp"
#include "fact/network.hpp"
#include "fact/trainer.hpp"

namespace fact {

namespace {

enum class Term { l1, l2, l3, l4 };

const char* term_name(Term t) {
  switch (t) {
    case Term::l1: return "L1";
    case Term::l2: return "L2";
    case Term::l3: return "L3";
    case Term::l4: return "L4";
  }
  return "?";
}

/// Labels frozen at the unperturbed point so the loss is smooth in its inputs.
struct Targets {
  std::size_t y = 0;         // L1/L2 ground truth
  std::size_t y_hat = 0;     // virtual pseudo label
  std::size_t y_hathat = 0;  // known pseudo label (L4)
};

CrossEntropy term_loss(Term t, std::span<const double> logits, const Targets& tg) {
  switch (t) {
    case Term::l1: return cross_entropy(logits, tg.y);
    case Term::l2: return masked_cross_entropy(logits, tg.y, tg.y_hat);
    case Term::l3: return cross_entropy(logits, tg.y_hat);
    case Term::l4: return masked_cross_entropy(logits, tg.y_hat, tg.y_hathat);
  }
  throw Error(ErrorCode::InvalidParameter, "unknown loss term");
}

Vec flatten(const std::vector<Vec>& blocks) {
  Vec out;
  for (const auto& b : blocks) out.insert(out.end(), b.begin(), b.end());
  return out;
}

Vec flatten_prototypes(const CosineHead& head) {
  Vec out = flatten(head.known);
  const Vec v = flatten(head.virtual_protos);
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

CosineHead with_prototypes(const CosineHead& head, const Vec& flat) {
  CosineHead out = head;
  const std::size_t d = head.dim();
  for (std::size_t k = 0; k < out.num_logits(); ++k) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(k * d), d, out.prototype(k).begin());
  }
  return out;
}

Vec flatten_prototype_grads(const GradBuffer& g) {
  Vec out = flatten(g.known);
  const Vec v = flatten(g.virtual_protos);
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

Vec negated(Vec v) {
  for (double& x : v) x = -x;
  return v;
}

Vec scaled(Vec v, double s) {
  for (double& x : v) x *= s;
  return v;
}

// (I − uuᵀ)v for unit u.
Vec tangential(std::span<const double> v, std::span<const double> u) {
  const double c = dot(v, u);
  Vec out(v.begin(), v.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= c * u[i];
  return out;
}

Vec random_vec(std::size_t n, Rng& rng) {
  Vec v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

Vec random_unit(std::size_t n, Rng& rng) { return l2_normalize(random_vec(n, rng)); }

class Tracker {
 public:
  void record(const std::string& name, double tolerance, double error) {
    auto& t = terms_[name];
    t.name = name;
    t.tolerance = tolerance;
    t.max_error = std::max(t.max_error, error);
    ++t.checks;
  }
  std::vector<GradCheckTerm> terms() const {
    std::vector<GradCheckTerm> out;
    for (const auto& [name, t] : terms_) out.push_back(t);
    return out;
  }

 private:
  std::map<std::string, GradCheckTerm> terms_;
};

struct Trial {
  EmbeddingNet net;
  CosineHead head;
  std::size_t num_known = 0;
};

Trial draw_trial(Rng& rng) {
  Trial t;
  t.num_known = 2 + rng.uniform_index(5);                // 2..6
  const std::size_t num_virtual = 1 + rng.uniform_index(4);  // 1..4
  const std::size_t input_dim = 2 + rng.uniform_index(5);    // 2..6
  const std::size_t mid_dim = 2 + rng.uniform_index(15);     // 2..16
  const std::size_t embed_dim = 2 + rng.uniform_index(15);   // 2..16
  t.net = make_embedding_net(input_dim, mid_dim, embed_dim, rng);
  for (auto* stage : {&t.net.h_layers, &t.net.g_layers}) {
    for (auto& layer : *stage) {
      for (double& b : layer.bias) b = 0.1 * rng.normal();
    }
  }
  const double scale = 1.0 + 15.0 * rng.uniform();
  t.head = make_cosine_head(t.num_known, num_virtual, embed_dim, scale, rng);
  for (std::size_t k = 0; k < t.head.num_logits(); ++k) {
    // Raw (unnormalized) prototypes so the normalization path is exercised.
    for (double& x : t.head.prototype(k)) x *= 0.5 + rng.uniform();
  }
  return t;
}

// L1/L2 on an embedding: gradients w.r.t. the embedding and every prototype.
void check_embedding_terms(const Trial& t, Rng& rng, const GradCheckOptions& opt, Tracker& tracker) {
  const Vec emb = random_vec(t.head.dim(), rng);
  const LossConfig lc{0.0, t.head.num_virtual(), t.head.num_known()};
  const Vec logits = cosine_logits(t.head, emb);
  Targets tg;
  tg.y = rng.uniform_index(t.num_known);
  tg.y_hat = pseudo_virtual_label(logits, lc);
  const double corrupt = opt.corrupt ? 1.0 + 1e-3 : 1.0;

  for (Term term : {Term::l1, Term::l2}) {
    GradBuffer grads = GradBuffer::zeros_like(t.net, t.head);
    const CrossEntropy ce = term_loss(term, logits, tg);
    const Vec demb = scaled(cosine_head_backward(t.head, emb, ce.dlogits, true, grads), corrupt);

    const Vec fd_emb = finite_diff_grad(
        [&](const Vec& e) { return term_loss(term, cosine_logits(t.head, e), tg).value; }, emb, opt.step);
    tracker.record(std::string("fd:") + term_name(term) + ":embedding", kFiniteDiffTolerance,
                   relative_error(demb, fd_emb));

    const Vec flat = flatten_prototypes(t.head);
    const Vec fd_protos = finite_diff_grad(
        [&](const Vec& p) { return term_loss(term, cosine_logits(with_prototypes(t.head, p), emb), tg).value; }, flat,
        opt.step);
    tracker.record(std::string("fd:") + term_name(term) + ":prototypes", kFiniteDiffTolerance,
                   relative_error(scaled(flatten_prototype_grads(grads), corrupt), fd_protos));
  }
}

// L3/L4 on a mixed pair through g: gradients w.r.t. the mixed embedding, both
// mid-level components and every prototype.
void check_mixed_terms(const Trial& t, Rng& rng, const GradCheckOptions& opt, Tracker& tracker) {
  const Vec x_i = random_vec(t.net.input_dim(), rng);
  const Vec x_j = random_vec(t.net.input_dim(), rng);
  const Vec mid_i = forward_mid(t.net, x_i).value;
  const Vec mid_j = forward_mid(t.net, x_j).value;
  const double lambda = sample_beta(0.5, rng);
  const StageOutput z = forward_from_mid(t.net, manifold_mix(mid_i, mid_j, lambda));
  const Vec logits = cosine_logits(t.head, z.value);
  const LossConfig lc{0.0, t.head.num_virtual(), t.head.num_known()};
  Targets tg;
  tg.y_hat = pseudo_virtual_label(logits, lc);
  tg.y_hathat = pseudo_known_label(logits, lc);
  const double corrupt = opt.corrupt ? 1.0 + 1e-3 : 1.0;

  auto loss_at = [&](Term term, const CosineHead& head, const Vec& mi, const Vec& mj) {
    const Vec zz = forward_from_mid(t.net, manifold_mix(mi, mj, lambda)).value;
    return term_loss(term, cosine_logits(head, zz), tg).value;
  };

  for (Term term : {Term::l3, Term::l4}) {
    GradBuffer grads = GradBuffer::zeros_like(t.net, t.head);
    const CrossEntropy ce = term_loss(term, logits, tg);
    const Vec dz = cosine_head_backward(t.head, z.value, ce.dlogits, true, grads);
    const Vec dmid = backward_g(t.net, z.cache, dz, grads);
    const std::string prefix = std::string("fd:") + term_name(term);

    const Vec fd_z = finite_diff_grad(
        [&](const Vec& e) { return term_loss(term, cosine_logits(t.head, e), tg).value; }, z.value, opt.step);
    tracker.record(prefix + ":embedding", kFiniteDiffTolerance, relative_error(scaled(dz, corrupt), fd_z));

    const Vec fd_i = finite_diff_grad([&](const Vec& m) { return loss_at(term, t.head, m, mid_j); }, mid_i, opt.step);
    const Vec fd_j = finite_diff_grad([&](const Vec& m) { return loss_at(term, t.head, mid_i, m); }, mid_j, opt.step);
    // One vector over both parents: with λ near 0 or 1 the weaker parent's
    // block alone is dominated by difference-quotient roundoff.
    Vec analytic = scaled(dmid, lambda * corrupt);
    const Vec second = scaled(dmid, (1.0 - lambda) * corrupt);
    analytic.insert(analytic.end(), second.begin(), second.end());
    Vec numeric = fd_i;
    numeric.insert(numeric.end(), fd_j.begin(), fd_j.end());
    tracker.record(prefix + ":components", kFiniteDiffTolerance, relative_error(analytic, numeric));

    const Vec flat = flatten_prototypes(t.head);
    const Vec fd_protos = finite_diff_grad(
        [&](const Vec& p) { return loss_at(term, with_prototypes(t.head, p), mid_i, mid_j); }, flat, opt.step);
    tracker.record(prefix + ":prototypes", kFiniteDiffTolerance,
                   relative_error(scaled(flatten_prototype_grads(grads), corrupt), fd_protos));
  }
}

constexpr double kMinLabelMargin = 1e-3;

double block_margin(std::span<const double> logits, std::size_t first, std::size_t last) {
  if (last - first < 2) return std::numeric_limits<double>::infinity();
  const std::size_t top = argmax(logits, first, last);
  double runner = -std::numeric_limits<double>::infinity();
  for (std::size_t k = first; k < last; ++k) {
    if (k != top) runner = std::max(runner, logits[k]);
  }
  return logits[top] - runner;
}

// Smallest gap between the winning and runner-up logit over every pseudo label
// the batch objective will take.
double pseudo_label_margin(const Trial& t, const LabeledDataset& data, const TrainConfig& cfg,
                           std::uint64_t mix_seed) {
  const std::size_t nk = t.head.num_known();
  const std::size_t nl = t.head.num_logits();
  double margin = std::numeric_limits<double>::infinity();
  std::vector<Vec> mids;
  for (const Vec& x : data.features) {
    const ForwardCache fc = forward(t.net, x);
    margin = std::min(margin, block_margin(cosine_logits(t.head, fc.embedding), nk, nl));
    mids.push_back(fc.mid);
  }
  Rng mix_rng(mix_seed);
  for (const MixPair& pair : make_pairs(data.labels, mix_rng, cfg.mix_alpha)) {
    const Vec z = forward_from_mid(t.net, manifold_mix(mids[pair.index_i], mids[pair.index_j], pair.lambda)).value;
    const Vec logits = cosine_logits(t.head, z);
    margin = std::min({margin, block_margin(logits, nk, nl), block_margin(logits, 0, nk)});
  }
  return margin;
}

// Full mini-batch objective (L_v + L_f) w.r.t. every network and head parameter.
void check_total(const Trial& t, Rng& rng, const GradCheckOptions& opt, Tracker& tracker) {
  const std::vector<std::size_t> batch = {0, 1, 2, 3};
  TrainConfig cfg;
  cfg.loss.gamma = 0.5;  // larger than the default so L2/L4 carry weight in the check
  LabeledDataset batch_data;
  std::uint64_t mix_seed = 0;
  // The batch objective recomputes its pseudo labels, so it is only piecewise
  // smooth; redraw until every argmax is clear of the difference stencil.
  for (int attempt = 0; attempt < 100; ++attempt) {
    batch_data = LabeledDataset{};
    for (std::size_t i = 0; i < batch.size(); ++i) {
      batch_data.features.push_back(random_vec(t.net.input_dim(), rng));
      batch_data.labels.push_back(static_cast<int>(i % t.num_known));
    }
    mix_seed = rng.next_u64();
    if (pseudo_label_margin(t, batch_data, cfg, mix_seed) > kMinLabelMargin) break;
  }

  Rng mix_rng(mix_seed);
  const BatchResult base = batch_loss_and_grad(t.net, t.head, batch_data, batch, cfg, mix_rng);

  EmbeddingNet net = t.net;
  CosineHead head = t.head;
  auto params = parameter_views(net, head);
  Vec flat;
  for (auto v : params) flat.insert(flat.end(), v.begin(), v.end());
  auto assign = [&](const Vec& values) {
    std::size_t offset = 0;
    for (auto v : params) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
      offset += v.size();
    }
  };
  const Vec fd = finite_diff_grad(
      [&](const Vec& values) {
        assign(values);
        Rng r(mix_seed);
        return batch_loss_and_grad(net, head, batch_data, batch, cfg, r).loss.total;
      },
      flat, opt.step);

  Vec analytic;
  for (auto v : base.grads.views()) analytic.insert(analytic.end(), v.begin(), v.end());
  if (opt.corrupt) analytic = scaled(analytic, 1.0 + 1e-3);
  tracker.record("fd:total:parameters", kFiniteDiffTolerance, relative_error(analytic, fd));
}

// Closed forms: unit vectors, scale 1, identity g, dot-product logits.
void check_closed_forms(const Trial& t, Rng& rng, const GradCheckOptions& opt, Tracker& tracker) {
  CosineHead unit = t.head;
  unit.scale = 1.0;
  for (std::size_t k = 0; k < unit.num_logits(); ++k) unit.prototype(k) = l2_normalize(unit.prototype(k));
  const std::size_t d = unit.dim();
  const LossConfig lc{0.0, unit.num_virtual(), unit.num_known()};
  const double corrupt = opt.corrupt ? 1.0 + 1e-3 : 1.0;
  const EmbeddingNet identity;

  auto record_blocks = [&](const std::string& name, const Vec& analytic_neg, const Vec& expected) {
    tracker.record(name, kClosedFormTolerance, relative_error(scaled(analytic_neg, corrupt), expected));
  };

  // L1 and L2 on a single embedding.
  const Vec emb = random_unit(d, rng);
  const std::size_t y = rng.uniform_index(t.num_known);
  const Vec logits = dot_logits(unit, emb);
  const std::size_t y_hat = pseudo_virtual_label(logits, lc);
  for (Term term : {Term::l1, Term::l2}) {
    const EmbeddingOracle oracle = term == Term::l1 ? oracle_l1(unit, emb, y) : oracle_l2(unit, emb, y, y_hat);
    const Targets tg{y, y_hat, 0};
    const std::string prefix = std::string("oracle:") + term_name(term);

    GradBuffer grads = GradBuffer::zeros_like(identity, unit);
    const CrossEntropy ce = term_loss(term, logits, tg);
    const Vec demb = dot_head_backward(unit, emb, ce.dlogits, grads);
    record_blocks(prefix + ":embedding", negated(demb), oracle.embedding);
    record_blocks(prefix + ":prototypes", negated(flatten_prototype_grads(grads)), flatten(oracle.prototypes));

    // Cosine head on the unit sphere: the tangential part of the closed form.
    GradBuffer cos_grads = GradBuffer::zeros_like(identity, unit);
    const CrossEntropy cos_ce = term_loss(term, cosine_logits(unit, emb, false), tg);
    const Vec cos_demb = cosine_head_backward(unit, emb, cos_ce.dlogits, false, cos_grads);
    Vec expected_protos;
    for (std::size_t k = 0; k < unit.num_logits(); ++k) {
      const Vec tk = tangential(oracle.prototypes[k], unit.prototype(k));
      expected_protos.insert(expected_protos.end(), tk.begin(), tk.end());
    }
    record_blocks(prefix + ":cosine-embedding", negated(cos_demb), tangential(oracle.embedding, emb));
    record_blocks(prefix + ":cosine-prototypes", negated(flatten_prototype_grads(cos_grads)), expected_protos);
  }

  // L3 and L4 on a mixed pair with identity g.
  const Vec e_i = random_unit(d, rng);
  const Vec e_j = random_unit(d, rng);
  const double lambda = sample_beta(0.5, rng);
  const StageOutput z = forward_from_mid(identity, manifold_mix(e_i, e_j, lambda));
  const Vec logits_z = dot_logits(unit, z.value);
  const Targets tg{0, pseudo_virtual_label(logits_z, lc), pseudo_known_label(logits_z, lc)};
  for (Term term : {Term::l3, Term::l4}) {
    const MixedOracle oracle = term == Term::l3 ? oracle_l3(unit, e_i, e_j, lambda, tg.y_hat)
                                                : oracle_l4(unit, e_i, e_j, lambda, tg.y_hat, tg.y_hathat);
    const std::string prefix = std::string("oracle:") + term_name(term);
    GradBuffer grads = GradBuffer::zeros_like(identity, unit);
    const CrossEntropy ce = term_loss(term, logits_z, tg);
    const Vec dz = dot_head_backward(unit, z.value, ce.dlogits, grads);
    const Vec dmid = backward_g(identity, z.cache, dz, grads);
    record_blocks(prefix + ":embedding", negated(dz), oracle.mixed);
    record_blocks(prefix + ":prototypes", negated(flatten_prototype_grads(grads)), flatten(oracle.prototypes));
    record_blocks(prefix + ":component-i", negated(scaled(dmid, lambda)), oracle.component_i);
    record_blocks(prefix + ":component-j", negated(scaled(dmid, 1.0 - lambda)), oracle.component_j);
  }
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(terms.begin(), terms.end(), [](const GradCheckTerm& t) { return t.passed(); });
}

double GradCheckReport::max_finite_diff_error() const {
  double m = 0.0;
  for (const auto& t : terms) {
    if (t.name.starts_with("fd:")) m = std::max(m, t.max_error);
  }
  return m;
}

double GradCheckReport::max_closed_form_error() const {
  double m = 0.0;
  for (const auto& t : terms) {
    if (t.name.starts_with("oracle:")) m = std::max(m, t.max_error);
  }
  return m;
}

std::vector<std::string> GradCheckReport::failing() const {
  std::vector<std::string> out;
  for (const auto& t : terms) {
    if (!t.passed()) out.push_back(t.name);
  }
  return out;
}

GradCheckReport run_gradient_suite(const GradCheckOptions& options) {
  if (options.trials == 0) throw Error(ErrorCode::InvalidParameter, "gradient check needs at least one trial");
  const auto started = std::chrono::steady_clock::now();
  Tracker tracker;
  for (std::size_t trial = 0; trial < options.trials; ++trial) {
    Rng rng = Rng::derive(options.seed, trial);
    const Trial t = draw_trial(rng);
    check_embedding_terms(t, rng, options, tracker);
    check_mixed_terms(t, rng, options, tracker);
    check_total(t, rng, options, tracker);
    check_closed_forms(t, rng, options, tracker);
  }
  GradCheckReport report;
  report.terms = tracker.terms();
  report.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void write_gradcheck_report(std::ostream& out, const GradCheckReport& report) {
  const auto flags = out.flags();
  out << std::left;
  for (const auto& t : report.terms) {
    out << std::setw(34) << t.name << " max_rel_err=" << std::scientific << std::setprecision(3) << t.max_error
        << " tol=" << t.tolerance << " checks=" << t.checks << (t.passed() ? "  ok" : "  FAIL") << '\n';
  }
  out << "max finite-difference error: " << report.max_finite_diff_error() << '\n';
  out << "max closed-form error: " << report.max_closed_form_error() << '\n';
  out.flags(flags);
}

}  // namespace fact
