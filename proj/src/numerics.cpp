// SPDX-License-Identifier: Apache-2.0
#include "fact/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "fact/error.hpp"

namespace fact {

Vec Matrix::apply(std::span<const double> x) const {
  if (x.size() != cols) {
    throw Error(ErrorCode::DimensionMismatch,
                "matrix has " + std::to_string(cols) + " columns, vector has " + std::to_string(x.size()));
  }
  Vec y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot(row(r), x);
  return y;
}

Vec Matrix::apply_transposed(std::span<const double> x) const {
  if (x.size() != rows) {
    throw Error(ErrorCode::DimensionMismatch,
                "matrix has " + std::to_string(rows) + " rows, vector has " + std::to_string(x.size()));
  }
  Vec y(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto w = row(r);
    for (std::size_t c = 0; c < cols; ++c) y[c] += w[c] * x[r];
  }
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "dot of lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Vec l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > kNormEpsilon)) {
    throw Error(ErrorCode::ZeroNorm, "cannot normalize vector with norm " + std::to_string(n));
  }
  Vec out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

Vec softmax(std::span<const double> logits) { return masked_softmax(logits, std::nullopt); }

Vec masked_softmax(std::span<const double> logits, std::optional<std::size_t> masked) {
  if (masked && *masked >= logits.size()) {
    throw Error(ErrorCode::IndexOutOfRange,
                "mask index " + std::to_string(*masked) + " for " + std::to_string(logits.size()) + " logits");
  }
  if (logits.empty() || (masked && logits.size() == 1)) {
    throw Error(ErrorCode::InvalidParameter, "softmax needs at least one unmasked logit");
  }
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (masked && i == *masked) continue;
    peak = std::max(peak, logits[i]);
  }
  Vec p(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (masked && i == *masked) continue;
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

double log_sum_exp(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double x : logits) total += std::exp(x - peak);
  return peak + std::log(total);
}

std::size_t argmax(std::span<const double> values, std::size_t first, std::size_t last) {
  if (first >= last || last > values.size()) {
    throw Error(ErrorCode::IndexOutOfRange, "empty or out-of-range argmax window");
  }
  std::size_t best = first;
  for (std::size_t i = first + 1; i < last; ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t argmax(std::span<const double> values) { return argmax(values, 0, values.size()); }

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "relative_error length mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  const double scale = std::max({l2_norm(a), l2_norm(b), floor});
  return std::sqrt(diff) / scale;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream_id) {
  return Rng(splitmix64(seed ^ splitmix64(stream_id + 1)));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::InvalidParameter, "uniform_index(0)");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t r = engine_();
  while (r >= limit) r = engine_();
  return static_cast<std::size_t>(r % bound);
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0)) throw Error(ErrorCode::InvalidParameter, "gamma shape must be positive");
  if (shape < 1.0) {
    // Boost to shape + 1, then scale by U^(1/shape).
    const double u = 1.0 - uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_beta(double alpha, Rng& rng) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw Error(ErrorCode::InvalidParameter, "Beta parameter must be positive, got " + std::to_string(alpha));
  }
  for (;;) {
    const double x = rng.gamma(alpha);
    const double y = rng.gamma(alpha);
    const double s = x + y;
    if (s > 0.0) return std::clamp(x / s, 0.0, 1.0);
  }
}

void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng) {
  for (std::size_t i = indices.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(indices[i - 1], indices[j]);
  }
}

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  shuffle_indices(perm, rng);
  return perm;
}

Vec finite_diff_grad(const ScalarFunction& f, const Vec& x, double step) {
  if (!(step > 0.0)) throw Error(ErrorCode::InvalidParameter, "finite-difference step must be positive");
  Vec grad(x.size(), 0.0);
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorCode::NonFiniteEvaluation, "non-finite value probing coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace fact
