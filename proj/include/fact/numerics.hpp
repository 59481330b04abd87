// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit kernels shared by the rest of the library: vector helpers,
// normalization, (masked) softmax, seeded sampling and a central-difference
// gradient checker.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace fact {

using Vec = std::vector<double>;

/// Norms at or below this are rejected by l2_normalize.
inline constexpr double kNormEpsilon = 1e-12;

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  /// y = M x
  Vec apply(std::span<const double> x) const;
  /// y = Mᵀ x
  Vec apply_transposed(std::span<const double> x) const;

  bool operator==(const Matrix&) const = default;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
bool all_finite(std::span<const double> v);

/// Unit-length copy of v. Throws ZeroNorm when ‖v‖ ≤ kNormEpsilon.
Vec l2_normalize(std::span<const double> v);

Vec softmax(std::span<const double> logits);

/// Softmax with the masked entry excluded from the support: its probability
/// is exactly 0 and the remaining entries sum to 1.
Vec masked_softmax(std::span<const double> logits, std::optional<std::size_t> masked);

/// log Σ exp(logits), max-shifted.
double log_sum_exp(std::span<const double> logits);

/// Index of the largest entry in [first, last); ties go to the lowest index.
std::size_t argmax(std::span<const double> values, std::size_t first, std::size_t last);
std::size_t argmax(std::span<const double> values);

/// ‖a − b‖ / max(‖a‖, ‖b‖, floor). Used by every gradient comparison.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

/// Seeded random source. Two instances built from the same seed produce the
/// same sequence on every platform: the engine is mt19937_64 and all derived
/// distributions are implemented here rather than taken from <random>.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n), rejection-sampled (no modulo bias).
  std::size_t uniform_index(std::size_t n);
  /// Standard normal (Box–Muller).
  double normal();
  /// Gamma(shape, 1) via Marsaglia–Tsang.
  double gamma(double shape);

  /// Independent stream keyed by (seed, stream_id).
  static Rng derive(std::uint64_t seed, std::uint64_t stream_id);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// λ ~ Beta(alpha, alpha) from two Gamma draws. Throws InvalidParameter if alpha ≤ 0.
double sample_beta(double alpha, Rng& rng);

/// In-place Fisher–Yates shuffle driven by rng.
void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng);
std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

using ScalarFunction = std::function<double(const Vec&)>;

/// Central-difference gradient (f(x+εeᵢ) − f(x−εeᵢ)) / 2ε.
/// Throws NonFiniteEvaluation if f is not finite at a probe point.
Vec finite_diff_grad(const ScalarFunction& f, const Vec& x, double step = 1e-5);

}  // namespace fact
