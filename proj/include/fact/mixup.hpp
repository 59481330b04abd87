// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fact/numerics.hpp"

namespace fact {

struct MixPair {
  std::size_t index_i = 0;
  std::size_t index_j = 0;
  double lambda = 0.5;

  bool operator==(const MixPair&) const = default;
};

/// Draws one permutation σ of the batch and keeps (i, σ(i)) wherever the two
/// labels differ, each with its own λ ~ Beta(alpha, alpha). Same-class
/// positions are dropped, not re-matched.
std::vector<MixPair> make_pairs(std::span<const int> labels, Rng& rng, double alpha);

/// Same, with the permutation supplied by the caller. λ draws still come from rng.
std::vector<MixPair> make_pairs_with_permutation(std::span<const int> labels, std::span<const std::size_t> permutation,
                                                 Rng& rng, double alpha);

/// λ·mid_i + (1−λ)·mid_j. Throws DimensionMismatch or LambdaOutOfRange.
Vec manifold_mix(std::span<const double> mid_i, std::span<const double> mid_j, double lambda);

}  // namespace fact
