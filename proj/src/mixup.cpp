// SPDX-License-Identifier: Apache-2.0
#include "fact/mixup.hpp"

#include "fact/error.hpp"

namespace fact {

std::vector<MixPair> make_pairs(std::span<const int> labels, Rng& rng, double alpha) {
  const auto perm = random_permutation(labels.size(), rng);
  return make_pairs_with_permutation(labels, perm, rng, alpha);
}

std::vector<MixPair> make_pairs_with_permutation(std::span<const int> labels, std::span<const std::size_t> permutation,
                                                 Rng& rng, double alpha) {
  if (permutation.size() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "permutation length differs from batch size");
  }
  std::vector<MixPair> pairs;
  pairs.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t j = permutation[i];
    if (j >= labels.size()) throw Error(ErrorCode::IndexOutOfRange, "permutation entry out of range");
    if (labels[i] == labels[j]) continue;
    pairs.push_back(MixPair{i, j, sample_beta(alpha, rng)});
  }
  return pairs;
}

Vec manifold_mix(std::span<const double> mid_i, std::span<const double> mid_j, double lambda) {
  if (mid_i.size() != mid_j.size()) throw Error(ErrorCode::DimensionMismatch, "mixup operands differ in size");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorCode::LambdaOutOfRange, "lambda outside [0, 1]");
  Vec z(mid_i.size());
  for (std::size_t d = 0; d < z.size(); ++d) z[d] = lambda * mid_i[d] + (1.0 - lambda) * mid_j[d];
  return z;
}

}  // namespace fact
