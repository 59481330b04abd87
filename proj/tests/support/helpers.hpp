// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit and acceptance tests.
#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "fact/network.hpp"
#include "fact/numerics.hpp"

namespace fact::testing {

inline Vec random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline Vec unit(double degrees) {
  const double a = degrees * 3.14159265358979323846 / 180.0;
  return {std::cos(a), std::sin(a)};
}

/// Layer with the given weight rows and zero bias.
inline DenseLayer layer(std::size_t out, std::size_t in, std::initializer_list<double> weights,
                        Activation act = Activation::identity) {
  DenseLayer l;
  l.weight = Matrix(out, in);
  l.weight.data.assign(weights.begin(), weights.end());
  l.bias.assign(out, 0.0);
  l.activation = act;
  return l;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("fact_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fact::testing
