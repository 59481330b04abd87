// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fact/error.hpp"
#include "fact/numerics.hpp"
#include "helpers.hpp"

using namespace fact;
using doctest::Approx;

namespace {
ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a fact::Error");
  return ErrorCode::Usage;
}
}  // namespace

TEST_SUITE("numerics") {
  TEST_CASE("l2_normalize") {
    const Vec a = l2_normalize(Vec{3.0, 4.0});
    CHECK(a[0] == Approx(0.6).epsilon(1e-15));
    CHECK(a[1] == Approx(0.8).epsilon(1e-15));
    CHECK(l2_normalize(Vec{1.0, 0.0, 0.0}) == Vec{1.0, 0.0, 0.0});
    CHECK(code_of([] { l2_normalize(Vec{0.0, 0.0}); }) == ErrorCode::ZeroNorm);
    CHECK(code_of([] { l2_normalize(Vec{1e-13, 0.0}); }) == ErrorCode::ZeroNorm);
  }

  TEST_CASE("l2_normalize is idempotent and unit") {
    Rng rng(11);
    for (int t = 0; t < 500; ++t) {
      const Vec v = testing::random_vec(1 + rng.uniform_index(16), rng, 10.0);
      const Vec once = l2_normalize(v);
      const Vec twice = l2_normalize(once);
      CHECK(std::abs(l2_norm(once) - 1.0) < 1e-12);
      for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(once[i] - twice[i]) < 1e-12);
    }
  }

  TEST_CASE("masked_softmax examples") {
    const Vec half = masked_softmax(Vec{0.0, 0.0}, std::nullopt);
    CHECK(half[0] == 0.5);
    CHECK(half[1] == 0.5);

    const Vec m = masked_softmax(Vec{1.0, 2.0, 3.0}, 2);
    CHECK(m[0] == Approx(0.268941421369995120748840758178182).epsilon(1e-14));
    CHECK(m[1] == Approx(0.731058578630004879251159241821867).epsilon(1e-14));
    CHECK(m[2] == 0.0);

    const Vec u = masked_softmax(Vec{5.0, 5.0, 5.0, 5.0}, 0);
    CHECK(u[0] == 0.0);
    for (std::size_t i = 1; i < 4; ++i) CHECK(u[i] == Approx(1.0 / 3.0).epsilon(1e-15));

    CHECK(code_of([] { masked_softmax(Vec{1.0, 2.0}, 2); }) == ErrorCode::IndexOutOfRange);
  }

  TEST_CASE("masked_softmax is a probability vector and shift invariant") {
    Rng rng(5);
    for (int t = 0; t < 1000; ++t) {
      const std::size_t n = 2 + rng.uniform_index(12);
      const Vec z = testing::random_vec(n, rng, 20.0);
      const std::size_t masked = rng.uniform_index(n);
      const Vec p = masked_softmax(z, masked);
      CHECK(p[masked] == 0.0);
      double sum = 0.0;
      for (double x : p) {
        CHECK(x >= 0.0);
        sum += x;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);

      Vec shifted = z;
      const double c = 100.0 * rng.normal();
      for (double& x : shifted) x += c;
      const Vec q = masked_softmax(shifted, masked);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12);
    }
  }

  TEST_CASE("softmax survives extreme logits") {
    const Vec p = softmax(Vec{1000.0, -1000.0, 999.0});
    CHECK(all_finite(p));
    CHECK(p[0] + p[1] + p[2] == Approx(1.0));
    CHECK(log_sum_exp(Vec{1000.0, 1000.0}) == Approx(1000.0 + std::log(2.0)));
  }

  TEST_CASE("argmax breaks ties by lowest index") {
    CHECK(argmax(Vec{1.0, 3.0, 3.0, 2.0}) == 1);
    CHECK(argmax(Vec{9.0, 8.0, 1.0, 5.0, 2.0}, 2, 5) == 3);
    CHECK(argmax(Vec{4.0, 4.0}) == 0);
  }

  TEST_CASE("rng reproducibility") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(42);
    Rng d(43);
    bool differs = false;
    for (int i = 0; i < 10; ++i) differs |= c.next_u64() != d.next_u64();
    CHECK(differs);

    Rng e = Rng::derive(7, 1);
    Rng f = Rng::derive(7, 1);
    Rng g = Rng::derive(7, 2);
    CHECK(e.next_u64() == f.next_u64());
    CHECK(Rng::derive(7, 1).next_u64() != g.next_u64());
  }

  TEST_CASE("uniform_index stays in range") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) CHECK(rng.uniform_index(7) < 7);
  }

  TEST_CASE("sample_beta support and mean") {
    Rng rng(0);
    for (int i = 0; i < 10000; ++i) {
      const double l = sample_beta(0.5, rng);
      CHECK(l >= 0.0);
      CHECK(l <= 1.0);
    }
    Rng rng1(1);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += sample_beta(1.0, rng1);
    CHECK(std::abs(sum / n - 0.5) < 0.01);

    // Beta(α, α) has variance 1 / (4(2α + 1)); α = 0.5 gives 1/8.
    Rng rng2(2);
    double s1 = 0.0;
    double s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double l = sample_beta(0.5, rng2);
      s1 += l;
      s2 += l * l;
    }
    const double mean = s1 / n;
    CHECK(mean == Approx(0.5).epsilon(0.02));
    CHECK(s2 / n - mean * mean == Approx(0.125).epsilon(0.03));

    CHECK(code_of([&] { sample_beta(0.0, rng); }) == ErrorCode::InvalidParameter);
    CHECK(code_of([&] { sample_beta(-1.0, rng); }) == ErrorCode::InvalidParameter);
  }

  TEST_CASE("random_permutation is a permutation") {
    Rng rng(9);
    auto p = random_permutation(50, rng);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
  }

  TEST_CASE("finite_diff_grad examples") {
    const Vec g = finite_diff_grad([](const Vec& x) { return dot(x, x); }, Vec{1.0, 2.0}, 1e-5);
    CHECK(std::abs(g[0] - 2.0) < 1e-6);
    CHECK(std::abs(g[1] - 4.0) < 1e-6);

    const Vec zero = finite_diff_grad([](const Vec&) { return 7.0; }, Vec{1.0, -3.0, 2.0});
    for (double x : zero) CHECK(x == 0.0);

    const Vec p = finite_diff_grad([](const Vec& x) { return x[0] * x[1]; }, Vec{3.0, 5.0}, 1e-5);
    CHECK(std::abs(p[0] - 5.0) < 1e-6);
    CHECK(std::abs(p[1] - 3.0) < 1e-6);

    CHECK(code_of([] { finite_diff_grad([](const Vec& x) { return std::log(x[0]); }, Vec{0.0}); }) ==
          ErrorCode::NonFiniteEvaluation);
    CHECK(code_of([] { finite_diff_grad([](const Vec& x) { return x[0]; }, Vec{1.0}, 0.0); }) ==
          ErrorCode::InvalidParameter);
  }

  TEST_CASE("relative_error") {
    CHECK(relative_error(Vec{1.0, 0.0}, Vec{1.0, 0.0}) == 0.0);
    CHECK(relative_error(Vec{2.0}, Vec{1.0}) == Approx(0.5));
    CHECK(relative_error(Vec{0.0}, Vec{0.0}) == 0.0);
  }
}
