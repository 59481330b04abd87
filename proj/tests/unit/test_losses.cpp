// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "fact/error.hpp"
#include "fact/losses.hpp"
#include "fact/network.hpp"
#include "helpers.hpp"

using namespace fact;
using doctest::Approx;

namespace {

LossConfig layout(std::size_t known, std::size_t virt, double gamma = 0.01) { return LossConfig{gamma, virt, known}; }

CosineHead unit_head(std::size_t known, std::size_t virt, std::size_t dim, Rng& rng) {
  CosineHead head = make_cosine_head(known, virt, dim, 1.0, rng);
  for (std::size_t k = 0; k < head.num_logits(); ++k) head.prototype(k) = l2_normalize(head.prototype(k));
  return head;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("pseudo_virtual_label") {
    CHECK(pseudo_virtual_label(Vec{9, 8, 1, 5, 2}, layout(2, 3)) == 3);
    CHECK(pseudo_virtual_label(Vec{9, 8, 4, 4, 4}, layout(2, 3)) == 2);
    CHECK(pseudo_virtual_label(Vec{0, -3}, layout(1, 1)) == 1);
    CHECK_THROWS_AS(pseudo_virtual_label(Vec{1, 2, 3}, layout(2, 3)), Error);
  }

  TEST_CASE("pseudo_known_label") {
    CHECK(pseudo_known_label(Vec{9, 8, 1, 5, 2}, layout(2, 3)) == 0);
    CHECK(pseudo_known_label(Vec{4, 4, 0}, layout(2, 1)) == 0);
    CHECK(pseudo_known_label(Vec{1, 7, 2, 0, 0}, layout(3, 2)) == 1);
  }

  TEST_CASE("virtual_loss examples") {
    const VirtualLoss plain = virtual_loss(Vec{2, 1, 0.5, 1.5}, 0, layout(2, 2, 0.0));
    CHECK(plain.value == cross_entropy(Vec{2, 1, 0.5, 1.5}, 0).value);

    const VirtualLoss single = virtual_loss(Vec{0, 0}, 0, layout(1, 1, 1.0));
    CHECK(single.l1 == Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(single.l2 == 0.0);
    CHECK(single.value == Approx(0.6931471805599453));

    // Independent high-precision evaluation.
    const VirtualLoss v = virtual_loss(Vec{2, 1, 0.5, 1.5}, 0, layout(2, 2));
    CHECK(v.y_hat == 3);
    CHECK(v.l1 == Approx(0.787338671698329514921992850049).epsilon(1e-14));
    CHECK(v.l2 == Approx(0.680269670641734575856434450569).epsilon(1e-14));
    CHECK(v.value == Approx(0.794141368404746860680557194555).epsilon(1e-14));

    CHECK_THROWS_AS(virtual_loss(Vec{2, 1, 0.5, 1.5}, 2, layout(2, 2)), Error);
  }

  TEST_CASE("forecast_loss examples") {
    const ForecastLoss f = forecast_loss(Vec{1, 0, 3, 2}, layout(2, 2));
    CHECK(f.y_hat == 2);
    CHECK(f.y_hathat == 0);
    CHECK(f.l3 == Approx(0.440189698561195330492722301326).epsilon(1e-14));
    CHECK(f.l4 == Approx(1.40760596444438030448291990455).epsilon(1e-14));
    CHECK(f.value == Approx(0.454265758205639133537551500372).epsilon(1e-14));

    const ForecastLoss g0 = forecast_loss(Vec{1, 0, 3, 2}, layout(2, 2, 0.0));
    CHECK(g0.value == g0.l3);

    const ForecastLoss dominant = forecast_loss(Vec{0, 0, 60, 0}, layout(2, 2));
    CHECK(dominant.l3 > 0.0);
    CHECK(dominant.l3 < 1e-20);
  }

  TEST_CASE("losses are nonnegative and decompose exactly") {
    Rng rng(3);
    for (int t = 0; t < 300; ++t) {
      const std::size_t known = 1 + rng.uniform_index(5);
      const std::size_t virt = 1 + rng.uniform_index(4);
      const Vec z = testing::random_vec(known + virt, rng, 8.0);
      const LossConfig cfg = layout(known, virt, rng.uniform());
      const VirtualLoss v = virtual_loss(z, rng.uniform_index(known), cfg);
      const ForecastLoss f = forecast_loss(z, cfg);
      CHECK(v.l1 > 0.0);
      CHECK(v.l2 >= 0.0);
      CHECK(f.l3 > 0.0);
      CHECK(f.l4 >= 0.0);
      const LossBreakdown b = LossBreakdown::combine(v.l1, v.l2, f.l3, f.l4, cfg.gamma);
      CHECK(b.total == v.l1 + cfg.gamma * v.l2 + f.l3 + cfg.gamma * f.l4);
    }
  }

  TEST_CASE("loss gradients with respect to logits") {
    Rng rng(4);
    for (int t = 0; t < 100; ++t) {
      const LossConfig cfg = layout(3, 2, 0.3);
      const Vec z = testing::random_vec(5, rng, 3.0);
      const std::size_t y = rng.uniform_index(3);
      const VirtualLoss v = virtual_loss(z, y, cfg);
      const Vec fd = finite_diff_grad(
          [&](const Vec& zz) {
            return cross_entropy(zz, y).value + cfg.gamma * masked_cross_entropy(zz, y, v.y_hat).value;
          },
          z);
      CHECK(relative_error(v.dlogits, fd) < 1e-8);
      // The masked entry receives nothing from the second term.
      CHECK(masked_cross_entropy(z, y, v.y_hat).dlogits[y] == 0.0);
    }
  }

  TEST_CASE("masked target is rejected") { CHECK_THROWS_AS(masked_cross_entropy(Vec{1, 2}, 1, 1), Error); }

  TEST_CASE("confident cross-entropy keeps relative precision") {
    const CrossEntropy ce = cross_entropy(Vec{40.0, 0.0}, 0);
    CHECK(ce.value == Approx(std::exp(-40.0)).epsilon(1e-12));
  }

  TEST_CASE("oracle limits") {
    Rng rng(5);
    CosineHead head = unit_head(3, 2, 4, rng);
    const Vec emb = head.known[0];
    const EmbeddingOracle o = oracle_l1(head, emb, 0);
    CHECK(o.probabilities.size() == 5);

    const EmbeddingOracle masked = oracle_l2(head, emb, 0, 3);
    CHECK(masked.probabilities[0] == 0.0);
    // No push on the masked prototype.
    for (double g : masked.prototypes[0]) CHECK(g == 0.0);

    const Vec e_i = l2_normalize(testing::random_vec(4, rng));
    const Vec e_j = l2_normalize(testing::random_vec(4, rng));
    const MixedOracle m = oracle_l3(head, e_i, e_j, 1.0, 3);
    for (double g : m.component_j) CHECK(g == 0.0);
    CHECK(m.component_i == m.mixed);

    try {
      oracle_l1(head, Vec{2.0, 0.0, 0.0, 0.0}, 0);
      FAIL("expected AssumptionViolated");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::AssumptionViolated);
    }
    CHECK_THROWS_AS(oracle_l3(head, e_i, e_j, 1.5, 3), Error);
  }

  TEST_CASE("oracle in the saturated limit") {
    // Orthogonal unit prototypes; the embedding equals w_0 and the other
    // prototypes sit at −w_0, so a_0 is as large as unit geometry allows.
    CosineHead head;
    head.scale = 1.0;
    head.num_base = 1;
    head.known = {Vec{1.0, 0.0}};
    head.virtual_protos = {Vec{-1.0, 0.0}};
    const EmbeddingOracle o = oracle_l1(head, Vec{1.0, 0.0}, 0);
    const double a0 = o.probabilities[0];
    CHECK(a0 == Approx(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0))));
    // −∇ = w_0 − a_0 w_0 − a_1 (−w_0) = (1 − a_0 + a_1) w_0 = 2 a_1 w_0.
    CHECK(o.embedding[0] == Approx(2.0 * (1.0 - a0)));
  }

  TEST_CASE("random oracle instance matches finite differences") {
    Rng rng(6);
    for (int t = 0; t < 50; ++t) {
      const CosineHead head = unit_head(3, 2, 5, rng);
      const Vec emb = l2_normalize(testing::random_vec(5, rng));
      const std::size_t y = rng.uniform_index(3);
      const EmbeddingOracle o = oracle_l1(head, emb, y);
      const Vec fd = finite_diff_grad([&](const Vec& e) { return cross_entropy(dot_logits(head, e), y).value; }, emb);
      Vec neg = o.embedding;
      for (double& x : neg) x = -x;
      CHECK(relative_error(neg, fd) < 1e-5);
    }
  }

  TEST_CASE("config validation") {
    CHECK_THROWS_AS(LossConfig({-1.0, 1, 1}).validate(), Error);
    CHECK_THROWS_AS(LossConfig({0.01, 0, 1}).validate(), Error);
    CHECK_NOTHROW(LossConfig({0.01, 1, 1}).validate());
  }
}
