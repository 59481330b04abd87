// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "fact/error.hpp"
#include "fact/network.hpp"
#include "helpers.hpp"

using namespace fact;
using doctest::Approx;

TEST_SUITE("network") {
  TEST_CASE("forward_mid on fixed layers") {
    EmbeddingNet net;
    net.h_layers.push_back(testing::layer(2, 2, {1, 0, 0, 1}));
    net.g_layers.push_back(testing::layer(2, 2, {1, 0, 0, 1}));
    CHECK(forward_mid(net, Vec{1.0, 2.0}).value == Vec{1.0, 2.0});
    CHECK(forward_from_mid(net, Vec{0.5, 0.5}).value == Vec{0.5, 0.5});

    EmbeddingNet zero;
    zero.h_layers.push_back(testing::layer(3, 2, {0, 0, 0, 0, 0, 0}));
    zero.g_layers.push_back(testing::layer(2, 3, {1, 0, 0, 0, 1, 0}));
    CHECK(forward_mid(zero, Vec{4.0, -7.0}).value == Vec{0.0, 0.0, 0.0});

    CHECK_THROWS_AS(forward_mid(net, Vec{1.0, 2.0, 3.0}), Error);
    try {
      forward_mid(net, Vec{1.0});
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DimensionMismatch);
    }
    try {
      forward_from_mid(net, Vec{NAN, 0.0});
      FAIL("expected NonFiniteInput");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFiniteInput);
    }
  }

  TEST_CASE("composition equals the full forward pass") {
    Rng rng(1);
    const EmbeddingNet net = make_embedding_net(5, 8, 4, rng);
    for (int t = 0; t < 100; ++t) {
      const Vec x = testing::random_vec(5, rng);
      const Vec two_stage = forward_from_mid(net, forward_mid(net, x).value).value;
      CHECK(two_stage == embed(net, x));
      CHECK(embed(net, x) == embed(net, x));
    }
  }

  TEST_CASE("default architecture and initialization") {
    Rng rng(2);
    const EmbeddingNet net = make_embedding_net(16, 32, 16, rng);
    CHECK(net.input_dim() == 16);
    CHECK(net.mid_dim() == 32);
    CHECK(net.embed_dim() == 16);
    REQUIRE(net.h_layers.size() == 1);
    REQUIRE(net.g_layers.size() == 1);
    CHECK(net.h_layers[0].activation == Activation::tanh);
    CHECK(net.g_layers[0].activation == Activation::identity);
    const double bound = 1.0 / std::sqrt(16.0);
    for (double w : net.h_layers[0].weight.data) CHECK(std::abs(w) <= bound);

    const CosineHead head = make_cosine_head(6, 6, 16, 16.0, rng);
    CHECK(head.num_base == 6);
    for (const Vec& p : head.virtual_protos) CHECK(l2_norm(p) == Approx(1.0));
  }

  TEST_CASE("cosine_logits examples") {
    CosineHead head;
    head.scale = 16.0;
    head.num_base = 2;
    head.known = {Vec{2.0, 0.0}, Vec{0.0, 3.0}};
    head.virtual_protos = {Vec{-1.0, 0.0}};
    const Vec logits = cosine_logits(head, Vec{5.0, 0.0});
    REQUIRE(logits.size() == 3);
    CHECK(logits[0] == Approx(16.0));
    CHECK(logits[1] == 0.0);
    CHECK(logits[2] == Approx(-16.0));
    const Vec raw = cosine_logits(head, Vec{5.0, 0.0}, false);
    CHECK(raw[0] == Approx(1.0));

    Rng rng(4);
    const CosineHead big = make_cosine_head(5, 3, 7, 16.0, rng);
    for (int t = 0; t < 200; ++t) {
      for (double l : cosine_logits(big, testing::random_vec(7, rng))) {
        CHECK(l <= 16.0 + 1e-12);
        CHECK(l >= -16.0 - 1e-12);
      }
    }
    CHECK_THROWS_AS(cosine_logits(head, Vec{0.0, 0.0}), Error);
  }

  TEST_CASE("zero upstream gradient gives a zero buffer") {
    Rng rng(5);
    const EmbeddingNet net = make_embedding_net(3, 4, 5, rng);
    const CosineHead head = make_cosine_head(2, 2, 5, 16.0, rng);
    const ForwardCache cache = forward(net, testing::random_vec(3, rng));
    const GradBuffer g = backward(net, head, Vec(4, 0.0), cache);
    CHECK(g.max_abs() == 0.0);
  }

  TEST_CASE("linear layer gradient of half squared norm") {
    Rng rng(6);
    const Vec x = testing::random_vec(3, rng);
    EmbeddingNet net;
    net.h_layers.push_back(make_dense_layer(3, 4, Activation::identity, rng));
    const StageOutput out = forward_mid(net, x);
    GradBuffer grads = GradBuffer::zeros_like(net, CosineHead{});
    // L = ½‖Wx‖², dL/d(Wx) = Wx.
    backward_h(net, out.cache, out.value, grads);

    Vec w = net.h_layers[0].weight.data;
    const Vec fd = finite_diff_grad(
        [&](const Vec& ww) {
          EmbeddingNet probe = net;
          probe.h_layers[0].weight.data = ww;
          const Vec y = forward_mid(probe, x).value;
          return 0.5 * dot(y, y);
        },
        w);
    CHECK(relative_error(grads.h[0].weight.data, fd) < 1e-6);
  }

  TEST_CASE("cosine head gradient of a single logit") {
    Rng rng(7);
    for (int t = 0; t < 50; ++t) {
      const CosineHead head = make_cosine_head(3, 2, 6, 16.0, rng);
      const Vec emb = testing::random_vec(6, rng);
      const std::size_t k = rng.uniform_index(5);
      Vec upstream(5, 0.0);
      upstream[k] = 1.0;
      GradBuffer grads = GradBuffer::zeros_like(EmbeddingNet{}, head);
      const Vec demb = cosine_head_backward(head, emb, upstream, true, grads);
      const Vec fd = finite_diff_grad([&](const Vec& e) { return cosine_logits(head, e)[k]; }, emb);
      CHECK(relative_error(demb, fd) < 1e-6);
    }
  }

  TEST_CASE("full backward matches finite differences on every parameter") {
    Rng rng(8);
    for (int t = 0; t < 20; ++t) {
      EmbeddingNet net = make_embedding_net(4, 6, 5, rng);
      CosineHead head = make_cosine_head(3, 2, 5, 16.0, rng);
      const Vec x = testing::random_vec(4, rng);
      const Vec upstream = testing::random_vec(5, rng);
      const GradBuffer g = backward(net, head, upstream, forward(net, x));

      auto params = parameter_views(net, head);
      Vec flat;
      for (auto v : params) flat.insert(flat.end(), v.begin(), v.end());
      const Vec fd = finite_diff_grad(
          [&](const Vec& values) {
            std::size_t off = 0;
            for (auto v : params) {
              std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.begin());
              off += v.size();
            }
            return dot(upstream, cosine_logits(head, embed(net, x)));
          },
          flat);
      Vec analytic;
      for (auto v : g.views()) analytic.insert(analytic.end(), v.begin(), v.end());
      CHECK(relative_error(analytic, fd) < 1e-5);
    }
  }

  TEST_CASE("stale cache is rejected") {
    Rng rng(9);
    const EmbeddingNet net = make_embedding_net(3, 4, 5, rng);
    const EmbeddingNet other = make_embedding_net(3, 6, 5, rng);
    const CosineHead head = make_cosine_head(2, 1, 5, 16.0, rng);
    const ForwardCache cache = forward(other, testing::random_vec(3, rng));
    try {
      backward(net, head, Vec(3, 1.0), cache);
      FAIL("expected StaleCache");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::StaleCache);
    }
  }
}
