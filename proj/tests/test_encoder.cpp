#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fd_check.hpp"
#include "rdcd/encoder.hpp"
#include "rdcd/rng.hpp"

using namespace rdcd;

namespace {

EncoderParams small_encoder(std::uint64_t seed) {
  EncoderSpec spec;
  spec.trunk_sizes = {6, 10, 8};
  spec.matcher_out = 5;
  spec.projector_sizes = {7, 4};
  return make_encoder(spec, Rng(seed));
}

// Keeps relu pre-activations away from the kink so central differences stay valid.
bool trace_has_kink_margin(const ForwardTrace& trace, double margin) {
  for (const auto& step : trace.steps)
    if (step.act == Activation::relu)
      for (double z : step.preact)
        if (std::abs(z) < margin) return true;
  return false;
}

}  // namespace

TEST_CASE("init_mlp shapes, zero biases, determinism") {
  Rng r1(9), r2(9);
  Mlp a = init_mlp({8, 16, 4}, r1);
  Mlp b = init_mlp({8, 16, 4}, r2);

  REQUIRE(a.size() == 2);
  CHECK(a[0].W.rows == 16);
  CHECK(a[0].W.cols == 8);
  CHECK(a[1].W.rows == 4);
  CHECK(a[1].W.cols == 16);
  CHECK(a[0].act == Activation::relu);
  CHECK(a[1].act == Activation::identity);

  for (std::size_t l = 0; l < a.size(); ++l) {
    CHECK(a[l].W.data == b[l].W.data);
    for (double bias : a[l].b) CHECK(bias == 0.0);
    double bound = std::sqrt(6.0 / static_cast<double>(a[l].W.rows + a[l].W.cols));
    for (double w : a[l].W.data) CHECK(std::abs(w) <= bound);
  }

  Rng r3(1);
  Mlp single = init_mlp({4, 4}, r3);
  REQUIRE(single.size() == 1);
  CHECK(single[0].act == Activation::identity);

  Rng r4(1);
  CHECK_THROWS_AS(init_mlp({4}, r4), Error);
  CHECK_THROWS_AS(init_mlp({}, r4), Error);
}

TEST_CASE("forward identity layer and zero weights") {
  EncoderParams p;
  Layer id;
  id.W = Mat::identity(3);
  id.b = Vec(3, 0.0);
  id.act = Activation::identity;
  p.trunk = {id};
  p.matcher = id;
  p.projector = {id};

  Vec x{-1.5, 0.25, 2.0};
  auto [y, trace] = forward(p, x, Head::trunk);
  CHECK(y == x);

  EncoderParams zero = p;
  for (double& w : zero.trunk[0].W.data) w = 0.0;
  CHECK(forward_value(zero, x, Head::trunk) == Vec(3, 0.0));
}

TEST_CASE("forward head output dims and determinism") {
  EncoderParams p = small_encoder(3);
  Vec x(6, 0.3);
  CHECK(forward_value(p, x, Head::trunk).size() == 8);
  CHECK(forward_value(p, x, Head::matcher).size() == 5);
  CHECK(forward_value(p, x, Head::projector).size() == 4);

  Vec a = forward_value(p, x, Head::projector);
  Vec b = forward_value(p, x, Head::projector);
  CHECK(a == b);

  Vec bad(5, 1.0);
  CHECK_THROWS_AS(forward_value(p, bad, Head::trunk), Error);
}

TEST_CASE("backward analytic forms for a single linear layer") {
  EncoderParams p;
  Layer l;
  l.W = Mat(2, 3);
  l.W.set_row(0, Vec{0.5, -1.0, 2.0});
  l.W.set_row(1, Vec{1.5, 0.25, -0.75});
  l.b = Vec{0.1, -0.2};
  l.act = Activation::identity;
  p.trunk = {l};
  p.matcher = l;
  p.matcher.W = Mat::identity(2);
  p.matcher.b = Vec(2, 0.0);
  p.projector = {p.matcher};

  Vec x{1.0, -2.0, 3.0};
  auto [y, trace] = forward(p, x, Head::trunk);
  Vec upstream{0.7, -0.3};
  auto [grads, gx] = backward(p, trace, upstream);

  // dL/dW = outer(upstream, x), dL/db = upstream, dL/dx = W^T upstream.
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(grads.trunk[0].dW(i, j) == Catch::Approx(upstream[i] * x[j]).margin(1e-14));
  CHECK(grads.trunk[0].db == upstream);
  for (std::size_t j = 0; j < 3; ++j) {
    double expect = l.W(0, j) * upstream[0] + l.W(1, j) * upstream[1];
    CHECK(gx[j] == Catch::Approx(expect).margin(1e-14));
  }
}

TEST_CASE("relu blocks gradient for negative pre-activation") {
  EncoderParams p;
  Layer l;
  l.W = Mat::identity(2);
  l.b = Vec{0.0, 0.0};
  l.act = Activation::relu;
  p.trunk = {l};
  p.matcher = l;
  p.matcher.act = Activation::identity;
  p.projector = {p.matcher};

  Vec x{-1.0, 2.0};
  auto [y, trace] = forward(p, x, Head::trunk);
  CHECK(y == Vec{0.0, 2.0});
  auto [grads, gx] = backward(p, trace, Vec{1.0, 1.0});
  CHECK(gx[0] == 0.0);
  CHECK(gx[1] == 1.0);
  CHECK(grads.trunk[0].dW(0, 0) == 0.0);
  CHECK(grads.trunk[0].dW(1, 1) == 2.0);
}

TEST_CASE("backward matches central finite differences on every head") {
  // >= 100 draws spread over the three heads.
  const Head heads[] = {Head::trunk, Head::matcher, Head::projector};
  int draws = 0;
  for (Head head : heads) {
    for (int it = 0; it < 40; ++it) {
      Rng rng(1000 + 31 * static_cast<int>(head) + it);
      EncoderParams p = small_encoder(rng.next_u64());
      Vec x(6);
      for (double& v : x) v = rng.normal();

      auto [y, trace] = forward(p, x, head);
      if (trace_has_kink_margin(trace, 1e-3)) continue;  // resample away from relu kinks
      Vec c(y.size());
      for (double& v : c) v = rng.uniform(-1.0, 1.0);

      auto [grads, gx] = backward(p, trace, c);
      auto loss = [&](const EncoderParams& q) {
        Vec out = forward_value(q, x, head);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += c[i] * out[i];
        return s;
      };

      auto check_layer = [&](Layer& layer, const LayerGrads& g) {
        for (std::size_t i = 0; i < layer.W.data.size(); ++i) {
          double saved = layer.W.data[i];
          layer.W.data[i] = saved + fd::kStep;
          double hi = loss(p);
          layer.W.data[i] = saved - fd::kStep;
          double lo = loss(p);
          layer.W.data[i] = saved;
          CHECK(fd::rel_err(g.dW.data[i], (hi - lo) / (2.0 * fd::kStep)) < 1e-4);
        }
        for (std::size_t i = 0; i < layer.b.size(); ++i) {
          double saved = layer.b[i];
          layer.b[i] = saved + fd::kStep;
          double hi = loss(p);
          layer.b[i] = saved - fd::kStep;
          double lo = loss(p);
          layer.b[i] = saved;
          CHECK(fd::rel_err(g.db[i], (hi - lo) / (2.0 * fd::kStep)) < 1e-4);
        }
      };

      for (std::size_t l = 0; l < p.trunk.size(); ++l) check_layer(p.trunk[l], grads.trunk[l]);
      if (head == Head::matcher) check_layer(p.matcher, grads.matcher);
      if (head == Head::projector)
        for (std::size_t l = 0; l < p.projector.size(); ++l)
          check_layer(p.projector[l], grads.projector[l]);
      ++draws;
    }
  }
  CHECK(draws >= 100);
}

TEST_CASE("backward rejects mismatched traces") {
  EncoderParams p = small_encoder(4);
  EncoderParams other = small_encoder(5);
  other.trunk[0].W = Mat(11, 6);  // different shape
  other.trunk[1].W = Mat(8, 11);
  other.trunk[1].b = Vec(8, 0.0);
  other.trunk[0].b = Vec(11, 0.0);

  Vec x(6, 0.1);
  auto [y, trace] = forward(p, x, Head::trunk);
  CHECK_THROWS_AS(backward(other, trace, Vec(8, 1.0)), Error);
  CHECK_THROWS_AS(backward(p, trace, Vec(3, 1.0)), Error);
}

TEST_CASE("momentum_update endpoints and contraction") {
  EncoderParams key = small_encoder(1);
  EncoderParams query = small_encoder(2);

  EncoderParams k1 = key;
  momentum_update(k1, query, 1.0);
  CHECK(k1.trunk[0].W.data == key.trunk[0].W.data);

  EncoderParams k0 = key;
  momentum_update(k0, query, 0.0);
  CHECK(k0.projector[1].W.data == query.projector[1].W.data);

  EncoderParams k = key;
  momentum_update(k, query, 0.99);
  // |theta_k' - theta_q| = m * |theta_k - theta_q| elementwise.
  for (std::size_t i = 0; i < k.matcher.W.data.size(); ++i) {
    double before = std::abs(key.matcher.W.data[i] - query.matcher.W.data[i]);
    double after = std::abs(k.matcher.W.data[i] - query.matcher.W.data[i]);
    CHECK(after == Catch::Approx(0.99 * before).margin(1e-12));
  }

  EncoderParams scalar_k = key;
  scalar_k.matcher.b[0] = 1.0;
  EncoderParams scalar_q = query;
  scalar_q.matcher.b[0] = 0.0;
  momentum_update(scalar_k, scalar_q, 0.99);
  CHECK(scalar_k.matcher.b[0] == Catch::Approx(0.99).margin(1e-15));

  EncoderParams wrong = small_encoder(3);
  wrong.projector.push_back(wrong.projector.back());
  CHECK_THROWS_AS(momentum_update(wrong, query, 0.5), Error);
}
