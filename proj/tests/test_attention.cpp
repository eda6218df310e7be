#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "impact/attention.hpp"
#include "testutil.hpp"

using namespace impact;

namespace {

// Parameters that make the attention output interpretable: Q/K zero (so
// logits are uniform), V and the output projection identity.
AttentionParams passthrough_params(int c) {
  std::mt19937_64 rng(1);
  AttentionParams p = AttentionParams::init(c, 1, rng);
  p.wq[0] = Tensor::zeros({c, c}, true);
  p.wk[0] = Tensor::zeros({c, c}, true);
  std::vector<double> eye(static_cast<std::size_t>(c) * c, 0.0);
  for (int i = 0; i < c; ++i) eye[static_cast<std::size_t>(i) * c + i] = 1.0;
  p.wv[0] = Tensor::from({c, c}, eye, true);
  p.wo = Tensor::from({c, c}, eye, true);
  p.bo = Tensor::zeros({c}, true);
  return p;
}

}  // namespace

TEST_CASE("uniform attention averages the value rows") {
  const int c = 3;
  AttentionParams p = passthrough_params(c);
  Tensor v = Tensor::from({4, c}, {1, 2, 3,
                                   4, 5, 6,
                                   7, 8, 9,
                                   10, 11, 12});
  Tensor mask = Tensor::filled({4, 4}, 1.0);
  Tensor out = multi_head_attention(v, v, v, {mask}, p);
  REQUIRE(out.shape() == Shape{4, c});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < c; ++j)
      REQUIRE(out.at({i, j}) ==
              Catch::Approx((22 + 4 * j) / 4.0).margin(1e-9));  // column mean
}

TEST_CASE("identity mask gives self-only attention") {
  const int c = 4;
  AttentionParams p = passthrough_params(c);
  std::mt19937_64 rng(2);
  Tensor x = Tensor::randn({5, c}, rng);
  std::vector<double> eye(25, 0.0);
  for (int i = 0; i < 5; ++i) eye[static_cast<std::size_t>(i) * 5 + i] = 1.0;
  Tensor mask = Tensor::from({5, 5}, eye);
  AttentionProbe probe;
  Tensor out = multi_head_attention(x, x, x, {mask}, p, &probe);
  // weight matrix is exactly the identity, so output row i == value row i
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j)
      REQUIRE(probe.head_weights[0].at({0, i, j}) == (i == j ? 1.0 : 0.0));
    for (int j = 0; j < c; ++j)
      REQUIRE(out.at({i, j}) == Catch::Approx(x.at({i, j})).margin(1e-12));
  }
}

TEST_CASE("per-head attention rows sum to one") {
  std::mt19937_64 rng(3);
  AttentionParams p = AttentionParams::init(8, 4, rng);
  Tensor x = Tensor::randn({4, 8}, rng);
  AttentionProbe probe;
  multi_head_attention(x, x, x, {}, p, &probe);
  REQUIRE(probe.head_weights.size() == 4);
  for (const Tensor& w : probe.head_weights) {
    REQUIRE(w.shape() == Shape{1, 4, 4});
    for (int i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (int j = 0; j < 4; ++j) sum += w.at({0, i, j});
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
    }
  }
}

TEST_CASE("channel count must divide by head count") {
  std::mt19937_64 rng(4);
  REQUIRE_THROWS_AS(AttentionParams::init(10, 4, rng), std::invalid_argument);
}

TEST_CASE("per-head masks are honored independently") {
  std::mt19937_64 rng(5);
  AttentionParams p = AttentionParams::init(4, 2, rng);
  Tensor x = Tensor::randn({3, 4}, rng);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[static_cast<std::size_t>(i) * 3 + i] = 1.0;
  Tensor mask_diag = Tensor::from({3, 3}, eye);
  Tensor mask_full = Tensor::filled({3, 3}, 1.0);
  AttentionProbe probe;
  multi_head_attention(x, x, x, {mask_diag, mask_full}, p, &probe);
  REQUIRE(probe.head_weights[0].at({0, 0, 1}) == 0.0);
  REQUIRE(probe.head_weights[1].at({0, 0, 1}) != 0.0);
}

TEST_CASE("cross attention accepts distinct query/key lengths") {
  std::mt19937_64 rng(6);
  AttentionParams p = AttentionParams::init(8, 2, rng);
  Tensor q = Tensor::randn({2, 3, 8}, rng);
  Tensor kv = Tensor::randn({2, 7, 8}, rng);
  Tensor out = multi_head_attention(q, kv, kv, {}, p);
  REQUIRE(out.shape() == Shape{2, 3, 8});
}

TEST_CASE("attention gradients match finite differences") {
  std::mt19937_64 rng(7);
  AttentionParams p = AttentionParams::init(6, 2, rng);
  Tensor q = Tensor::randn({2, 3, 6}, rng, 1.0, true);
  Tensor kv = Tensor::randn({2, 4, 6}, rng, 1.0, true);
  std::vector<double> m(12, 1.0);
  m[1] = m[6] = 0.0;
  Tensor mask = Tensor::from({3, 4}, m);
  Tensor target = Tensor::randn({2, 3, 6}, rng);

  auto loss_fn = [&] {
    return l1_loss(multi_head_attention(q, kv, kv, {mask}, p), target);
  };
  loss_fn().backward();
  auto eval = [&] { return loss_fn().item(); };

  REQUIRE(testutil::max_rel_error(q.grad(),
                                  testutil::finite_diff_grad(q, eval)) < 1e-4);
  REQUIRE(testutil::max_rel_error(kv.grad(),
                                  testutil::finite_diff_grad(kv, eval)) < 1e-4);
  for (int h = 0; h < 2; ++h) {
    REQUIRE(testutil::max_rel_error(
                p.wq[h].grad(), testutil::finite_diff_grad(p.wq[h], eval)) <
            1e-4);
    REQUIRE(testutil::max_rel_error(
                p.wv[h].grad(), testutil::finite_diff_grad(p.wv[h], eval)) <
            1e-4);
  }
  REQUIRE(testutil::max_rel_error(p.wo.grad(),
                                  testutil::finite_diff_grad(p.wo, eval)) <
          1e-4);
  REQUIRE(testutil::max_rel_error(p.bo.grad(),
                                  testutil::finite_diff_grad(p.bo, eval)) <
          1e-4);
}
