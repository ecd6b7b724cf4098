#include <cmath>

#include "badiff/gradcheck.hpp"
#include "badiff/ops.hpp"
#include "badiff/rng.hpp"
#include "badiff/tensor.hpp"
#include "doctest.h"

using namespace badiff;

namespace {

Tensor rand_t(std::vector<int> shape, RngStream& rng, double sd = 1.0) {
  return Tensor::randn(std::move(shape), rng, sd);
}

}  // namespace

TEST_CASE("tensor invariants") {
  Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.shape() == std::vector<int>{2, 3, 4});
  t.ensure_grad();
  CHECK(t.grad().size() == 24);
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("rng determinism and counter semantics") {
  RngStream a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(7);
  c.normal();
  CHECK(c.counter() == 2);  // Box-Muller consumes exactly two draws

  RngStream d(7, 2);
  RngStream e(7);
  e.normal();
  CHECK(d.uniform() == e.uniform());  // (seed,counter) fully define the state

  // same seed, bitwise identical normals
  RngStream f(123), g(123);
  for (int i = 0; i < 50; ++i) CHECK(f.normal() == g.normal());
}

TEST_CASE("dense identity and zero cases") {
  Tensor x = Tensor::from_data({1, 2}, {1.0, 2.0});
  Tensor eye = Tensor::from_data({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor zb = Tensor::zeros({2});
  Tensor y = ops::dense(x, eye, zb);
  CHECK(y.values() == std::vector<double>{1.0, 2.0});

  Tensor w0 = Tensor::zeros({3, 2});
  Tensor b3 = Tensor::from_data({3}, {4.0, 5.0, 6.0});
  Tensor y2 = ops::dense(x, w0, b3);
  CHECK(y2.values() == std::vector<double>{4.0, 5.0, 6.0});

  Tensor wbad = Tensor::zeros({3, 5});
  CHECK_THROWS_AS(ops::dense(x, wbad, b3), std::invalid_argument);
}

TEST_CASE("dense gradients vs central finite differences") {
  RngStream rng(1);
  Tensor x = rand_t({2, 4}, rng);
  Tensor w = rand_t({3, 4}, rng, 0.5);
  Tensor b = rand_t({3}, rng, 0.5);
  auto frag = [&]() { return ops::sum_all(ops::silu(ops::dense(x, w, b))); };
  auto report = check_gradients(frag, {{"x", x}, {"w", w}, {"b", b}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("conv2d identity and zero kernels") {
  RngStream rng(2);
  Tensor x = rand_t({1, 1, 5, 5}, rng);
  Tensor k1 = Tensor::from_data({1, 1, 1, 1}, {1.0});
  Tensor y = ops::conv2d(x, k1, Tensor(), 1, 0);
  CHECK(y.values() == x.values());

  Tensor k0 = Tensor::zeros({2, 1, 3, 3});
  Tensor y0 = ops::conv2d(x, k0, Tensor(), 1, 1);
  for (double v : y0.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({2, 3, 3, 3}), Tensor(), 1, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(ops::conv2d(x, k1, Tensor(), 0, 0), std::invalid_argument);
}

TEST_CASE("conv2d gradient check on 1x1x5x5") {
  RngStream rng(3);
  Tensor x = rand_t({1, 1, 5, 5}, rng);
  Tensor k = rand_t({2, 1, 3, 3}, rng, 0.5);
  Tensor b = rand_t({2}, rng, 0.3);
  auto frag = [&]() { return ops::sum_all(ops::square(ops::conv2d(x, k, b, 1, 1))); };
  auto report = check_gradients(frag, {{"x", x}, {"k", k}, {"b", b}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("conv2d strided gradient check") {
  RngStream rng(4);
  Tensor x = rand_t({2, 2, 8, 8}, rng);
  Tensor k = rand_t({3, 2, 3, 3}, rng, 0.4);
  Tensor b = rand_t({3}, rng, 0.2);
  auto frag = [&]() { return ops::mean_all(ops::square(ops::conv2d(x, k, b, 2, 1))); };
  auto report = check_gradients(frag, {{"x", x}, {"k", k}, {"b", b}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("masked conv: origin sees bias only on constant input") {
  Tensor x = Tensor::full({1, 1, 6, 6}, 0.7);
  RngStream rng(5);
  Tensor k = rand_t({1, 1, 5, 5}, rng);
  Tensor b = Tensor::from_data({1}, {1.25});
  Tensor mask = ops::make_causal_mask(5, 5);
  Tensor y = ops::masked_conv2d(x, k, b, mask);
  CHECK(y.values()[0] == doctest::Approx(1.25).epsilon(1e-12));
}

TEST_CASE("masked conv: strict raster causality under perturbation") {
  RngStream rng(6);
  Tensor k = rand_t({1, 1, 5, 5}, rng);
  Tensor b = rand_t({1}, rng);
  Tensor mask = ops::make_causal_mask(5, 5);
  Tensor x = rand_t({1, 1, 8, 8}, rng);
  Tensor base = ops::masked_conv2d(x, k, b, mask);
  for (int u = 0; u < 64; ++u) {
    Tensor xp = Tensor::from_data({1, 1, 8, 8}, x.values());
    xp.values()[static_cast<size_t>(u)] += 3.0;
    Tensor out = ops::masked_conv2d(xp, k, b, mask);
    for (int v = 0; v <= u; ++v) {
      CHECK(out.values()[static_cast<size_t>(v)] == base.values()[static_cast<size_t>(v)]);
    }
  }
}

TEST_CASE("masked conv rejects non-causal masks") {
  Tensor x = Tensor::zeros({1, 1, 4, 4});
  Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor center_only = Tensor::zeros({3, 3});
  center_only.values()[4] = 1.0;  // center tap set: invalid
  CHECK_THROWS_AS(ops::masked_conv2d(x, k, Tensor(), center_only),
                  std::invalid_argument);
}

TEST_CASE("masked conv gradient check") {
  RngStream rng(7);
  Tensor x = rand_t({1, 1, 6, 6}, rng);
  Tensor k = rand_t({2, 1, 5, 5}, rng, 0.3);
  Tensor b = rand_t({2}, rng, 0.3);
  Tensor mask = ops::make_causal_mask(5, 5);
  auto frag = [&]() {
    return ops::mean_all(ops::square(ops::masked_conv2d(x, k, b, mask)));
  };
  auto report = check_gradients(frag, {{"x", x}, {"k", k}, {"b", b}});
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("activation suite basics") {
  Tensor z = Tensor::scalar(0.0);
  CHECK(ops::silu(z).item() == 0.0);

  Tensor logits = Tensor::zeros({64});
  Tensor sm = ops::softmax(logits, 0);
  for (double v : sm.values()) CHECK(v == doctest::Approx(1.0 / 64).epsilon(1e-14));

  RngStream rng(8);
  Tensor r = rand_t({4, 64}, rng);
  Tensor sr = ops::softmax(r, 1);
  for (int row = 0; row < 4; ++row) {
    double s = 0.0;
    for (int kk = 0; kk < 64; ++kk) s += sr.values()[static_cast<size_t>(row) * 64 + kk];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }

  Tensor img = Tensor::full({1, 3, 4, 4}, 2.5);
  Tensor pooled = ops::mean_pool_spatial(img);
  CHECK(pooled.shape() == std::vector<int>{1, 3});
  for (double v : pooled.values()) CHECK(v == doctest::Approx(2.5).epsilon(1e-14));

  // checkerboard pools to zero
  Tensor cb = Tensor::zeros({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) cb.values()[static_cast<size_t>(i)] = ((i / 4 + i % 4) % 2) ? 1.0 : -1.0;
  CHECK(ops::mean_pool_spatial(cb).values()[0] == 0.0);

  Tensor gimg = Tensor::zeros({1, 3, 2, 2});
  Tensor gg = Tensor::full({3}, 1.0);
  Tensor gb = Tensor::zeros({3});
  CHECK_THROWS_AS(ops::group_norm(gimg, gg, gb, 2), std::invalid_argument);
}

TEST_CASE("activation gradient checks") {
  RngStream rng(9);
  Tensor x = rand_t({2, 4, 3, 3}, rng);
  Tensor g = rand_t({4}, rng, 0.2);
  Tensor b = rand_t({4}, rng, 0.2);
  for (double& v : g.values()) v += 1.0;
  Tensor wfix = rand_t({2, 4, 3, 3}, rng);  // constant weighting
  auto frag = [&]() {
    return ops::sum_all(ops::mul(ops::group_norm(x, g, b, 2), wfix.detach()));
  };
  auto rep = check_gradients(frag, {{"x", x}, {"g", g}, {"b", b}});
  CHECK(rep.max_rel_err < 1e-5);

  Tensor sx = rand_t({3, 8}, rng);
  Tensor sw = rand_t({3, 8}, rng);
  auto frag_sm = [&]() {
    return ops::sum_all(ops::mul(ops::softmax(sx, 1), sw.detach()));
  };
  auto rep_sm = check_gradients(frag_sm, {{"sx", sx}});
  CHECK(rep_sm.max_rel_err < 1e-6);

  Tensor ax = rand_t({2, 6}, rng);
  auto frag_act = [&]() {
    return ops::mean_all(ops::square(ops::sigmoid(ops::silu(ax))));
  };
  auto rep_act = check_gradients(frag_act, {{"ax", ax}});
  CHECK(rep_act.max_rel_err < 1e-6);
}

TEST_CASE("attention gradient check") {
  RngStream rng(10);
  Tensor x = rand_t({2, 4, 3, 3}, rng, 0.5);
  Tensor wq = rand_t({4, 4}, rng, 0.5);
  Tensor wk = rand_t({4, 4}, rng, 0.5);
  Tensor wv = rand_t({4, 4}, rng, 0.5);
  auto frag = [&]() {
    return ops::mean_all(ops::square(ops::attention2d(x, wq, wk, wv)));
  };
  auto rep = check_gradients(frag, {{"x", x}, {"wq", wq}, {"wk", wk}, {"wv", wv}});
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("hinge clamped branch has exactly zero gradient") {
  Tensor pred = Tensor::scalar(0.8, true);
  auto hinge = [&]() { return ops::max0(ops::add_scalar(pred, -1.0)); };
  pred.zero_grad();
  Tensor loss = hinge();
  CHECK(loss.item() == 0.0);
  loss.backward();
  CHECK(pred.grad()[0] == 0.0);

  // boundary convention: equality is the inactive side
  Tensor pred_eq = Tensor::scalar(1.0, true);
  Tensor leq = ops::max0(ops::add_scalar(pred_eq, -1.0));
  CHECK(leq.item() == 0.0);
  leq.backward();
  CHECK(pred_eq.grad()[0] == 0.0);

  Tensor pred_hi = Tensor::scalar(1.2, true);
  Tensor lhi = ops::max0(ops::add_scalar(pred_hi, -1.0));
  CHECK(lhi.item() == doctest::Approx(0.2).epsilon(1e-12));
  lhi.backward();
  CHECK(pred_hi.grad()[0] == 1.0);
}

TEST_CASE("elementwise and structural op gradient property, 20 seeds") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed + 100);
    int n = 1 + static_cast<int>(rng.uniform_index(3));
    int c = 2 * (1 + static_cast<int>(rng.uniform_index(2)));
    int hw = 2 + static_cast<int>(rng.uniform_index(3));
    Tensor a = rand_t({n, c, hw, hw}, rng);
    Tensor b = rand_t({n, c, hw, hw}, rng);
    Tensor v = rand_t({n, c}, rng);
    Tensor s = rand_t({n}, rng);
    auto frag = [&]() {
      Tensor y = ops::add(ops::mul(a, b), ops::scale(ops::sub(a, b), 0.5));
      y = ops::add_channel_vec(y, v);
      y = ops::scale_per_sample(y, s);
      y = ops::upsample_nearest2(y);
      y = ops::clamp(y, -2.0, 2.0);
      Tensor pooled = ops::mean_pool_spatial(ops::concat_channels(y, y));
      return ops::mean_all(ops::square(pooled));
    };
    auto rep = check_gradients(frag, {{"a", a}, {"b", b}, {"v", v}, {"s", s}});
    CHECK(rep.max_rel_err < 1e-5);
  }
}

TEST_CASE("bce matches analytic values") {
  Tensor p = Tensor::from_data({2}, {0.5, 0.5});
  Tensor l = ops::bce_mean(p, {1.0, 0.0});
  CHECK(l.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Tensor exact = Tensor::from_data({2}, {1.0, 0.0});
  Tensor l2 = ops::bce_mean(exact, {1.0, 0.0});
  CHECK(l2.item() < 1e-6);

  RngStream rng(11);
  Tensor pr = Tensor::from_data({4}, {0.2, 0.4, 0.6, 0.8});
  std::vector<double> targets{0.0, 1.0, 1.0, 0.0};
  auto frag = [&]() { return ops::bce_mean(ops::sigmoid(pr), targets); };
  auto rep = check_gradients(frag, {{"pr", pr}});
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("non-finite forward raises numeric_error") {
  Tensor x = Tensor::from_data({2}, {1.0, 0.0});
  Tensor y = Tensor::from_data({2}, {1e308, 1e308});
  CHECK_THROWS_AS(ops::mul(ops::add(y, y), ops::add(y, y)), numeric_error);
  (void)x;
}

TEST_CASE("forward determinism is bitwise for identical seeds") {
  auto run = [](uint64_t seed) {
    RngStream rng(seed);
    Tensor x = rand_t({2, 3, 4, 4}, rng);
    Tensor k = rand_t({3, 3, 3, 3}, rng, 0.4);
    Tensor b = rand_t({3}, rng, 0.1);
    return ops::conv2d(ops::silu(x), k, b, 1, 1).values();
  };
  CHECK(run(77) == run(77));
}
