#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "migc/gradcheck.hpp"
#include "migc/nn.hpp"

using namespace migc;

namespace {
Tensor randn(std::vector<int> shape, uint64_t seed) {
  Rng r(seed);
  Tensor t(std::move(shape));
  r.fill_normal(t.data);
  return t;
}
double max_abs_diff(const Tensor& a, const Tensor& b) {
  double d = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    d = std::max(d, std::fabs(a.data[i] - b.data[i]));
  return d;
}
}  // namespace

TEST_CASE("parameter registry: stable order, lookup, drift detection") {
  Rng rng(1);
  ParamRegistry r;
  Value a = param(uniform_init({2, 3}, 0.5, rng));
  Value b = param(uniform_init({4}, 0.5, rng));
  r.add("alpha", a);
  r.add("beta", b);
  CHECK(r.items[0].first == "alpha");
  CHECK(r.items[1].first == "beta");
  CHECK(r.find("beta") == b);
  CHECK(r.find("gamma") == nullptr);
  CHECK(r.values().size() == 2);

  const uint64_t h = r.content_hash();
  CHECK(h == r.content_hash());  // pure
  const double keep = b->val(1);
  b->val(1) += 1e-12;
  CHECK(r.content_hash() != h);  // any bit of drift shows up
  b->val(1) = keep;
  CHECK(r.content_hash() == h);

  ParamRegistry renamed;
  renamed.add("alpha", a);
  renamed.add("beta2", b);
  CHECK(renamed.content_hash() != h);  // names are part of the identity

  r.set_requires_grad(false);
  CHECK_FALSE(a->requires_grad);
  r.set_requires_grad(true);
  CHECK(a->requires_grad);
}

TEST_CASE("uniform init: deterministic, scale-bounded, zero-init layers") {
  Rng a(7), b(7);
  Tensor ta = uniform_init({3, 5}, 0.25, a), tb = uniform_init({3, 5}, 0.25, b);
  CHECK(max_abs_diff(ta, tb) == 0.0);
  for (double v : ta.data) CHECK(std::fabs(v) <= 0.25);
  bool nonzero = false;
  for (double v : ta.data) nonzero = nonzero || v != 0.0;
  CHECK(nonzero);

  Rng rng(8);
  Linear lz(4, 6, rng, /*zero_init=*/true);
  for (double v : lz.W->val.data) CHECK(v == 0.0);
  for (double v : lz.b->val.data) CHECK(v == 0.0);
  Conv2dLayer cz(3, 2, 1, 1, 0, rng, /*zero_init=*/true);
  for (double v : cz.w->val.data) CHECK(v == 0.0);
}

TEST_CASE("linear and conv layers: shapes and registry wiring") {
  Rng rng(9);
  Linear l(4, 6, rng);
  Value y = l.fwd(constant(randn({5, 4}, 2)));
  CHECK(y->val.shape == std::vector<int>{5, 6});

  Conv2dLayer c(3, 8, 3, 2, 1, rng);
  Value z = c.fwd(constant(randn({3, 8, 8}, 3)));
  CHECK(z->val.shape == std::vector<int>{8, 4, 4});

  ParamRegistry r;
  l.collect(r, "l");
  c.collect(r, "c");
  CHECK(r.items.size() == 4);
  CHECK(r.find("l.W") != nullptr);
  CHECK(r.find("c.w") != nullptr);
}

TEST_CASE("group norm: per-group statistics and affine response") {
  const int C = 6, G = 3, H = 5, W = 5;
  GroupNormLayer gn(C, G);
  Tensor x = randn({C, H, W}, 4);
  for (auto& v : x.data) v = v * 3.0 + 1.5;  //. give it something to normalize
  Value y = gn.fwd(constant(x));
  // unit gamma, zero beta at init: each group is standardized
  const int per = C / G;
  for (int g = 0; g < G; ++g) {
    double sum = 0, sum2 = 0;
    for (int c = g * per; c < (g + 1) * per; ++c)
      for (int i = 0; i < H * W; ++i) {
        const double v = y->val(c, i / W, i % W);
        sum += v;
        sum2 += v * v;
      }
    const double n = per * H * W;
    CHECK(sum / n == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(sum2 / n == doctest::Approx(1.0).epsilon(1e-6));
  }
  // affine parameters shift and scale per channel
  gn.gamma->val(1) = 2.0;
  gn.beta->val(1) = -1.0;
  Value y2 = gn.fwd(constant(x));
  for (int i = 0; i < H * W; ++i)
    CHECK(y2->val(1, i / W, i % W) ==
          doctest::Approx(2.0 * y->val(1, i / W, i % W) - 1.0).epsilon(1e-9));
}

TEST_CASE("cbam: shape-preserving, gates stay in (0,1), gradcheck") {
  Rng rng(11);
  const int C = 4;
  Cbam cb(C, 2, 3, rng);
  Tensor x = randn({C, 6, 6}, 5);
  Value y = cb.fwd(constant(x));
  CHECK(y->val.shape == x.shape);
  // both gates are sigmoids, so |y| can never exceed |x|
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(std::fabs(y->val.data[i]) <= std::fabs(x.data[i]) + 1e-12);

  ParamRegistry r;
  cb.collect(r, "cb");
  Value xin = constant(randn({C, 3, 3}, 6));
  auto rep = grad_check(r.items, [&] { return sum_all(mul(cb.fwd(xin), cb.fwd(xin))); }, 1e-5);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("attention rows: softmax weights, masking, multihead split") {
  Rng rng(12);
  Value Q = constant(randn({3, 4}, 7));
  Value K = constant(randn({5, 4}, 8));
  Value V = constant(randn({5, 4}, 9));
  auto wm = attention_rows_with_maps(Q, K, V, 2);
  REQUIRE(wm.maps.size() == 2);
  for (const Value& m : wm.maps) {
    REQUIRE(m->val.shape == std::vector<int>{3, 5});
    for (int i = 0; i < 3; ++i) {
      double row = 0;
      for (int j = 0; j < 5; ++j) {
        CHECK(m->val(i, j) >= 0.0);
        row += m->val(i, j);
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(max_abs_diff(wm.out->val, attention_rows(Q, K, V, 2)->val) == 0.0);

  // an additive -inf mask removes those keys entirely
  Tensor mask = Tensor::zeros({3, 5});
  mask(0, 3) = -std::numeric_limits<double>::infinity();
  mask(0, 4) = -std::numeric_limits<double>::infinity();
  auto masked = attention_rows_with_maps(Q, K, V, 2, &mask);
  for (const Value& m : masked.maps) {
    CHECK(m->val(0, 3) == 0.0);
    CHECK(m->val(0, 4) == 0.0);
    CHECK(m->val(1, 3) > 0.0);
  }

  // head count must divide the model width
  CHECK_THROWS_AS(attention_rows(Q, K, V, 3), NumericError);
}

TEST_CASE("adamw: deterministic, lr-scaled steps, decoupled decay") {
  // one scalar parameter, constant gradient of 1: after the bias-corrected
  // first step the update is exactly lr * (1 + wd * theta0)
  auto run = [](double wd) {
    Value p = param(Tensor::full({1}, 2.0));
    GradStore g;
    g.add(p, Tensor::full({1}, 1.0));
    AdamW opt;
    opt.lr = 0.1;
    opt.weight_decay = wd;
    opt.step({p}, g);
    return p->val(0);
  };
  CHECK(run(0.0) == doctest::Approx(2.0 - 0.1).epsilon(1e-9));
  CHECK(run(0.5) == doctest::Approx(2.0 - 0.1 - 0.1 * 0.5 * 2.0).epsilon(1e-9));

  // two identical runs stay in lockstep over many steps
  auto trajectory = [] {
    Rng rng(13);
    Value p = param(uniform_init({4}, 1.0, rng));
    AdamW opt;
    opt.lr = 0.05;
    std::vector<double> out;
    for (int s = 0; s < 25; ++s) {
      Value loss = sum_all(mul(p, p));
      GradStore g = backward(loss);
      opt.step({p}, g);
      out.push_back(loss->val(0));
    }
    return out;
  };
  auto t1 = trajectory(), t2 = trajectory();
  CHECK(t1 == t2);
  CHECK(t1.back() < t1.front() * 0.05);  // quadratic bowl: fast descent

  // a parameter with no gradient entry this step is left alone
  Value a = param(Tensor::full({1}, 1.0));
  Value b = param(Tensor::full({1}, 1.0));
  GradStore g;
  g.add(a, Tensor::full({1}, 1.0));
  AdamW opt;
  opt.weight_decay = 0.0;
  opt.step({a, b}, g);
  CHECK(a->val(0) != 1.0);
  CHECK(b->val(0) == 1.0);
}

TEST_CASE("cross-attention site: projection shapes and residual gradcheck") {
  Rng rng(14);
  const int C = 4, ctxt = 6;
  CrossAttnSite site(C, ctxt, 2, 2, rng);
  Tensor x = randn({C, 3, 3}, 15);
  Value rows = site.norm_rows(constant(x));
  CHECK(rows->val.shape == std::vector<int>{9, C});
  Value ctx = constant(randn({2, ctxt}, 16));
  CHECK(site.q_proj(rows)->val.shape == std::vector<int>{9, C});
  CHECK(site.k_proj(ctx)->val.shape == std::vector<int>{2, C});
  Value res = site.plain_residual_rows(rows, ctx);
  CHECK(res->val.shape == std::vector<int>{9, C});

  ParamRegistry r;
  site.collect(r, "s");
  auto rep = grad_check(
      r.items,
      [&] {
        Value rr = site.plain_residual_rows(site.norm_rows(constant(x)), ctx);
        return sum_all(mul(rr, rr));
      },
      1e-5);
  CHECK(rep.max_rel_err < 1e-4);
}
