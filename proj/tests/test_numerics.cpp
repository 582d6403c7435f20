#include <cmath>
#include <cstring>

#include "doctest.h"
#include "fastwam/errors.hpp"
#include "fastwam/gradcheck.hpp"
#include "fastwam/param_store.hpp"
#include "fastwam/rng.hpp"
#include "fastwam/tensor.hpp"

using namespace fastwam;

namespace {

std::vector<double> randn(Pcg32& rng, std::size_t n, double std_dev = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * std_dev;
  return v;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("affine identity and zero weight") {
  Tensor x = Tensor::from_data({1, 1, 2}, {1.0, 2.0});
  Tensor w_id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor b0 = Tensor::from_data({2}, {0, 0});
  Tensor out = affine(x, w_id, b0);
  CHECK(out.data()[0] == 1.0);
  CHECK(out.data()[1] == 2.0);

  Tensor w0 = Tensor::from_data({2, 2}, {0, 0, 0, 0});
  Tensor b = Tensor::from_data({2}, {3, 4});
  Tensor out2 = affine(x, w0, b);
  CHECK(out2.data()[0] == 3.0);
  CHECK(out2.data()[1] == 4.0);
}

TEST_CASE("affine shape mismatch names both shapes") {
  Tensor x = Tensor::from_data({1, 2, 3}, std::vector<double>(6, 1.0));
  Tensor w = Tensor::from_data({4, 2}, std::vector<double>(8, 1.0));
  Tensor b = Tensor::from_data({2}, {0, 0});
  CHECK_THROWS_WITH_AS(affine(x, w, b),
                       doctest::Contains("[1,2,3]"), DimensionError);
}

TEST_CASE("affine gradient matches central finite differences (seed 7)") {
  // B=1, N=2, Din=3, Dout=2; loss = sum(affine(x,w,b)), gradient w.r.t. w.
  Pcg32 rng(7, 0);
  auto xv = randn(rng, 6);
  auto wv = randn(rng, 6);
  auto bv = randn(rng, 2);

  ParamStore ps;
  ps.add("b", {2}, bv);
  ps.add("w", {3, 2}, wv);
  ps.add("x", {1, 2, 3}, xv);
  LossFn f = [](Graph& g) { return sum(affine(g.param("x"), g.param("w"), g.param("b"))); };
  CheckReport r = finite_diff_check(ps, f, 1e-6, 1e-5);
  CHECK(r.pass);
  CHECK(r.max_rel_err <= 1e-6);
}

TEST_CASE("layer_norm constant and symmetric inputs") {
  Tensor g1 = Tensor::from_data({4}, {1, 1, 1, 1});
  Tensor b0 = Tensor::from_data({4}, {0, 0, 0, 0});
  Tensor x = Tensor::from_data({1, 4}, {1, 1, 1, 1});
  Tensor out = layer_norm(x, g1, b0);
  for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == doctest::Approx(0.0).epsilon(1e-12));

  Tensor g2 = Tensor::from_data({2}, {1, 1});
  Tensor bz = Tensor::from_data({2}, {0, 0});
  Tensor x2 = Tensor::from_data({1, 2}, {-1, 1});
  Tensor out2 = layer_norm(x2, g2, bz);
  CHECK(out2.data()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(out2.data()[1] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm gradient vs finite differences (seed 3)") {
  Pcg32 rng(3, 0);
  ParamStore ps;
  ps.add("beta", {4}, randn(rng, 4, 0.1));
  ps.add("gamma", {4}, randn(rng, 4, 0.5));
  ps.add("x", {2, 4}, randn(rng, 8));
  LossFn f = [](Graph& g) {
    Tensor y = layer_norm(g.param("x"), g.param("gamma"), g.param("beta"));
    // Square so the loss is sensitive to every output.
    return mse_masked(y, std::vector<double>(8, 0.25));
  };
  CheckReport r = finite_diff_check(ps, f, 1e-5, 1e-5);
  CHECK(r.pass);
}

TEST_CASE("masked_softmax basics") {
  SUBCASE("uniform over allowed") {
    BoolMatrix m(1, 3);
    m.set(0, 0, true);
    m.set(0, 1, true);
    Tensor s = Tensor::from_data({1, 1, 1, 3}, {0, 0, 0});
    Tensor p = masked_softmax(s, m);
    CHECK(p.data()[0] == doctest::Approx(0.5));
    CHECK(p.data()[1] == doctest::Approx(0.5));
    CHECK(p.data()[2] == 0.0);  // exactly zero
  }
  SUBCASE("saturation matches sigmoid(20)") {
    BoolMatrix m(1, 2, true);
    Tensor s = Tensor::from_data({1, 1, 1, 2}, {10, -10});
    Tensor p = masked_softmax(s, m);
    const double sig = 1.0 / (1.0 + std::exp(-20.0));
    CHECK(std::fabs(p.data()[0] - sig) <= 1e-8);
    CHECK(std::fabs(p.data()[1] - (1.0 - sig)) <= 1e-8);
  }
  SUBCASE("single allowed key") {
    BoolMatrix m(1, 3);
    m.set(0, 0, true);
    Tensor s = Tensor::from_data({1, 1, 1, 3}, {-3.7, 100.0, 2.0});
    Tensor p = masked_softmax(s, m);
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[1] == 0.0);
    CHECK(p.data()[2] == 0.0);
  }
  SUBCASE("fully-masked row is an error") {
    BoolMatrix m(2, 2);
    m.set(0, 0, true);
    Tensor s = Tensor::from_data({1, 1, 2, 2}, {0, 0, 0, 0});
    CHECK_THROWS_AS(masked_softmax(s, m), InvalidMaskError);
  }
}

TEST_CASE("masked_softmax rows sum to 1 over allowed keys") {
  Pcg32 rng(99, 1);
  const int nq = 5, nk = 7;
  BoolMatrix m(nq, nk);
  for (int i = 0; i < nq; ++i) {
    m.set(i, i % nk, true);  // guarantee one allowed
    for (int j = 0; j < nk; ++j) {
      if (rng.next_double01() < 0.5) m.set(i, j, true);
    }
  }
  Tensor s = Tensor::from_data({2, 3, nq, nk}, randn(rng, 2 * 3 * nq * nk, 3.0));
  Tensor p = masked_softmax(s, m);
  for (int bh = 0; bh < 6; ++bh) {
    for (int i = 0; i < nq; ++i) {
      double acc = 0.0;
      for (int j = 0; j < nk; ++j) {
        double v = p.data()[(static_cast<std::size_t>(bh) * nq + i) * nk + j];
        if (!m.at(i, j)) CHECK(v == 0.0);
        acc += v;
      }
      CHECK(std::fabs(acc - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("masked_softmax gradient flows only through allowed positions") {
  BoolMatrix m(1, 3);
  m.set(0, 0, true);
  m.set(0, 2, true);
  Tensor s = Tensor::from_data({1, 1, 1, 3}, {0.3, 5.0, -0.2}, /*requires_grad=*/true);
  Tensor p = masked_softmax(s, m);
  Tensor loss = mse_masked(p, {1.0, 0.0, 0.0});
  loss.backward();
  const auto& g = s.grad();
  CHECK(g[1] == 0.0);
  CHECK(g[0] != 0.0);
  CHECK(g[2] != 0.0);
}

TEST_CASE("attention single key broadcasts v") {
  Pcg32 rng(5, 2);
  const int H = 2, nq = 3, dh = 4;
  Tensor q = Tensor::from_data({1, H, nq, dh}, randn(rng, H * nq * dh));
  Tensor k = Tensor::from_data({1, H, 1, dh}, randn(rng, H * dh));
  Tensor v = Tensor::from_data({1, H, 1, dh}, randn(rng, H * dh));
  BoolMatrix m(nq, 1, true);
  Tensor out = attention(q, k, v, m);
  for (int h = 0; h < H; ++h) {
    for (int i = 0; i < nq; ++i) {
      for (int d = 0; d < dh; ++d) {
        CHECK(out.data()[(static_cast<std::size_t>(h) * nq + i) * dh + d] ==
              v.data()[static_cast<std::size_t>(h) * dh + d]);
      }
    }
  }
}

TEST_CASE("attention diagonal mask returns matching v rows") {
  Pcg32 rng(6, 2);
  const int n = 4, dh = 3;
  Tensor q = Tensor::from_data({1, 1, n, dh}, randn(rng, n * dh));
  Tensor k = Tensor::from_data({1, 1, n, dh}, randn(rng, n * dh));
  Tensor v = Tensor::from_data({1, 1, n, dh}, randn(rng, n * dh));
  BoolMatrix m(n, n);
  for (int i = 0; i < n; ++i) m.set(i, i, true);
  Tensor out = attention(q, k, v, m);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == v.data()[i]);
}

TEST_CASE("attention output bit-exactly ignores masked key/value rows (seed 11)") {
  // For each query i, scrambling the k/v rows that mask row i forbids must
  // leave output row i bit-identical (other rows may change).
  Pcg32 rng(11, 3);
  const int H = 2, n = 6, dh = 4;
  BoolMatrix m(n, n);
  for (int i = 0; i < n; ++i) {
    m.set(i, i, true);
    for (int j = 0; j < n; ++j) {
      if (rng.next_double01() < 0.5) m.set(i, j, true);
    }
  }
  auto qv = randn(rng, H * n * dh);
  auto kv = randn(rng, H * n * dh);
  auto vv = randn(rng, H * n * dh);
  Tensor base = attention(Tensor::from_data({1, H, n, dh}, qv), Tensor::from_data({1, H, n, dh}, kv),
                          Tensor::from_data({1, H, n, dh}, vv), m);

  for (int i = 0; i < n; ++i) {
    auto scr_k = kv;
    auto scr_v = vv;
    for (int h = 0; h < H; ++h) {
      for (int j = 0; j < n; ++j) {
        if (m.at(i, j)) continue;
        for (int d = 0; d < dh; ++d) {
          scr_k[(static_cast<std::size_t>(h) * n + j) * dh + d] = rng.normal() * 1e6;
          scr_v[(static_cast<std::size_t>(h) * n + j) * dh + d] = rng.normal() * 1e6;
        }
      }
    }
    Tensor scr = attention(Tensor::from_data({1, H, n, dh}, qv),
                           Tensor::from_data({1, H, n, dh}, scr_k),
                           Tensor::from_data({1, H, n, dh}, scr_v), m);
    for (int h = 0; h < H; ++h) {
      const std::size_t off = (static_cast<std::size_t>(h) * n + i) * dh;
      CHECK(std::memcmp(base.data() + off, scr.data() + off, dh * sizeof(double)) == 0);
    }
  }
}

TEST_CASE("attention gradient vs finite differences") {
  Pcg32 rng(21, 4);
  const int n = 4, dh = 3;
  BoolMatrix m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) m.set(i, j, true);  // causal-ish
  }
  ParamStore ps;
  ps.add("k", {1, 1, n, dh}, randn(rng, n * dh));
  ps.add("q", {1, 1, n, dh}, randn(rng, n * dh));
  ps.add("v", {1, 1, n, dh}, randn(rng, n * dh));
  std::vector<double> target = randn(rng, n * dh);
  LossFn f = [m, target](Graph& g) {
    return mse_masked(attention(g.param("q"), g.param("k"), g.param("v"), m), target);
  };
  CheckReport r = finite_diff_check(ps, f, 1e-4, 1e-5);
  CHECK(r.pass);
}

TEST_CASE("composite ops gradient vs finite differences (random shapes)") {
  Pcg32 rng(123, 7);
  ParamStore ps;
  ps.add("b1", {5}, randn(rng, 5, 0.1));
  ps.add("beta", {5}, randn(rng, 5, 0.1));
  ps.add("gamma", {5}, randn(rng, 5, 0.3));
  ps.add("shift", {5}, randn(rng, 5, 0.2));
  ps.add("sc", {5}, randn(rng, 5, 0.2));
  ps.add("w1", {3, 5}, randn(rng, 15, 0.4));
  ps.add("x", {4, 3}, randn(rng, 12));
  std::vector<double> target = randn(rng, 20);
  LossFn f = [target](Graph& g) {
    Tensor h = affine(g.param("x"), g.param("w1"), g.param("b1"));
    h = layer_norm(h, g.param("gamma"), g.param("beta"));
    h = row_affine(h, g.param("sc"), g.param("shift"));
    h = gelu(h);
    Tensor h2 = silu(h);
    return mse_masked(add(h, h2), target);
  };
  CheckReport r = finite_diff_check(ps, f, 1e-4, 1e-5);
  CHECK(r.pass);
}

TEST_CASE("finite_diff_check quadratic oracle") {
  ParamStore ps;
  ps.add("p", {3}, {1.0, 2.0, 3.0});
  LossFn f = [](Graph& g) {
    Tensor p = g.param("p");
    return sum(mul(p, p));
  };
  // Analytic grad [2,4,6] vs central differences: exact for quadratics.
  Graph g(ps);
  Tensor loss = f(g);
  loss.backward();
  std::vector<double> flat(ps.total_size(), 0.0);
  g.accumulate_param_grads(flat);
  CHECK(flat[0] == doctest::Approx(2.0));
  CHECK(flat[1] == doctest::Approx(4.0));
  CHECK(flat[2] == doctest::Approx(6.0));

  CheckReport r = finite_diff_check(ps, f, 1e-8, 1e-5);
  CHECK(r.pass);
  CHECK(r.max_rel_err <= 1e-8);
}

TEST_CASE("finite_diff_check rejects NaN loss") {
  ParamStore ps;
  ps.add("p", {1}, {1.0});
  LossFn f = [](Graph& g) {
    Tensor p = g.param("p");
    (void)p;
    return Tensor::scalar(std::nan(""));
  };
  CHECK_THROWS_AS(finite_diff_check(ps, f, 1e-4, 1e-5), NumericError);
}

TEST_CASE("ops are deterministic across repeat evaluation") {
  Pcg32 rng(1234, 9);
  auto xv = randn(rng, 24);
  auto wv = randn(rng, 12);
  auto bv = randn(rng, 2);
  auto run = [&]() {
    Tensor x = Tensor::from_data({4, 6}, xv);
    Tensor w = Tensor::from_data({6, 2}, wv);
    Tensor b = Tensor::from_data({2}, bv);
    return affine(x, w, b);
  };
  Tensor a = run();
  Tensor b2 = run();
  CHECK(bit_equal(a, b2));
}

TEST_CASE("ParamStore checkpoint round-trip is bit-exact") {
  Pcg32 rng(77, 0);
  ParamStore ps;
  ps.add("alpha/w", {3, 4}, randn(rng, 12));
  ps.add("beta/b", {7}, randn(rng, 7));
  // include awkward values
  ps.at("beta/b").value[0] = 0.0;
  ps.at("beta/b").value[1] = -0.0;
  ps.at("beta/b").value[2] = 1e-308;
  const std::string path = "ckpt_test_roundtrip.fwam";
  ps.save(path);
  ParamStore back = ParamStore::load(path);
  REQUIRE(back.count() == ps.count());
  for (const auto& [p, e] : ps.entries()) {
    const auto& r = back.at(p);
    REQUIRE(r.shape == e.shape);
    CHECK(std::memcmp(r.value.data(), e.value.data(), e.value.size() * sizeof(double)) == 0);
  }
  std::remove(path.c_str());
}

TEST_CASE("repeated parameter use accumulates gradient once per use") {
  ParamStore ps;
  ps.add("p", {2}, {3.0, -1.0});
  Graph g(ps);
  Tensor p = g.param("p");
  Tensor q = g.param("p");  // same leaf
  CHECK(p.node().get() == q.node().get());
  Tensor loss = sum(add(p, q));  // d/dp = 2
  loss.backward();
  std::vector<double> flat(2, 0.0);
  g.accumulate_param_grads(flat);
  CHECK(flat[0] == doctest::Approx(2.0));
  CHECK(flat[1] == doctest::Approx(2.0));
}
