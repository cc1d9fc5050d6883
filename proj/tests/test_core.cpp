#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "support.hpp"
#include "wdl/cost.hpp"
#include "wdl/grid.hpp"
#include "wdl/kernel.hpp"
#include "wdl/oracle.hpp"
#include "wdl/softmax.hpp"

using namespace wdl;

TEST_CASE("grid invariants") {
  CHECK_THROWS_AS(Grid({0}), validation_error);
  CHECK_THROWS_AS(Grid({4, -1}), validation_error);
  CHECK(Grid({4, 5}).size() == 20);
  CHECK(Grid({7}).spacing == std::vector<double>{1.0});
}

TEST_CASE("histogram simplex closure") {
  Grid g({4});
  CHECK_THROWS_AS(Histogram(g, {0.5, 0.5, 0.5, 0.5}), validation_error);
  CHECK_THROWS_AS(Histogram(g, {-0.1, 0.5, 0.3, 0.3}), validation_error);
  Histogram h = Histogram::normalized(g, {1.0, 1.0, 2.0, 0.0});
  CHECK(h[2] == Catch::Approx(0.5));
  CHECK(std::abs(vec_sum(h.values()) - 1.0) <= 1e-10);

  // jitter removes exact zeros, then renormalizes
  Histogram j = Histogram::normalized(g, {1.0, 0.0, 0.0, 0.0}, 1e-9);
  for (int i = 0; i < 4; ++i) CHECK(j[i] > 0.0);
  CHECK(std::abs(vec_sum(j.values()) - 1.0) <= 1e-10);

  CHECK_THROWS_AS(Histogram::normalized(g, {0.0, 0.0, 0.0, 0.0}), validation_error);
}

TEST_CASE("build_cost squared euclidean") {
  Vec c = build_cost(CostSpec::squared_euclidean(Grid({3})));
  Vec want = {0, 1, 4, 1, 0, 1, 4, 1, 0};
  for (int i = 0; i < 9; ++i) CHECK(c[i] == want[i]);

  CHECK(build_cost(CostSpec::squared_euclidean(Grid({1}))) == Vec{0.0});

  // 2-D 2x2 grid: opposite corners are 1^2 + 1^2 apart
  Vec c2 = build_cost(CostSpec::squared_euclidean(Grid({2, 2})));
  CHECK(c2[0 * 4 + 3] == 2.0);
  // symmetry and zero diagonal
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(c2[i * 4 + j] == c2[j * 4 + i]);
  for (int i = 0; i < 4; ++i) CHECK(c2[i * 4 + i] == 0.0);
}

TEST_CASE("build_cost explicit validation") {
  Grid g({2});
  CHECK_THROWS_AS(CostSpec::explicit_dense(g, {0, -1, -1, 0}), validation_error);
  CHECK_THROWS_AS(CostSpec::explicit_dense(g, {0, 1, 1}), validation_error);
  CHECK_THROWS_AS(CostSpec::explicit_dense(g, {1, 1, 1, 1}), validation_error);
}

TEST_CASE("build_kernel") {
  Grid g({2});
  Kernel k = build_kernel(CostSpec::explicit_dense(g, {0, 1, 1, 0}), 1.0);
  const Vec& m = k.dense_matrix();
  CHECK(m[0] == 1.0);
  CHECK(m[1] == Catch::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK_THROWS_AS(build_kernel(CostSpec::squared_euclidean(g), 0.0), parameter_error);
  CHECK_THROWS_AS(build_kernel(CostSpec::squared_euclidean(g), -1.0), parameter_error);

  // squared-euclidean kernels are separable whenever the grid is rectangular
  CHECK(build_kernel(CostSpec::squared_euclidean(Grid({8, 8})), 2.0).separable());
  CHECK_FALSE(k.separable());
}

TEST_CASE("separable apply matches dense apply") {
  std::mt19937_64 rng(7);
  Kernel k = build_kernel(CostSpec::squared_euclidean(Grid({8, 8})), 2.0);
  const Vec& kd = k.dense_matrix();
  const int n = 64;
  for (int rep = 0; rep < 100; ++rep) {
    Vec v = testutil::random_positive(rng, n);
    Vec fast = k.apply(v);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += kd[static_cast<std::size_t>(i) * n + j] * v[static_cast<std::size_t>(j)];
      CHECK(std::abs(fast[static_cast<std::size_t>(i)] - s) <= 1e-12 * std::abs(s));
    }
    // transpose direction as well
    Vec fast_t = k.apply(v, true);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += kd[static_cast<std::size_t>(j) * n + i] * v[static_cast<std::size_t>(j)];
      CHECK(std::abs(fast_t[static_cast<std::size_t>(i)] - s) <= 1e-12 * std::abs(s));
    }
  }
}

TEST_CASE("kernel apply basics") {
  // C = 0 makes K all-ones: K v = sum(v) * 1
  Grid g({4});
  Kernel k = build_kernel(CostSpec::explicit_dense(g, Vec(16, 0.0)), 1.0);
  std::mt19937_64 rng(3);
  Vec p = testutil::random_simplex(rng, 4);
  Vec kp = k.apply(p);
  for (double x : kp) CHECK(x == Catch::Approx(1.0).epsilon(1e-14));

  // near-identityless regime: gamma huge makes K approach all-ones
  Kernel kbig = build_kernel(CostSpec::squared_euclidean(Grid({8})), 1e9);
  Vec q = testutil::random_simplex(rng, 8);
  Vec kq = kbig.apply(q);
  for (double x : kq) CHECK(std::abs(x - 1.0) < 1e-6);

  CHECK_THROWS_AS(k.apply(Vec{1.0, 2.0}), validation_error);
}

TEST_CASE("kernel positivity on simplex inputs") {
  std::mt19937_64 rng(11);
  Kernel k = build_kernel(CostSpec::squared_euclidean(Grid({5, 3})), 0.7);
  for (int rep = 0; rep < 20; ++rep) {
    Vec v = testutil::random_simplex(rng, 15);
    for (double x : k.apply(v)) CHECK(x > 0.0);
  }
}

TEST_CASE("log kernel equals dense application") {
  std::mt19937_64 rng(5);
  for (int side : {4, 8}) {
    Kernel k = build_kernel(CostSpec::squared_euclidean(Grid({side, side})), 1.0);
    const int n = side * side;
    for (int rep = 0; rep < 100; ++rep) {
      Vec b = testutil::random_positive(rng, n, 1e-3, 1.0);
      Vec lb(b.size());
      for (std::size_t i = 0; i < b.size(); ++i) lb[i] = std::log(b[i]);
      Vec lr = k.log_apply(lb);
      Vec want = k.apply(b);
      for (std::size_t i = 0; i < b.size(); ++i) {
        double got = std::exp(lr[i]);
        CHECK(std::abs(got - want[i]) <= 1e-12 * want[i]);
      }
    }
  }
}

TEST_CASE("log kernel of a dirac is a kernel column") {
  Kernel k = build_kernel(CostSpec::squared_euclidean(Grid({4, 4})), 1.3);
  const int n = 16, at = 5;
  Vec ld(static_cast<std::size_t>(n), kNegInf);
  ld[at] = 0.0;  // log of delta at bin 5
  Vec lr = k.log_apply(ld);
  const Vec& kd = k.dense_matrix();
  for (int i = 0; i < n; ++i)
    CHECK(lr[static_cast<std::size_t>(i)] ==
          Catch::Approx(std::log(kd[static_cast<std::size_t>(i) * n + at])).margin(1e-12));
}

TEST_CASE("log kernel stays finite where the linear path overflows") {
  Kernel k = build_kernel(CostSpec::squared_euclidean(Grid({4, 4})), 0.01);
  // b spans ~1e300 of dynamic range with its largest entry past the
  // representable maximum: exp(v) overflows, K_LS does not
  Vec lb(16, 60.0);
  lb[5] = 750.0;
  Vec lr = k.log_apply(lb);
  CHECK(all_finite(lr));
  Vec b(16);
  for (int i = 0; i < 16; ++i)
    b[static_cast<std::size_t>(i)] = std::exp(lb[static_cast<std::size_t>(i)]);
  CHECK_FALSE(all_finite(b));
  Vec dense = k.apply(b);
  CHECK_FALSE(all_finite(dense));
}

TEST_CASE("signed log apply matches linear apply") {
  std::mt19937_64 rng(13);
  Kernel k = build_kernel(CostSpec::squared_euclidean(Grid({3, 5})), 0.8);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Vec v(15);
    for (double& x : v) x = unif(rng);
    v[static_cast<std::size_t>(rep % 15)] = 0.0;  // exercise the zero-sign path
    SignedLog sl = SignedLog::from_linear(v);
    for (bool tr : {false, true}) {
      Vec got = k.log_apply_signed(sl, tr).to_linear();
      Vec want = k.apply(v, tr);
      for (int i = 0; i < 15; ++i)
        CHECK(got[static_cast<std::size_t>(i)] ==
              Catch::Approx(want[static_cast<std::size_t>(i)]).margin(1e-13));
    }
  }
}

TEST_CASE("softmax") {
  CHECK(softmax(Vec{0.0, 0.0}) == Vec{0.5, 0.5});
  Vec t = softmax(Vec{0.0, 0.0, 0.0});
  for (double x : t) CHECK(x == Catch::Approx(1.0 / 3.0).epsilon(1e-15));
  Vec u = softmax(Vec{std::log(1.0), std::log(3.0)});
  CHECK(u[0] == Catch::Approx(0.25).epsilon(1e-14));
  CHECK(u[1] == Catch::Approx(0.75).epsilon(1e-14));

  // shift invariance
  std::mt19937_64 rng(23);
  std::normal_distribution<double> gauss;
  Vec w(6);
  for (double& x : w) x = gauss(rng);
  Vec base = softmax(w);
  Vec shifted = w;
  for (double& x : shifted) x += 7.5;
  Vec after = softmax(shifted);
  for (int i = 0; i < 6; ++i)
    CHECK(after[static_cast<std::size_t>(i)] ==
          Catch::Approx(base[static_cast<std::size_t>(i)]).epsilon(1e-12));
  double s = vec_sum(base);
  CHECK(std::abs(s - 1.0) <= 1e-12);

  CHECK_THROWS_AS(softmax(Vec{1.0, std::numeric_limits<double>::infinity()}),
                  validation_error);
}

TEST_CASE("softmax_vjp") {
  Vec g = softmax_vjp(Vec{0.0, 0.0}, Vec{1.0, 0.0});
  CHECK(g[0] == Catch::Approx(0.25).epsilon(1e-15));
  CHECK(g[1] == Catch::Approx(-0.25).epsilon(1e-15));

  // constants are annihilated
  std::mt19937_64 rng(29);
  std::normal_distribution<double> gauss;
  Vec u(5);
  for (double& x : u) x = gauss(rng);
  Vec z = softmax_vjp(u, Vec(5, 3.7));
  for (double x : z) CHECK(std::abs(x) <= 1e-15);

  // matches finite differences of softmax
  Vec cot(5);
  for (double& x : cot) x = gauss(rng);
  Vec got = softmax_vjp(u, cot);
  Vec fd = wdl::oracle::fd_gradient(
      [&](const Vec& v) { return vec_dot(softmax(v), cot); }, u);
  for (int i = 0; i < 5; ++i)
    CHECK(std::abs(got[static_cast<std::size_t>(i)] - fd[static_cast<std::size_t>(i)]) <= 1e-7);

  CHECK_THROWS_AS(softmax_vjp(u, Vec{1.0}), validation_error);
}
