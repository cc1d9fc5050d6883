#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "support.hpp"
#include "wdl/barycenter.hpp"
#include "wdl/cost.hpp"

using namespace wdl;

namespace {

Kernel line_kernel(int n, double gamma) {
  return build_kernel(CostSpec::squared_euclidean(Grid({n})), gamma);
}

Vec dirac(int n, int at, double jitter = 0.0) {
  Vec v(static_cast<std::size_t>(n), 0.0);
  v[static_cast<std::size_t>(at)] = 1.0;
  if (jitter > 0.0) {
    for (double& x : v) x += jitter;
    double s = vec_sum(v);
    for (double& x : v) x /= s;
  }
  return v;
}

BarycenterProblem make_problem(const std::vector<Vec>& atoms, Vec weights,
                               const Kernel& k, int L) {
  BarycenterProblem prob;
  prob.atoms = atoms;
  prob.weights = std::move(weights);
  prob.kernel = &k;
  prob.iters = L;
  return prob;
}

}  // namespace

TEST_CASE("problem validation") {
  Kernel k = line_kernel(8, 1.0);
  std::mt19937_64 rng(101);
  std::vector<Vec> atoms = {testutil::random_simplex(rng, 8), testutil::random_simplex(rng, 8)};
  auto prob = make_problem(atoms, {0.5, 0.5}, k, 3);
  CHECK_NOTHROW(barycenter_forward(prob));
  prob.weights = {0.5, 0.4};
  CHECK_THROWS_AS(barycenter_forward(prob), validation_error);
  prob.weights = {0.5, 0.5};
  prob.iters = 0;
  CHECK_THROWS_AS(barycenter_forward(prob), parameter_error);
  prob.iters = 3;
  prob.tau = 0.1;
  CHECK_THROWS_AS(barycenter_heavyball(prob), parameter_error);
  prob.tau = 0.0;
  prob.rho = -1.0;
  CHECK_THROWS_AS(barycenter_unbalanced(prob), parameter_error);
}

TEST_CASE("one-hot weights freeze the hot scaling") {
  std::mt19937_64 rng(103);
  Kernel k = line_kernel(10, 1.0);
  std::vector<Vec> atoms = {testutil::random_simplex(rng, 10),
                            testutil::random_simplex(rng, 10)};
  auto prob = make_problem(atoms, {1.0, 0.0}, k, 6);
  BarycenterTrace tr = barycenter_forward(prob);

  // P^(l) = K^t(d_0 / K 1) at every l, and b_0 stays 1
  Vec kb1 = k.apply(Vec(10, 1.0), false);
  Vec a0(10);
  for (int i = 0; i < 10; ++i) a0[static_cast<std::size_t>(i)] = atoms[0][static_cast<std::size_t>(i)] / kb1[static_cast<std::size_t>(i)];
  Vec want = k.apply(a0, true);
  for (int i = 0; i < 10; ++i)
    CHECK(tr.P[static_cast<std::size_t>(i)] == Catch::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-13));
  for (int l = 0; l < 6; ++l)
    for (int i = 0; i < 10; ++i)
      CHECK(tr.b(l, 0)[i] == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("permutation symmetry is exact") {
  std::mt19937_64 rng(107);
  Kernel k = line_kernel(12, 0.8);
  Vec d1 = testutil::random_simplex(rng, 12);
  Vec d2 = testutil::random_simplex(rng, 12);
  auto t1 = barycenter_forward(make_problem({d1, d2}, {0.3, 0.7}, k, 15));
  auto t2 = barycenter_forward(make_problem({d2, d1}, {0.7, 0.3}, k, 15));
  CHECK(t1.P == t2.P);
}

TEST_CASE("dirac pair: stabilized run puts the mode at the weighted midpoint") {
  Kernel k = line_kernel(41, 0.5);
  std::vector<Vec> atoms = {dirac(41, 10), dirac(41, 30)};

  // the plain loop hits 0/0 from underflowed kernel columns and says so
  auto prob = make_problem(atoms, {0.5, 0.5}, k, 200);
  CHECK_THROWS_AS(barycenter_forward(prob), instability_error);

  prob.log_domain = true;
  BarycenterTrace tr = barycenter_log_domain(prob);
  CHECK(argmax(tr.P) == 20);

  prob.weights = {0.75, 0.25};
  BarycenterTrace tr2 = barycenter_log_domain(prob);
  CHECK(std::abs(argmax(tr2.P) - 15) <= 1);

  // jittered atoms keep the plain loop finite on the same instance
  auto jit = make_problem({dirac(41, 10, 1e-9), dirac(41, 30, 1e-9)}, {0.5, 0.5}, k, 200);
  BarycenterTrace tr3 = barycenter_forward(jit);
  CHECK(argmax(tr3.P) == 20);
}

TEST_CASE("simplex drift stays small on converged runs") {
  std::mt19937_64 rng(109);
  Kernel k = line_kernel(30, 1.0);
  std::vector<Vec> atoms = {testutil::random_simplex(rng, 30),
                            testutil::random_simplex(rng, 30),
                            testutil::random_simplex(rng, 30)};
  auto prob = make_problem(atoms, {0.2, 0.5, 0.3}, k, 500);
  BarycenterTrace tr = barycenter_forward(prob);
  double mass = vec_sum(tr.P);
  CHECK(mass >= 1.0 - 1e-3);
  CHECK(mass <= 1.0 + 1e-3);
}

TEST_CASE("fixed point: the b-update stops moving at convergence") {
  Kernel k = line_kernel(30, 1.0);
  std::vector<Vec> atoms = {testutil::gaussian_bump(30, 10.0, 2.0),
                            testutil::gaussian_bump(30, 19.0, 2.0)};
  auto prob = make_problem(atoms, {0.5, 0.5}, k, 3000);
  BarycenterTrace tr = barycenter_forward(prob);
  CHECK(tr.residuals.back() <= 1e-10);
}

TEST_CASE("translation equivariance on the grid") {
  const int n = 50, shift = 3;
  Kernel k = line_kernel(n, 1.0);
  auto make_atoms = [&](double off) {
    return std::vector<Vec>{testutil::gaussian_bump(n, 12.0 + off, 2.0),
                            testutil::gaussian_bump(n, 22.0 + off, 2.0)};
  };
  auto base = barycenter_forward(make_problem(make_atoms(0.0), {0.5, 0.5}, k, 400));
  auto moved = barycenter_forward(make_problem(make_atoms(shift), {0.5, 0.5}, k, 400));
  CHECK(argmax(moved.P) == argmax(base.P) + shift);
}

TEST_CASE("heavyball: tau = 0 reproduces the plain loop bit-for-bit") {
  std::mt19937_64 rng(113);
  Kernel k = line_kernel(16, 0.7);
  std::vector<Vec> atoms = {testutil::random_simplex(rng, 16),
                            testutil::random_simplex(rng, 16)};
  auto prob = make_problem(atoms, {0.4, 0.6}, k, 37);
  BarycenterTrace plain = barycenter_forward(prob);
  BarycenterTrace hb = barycenter_heavyball(prob);
  CHECK(plain.P == hb.P);
  CHECK(plain.b_hist == hb.b_hist);
  CHECK(plain.phi_hist == hb.phi_hist);
}

TEST_CASE("heavyball accelerates and reaches the same fixed point") {
  Kernel k = line_kernel(41, 0.5);
  std::vector<Vec> atoms = {dirac(41, 10, 1e-9), dirac(41, 30, 1e-9)};
  auto prob = make_problem(atoms, {0.5, 0.5}, k, 50);
  BarycenterTrace plain50 = barycenter_forward(prob);
  prob.tau = -0.1;
  BarycenterTrace hb50 = barycenter_heavyball(prob);
  CHECK(hb50.p_residuals.back() <= plain50.p_residuals.back());

  prob.iters = 1000;
  BarycenterTrace hb = barycenter_heavyball(prob);
  prob.tau = 0.0;
  BarycenterTrace plain = barycenter_forward(prob);
  CHECK(linf_diff(plain.P, hb.P) <= 1e-8);
}

TEST_CASE("unbalanced: rho -> inf recovers the balanced barycenter") {
  std::mt19937_64 rng(127);
  Kernel k = line_kernel(16, 1.0);
  for (int rep = 0; rep < 3; ++rep) {
    std::vector<Vec> atoms = {testutil::random_simplex(rng, 16),
                              testutil::random_simplex(rng, 16)};
    auto prob = make_problem(atoms, {0.5, 0.5}, k, 300);
    BarycenterTrace bal = barycenter_forward(prob);
    prob.rho = 1e6;
    BarycenterTrace unb = barycenter_unbalanced(prob);
    CHECK(l1_diff(bal.P, unb.P) <= 1e-4);
  }
}

TEST_CASE("unbalanced: single atom keeps finite positive mass") {
  Kernel k = line_kernel(12, 2.0);
  auto prob = make_problem({testutil::gaussian_bump(12, 5.0, 1.5)}, {1.0}, k, 100);
  prob.rho = 3.0;
  BarycenterTrace tr = barycenter_unbalanced(prob);
  double mass = vec_sum(tr.P);
  CHECK(std::isfinite(mass));
  CHECK(mass > 0.0);
  for (double x : tr.P) CHECK(x >= 0.0);
}

TEST_CASE("unbalanced keeps empty regions empty; balanced does not") {
  // two bumps in the outer thirds of a 90-bin grid, middle third empty
  const int n = 90;
  Kernel k = line_kernel(n, 7.0);
  Vec left(static_cast<std::size_t>(n), 0.0), right(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < 30; ++i)
    left[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - 15.0) * (i - 15.0) / 4.0);
  for (int i = 60; i < n; ++i)
    right[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - 75.0) * (i - 75.0) / 4.0);
  double sl = vec_sum(left), sr = vec_sum(right);
  for (double& x : left) x /= sl;
  for (double& x : right) x /= sr;

  auto middle_share = [&](const Vec& p) {
    double mid = 0.0, tot = vec_sum(p);
    for (int i = 30; i < 60; ++i) mid += p[static_cast<std::size_t>(i)];
    return mid / tot;
  };

  auto prob = make_problem({left, right}, {0.5, 0.5}, k, 100);
  BarycenterTrace bal = barycenter_forward(prob);
  CHECK(middle_share(bal.P) >= 0.01);

  prob.rho = 20.0;
  BarycenterTrace unb = barycenter_unbalanced(prob);
  CHECK(middle_share(unb.P) < 0.01);
}

TEST_CASE("log-domain run matches the plain run where both are finite") {
  std::mt19937_64 rng(131);
  Kernel k = build_kernel(CostSpec::squared_euclidean(Grid({8, 8})), 2.0);
  std::vector<Vec> atoms = {testutil::random_simplex(rng, 64),
                            testutil::random_simplex(rng, 64)};
  auto prob = make_problem(atoms, {0.4, 0.6}, k, 30);
  BarycenterTrace plain = barycenter_forward(prob);
  prob.log_domain = true;
  BarycenterTrace logd = barycenter_log_domain(prob);
  CHECK(linf_diff(plain.P, logd.P) <= 1e-8);
  CHECK(all_finite(logd.logP));
}

TEST_CASE("log-domain run survives gamma = 0.05 where the plain run cannot") {
  Kernel k = build_kernel(CostSpec::squared_euclidean(Grid({8, 8})), 0.05);
  // point masses in opposite corners: far kernel columns underflow to zero
  Vec d1(64, 0.0), d2(64, 0.0);
  d1[0] = 1.0;
  d2[63] = 1.0;
  auto prob = make_problem({d1, d2}, {0.5, 0.5}, k, 30);
  CHECK_THROWS_AS(barycenter_forward(prob), instability_error);
  prob.log_domain = true;
  BarycenterTrace logd = barycenter_log_domain(prob);
  CHECK(all_finite(logd.logP));
}

TEST_CASE("log-domain one-hot identity") {
  std::mt19937_64 rng(137);
  Kernel k = line_kernel(9, 1.2);
  std::vector<Vec> atoms = {testutil::random_simplex(rng, 9),
                            testutil::random_simplex(rng, 9)};
  auto prob = make_problem(atoms, {0.0, 1.0}, k, 4);
  prob.log_domain = true;
  BarycenterTrace tr = barycenter_log_domain(prob);

  // log P^(l) = K_LS(log d_1 - K_LS(0)) for every l
  Vec zeros(9, 0.0);
  Vec lkb = k.log_apply(zeros, false);
  Vec la(9);
  for (int i = 0; i < 9; ++i)
    la[static_cast<std::size_t>(i)] = std::log(atoms[1][static_cast<std::size_t>(i)]) - lkb[static_cast<std::size_t>(i)];
  Vec want = k.log_apply(la, true);
  for (int i = 0; i < 9; ++i)
    CHECK(tr.logP[static_cast<std::size_t>(i)] == Catch::Approx(want[static_cast<std::size_t>(i)]).margin(1e-12));
  for (int l = 1; l <= 4; ++l)
    for (int i = 0; i < 9; ++i)
      CHECK(std::abs(tr.phi(l - 1, 1)[i] - want[static_cast<std::size_t>(i)]) <= 1e-12);
}

TEST_CASE("warm start seeds the first scaling") {
  std::mt19937_64 rng(139);
  Kernel k = line_kernel(8, 1.0);
  std::vector<Vec> atoms = {testutil::random_simplex(rng, 8),
                            testutil::random_simplex(rng, 8)};
  std::vector<Vec> warm = {testutil::random_positive(rng, 8, 0.5, 2.0),
                           testutil::random_positive(rng, 8, 0.5, 2.0)};
  auto prob = make_problem(atoms, {0.5, 0.5}, k, 3);
  prob.warm_start = &warm;
  BarycenterTrace tr = barycenter_forward(prob);
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < 8; ++i)
      CHECK(tr.b(0, s)[i] == warm[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)]);
}

TEST_CASE("solver dispatch honors the variant flags") {
  std::mt19937_64 rng(149);
  Kernel k = line_kernel(8, 1.0);
  std::vector<Vec> atoms = {testutil::random_simplex(rng, 8),
                            testutil::random_simplex(rng, 8)};
  auto prob = make_problem(atoms, {0.5, 0.5}, k, 10);
  prob.log_domain = true;
  CHECK(barycenter_solve(prob).log_domain);
  prob.log_domain = false;
  prob.rho = 5.0;
  CHECK(vec_sum(barycenter_solve(prob).P) != Catch::Approx(1.0).margin(1e-6));
  // unsupported combinations are rejected rather than silently changed
  prob.log_domain = true;
  CHECK_THROWS_AS(barycenter_log_domain(prob), parameter_error);
}
