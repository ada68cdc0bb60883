#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "polymc/errors.hpp"
#include "polymc/regeneration.hpp"

using namespace polymc;

namespace {

// Independent oracle for E[tau_1]: first-passage time of the run-length
// chain U_n on {0..L} that absorbs when a length-L run of +1 is followed by
// a non-+1. From state u the next symbol is +1 with probability 1/4
// (u -> min(u+1, L)), otherwise u -> 0, absorbing if u == L.
double exact_mean_tau(int L) {
  const int n = L + 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Ones(n);
  // E_u = 1 + 1/4 E_{min(u+1,L)} + 3/4 * (u == L ? 0 : E_0)
  for (int u = 0; u <= L; ++u) {
    A(u, u) += 1.0;
    const int up = std::min(u + 1, L);
    A(u, up) -= 0.25;
    if (u < L) A(u, 0) -= 0.75;
  }
  const Eigen::VectorXd e = A.fullPivLu().solve(b);
  return e[0];
}

} // namespace

TEST_CASE("epsilon law: frequencies, codomain, determinism") {
  const auto eps = regeneration::sample_epsilon(1000000, rng::Key{42});
  std::int64_t plus = 0, minus = 0, zero = 0;
  for (std::int64_t i = 1; i <= eps.size(); ++i) {
    const auto v = eps.at(i);
    REQUIRE((v == 1 || v == -1 || v == 0));
    if (v == 1) ++plus;
    else if (v == -1) ++minus;
    else ++zero;
  }
  const double n = 1e6;
  CHECK(std::abs(plus / n - 0.25) < 4 * std::sqrt(0.25 * 0.75 / n));
  CHECK(std::abs(minus / n - 0.25) < 4 * std::sqrt(0.25 * 0.75 / n));
  CHECK(std::abs(zero / n - 0.5) < 4 * std::sqrt(0.25 / n));

  const auto again = regeneration::sample_epsilon(1000, rng::Key{42});
  for (std::int64_t i = 1; i <= 1000; ++i) CHECK(again.at(i) == eps.at(i));
}

TEST_CASE("eta field definition and epsilon-average identity") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::iid_gaussian(1.0);
  const auto win = field::reachable_window(w, 4);
  const auto omega = field::sample_window(spec, win, rng::Key{5});

  regeneration::EpsilonSeq eps;
  eps.values = {0, 1, -1, 0};
  const auto eta = regeneration::eta_field(omega, eps);
  const std::int64_t z[3] = {1, 0, 0};
  CHECK(eta.at(1, z) == 2.0 * omega.at(1, z)); // eps = 0 doubles
  const std::int64_t z2[3] = {0, 1, 0};
  CHECK(eta.at(2, z2) == 0.0); // eps = +1 zeroes
  CHECK(eta.at(3, z2) == 0.0); // eps = -1 zeroes

  // E_Q[eta] = (1/2) * 0 + (1/2) * 2 omega = omega, exactly
  for (int n = 1; n <= 4; ++n) {
    regeneration::EpsilonSeq e1, e0;
    e1.values.assign(4, 1);
    e0.values.assign(4, 0);
    const auto a = regeneration::eta_field(omega, e1);
    const auto b = regeneration::eta_field(omega, e0);
    const std::int64_t site[3] = {0, 0, 0};
    CHECK(0.5 * a.at(n, site) + 0.5 * b.at(n, site) == omega.at(n, site));
  }
}

TEST_CASE("xi field definition, beta zero, and the per-site identity") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::iid_gaussian(2.0); // wide: exercises truncation
  const auto win = field::reachable_window(w, 4);
  const auto omega = field::sample_window(spec, win, rng::Key{88});
  const double beta = 0.9, l = 1.5;

  regeneration::EpsilonSeq eps;
  eps.values = {1, 0, -1, 0};
  const auto xi = regeneration::xi_field(omega, eps, beta, l);
  const std::int64_t z[3] = {1, 0, 0};
  CHECK(xi.at(1, z) == -beta * l); // eps = +-1 branch ignores omega
  CHECK(xi.at(3, z) == -beta * l);

  // beta = 0: xi vanishes identically
  const auto xi0 = regeneration::xi_field(omega, eps, 0.0, l);
  for (const auto& layer : xi0.layers)
    for (double v : layer) CHECK(v == 0.0);

  // per-site identity E_Q[e^xi] = e^{beta omega(l)} to 1e-14, all sites
  regeneration::EpsilonSeq plus, zero;
  plus.values.assign(4, 1);
  zero.values.assign(4, 0);
  const auto xp = regeneration::xi_field(omega, plus, beta, l);
  const auto xz = regeneration::xi_field(omega, zero, beta, l);
  const auto trunc = field::truncate_field(omega, l);
  for (int n = 1; n <= 4; ++n) {
    const std::int64_t r = win.radius(n);
    const auto box = lattice::make_box(3, r);
    lattice::for_each_ball_row(box, r, [&](const std::int64_t*, std::int64_t s, std::size_t base) {
      const std::int64_t hw = r - s;
      for (std::int64_t c = -hw; c <= hw; ++c) {
        const auto i = static_cast<std::size_t>(static_cast<std::int64_t>(base) + c);
        const double lhs = 0.5 * std::exp(xp.layers[static_cast<std::size_t>(n - 1)][i]) +
                           0.5 * std::exp(xz.layers[static_cast<std::size_t>(n - 1)][i]);
        const double rhs = std::exp(beta * trunc.layers[static_cast<std::size_t>(n - 1)][i]);
        REQUIRE(std::abs(lhs / rhs - 1.0) < 1e-14);
      }
    });
  }
}

TEST_CASE("regeneration times: spec hand-scan example and edge cases") {
  regeneration::EpsilonSeq eps;
  eps.values = {1, 0, 1, 1, -1, 0, 0, 1, 1};
  const auto taus = regeneration::regeneration_times(eps, 1, 9);
  REQUIRE(taus.size() >= 2);
  CHECK(taus[0] == 2);
  CHECK(taus[1] == 5);

  regeneration::EpsilonSeq no_runs;
  no_runs.values = {0, -1, 0, 0, -1, 0};
  CHECK(regeneration::regeneration_times(no_runs, 1, 6).empty());

  // L = 2 on the same example: (eps_3, eps_4) = (1,1), eps_5 = -1 -> tau = 5
  const auto taus2 = regeneration::regeneration_times(eps, 2, 9);
  REQUIRE(taus2.size() == 1);
  CHECK(taus2[0] == 5);
}

TEST_CASE("every reported tau satisfies the pattern predicate (property)") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto eps = regeneration::sample_epsilon(2000, rng::Key{seed});
    for (int L : {1, 2, 3}) {
      const auto taus = regeneration::regeneration_times(eps, L, 2000);
      std::int64_t prev = 0;
      for (const auto t : taus) {
        CHECK(regeneration::is_regeneration(eps, L, t));
        CHECK(t >= prev + L);
        prev = t;
      }
    }
  }
}

TEST_CASE("streaming and materialized regeneration scans agree") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const rng::Key key{seed};
    const auto eps = regeneration::sample_epsilon(3000, key);
    const auto a = regeneration::regeneration_times(eps, 2, 3000);
    const auto b = regeneration::find_regenerations(key, 2, 3000, 1000000);
    CHECK(a == b);
  }
}

TEST_CASE("tau moments: L=1 matches the absorbing-chain oracle within 4 sigma") {
  CHECK(exact_mean_tau(1) == doctest::Approx(16.0 / 3.0).epsilon(1e-12)); // hand value
  const auto est = regeneration::tau_moments(1, 1.0, 10000, rng::Key{2025});
  const double exact = 0.25 * exact_mean_tau(1); // 4^{-L} scaling
  CHECK(std::abs(est.moment - exact) < 4.0 * est.se);
  CHECK(est.censored_frac == 0.0);
}

TEST_CASE("tau moments: scaled means stay in a common interval over L") {
  double lo = 1e9, hi = 0.0;
  for (int L = 1; L <= 4; ++L) {
    const auto est = regeneration::tau_moments(L, 1.0, 4000, rng::Key{99 + static_cast<std::uint64_t>(L)});
    const double exact = std::pow(4.0, -L) * exact_mean_tau(L);
    CHECK(std::abs(est.moment - exact) < 4.0 * est.se); // oracle at every L
    CHECK(est.censored_frac < 0.01);
    lo = std::min(lo, est.moment);
    hi = std::max(hi, est.moment);
  }
  CHECK(lo > 1.0);  // bounded away from zero
  CHECK(hi < 2.0);  // and from infinity (c, c' of the moment bound)
}

TEST_CASE("tau moments: p=1 root is at most the p=2 root (power mean)") {
  const auto p1 = regeneration::tau_moments(2, 1.0, 5000, rng::Key{7});
  const auto p2 = regeneration::tau_moments(2, 2.0, 5000, rng::Key{7});
  CHECK(p1.moment <= p2.moment + 1e-12);
}

TEST_CASE("trace assembles consistent eps/tau/eta/xi") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::ar_time(0.5, 1.0);
  const auto trace = regeneration::sample_trace(w, spec, 0.7, 2, 2.0, 30, rng::Key{11});
  CHECK(trace.eps.size() == 30);
  double prev = 0;
  for (std::size_t i = 0; i < trace.taus.size(); ++i) {
    CHECK(regeneration::is_regeneration(trace.eps, 2, trace.taus[i]));
    CHECK(trace.taus_scaled[i] == doctest::Approx((trace.taus[i] - prev) / 16.0));
    prev = static_cast<double>(trace.taus[i]);
  }
  CHECK(trace.omega.window.n_layers == 30);
}

TEST_CASE("E_Q[Z^(1,xi)] equals the truncated-field partition function (4 sigma)") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::iid_gaussian(1.0);
  const int N = 6;
  const auto win = field::reachable_window(w, N);
  const auto omega = field::sample_window(spec, win, rng::Key{404});
  const double beta = 0.8, l = 2.0;

  const auto trunc = field::truncate_field(omega, l);
  partition::PolymerConfig cfg_omega{w, beta, N, 1};
  const double target = partition::quenched_partition_dp(cfg_omega, trunc).log_z;

  const std::int64_t reps = 4000;
  double s = 0, ss = 0;
  partition::PolymerConfig cfg_xi{w, 1.0, N, 1};
  for (std::int64_t r = 0; r < reps; ++r) {
    const auto eps = regeneration::sample_epsilon(N, rng::Key{777}.child(static_cast<std::uint64_t>(r)));
    const auto xi = regeneration::xi_field(omega, eps, beta, l);
    const double z = std::exp(partition::quenched_partition_dp(cfg_xi, xi).log_z);
    s += z;
    ss += z * z;
  }
  const double mean = s / reps;
  const double se = std::sqrt(std::max(0.0, (ss - s * s / reps) / (reps - 1.0)) / reps);
  CHECK(std::abs(mean - std::exp(target)) < 4 * se);
}

TEST_CASE("H process: beta zero gives H identically one") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::ar_time(0.5, 0.5);
  regeneration::HProcessParams params;
  params.L = 1;
  params.n_blocks = 4;
  params.n_inner = 16;
  params.n_psi = 1000;
  const auto stats = regeneration::h_process(w, spec, 0.0, params, 20, rng::Key{1});
  CHECK(stats.psi_log == 0.0);
  for (int n = 0; n < 4; ++n) {
    CHECK(stats.h_mean[static_cast<std::size_t>(n)] == 1.0);
    CHECK(stats.h_se[static_cast<std::size_t>(n)] == 0.0);
    CHECK(stats.l_mean[static_cast<std::size_t>(n)] == 1.0);
  }
}

TEST_CASE("H process: iid kinds have Delta identically zero and H = L") {
  const auto w = walk::WalkModel::nn3d();
  regeneration::HProcessParams params;
  params.L = 1;
  params.n_blocks = 3;
  params.n_inner = 32;
  params.n_psi = 20000;
  for (const auto& spec :
       {field::FieldSpec::iid_gaussian(0.7), field::FieldSpec::iid_bernoulli(0.5, 0.0, 1.0)}) {
    const auto stats = regeneration::h_process(w, spec, 0.4, params, 25, rng::Key{33});
    for (const auto& deltas : stats.delta_samples)
      for (double d : deltas) CHECK(d == 0.0);
    for (std::int64_t r = 0; r < stats.n_replicas; ++r)
      CHECK(stats.h_samples[static_cast<std::size_t>(r)] == stats.l_samples[static_cast<std::size_t>(r)]);
  }
}

TEST_CASE("H process: mean H stays near one for small beta on ar_time") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::ar_time(0.5, 0.5);
  regeneration::HProcessParams params;
  params.L = 1;
  params.l = 1.0; // beta*l small: the mean is actually measurable here
  params.n_blocks = 5;
  params.n_inner = 128;
  params.n_psi = 200000;
  const auto stats = regeneration::h_process(w, spec, 0.15, params, 400, rng::Key{314}, 1);
  REQUIRE(stats.n_replicas > 350);
  for (int n = 0; n < 5; ++n) {
    const double se = std::max(stats.h_se[static_cast<std::size_t>(n)], 1e-6);
    CHECK(std::abs(stats.h_mean[static_cast<std::size_t>(n)] - 1.0) < 4.5 * se);
  }
}

TEST_CASE("H process: horizon too short raises insufficient regenerations") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::ar_time(0.5, 0.5);
  regeneration::HProcessParams params;
  params.L = 3;
  params.n_blocks = 50;
  params.horizon = 60; // cannot fit 50 blocks of expected length ~85
  CHECK_THROWS_WITH_AS(regeneration::h_process(w, spec, 0.2, params, 3, rng::Key{2}),
                       doctest::Contains("insufficient regenerations"), NumericalError);
}

TEST_CASE("L vs H agreement tightens as L grows") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::ar_time(0.5, 0.6);
  regeneration::HProcessParams params;
  params.l = 1.0;
  params.n_blocks = 2;
  params.n_inner = 96;
  params.n_psi = 40000;
  std::vector<double> mean_delta;
  for (int L : {1, 2, 3}) {
    params.L = L;
    const auto stats = regeneration::h_process(w, spec, 0.3, params, 16, rng::Key{55}, 1);
    mean_delta.push_back(stats.mean_abs_delta[1]);
  }
  // |log L_n - log H_n| = |sum Delta| decays at least like a^{L/2} with slack
  const double a = 0.5;
  CHECK(mean_delta[1] <= 3.0 * mean_delta[0] * std::pow(a, 0.5));
  CHECK(mean_delta[2] <= 3.0 * mean_delta[0] * std::pow(a, 1.0));
}
