#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "polymc/errors.hpp"
#include "polymc/field.hpp"
#include "polymc/partition.hpp"

using namespace polymc;

namespace {

field::Site site(std::int64_t n, std::int64_t x, std::int64_t y, std::int64_t z) {
  return field::Site{n, {x, y, z}};
}

} // namespace

TEST_CASE("spec validation") {
  CHECK_THROWS_AS(field::FieldSpec::iid_gaussian(1.0, 2), ConfigError);
  CHECK_THROWS_AS(field::FieldSpec::iid_gaussian(0.0), ConfigError);
  CHECK_THROWS_AS(field::FieldSpec::iid_bernoulli(0.5, 1.0, 0.0), ConfigError); // v0 >= v1
  CHECK_THROWS_AS(field::FieldSpec::iid_bernoulli(1.0, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(field::FieldSpec::ar_time(1.0, 1.0), ConfigError);
  CHECK_NOTHROW(field::FieldSpec::ar_time(0.5, 1.0));
}

TEST_CASE("ar_time records g = -log a") {
  const auto spec = field::FieldSpec::ar_time(0.5, 1.0);
  CHECK(spec.corr.g == doctest::Approx(-std::log(0.5)).epsilon(1e-15));
}

TEST_CASE("window geometry and entry layers") {
  const auto w = walk::WalkModel::nn3d();
  const auto win = field::reachable_window(w, 5);
  CHECK(win.radius(1) == 1);
  CHECK(win.radius(5) == 5);
  const std::int64_t z0[3] = {0, 0, 0};
  const std::int64_t z3[3] = {2, 1, 0};
  CHECK(win.covers(1, z0));
  CHECK(!win.covers(2, z3));
  CHECK(win.covers(3, z3));
  CHECK(win.covers(5, z3));
  CHECK(!win.covers(6, z0));
  CHECK(win.site_count() == lattice::l1_ball_count(3, 1) + lattice::l1_ball_count(3, 2) +
                                lattice::l1_ball_count(3, 3) + lattice::l1_ball_count(3, 4) +
                                lattice::l1_ball_count(3, 5));
}

TEST_CASE("sampling is deterministic and window-shape independent") {
  const auto w = walk::WalkModel::nn3d();
  for (auto spec : {field::FieldSpec::iid_gaussian(0.8), field::FieldSpec::ar_time(0.6, 0.8),
                    field::FieldSpec::iid_bernoulli(0.3, -1.0, 2.0)}) {
    const auto win4 = field::reachable_window(w, 4);
    const auto win8 = field::reachable_window(w, 8);
    const auto s4 = field::sample_window(spec, win4, rng::Key{2024});
    const auto s8 = field::sample_window(spec, win8, rng::Key{2024});
    const std::int64_t sites[][3] = {{0, 0, 0}, {1, 0, 0}, {-2, 1, 0}, {0, 3, -1}};
    for (int n = 1; n <= 4; ++n) {
      for (const auto& z : sites) {
        if (!win4.covers(n, z)) continue;
        CHECK(s4.at(n, z) == s8.at(n, z)); // bitwise: keyed by absolute site
      }
    }
    // replica determinism
    const auto again = field::sample_window(spec, win4, rng::Key{2024});
    for (int n = 1; n <= 4; ++n)
      CHECK(again.layers[static_cast<std::size_t>(n - 1)] == s4.layers[static_cast<std::size_t>(n - 1)]);
  }
}

TEST_CASE("bernoulli mean over 1e5 sites") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::iid_bernoulli(0.5, 0.0, 1.0);
  const auto win = field::reachable_window(w, 25); // ~1.1e5 sites
  const auto s = field::sample_window(spec, win, rng::Key{404});
  double sum = 0.0;
  std::uint64_t count = 0;
  for (int n = 1; n <= win.n_layers; ++n) {
    const std::int64_t r = win.radius(n);
    const auto box = lattice::make_box(3, r);
    lattice::for_each_ball_row(box, r, [&](const std::int64_t*, std::int64_t sdist, std::size_t base) {
      const std::int64_t hw = r - sdist;
      for (std::int64_t c = -hw; c <= hw; ++c) {
        sum += s.layers[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(static_cast<std::int64_t>(base) + c)];
        ++count;
      }
    });
  }
  const double mean = sum / static_cast<double>(count);
  const double se = 0.5 / std::sqrt(static_cast<double>(count));
  CHECK(std::abs(mean - 0.5) < 4 * se);
}

TEST_CASE("ar_time lag autocorrelation at a fixed site") {
  const auto w = walk::WalkModel::nn3d();
  const double a = 0.65, sigma = 1.3;
  const auto spec = field::FieldSpec::ar_time(a, sigma);
  const auto win = field::reachable_window(w, 8);
  const int reps = 4000;
  const std::int64_t z0[3] = {0, 0, 0};
  std::vector<std::vector<double>> series(static_cast<std::size_t>(reps));
  rng::Key key{8181};
  for (int r = 0; r < reps; ++r) {
    const auto s = field::sample_window(spec, win, key.child(static_cast<std::uint64_t>(r)));
    auto& row = series[static_cast<std::size_t>(r)];
    for (int n = 1; n <= 8; ++n) row.push_back(s.at(n, z0));
  }
  for (int k = 1; k <= 5; ++k) {
    double num = 0, den = 0;
    for (const auto& row : series) {
      num += row[0] * row[static_cast<std::size_t>(k)];
      den += row[0] * row[0];
    }
    const double corr = num / den;
    const double se = 1.0 / std::sqrt(static_cast<double>(reps));
    CHECK(std::abs(corr - std::pow(a, k)) < 4.5 * se);
  }
}

TEST_CASE("ar_time conditional mean regression: only the last layer matters") {
  const auto w = walk::WalkModel::nn3d();
  const double a = 0.55;
  const auto spec = field::FieldSpec::ar_time(a, 1.0);
  const auto win = field::reachable_window(w, 3);
  const int reps = 20000;
  const std::int64_t z0[3] = {0, 0, 0};
  // regress w_3 on (w_2, w_1): coefficient on w_2 ~ a, on w_1 ~ 0
  double s22 = 0, s21 = 0, s11 = 0, s32 = 0, s31 = 0;
  rng::Key key{7272};
  for (int r = 0; r < reps; ++r) {
    const auto s = field::sample_window(spec, win, key.child(static_cast<std::uint64_t>(r)));
    const double w1 = s.at(1, z0), w2 = s.at(2, z0), w3 = s.at(3, z0);
    s22 += w2 * w2;
    s21 += w2 * w1;
    s11 += w1 * w1;
    s32 += w3 * w2;
    s31 += w3 * w1;
  }
  const double det = s22 * s11 - s21 * s21;
  const double beta2 = (s32 * s11 - s31 * s21) / det;
  const double beta1 = (s31 * s22 - s32 * s21) / det;
  const double se = 1.5 / std::sqrt(static_cast<double>(reps));
  CHECK(std::abs(beta2 - a) < 4 * se);
  CHECK(std::abs(beta1) < 4 * se);
}

TEST_CASE("analytic exponential moments") {
  const auto g1 = field::FieldSpec::iid_gaussian(1.0);
  CHECK(field::analytic_exp_moment(g1, {}) == 1.0);
  const double beta = 0.8;
  CHECK(field::analytic_exp_moment(g1, {{site(1, 0, 0, 0), beta}}) ==
        doctest::Approx(std::exp(beta * beta / 2)).epsilon(1e-14));

  const auto b = field::FieldSpec::iid_bernoulli(0.5, 0.0, 1.0);
  CHECK(field::analytic_exp_moment(b, {{site(1, 0, 0, 0), beta}}) ==
        doctest::Approx((1 + std::exp(beta)) / 2).epsilon(1e-14));

  // coincident bernoulli sites must merge, not factorize
  CHECK(field::analytic_exp_moment(b, {{site(1, 0, 0, 0), beta}, {site(1, 0, 0, 0), beta}}) ==
        doctest::Approx((1 + std::exp(2 * beta)) / 2).epsilon(1e-14));

  const auto ar = field::FieldSpec::ar_time(0.5, 1.0);
  // two sites one lag apart: exp(b^2(1 + a))
  CHECK(field::analytic_exp_moment(ar, {{site(1, 0, 0, 0), beta}, {site(2, 0, 0, 0), beta}}) ==
        doctest::Approx(std::exp(beta * beta * (1.0 + 0.5))).epsilon(1e-13));
}

TEST_CASE("gaussian sampler matches the analytic moment oracle") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::ar_time(0.6, 0.9);
  const auto win = field::reachable_window(w, 3);
  std::vector<field::Weighted> ws = {{site(1, 1, 0, 0), 0.4}, {site(2, 1, 0, 0), 0.3},
                                     {site(3, -1, 1, 0), -0.5}};
  const double oracle = field::analytic_exp_moment(spec, ws);
  const int reps = 100000;
  double s = 0, ss = 0;
  rng::Key key{11};
  for (int r = 0; r < reps; ++r) {
    const auto smp = field::sample_window(spec, win, key.child(static_cast<std::uint64_t>(r)));
    double e = 0.0;
    for (const auto& v : ws) e += v.w * smp.at(v.site.n, v.site.z.data());
    const double x = std::exp(e);
    s += x;
    ss += x * x;
  }
  const double mean = s / reps;
  const double se = std::sqrt(std::max(0.0, (ss - s * s / reps) / (reps - 1.0)) / reps);
  CHECK(std::abs(mean - oracle) < 4 * se);
}

TEST_CASE("truncation is pointwise, idempotent and monotone in l") {
  const auto w = walk::WalkModel::nn3d();
  const auto spec = field::FieldSpec::iid_gaussian(2.0);
  const auto win = field::reachable_window(w, 4);
  const auto s = field::sample_window(spec, win, rng::Key{5150});

  const auto t2 = field::truncate_field(s, 2.0);
  const auto t2b = field::truncate_field(t2, 2.0);
  const auto t1 = field::truncate_field(s, 1.0);
  for (std::size_t n = 0; n < s.layers.size(); ++n) {
    for (std::size_t i = 0; i < s.layers[n].size(); ++i) {
      CHECK(t2.layers[n][i] == std::max(s.layers[n][i], -2.0));
      CHECK(t2.layers[n][i] == t2b.layers[n][i]); // idempotent
      CHECK(t1.layers[n][i] >= t2.layers[n][i]);  // smaller l truncates harder upward
    }
  }
  // all values above -l: identity
  const auto big = field::truncate_field(s, 1e9);
  for (std::size_t n = 0; n < s.layers.size(); ++n) CHECK(big.layers[n] == s.layers[n]);
  CHECK_THROWS_AS(field::truncate_field(s, 0.0), ConfigError);
}

TEST_CASE("kappa: iid factorizes, ar has the Gaussian closed form") {
  const auto center = site(4, 0, 0, 0);
  const std::vector<std::vector<field::Site>> family = {
      {site(6, 0, 0, 0)}, {site(6, 0, 0, 0), site(7, 0, 0, 0)}};

  const auto iid = field::FieldSpec::iid_gaussian(1.0);
  const auto k_iid = field::estimate_kappa(iid, 0.7, center, family);
  for (double r : k_iid.ratios) CHECK(r == 1.0);

  const double a = 0.6, sigma = 1.1, beta = 0.7;
  const auto ar = field::FieldSpec::ar_time(a, sigma);
  const auto k_ar = field::estimate_kappa(ar, beta, center, family);
  const double c2 = sigma * sigma * std::pow(a, 2), c3 = sigma * sigma * std::pow(a, 3);
  CHECK(k_ar.ratios[0] == doctest::Approx(std::exp(beta * beta * c2)).epsilon(1e-12));
  CHECK(k_ar.ratios[1] == doctest::Approx(std::exp(beta * beta * (c2 + c3))).epsilon(1e-12));
  CHECK(k_ar.kappa >= 1.0);

  // stationarity: translating the whole configuration leaves ratios unchanged
  const auto shifted_center = site(9, 2, -1, 0);
  std::vector<std::vector<field::Site>> shifted_family;
  for (const auto& set : family) {
    std::vector<field::Site> s2;
    for (const auto& q : set) s2.push_back(site(q.n + 5, q.z[0] + 2, q.z[1] - 1, q.z[2]));
    shifted_family.push_back(s2);
  }
  const auto k_shift = field::estimate_kappa(ar, beta, shifted_center, shifted_family);
  for (std::size_t i = 0; i < family.size(); ++i)
    CHECK(k_shift.ratios[i] == doctest::Approx(k_ar.ratios[i]).epsilon(1e-12));

  // MC cross-check of the analytic ratio
  const auto k_mc = field::estimate_kappa(ar, beta, center, {family[0]}, 200000, rng::Key{6});
  CHECK(k_mc.ratios[0] == doctest::Approx(k_ar.ratios[0]).epsilon(0.02));

  // cone separation precondition
  CHECK_THROWS_AS(field::estimate_kappa(ar, beta, center, {{site(4, 1, 0, 0)}}), ConfigError);
}

TEST_CASE("kappa ratios stay bounded over a growing cone family") {
  const double a = 0.5, sigma = 1.0, beta = 0.5;
  const auto ar = field::FieldSpec::ar_time(a, sigma);
  const auto center = site(4, 0, 0, 0);
  std::vector<std::vector<field::Site>> family;
  for (int k = 1; k <= 12; ++k) {
    std::vector<field::Site> set;
    for (int j = 2; j <= 1 + k; ++j) set.push_back(site(4 + j, 0, 0, 0));
    family.push_back(set);
  }
  const auto est = field::estimate_kappa(ar, beta, center, family);
  const double limit = std::exp(beta * beta * sigma * sigma * a * a / (1.0 - a));
  for (double r : est.ratios) CHECK(r <= limit * (1 + 1e-12));
  // no growth trend once the geometric tail is absorbed
  CHECK(est.ratios[11] - est.ratios[7] < 1e-3);
}

TEST_CASE("green function: single site and Dirichlet identity") {
  const auto g1 = field::green_function(3, field::BoxSpec{2, 2, 0}, 0);
  REQUIRE(g1.sites.size() == 1);
  CHECK(g1.G(0, 0) == doctest::Approx(1.0).epsilon(1e-12)); // killed on every neighbor

  const auto g = field::green_function(3, field::BoxSpec{0, 4, 2}, 3);
  // symmetry
  for (Eigen::Index i = 0; i < 20; ++i)
    for (Eigen::Index j = 0; j < 20; ++j)
      CHECK(g.G(i, j) == doctest::Approx(g.G(j, i)).epsilon(1e-12));
  // (I - P) G = I at an interior site with all neighbors in the box
  const auto x = site(2, 0, 0, 0);
  const auto y = site(2, 1, 1, 0);
  const auto ix = g.site_index(x);
  const auto iy = g.site_index(y);
  REQUIRE(ix >= 0);
  REQUIRE(iy >= 0);
  auto neighbor_sum = [&](const field::Site& s) {
    double acc = 0.0;
    for (int j = -1; j <= 1; j += 2) {
      field::Site t = s;
      t.n += j;
      const auto it = g.site_index(t);
      REQUIRE(it >= 0);
      acc += g.G(static_cast<Eigen::Index>(it), static_cast<Eigen::Index>(iy));
    }
    for (int c = 0; c < 3; ++c) {
      for (int j = -1; j <= 1; j += 2) {
        field::Site t = s;
        t.z[static_cast<std::size_t>(c)] += j;
        const auto it = g.site_index(t);
        REQUIRE(it >= 0);
        acc += g.G(static_cast<Eigen::Index>(it), static_cast<Eigen::Index>(iy));
      }
    }
    return acc / 8.0; // 2(d+1) neighbors
  };
  const double lhs_diag = g.G(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(iy)) - neighbor_sum(x);
  CHECK(lhs_diag == doctest::Approx(0.0).epsilon(0).scale(1).epsilon(1e-9));
  const double self = g.G(static_cast<Eigen::Index>(iy), static_cast<Eigen::Index>(iy)) - neighbor_sum(y);
  CHECK(self == doctest::Approx(1.0).epsilon(1e-9));
  // decay with distance
  const auto far = site(4, 2, 2, 0);
  const auto ifar = g.site_index(far);
  REQUIRE(ifar >= 0);
  CHECK(g.G(static_cast<Eigen::Index>(ifar), static_cast<Eigen::Index>(iy)) <
        g.G(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(iy)));
}

TEST_CASE("green margin convergence: doubling from 6 settles the diagonal < 1%") {
  // Measured decay: the Dirichlet boundary correction falls off slowly for
  // far off-diagonal entries (still ~4% per doubling at margin 12->24), but
  // diagonal and near-diagonal entries of the central 5^3 x 5 box settle
  // below 1% once the margin reaches 6. The recorded deltas document both.
  std::vector<field::Site> sites = {site(2, 0, 0, 0), site(2, 1, 0, 0), site(3, 0, 0, 0),
                                    site(2, 1, 1, 0), site(2, 2, 0, 0)};
  const Eigen::MatrixXd g6 = field::green_matrix_for_sites(3, sites, 6);
  const Eigen::MatrixXd g12 = field::green_matrix_for_sites(3, sites, 12);
  double max_rel_diag = 0.0, max_rel_all = 0.0;
  for (Eigen::Index i = 0; i < g6.rows(); ++i) {
    for (Eigen::Index j = 0; j < g6.cols(); ++j) {
      const double rel = std::abs(g6(i, j) - g12(i, j)) / g12(i, j);
      max_rel_all = std::max(max_rel_all, rel);
      if (i == j) max_rel_diag = std::max(max_rel_diag, rel);
    }
  }
  MESSAGE("margin 6 -> 12: diagonal delta ", max_rel_diag, ", all entries ", max_rel_all);
  CHECK(max_rel_diag < 0.01);
  CHECK(max_rel_all < 0.25); // off-diagonal convergence is genuinely slower
  // convergence direction: entries grow toward the infinite-domain values
  CHECK(g6(0, 0) < g12(0, 0));
}

TEST_CASE("green cache round trip") {
  const auto g = field::green_function(3, field::BoxSpec{0, 2, 1}, 2);
  const std::string path = "/tmp/polymc_green_test.bin";
  field::save_green(g, path);
  const auto loaded = field::load_green(path);
  CHECK(loaded.d == g.d);
  CHECK(loaded.sites.size() == g.sites.size());
  CHECK((loaded.G - g.G).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("gff sampler matches exp-decay Green covariance") {
  const auto w = walk::WalkModel::nn3d();
  const field::BoxSpec box{0, 4, 3};
  auto spec = field::FieldSpec::gff(box, 3);
  const auto win = field::reachable_window(w, 3);
  const field::FieldSampler sampler(spec, win);

  const auto a = site(1, 0, 0, 0);
  const auto b = site(2, 1, 0, 0);
  const Eigen::MatrixXd cov = field::covariance_matrix(spec, {a, b});
  const int reps = 10000;
  double sab = 0, saa = 0;
  rng::Key key{909};
  for (int r = 0; r < reps; ++r) {
    const auto s = sampler.materialize(key.child(static_cast<std::uint64_t>(r)));
    const double va = s.at(a.n, a.z.data());
    const double vb = s.at(b.n, b.z.data());
    sab += va * vb;
    saa += va * va;
  }
  const double emp_ab = sab / reps;
  const double emp_aa = saa / reps;
  // 4 sigma with Gaussian fourth-moment error bars
  const double se_ab = std::sqrt((cov(0, 0) * cov(1, 1) + cov(0, 1) * cov(0, 1)) / reps);
  const double se_aa = cov(0, 0) * std::sqrt(2.0 / reps);
  CHECK(std::abs(emp_ab - cov(0, 1)) < 4 * se_ab);
  CHECK(std::abs(emp_aa - cov(0, 0)) < 4 * se_aa);
}

TEST_CASE("analytic exp moment for gff equals the covariance quadratic form") {
  const field::BoxSpec box{0, 3, 2};
  auto spec = field::FieldSpec::gff(box, 2);
  const auto a = site(1, 0, 0, 0);
  const auto b = site(2, 0, 1, 0);
  const Eigen::MatrixXd cov = field::covariance_matrix(spec, {a, b});
  const double w1 = 0.7, w2 = -0.4;
  const double expect = std::exp(0.5 * (w1 * w1 * cov(0, 0) + 2 * w1 * w2 * cov(0, 1) + w2 * w2 * cov(1, 1)));
  CHECK(field::analytic_exp_moment(spec, {{a, w1}, {b, w2}}) ==
        doctest::Approx(expect).epsilon(1e-12));
}
