#include "polymc/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "polymc/errors.hpp"
#include "polymc/parallel.hpp"

namespace polymc::analysis {

AnnealedPolicy parse_annealed_policy(const std::string& name) {
  if (name == "auto") return AnnealedPolicy::kAuto;
  if (name == "analytic") return AnnealedPolicy::kAnalytic;
  if (name == "mc") return AnnealedPolicy::kMc;
  throw ConfigError("annealed mode: expected auto|analytic|mc, got '" + name + "'");
}

double log_site_mgf(const field::FieldSpec& spec, double beta) {
  switch (spec.kind) {
    case field::Kind::kIidGaussian:
    case field::Kind::kArTime:
      return 0.5 * beta * beta * spec.sigma * spec.sigma;
    case field::Kind::kIidBernoulli:
      return std::log((1.0 - spec.p) * std::exp(beta * spec.v0) + spec.p * std::exp(beta * spec.v1));
    case field::Kind::kGffGaussian:
      throw NumericalError("gff site MGF is site-dependent");
  }
  return 0.0;
}

double site_mgf_derivative_over_mgf(const field::FieldSpec& spec, double beta) {
  switch (spec.kind) {
    case field::Kind::kIidGaussian:
    case field::Kind::kArTime:
      return beta * spec.sigma * spec.sigma;
    case field::Kind::kIidBernoulli: {
      const double e0 = std::exp(beta * spec.v0), e1 = std::exp(beta * spec.v1);
      return ((1.0 - spec.p) * spec.v0 * e0 + spec.p * spec.v1 * e1) /
             ((1.0 - spec.p) * e0 + spec.p * e1);
    }
    case field::Kind::kGffGaussian:
      throw NumericalError("gff site MGF is site-dependent");
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Quenched log Z tensor: one DP pass per (replica, beta), snapshots at every
// N of the schedule. Field values are keyed by absolute site coordinates, so
// replicas pair across betas and N automatically.

namespace {

struct LogZTensor {
  std::vector<double> betas;
  std::vector<int> n_schedule;
  std::int64_t n_disorder = 0;
  // data[(b * |N| + n) * R + r]
  std::vector<double> data;

  double& at(std::size_t b, std::size_t n, std::size_t r) {
    return data[(b * n_schedule.size() + n) * static_cast<std::size_t>(n_disorder) + r];
  }
  double at(std::size_t b, std::size_t n, std::size_t r) const {
    return data[(b * n_schedule.size() + n) * static_cast<std::size_t>(n_disorder) + r];
  }
};

LogZTensor quenched_tensor(const walk::WalkModel& w, const field::FieldSpec& spec,
                           std::vector<double> betas, std::vector<int> n_schedule,
                           std::int64_t n_disorder, rng::Key key, int workers) {
  if (betas.empty() || n_schedule.empty()) throw ConfigError("empty beta grid or N schedule");
  if (!std::is_sorted(n_schedule.begin(), n_schedule.end()))
    throw ConfigError("N schedule must be ascending");
  if (n_disorder < 2) throw ConfigError("n_disorder must be >= 2");

  LogZTensor t;
  t.betas = std::move(betas);
  t.n_schedule = std::move(n_schedule);
  t.n_disorder = n_disorder;
  t.data.assign(t.betas.size() * t.n_schedule.size() * static_cast<std::size_t>(n_disorder), 0.0);

  const int n_max = t.n_schedule.back();
  const field::Window win = field::reachable_window(w, n_max);
  const field::FieldSampler sampler(spec, win);
  const rng::Key rep_base = key.child(rng::tag::kReplica);

  parallel_for(static_cast<std::size_t>(n_disorder), workers, [&](std::size_t r) {
    const field::FieldSample sample = sampler.materialize(rep_base.child(r));
    partition::SampleSource src(sample);
    for (std::size_t b = 0; b < t.betas.size(); ++b) {
      partition::PolymerConfig cfg{w, t.betas[b], n_max, 1};
      const auto logz = partition::quenched_logz_snapshots(cfg, win, src, t.n_schedule);
      for (std::size_t n = 0; n < t.n_schedule.size(); ++n) t.at(b, n, r) = logz[n];
    }
  });
  return t;
}

struct PairedStats {
  double rho = 0.0, rho_se = 0.0;
  double lambda = 0.0, lambda_se = 0.0;
  double gap = 0.0, gap_se = 0.0;
  double top1 = 0.0;
};

// rho = mean(x)/N, lambda = log-mean-exp(x)/N from the same samples; the gap
// standard error uses the paired delta method.
PairedStats paired_stats(const std::vector<double>& logs, int n_layers) {
  PairedStats s;
  const double R = static_cast<double>(logs.size());
  const double m = *std::max_element(logs.begin(), logs.end());
  double sx = 0, sxx = 0, sy = 0, syy = 0, sxy = 0;
  for (double x : logs) {
    const double y = std::exp(x - m);
    sx += x;
    sxx += x * x;
    sy += y;
    syy += y * y;
    sxy += x * y;
  }
  const double xbar = sx / R, ybar = sy / R;
  const double var_x = std::max(0.0, (sxx - sx * sx / R) / std::max(1.0, R - 1.0));
  const double var_y = std::max(0.0, (syy - sy * sy / R) / std::max(1.0, R - 1.0));
  const double cov_xy = (sxy - sx * sy / R) / std::max(1.0, R - 1.0);
  const double N = static_cast<double>(n_layers);
  s.rho = xbar / N;
  s.rho_se = std::sqrt(var_x / R) / N;
  s.lambda = (m + std::log(ybar)) / N;
  s.lambda_se = std::sqrt(var_y / R) / (ybar * N);
  s.gap = s.rho - s.lambda;
  const double var_gap = var_x / R + var_y / (R * ybar * ybar) - 2.0 * cov_xy / (R * ybar);
  s.gap_se = std::sqrt(std::max(0.0, var_gap)) / N;

  std::vector<double> ys;
  ys.reserve(logs.size());
  for (double x : logs) ys.push_back(std::exp(x - m));
  std::sort(ys.begin(), ys.end());
  const std::size_t top = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(R / 100.0)));
  double tm = 0.0;
  for (std::size_t i = ys.size() - top; i < ys.size(); ++i) tm += ys[i];
  s.top1 = tm / sy;
  return s;
}

} // namespace

// ---------------------------------------------------------------------------

DerivativeResult annealed_derivative(const walk::WalkModel& w, const field::FieldSpec& spec,
                                     double beta, int n_layers, AnnealedPolicy policy,
                                     std::int64_t n_disorder, rng::Key key) {
  DerivativeResult res;
  if (spec.iid() && policy != AnnealedPolicy::kMc) {
    res.value = site_mgf_derivative_over_mgf(spec, beta);
    res.method = "closed_form";
    return res;
  }
  if (policy != AnnealedPolicy::kMc && spec.kind == field::Kind::kArTime &&
      n_layers <= partition::kAnalyticAnnealedMaxN) {
    partition::PolymerConfig cfg{w, beta, n_layers, 1};
    const auto tm = partition::annealed_tilted_moments(cfg, spec);
    res.value = tm.mean_sum_z / tm.mean_z / n_layers;
    res.method = "tilted_path_sum";
    return res;
  }

  // Finite differences on paired replicas, with a half-step Richardson error
  // estimate. Central stencil away from 0, one-sided second order at the
  // boundary (beta < h).
  const double h = std::max(1e-4, beta * 1e-3);
  auto lambda_at = [&](double b) {
    std::vector<double> logs(static_cast<std::size_t>(n_disorder));
    const field::Window win = field::reachable_window(w, n_layers);
    const field::FieldSampler sampler(spec, win);
    const rng::Key rep_base = key.child(rng::tag::kReplica);
    for (std::int64_t r = 0; r < n_disorder; ++r) {
      auto src = sampler.source(rep_base.child(static_cast<std::uint64_t>(r)));
      partition::PolymerConfig cfg{w, b, n_layers, 1};
      logs[static_cast<std::size_t>(r)] =
          partition::quenched_partition_dp_streamed(cfg, win, *src).log_z;
    }
    return paired_stats(logs, n_layers).lambda;
  };
  auto deriv = [&](double step) {
    if (beta >= step) return (lambda_at(beta + step) - lambda_at(beta - step)) / (2.0 * step);
    return (-3.0 * lambda_at(beta) + 4.0 * lambda_at(beta + step) - lambda_at(beta + 2.0 * step)) /
           (2.0 * step);
  };
  const double d_h = deriv(h);
  const double d_h2 = deriv(h / 2);
  res.value = d_h2;
  res.method = "finite_difference";
  res.h_used = h;
  res.richardson_err = std::abs(d_h2 - d_h) / 3.0;
  res.noise_floor_warning = res.richardson_err > std::max(1e-3, 0.05 * std::abs(res.value));
  return res;
}

LambdaCapitalResult lambda_capital(const field::FieldSpec& spec, double beta,
                                   std::int64_t pair_radius) {
  spec.validate();
  if (beta < 0.0) throw ConfigError("lambda_capital: beta must be >= 0");
  LambdaCapitalResult res;

  // Pair ratios E[e^{b(w_x + w_y)}] / (E[e^{b w_x}] E[e^{b w_y}]) maximized
  // over pairs within l1 distance pair_radius. For our stationary kinds the
  // positive and negative tilts give the same Gaussian ratio.
  double max_cov = 0.0;
  if (spec.kind == field::Kind::kArTime) {
    field::Site x{1, std::vector<std::int64_t>(static_cast<std::size_t>(spec.d), 0)};
    for (std::int64_t lag = 1; lag <= pair_radius; ++lag) {
      field::Site y{1 + lag, x.z};
      max_cov = std::max(max_cov, spec.covariance(x, y));
    }
  } else if (spec.kind == field::Kind::kGffGaussian) {
    const std::int64_t r = std::min<std::int64_t>(pair_radius, 3);
    std::vector<field::Site> sites;
    field::Site x{2, std::vector<std::int64_t>(static_cast<std::size_t>(spec.d), 0)};
    sites.push_back(x);
    for (std::int64_t dn = -r; dn <= r; ++dn) {
      if (x.n + dn < 0) continue;
      field::Site y = x;
      y.n += dn;
      for (int j = 0; j < spec.d; ++j) {
        for (std::int64_t dz = -r; dz <= r; ++dz) {
          if (dz == 0 && dn == 0) continue;
          if (std::llabs(dn) + std::llabs(dz) > r) continue;
          y.z = x.z;
          y.z[static_cast<std::size_t>(j)] += dz;
          sites.push_back(y);
        }
      }
    }
    const Eigen::MatrixXd cov = field::covariance_matrix(spec, sites);
    for (Eigen::Index j = 1; j < cov.cols(); ++j) max_cov = std::max(max_cov, cov(0, j));
  }
  res.kappa1 = std::exp(beta * beta * max_cov);
  res.kappa2 = std::exp(beta * beta * max_cov);
  res.log_kappa_term = std::log(res.kappa1 * res.kappa2);

  if (spec.kind == field::Kind::kGffGaussian) {
    field::Site x{1, std::vector<std::int64_t>(static_cast<std::size_t>(spec.d), 0)};
    const Eigen::MatrixXd cov = field::covariance_matrix(spec, {x});
    const double var = cov(0, 0);
    res.log_pos_moment = 2.0 * beta * beta * var;
    res.log_neg_moment = beta * beta * var;
  } else {
    res.log_pos_moment = log_site_mgf(spec, 2.0 * beta);
    res.log_neg_moment = 2.0 * log_site_mgf(spec, -beta);
  }
  res.value = res.log_kappa_term + res.log_pos_moment + res.log_neg_moment;
  return res;
}

// ---------------------------------------------------------------------------

EstimateTable free_energy_table(const walk::WalkModel& w, const field::FieldSpec& spec,
                                const std::vector<double>& betas, const std::vector<int>& n_schedule,
                                std::int64_t n_disorder, rng::Key key, const FreeEnergyOptions& opt) {
  spec.validate();
  const LogZTensor t = quenched_tensor(w, spec, betas, n_schedule, n_disorder, key, opt.workers);

  EstimateTable table;
  std::vector<double> logs(static_cast<std::size_t>(n_disorder));
  for (std::size_t b = 0; b < t.betas.size(); ++b) {
    const double beta = t.betas[b];
    for (std::size_t n = 0; n < t.n_schedule.size(); ++n) {
      const int N = t.n_schedule[n];
      for (std::int64_t r = 0; r < n_disorder; ++r)
        logs[static_cast<std::size_t>(r)] = t.at(b, n, static_cast<std::size_t>(r));
      const PairedStats ps = paired_stats(logs, N);

      FreeEnergyRow row;
      row.beta = beta;
      row.n_layers = N;
      row.n_disorder = n_disorder;
      row.seed = key.v;
      row.rho_hat = ps.rho;
      row.rho_se = ps.rho_se;

      const bool analytic_iid =
          spec.iid() && (opt.policy == AnnealedPolicy::kAuto || opt.policy == AnnealedPolicy::kAnalytic);
      if (analytic_iid) {
        row.lambda_hat = log_site_mgf(spec, beta); // exact: E[Z_N] = m(beta)^N
        row.lambda_se = 0.0;
        row.gap = row.rho_hat - row.lambda_hat;
        row.gap_se = row.rho_se;
      } else if (opt.policy == AnnealedPolicy::kAnalytic) {
        partition::PolymerConfig cfg{w, beta, N, 1};
        const auto est = partition::annealed_partition(cfg, spec, partition::AnnealedMode::kAnalytic,
                                                       0, rng::Key{});
        row.lambda_hat = est.log_mean_z / N;
        row.lambda_se = 0.0;
        row.gap = row.rho_hat - row.lambda_hat;
        row.gap_se = row.rho_se;
      } else {
        row.lambda_hat = ps.lambda;
        row.lambda_se = ps.lambda_se;
        row.gap = ps.gap;
        row.gap_se = ps.gap_se;
        row.heavy_tail_warning = ps.top1 > 0.5;
      }

      if (opt.with_derivative) {
        row.lambda_prime =
            annealed_derivative(w, spec, beta, N, opt.policy, n_disorder, key).value;
      }
      if (opt.with_lambda_capital) row.lambda_capital = lambda_capital(spec, beta).value;
      table.rows.push_back(row);
    }
  }
  return table;
}

// ---------------------------------------------------------------------------

LlnTrace lln_trace(const walk::WalkModel& w, const field::FieldSpec& spec,
                   const std::vector<int>& checkpoints, std::int64_t n_paths, rng::Key key,
                   int workers) {
  spec.validate();
  if (checkpoints.empty() || !std::is_sorted(checkpoints.begin(), checkpoints.end()))
    throw ConfigError("lln checkpoints must be ascending");
  if (checkpoints.front() < 1) throw ConfigError("lln checkpoints must be >= 1");
  if (n_paths < 2) throw ConfigError("lln needs n_paths >= 2");
  const int n_max = checkpoints.back();

  LlnTrace trace;
  trace.checkpoints = checkpoints;
  trace.running_avg.assign(static_cast<std::size_t>(n_paths), {});
  const rng::Key rep_base = key.child(rng::tag::kReplica);

  parallel_for(static_cast<std::size_t>(n_paths), workers, [&](std::size_t r) {
    const rng::Key rk = rep_base.child(r);
    rng::Stream walk_stream(rk.child(rng::tag::kWalk));
    const walk::Path path = walk::sample_path(w, n_max, walk_stream);

    std::vector<double> values(static_cast<std::size_t>(n_max), 0.0);
    const rng::Key fk = rk.child(rng::tag::kField);
    switch (spec.kind) {
      case field::Kind::kIidGaussian:
      case field::Kind::kIidBernoulli: {
        for (int n = 1; n <= n_max; ++n) {
          rng::Stream s(rng::site_key(fk, n, path.site(n - 1), w.d));
          values[static_cast<std::size_t>(n - 1)] =
              spec.kind == field::Kind::kIidGaussian
                  ? spec.sigma * s.normal()
                  : (s.uniform() < spec.p ? spec.v1 : spec.v0);
        }
        break;
      }
      case field::Kind::kArTime: {
        // Exact AR(1) propagation along each visited site: skipping steps
        // composes, so one normal per visit suffices.
        std::map<std::vector<std::int64_t>, std::pair<std::int64_t, double>> state;
        for (int n = 1; n <= n_max; ++n) {
          std::vector<std::int64_t> z(path.site(n - 1), path.site(n - 1) + w.d);
          rng::Stream s(rng::site_key(fk, n, z.data(), w.d));
          auto it = state.find(z);
          double v;
          if (it == state.end()) {
            v = spec.sigma * s.normal();
          } else {
            const double rho = std::pow(spec.a, static_cast<double>(n - it->second.first));
            v = rho * it->second.second + spec.sigma * std::sqrt(1.0 - rho * rho) * s.normal();
          }
          state[z] = {n, v};
          values[static_cast<std::size_t>(n - 1)] = v;
        }
        break;
      }
      case field::Kind::kGffGaussian: {
        std::vector<field::Site> sites;
        sites.reserve(static_cast<std::size_t>(n_max));
        for (int n = 1; n <= n_max; ++n) {
          field::Site s;
          s.n = n;
          s.z.assign(path.site(n - 1), path.site(n - 1) + w.d);
          sites.push_back(std::move(s));
        }
        const Eigen::MatrixXd cov = field::covariance_matrix(spec, sites);
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success)
          throw NumericalError("lln: gff path covariance not positive definite");
        Eigen::VectorXd g(static_cast<Eigen::Index>(n_max));
        rng::Stream s(fk);
        for (int n = 0; n < n_max; ++n) g[n] = s.normal();
        const Eigen::VectorXd vals = Eigen::MatrixXd(llt.matrixL()) * g;
        for (int n = 0; n < n_max; ++n) values[static_cast<std::size_t>(n)] = vals[n];
        break;
      }
    }

    std::vector<double> row;
    row.reserve(checkpoints.size());
    double acc = 0.0;
    std::size_t next = 0;
    for (int n = 1; n <= n_max; ++n) {
      acc += values[static_cast<std::size_t>(n - 1)];
      if (next < checkpoints.size() && checkpoints[next] == n) {
        row.push_back(acc / n);
        ++next;
      }
    }
    trace.running_avg[r] = std::move(row);
  });

  double s = 0, ss = 0;
  for (const auto& row : trace.running_avg) {
    const double v = row.back();
    s += v;
    ss += v * v;
  }
  const double R = static_cast<double>(n_paths);
  trace.terminal_mean = s / R;
  trace.terminal_variance = std::max(0.0, (ss - s * s / R) / std::max(1.0, R - 1.0));
  return trace;
}

// ---------------------------------------------------------------------------

ConcentrationResult concentration_test(const walk::WalkModel& w, const field::FieldSpec& spec,
                                       double beta, int n_layers, double epsilon,
                                       std::int64_t n_disorder, rng::Key key, int workers) {
  spec.validate();
  if (n_disorder < 1000) throw ConfigError("concentration_test requires n_disorder >= 1000");
  if (!(epsilon > 0.0)) throw ConfigError("concentration_test: epsilon must be > 0");

  const field::Window win = field::reachable_window(w, n_layers);
  const field::FieldSampler sampler(spec, win);
  std::vector<double> logs(static_cast<std::size_t>(n_disorder));
  const rng::Key rep_base = key.child(rng::tag::kReplica);
  parallel_for(static_cast<std::size_t>(n_disorder), workers, [&](std::size_t r) {
    auto src = sampler.source(rep_base.child(r));
    partition::PolymerConfig cfg{w, beta, n_layers, 1};
    logs[r] = partition::quenched_partition_dp_streamed(cfg, win, *src).log_z;
  });

  double mean = 0.0;
  for (double x : logs) mean += x;
  mean /= static_cast<double>(n_disorder);
  std::int64_t exceed = 0;
  const double threshold = epsilon * n_layers;
  for (double x : logs)
    if (std::abs(x - mean) > threshold) ++exceed;

  ConcentrationResult res;
  res.epsilon = epsilon;
  res.n_layers = n_layers;
  res.empirical_tail = static_cast<double>(exceed) / static_cast<double>(n_disorder);
  res.bound = std::exp(-std::pow(epsilon, 2.0 / 3.0) * std::cbrt(static_cast<double>(n_layers)) / 4.0);
  res.binomial_se = std::sqrt(std::max(res.bound * (1.0 - res.bound), 1e-12) /
                              static_cast<double>(n_disorder));
  res.pass = res.empirical_tail <= res.bound + 3.0 * res.binomial_se;
  res.note = "asymptotic bound; holds for N >= N_0(beta, eps) with N_0 unknown";
  return res;
}

// ---------------------------------------------------------------------------

CriterionVerdict entropy_criterion(const walk::WalkModel& w, const field::FieldSpec& spec,
                                   double beta, double lambda_hat, double lambda_prime,
                                   double kappa_hat) {
  const walk::WalkConstants wc = walk::walk_constants(w);
  CriterionVerdict v;
  v.lhs = beta * lambda_prime - lambda_hat;
  v.rhs = wc.k_ratio * wc.entropy; // = -log p_S
  v.satisfied = v.lhs > v.rhs;

  if (std::isfinite(spec.ess_sup())) {
    v.window_applicable = true;
    const double p_top = spec.ess_sup_prob();
    v.window_lhs = std::log(1.0 / p_top);
    const double k_prime = -2.0 * std::log(kappa_hat);
    v.window_rhs = k_prime + v.rhs;
    v.window_satisfied = v.window_lhs >= v.window_rhs;
  } else {
    v.window_note = "esssup infinite; window test inapplicable";
  }
  return v;
}

AsymptoteTrace entropy_gap_asymptote(const walk::WalkModel& w, const field::FieldSpec& spec,
                                     const std::vector<double>& betas, double kappa_hat) {
  (void)w;
  if (!std::isfinite(spec.ess_sup()))
    throw ConfigError("esssup infinite; window test inapplicable");
  if (!spec.iid())
    throw ConfigError("entropy_gap_asymptote: closed-form trace needs an iid bounded kind");
  AsymptoteTrace trace;
  const double center = std::log(1.0 / spec.ess_sup_prob());
  const double half_band = std::abs(std::log(kappa_hat * kappa_hat));
  bool stays = false;
  for (double b : betas) {
    AsymptoteRow row;
    row.beta = b;
    const double lam = log_site_mgf(spec, b);
    const double lp = site_mgf_derivative_over_mgf(spec, b);
    row.lhs = b * lp - lam;
    row.band_lo = center - half_band;
    row.band_hi = center + half_band;
    row.in_band = row.lhs >= row.band_lo - 1e-12 && row.lhs <= row.band_hi + 1e-12;
    trace.rows.push_back(row);
  }
  // entered and stayed: the last quarter of the grid is in band
  const std::size_t q = std::max<std::size_t>(1, trace.rows.size() / 4);
  stays = true;
  for (std::size_t i = trace.rows.size() - q; i < trace.rows.size(); ++i)
    stays = stays && trace.rows[i].in_band;
  trace.enters_and_stays = stays;
  return trace;
}

// ---------------------------------------------------------------------------

TruncationSweep truncation_sweep(const walk::WalkModel& w, const field::FieldSpec& spec, double beta,
                                 int n_layers, const std::vector<double>& l_grid,
                                 std::int64_t n_disorder, rng::Key key, int workers) {
  spec.validate();
  if (!std::is_sorted(l_grid.begin(), l_grid.end())) throw ConfigError("l grid must be ascending");
  if (n_disorder < 2) throw ConfigError("truncation_sweep: n_disorder must be >= 2");

  const field::Window win = field::reachable_window(w, n_layers);
  const field::FieldSampler sampler(spec, win);
  const rng::Key rep_base = key.child(rng::tag::kReplica);

  // logs[l_idx or last=untruncated][replica]
  std::vector<std::vector<double>> logs(l_grid.size() + 1,
                                        std::vector<double>(static_cast<std::size_t>(n_disorder)));
  parallel_for(static_cast<std::size_t>(n_disorder), workers, [&](std::size_t r) {
    const field::FieldSample sample = sampler.materialize(rep_base.child(r));
    partition::PolymerConfig cfg{w, beta, n_layers, 1};
    for (std::size_t li = 0; li < l_grid.size(); ++li) {
      const field::FieldSample trunc = field::truncate_field(sample, l_grid[li]);
      logs[li][r] = partition::quenched_partition_dp(cfg, trunc).log_z;
    }
    logs[l_grid.size()][r] = partition::quenched_partition_dp(cfg, sample).log_z;
  });

  TruncationSweep sweep;
  const PairedStats ref = paired_stats(logs.back(), n_layers);
  sweep.rho_untruncated = ref.rho;
  sweep.lambda_untruncated = ref.lambda;
  for (std::size_t li = 0; li < l_grid.size(); ++li) {
    const PairedStats ps = paired_stats(logs[li], n_layers);
    TruncationRow row;
    row.l = l_grid[li];
    row.rho_l = ps.rho;
    row.rho_se = ps.rho_se;
    row.lambda_l = ps.lambda;
    row.lambda_se = ps.lambda_se;
    row.rho_dist = std::abs(ps.rho - ref.rho);
    row.lambda_dist = std::abs(ps.lambda - ref.lambda);
    sweep.rows.push_back(row);
  }
  return sweep;
}

// ---------------------------------------------------------------------------

PhaseScanReport phase_scan(const walk::WalkModel& w, const field::FieldSpec& spec,
                           const std::vector<double>& betas, const std::vector<int>& n_schedule,
                           std::int64_t n_disorder, rng::Key key, const FreeEnergyOptions& opt) {
  if (!std::is_sorted(betas.begin(), betas.end())) throw ConfigError("beta grid must be ascending");
  FreeEnergyOptions o = opt;
  o.with_derivative = false;
  o.with_lambda_capital = false;
  const EstimateTable table = free_energy_table(w, spec, betas, n_schedule, n_disorder, key, o);

  PhaseScanReport report;
  const std::size_t n_count = n_schedule.size();
  for (std::size_t b = 0; b < betas.size(); ++b) {
    PhaseScanRow row;
    row.beta = betas[b];
    for (std::size_t n = 0; n < n_count; ++n)
      row.gap_by_n.push_back(table.rows[b * n_count + n].gap);
    const FreeEnergyRow& last = table.rows[b * n_count + (n_count - 1)];
    row.gap = last.gap;
    row.gap_lo = last.gap - 2.0 * last.gap_se;
    row.gap_hi = last.gap + 2.0 * last.gap_se;
    report.rows.push_back(row);
  }

  report.monotone_ok = true;
  for (std::size_t b = 0; b + 1 < report.rows.size(); ++b) {
    const FreeEnergyRow& a = table.rows[b * n_count + (n_count - 1)];
    const FreeEnergyRow& c = table.rows[(b + 1) * n_count + (n_count - 1)];
    const double tol = 2.0 * std::sqrt(a.gap_se * a.gap_se + c.gap_se * c.gap_se);
    if (c.gap > a.gap + tol) report.monotone_ok = false;
  }

  bool have_lo = false, have_hi = false;
  double lo = 0.0, hi = 0.0;
  for (const auto& row : report.rows) {
    if (row.gap_lo <= 0.0 && 0.0 <= row.gap_hi) {
      lo = row.beta;
      have_lo = true;
    }
    if (!have_hi && row.gap_hi < 0.0) {
      hi = row.beta;
      have_hi = true;
    }
  }
  if (have_lo && have_hi && lo < hi) {
    report.bracket_detected = true;
    report.bracket_lo = lo;
    report.bracket_hi = hi;
  }
  return report;
}

std::vector<std::vector<field::Site>> default_cone_family(int d, int max_sets, std::int64_t n0) {
  std::vector<std::vector<field::Site>> family;
  for (int k = 1; k <= max_sets; ++k) {
    std::vector<field::Site> set;
    for (std::int64_t j = 2; j <= 1 + k; ++j) {
      field::Site s;
      s.n = n0 + j;
      s.z.assign(static_cast<std::size_t>(d), 0);
      set.push_back(std::move(s));
    }
    family.push_back(std::move(set));
  }
  return family;
}

double default_kappa(const field::FieldSpec& spec, double beta) {
  field::Site center;
  center.n = 4;
  center.z.assign(static_cast<std::size_t>(spec.d), 0);
  const auto family = default_cone_family(spec.d, 5, center.n);
  return field::estimate_kappa(spec, beta, center, family).kappa;
}

} // namespace polymc::analysis
