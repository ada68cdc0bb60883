#include "polymc/runner.hpp"

#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "polymc/analysis.hpp"
#include "polymc/csv.hpp"
#include "polymc/errors.hpp"
#include "polymc/kernels.hpp"
#include "polymc/regeneration.hpp"
#include "polymc/version.hpp"

namespace polymc::runner {

namespace {

namespace fs = std::filesystem;

struct Context {
  config::Config cfg;
  std::string outdir;
  walk::WalkModel walk;
  field::FieldSpec spec;
  rng::Key master;
  int workers = 1;
  std::vector<std::pair<std::string, std::size_t>> outputs;

  std::string path(const std::string& name) const { return (fs::path(outdir) / name).string(); }
};

Context make_context(const config::Config& cfg, const std::string& outdir) {
  Context ctx;
  ctx.cfg = cfg;
  ctx.outdir = outdir;
  ctx.walk = config::walk_from_config(cfg);
  ctx.spec = config::field_from_config(cfg);
  ctx.master = rng::Key{cfg.get_u64("seed", 1)};
  ctx.workers = static_cast<int>(cfg.get_int("workers", 1));
  if (ctx.workers < 1) throw ConfigError("workers must be >= 1");
  kernels::set_backend(kernels::parse_backend(cfg.get_string("kernels.backend", "auto")));
  fs::create_directories(outdir);
  return ctx;
}

std::vector<double> betas_of(const Context& ctx) {
  auto betas = ctx.cfg.get_doubles("scan.betas");
  if (betas.empty()) betas = {0.0, 0.5, 1.0};
  for (double b : betas)
    if (b < 0.0) throw ConfigError("scan.betas: beta must be >= 0");
  return betas;
}

std::vector<int> ns_of(const Context& ctx) {
  auto ns64 = ctx.cfg.get_ints("scan.Ns");
  if (ns64.empty()) ns64 = {8, 16};
  std::vector<int> ns;
  for (std::int64_t n : ns64) {
    if (n < 1) throw ConfigError("scan.Ns: N must be >= 1");
    ns.push_back(static_cast<int>(n));
  }
  if (!std::is_sorted(ns.begin(), ns.end())) throw ConfigError("scan.Ns must be ascending");
  return ns;
}

void write_manifest(Context& ctx, const std::string& subcommand, double wallclock_ms) {
  std::ofstream out(ctx.path("manifest.txt"), std::ios::binary);
  if (!out) throw NumericalError("cannot write manifest.txt");
  out << "version = " << kVersion << "\n";
  out << "subcommand = " << subcommand << "\n";
  out << "config_hash = " << csv::fmt(ctx.cfg.hash()) << "\n";
  out << "master_seed = " << csv::fmt(ctx.master.v) << "\n";
  out << "workers = " << ctx.workers << "\n";
  out << "kernels = " << kernels::active().name << "\n";
  out << "replica_seed_rule = child(child(master, tag_replica), r); see rng.hpp\n";
  const rng::Key rep = ctx.master.child(rng::tag::kReplica);
  for (std::uint64_t r = 0; r < 8; ++r)
    out << "replica_seed_" << r << " = " << csv::fmt(rep.child(r).v) << "\n";
  out << "wallclock_ms = " << csv::fmt(wallclock_ms) << "\n";
  for (const auto& [name, rows] : ctx.outputs)
    out << "rows_" << name << " = " << rows << "\n";
}

// --------------------------------------------------------------------------

void run_partition(Context& ctx) {
  const auto betas = betas_of(ctx);
  const auto ns = ns_of(ctx);
  csv::Writer out(ctx.path("partition.csv"),
                  "beta,N,log_z,method,n_endpoint_sites,max_layer_log,min_layer_log");
  for (int N : ns) {
    const field::Window win = field::reachable_window(ctx.walk, N);
    const field::FieldSampler sampler(ctx.spec, win);
    const field::FieldSample sample =
        sampler.materialize(ctx.master.child(rng::tag::kReplica).child(0));
    for (double beta : betas) {
      partition::PolymerConfig cfg{ctx.walk, beta, N, 1};
      const auto res = partition::quenched_partition_dp(cfg, sample);
      out.row(beta, N, res.log_z, res.method, static_cast<std::int64_t>(res.endpoint.size()),
              res.max_layer_log, res.min_layer_log);
    }
  }
  ctx.outputs.emplace_back("partition.csv", out.rows());
}

void run_free_energy(Context& ctx) {
  const auto betas = betas_of(ctx);
  const auto ns = ns_of(ctx);
  const std::int64_t n_disorder = ctx.cfg.get_int("mc.n_disorder", 100);
  analysis::FreeEnergyOptions opt;
  opt.policy = analysis::parse_annealed_policy(ctx.cfg.get_string("annealed.mode", "auto"));
  opt.workers = ctx.workers;
  const auto table =
      analysis::free_energy_table(ctx.walk, ctx.spec, betas, ns, n_disorder, ctx.master, opt);
  csv::Writer out(ctx.path("free_energy.csv"),
                  "beta,N,rho_hat,rho_se,lambda_hat,lambda_se,lambda_prime,Lambda_hat,gap,gap_se,"
                  "n_disorder,seed");
  for (const auto& r : table.rows) {
    out.row(r.beta, r.n_layers, r.rho_hat, r.rho_se, r.lambda_hat, r.lambda_se, r.lambda_prime,
            r.lambda_capital, r.gap, r.gap_se, r.n_disorder, r.seed);
    if (r.heavy_tail_warning)
      std::fprintf(stderr,
                   "warning: annealed MC at beta=%g N=%d dominated by <1%% of samples; "
                   "E[Z_N] estimate unreliable\n",
                   r.beta, r.n_layers);
  }
  ctx.outputs.emplace_back("free_energy.csv", out.rows());
}

void run_phase_scan(Context& ctx) {
  const auto betas = betas_of(ctx);
  const auto ns = ns_of(ctx);
  const std::int64_t n_disorder = ctx.cfg.get_int("mc.n_disorder", 100);
  analysis::FreeEnergyOptions opt;
  opt.policy = analysis::parse_annealed_policy(ctx.cfg.get_string("annealed.mode", "auto"));
  opt.workers = ctx.workers;
  const auto report =
      analysis::phase_scan(ctx.walk, ctx.spec, betas, ns, n_disorder, ctx.master, opt);
  csv::Writer out(ctx.path("phase_scan.csv"),
                  "beta,gap,gap_lo,gap_hi,monotone_ok,bracket_lo,bracket_hi");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : report.rows)
    out.row(r.beta, r.gap, r.gap_lo, r.gap_hi, report.monotone_ok,
            report.bracket_detected ? report.bracket_lo : nan,
            report.bracket_detected ? report.bracket_hi : nan);
  ctx.outputs.emplace_back("phase_scan.csv", out.rows());
}

void run_lln(Context& ctx) {
  auto ns = ns_of(ctx);
  const std::int64_t n_paths = ctx.cfg.get_int("mc.n_paths", 200);
  const auto trace = analysis::lln_trace(ctx.walk, ctx.spec, ns, n_paths, ctx.master, ctx.workers);
  csv::Writer out(ctx.path("lln.csv"), "replica,N,running_avg");
  for (std::size_t r = 0; r < trace.running_avg.size(); ++r)
    for (std::size_t c = 0; c < trace.checkpoints.size(); ++c)
      out.row(static_cast<std::int64_t>(r), trace.checkpoints[c], trace.running_avg[r][c]);
  ctx.outputs.emplace_back("lln.csv", out.rows());
}

void run_tau(Context& ctx) {
  auto ls64 = ctx.cfg.get_ints("tau.Ls");
  if (ls64.empty()) ls64 = {1, 2, 3, 4};
  const double p = ctx.cfg.get_double("tau.p", 1.0);
  const std::int64_t samples = ctx.cfg.get_int("tau.samples", 10000);
  csv::Writer out(ctx.path("tau.csv"), "L,p,moment_est,moment_se,censored_frac,n_samples");
  for (std::int64_t L : ls64) {
    const auto est = regeneration::tau_moments(static_cast<int>(L), p, samples,
                                               ctx.master.child(rng::tag::kReplica).child(
                                                   static_cast<std::uint64_t>(L)));
    out.row(L, p, est.moment, est.se, est.censored_frac, est.n_samples);
  }
  ctx.outputs.emplace_back("tau.csv", out.rows());
}

void run_martingale(Context& ctx) {
  const auto betas = betas_of(ctx);
  regeneration::HProcessParams params;
  params.L = static_cast<int>(ctx.cfg.get_int("reg.L", 2));
  params.l = ctx.cfg.get_double("reg.l", 1.0);
  params.n_blocks = static_cast<int>(ctx.cfg.get_int("reg.blocks", 10));
  params.n_inner = ctx.cfg.get_int("reg.inner", 256);
  params.slab_mult = ctx.cfg.get_double("reg.slab_mult", 4.0);
  const std::int64_t replicas = ctx.cfg.get_int("reg.n_replicas", 200);
  csv::Writer out(ctx.path("martingale.csv"),
                  "beta,n,h_mean,h_se,h_second,l_mean,l_se,mean_abs_delta,n_replicas,n_failed,psi_log");
  for (double beta : betas) {
    const auto stats = regeneration::h_process(ctx.walk, ctx.spec, beta, params, replicas,
                                               ctx.master, ctx.workers);
    for (int n = 1; n <= stats.n_blocks; ++n)
      out.row(beta, n, stats.h_mean[static_cast<std::size_t>(n - 1)],
              stats.h_se[static_cast<std::size_t>(n - 1)],
              stats.h_second[static_cast<std::size_t>(n - 1)],
              stats.l_mean[static_cast<std::size_t>(n - 1)],
              stats.l_se[static_cast<std::size_t>(n - 1)],
              stats.mean_abs_delta[static_cast<std::size_t>(n - 1)], stats.n_replicas,
              stats.n_failed, stats.psi_log);
  }
  ctx.outputs.emplace_back("martingale.csv", out.rows());
}

void run_concentration(Context& ctx) {
  const auto betas = betas_of(ctx);
  const auto ns = ns_of(ctx);
  const double eps = ctx.cfg.get_double("conc.epsilon", 0.5);
  const std::int64_t n_disorder = ctx.cfg.get_int("mc.n_disorder", 1000);
  csv::Writer out(ctx.path("concentration.csv"),
                  "beta,N,epsilon,empirical_tail,bound,binomial_se,pass");
  for (double beta : betas) {
    const auto res = analysis::concentration_test(ctx.walk, ctx.spec, beta, ns.back(), eps,
                                                  n_disorder, ctx.master, ctx.workers);
    out.row(beta, res.n_layers, res.epsilon, res.empirical_tail, res.bound, res.binomial_se,
            res.pass);
  }
  ctx.outputs.emplace_back("concentration.csv", out.rows());
}

void run_criteria(Context& ctx) {
  const auto betas = betas_of(ctx);
  const auto ns = ns_of(ctx);
  const std::int64_t n_disorder = ctx.cfg.get_int("mc.n_disorder", 100);
  const auto policy = analysis::parse_annealed_policy(ctx.cfg.get_string("annealed.mode", "auto"));
  csv::Writer out(ctx.path("criteria.csv"),
                  "beta,lhs,rhs,satisfied,kappa_hat,window_applicable,window_lhs,window_rhs,"
                  "window_satisfied");
  for (double beta : betas) {
    double lambda_hat, lambda_prime;
    if (ctx.spec.iid() && policy != analysis::AnnealedPolicy::kMc) {
      lambda_hat = analysis::log_site_mgf(ctx.spec, beta);
      lambda_prime = analysis::site_mgf_derivative_over_mgf(ctx.spec, beta);
    } else {
      analysis::FreeEnergyOptions opt;
      opt.policy = policy;
      opt.with_lambda_capital = false;
      opt.workers = ctx.workers;
      const auto table = analysis::free_energy_table(ctx.walk, ctx.spec, {beta}, {ns.back()},
                                                     n_disorder, ctx.master, opt);
      lambda_hat = table.rows[0].lambda_hat;
      lambda_prime = table.rows[0].lambda_prime;
    }
    const double kappa = analysis::default_kappa(ctx.spec, beta);
    const auto v = analysis::entropy_criterion(ctx.walk, ctx.spec, beta, lambda_hat, lambda_prime,
                                               kappa);
    out.row(beta, v.lhs, v.rhs, v.satisfied, kappa, v.window_applicable, v.window_lhs,
            v.window_rhs, v.window_satisfied);
  }
  ctx.outputs.emplace_back("criteria.csv", out.rows());
}

void run_green(Context& ctx) {
  if (ctx.spec.kind != field::Kind::kGffGaussian)
    throw ConfigError("green subcommand requires field.kind = gff_gaussian (field.box, field.margin)");
  const auto table = field::green_function(ctx.spec.d, ctx.spec.gff_box, ctx.spec.gff_margin);
  const std::string cache = ctx.path(field::green_cache_name(table.d, table.box, table.margin));
  field::save_green(table, cache);
  csv::Writer out(ctx.path("green.csv"), "d,t_lo,t_hi,space_radius,margin,sites,diag_min,diag_max");
  double dmin = table.G(0, 0), dmax = table.G(0, 0);
  for (Eigen::Index i = 0; i < table.G.rows(); ++i) {
    dmin = std::min(dmin, table.G(i, i));
    dmax = std::max(dmax, table.G(i, i));
  }
  out.row(table.d, table.box.t_lo, table.box.t_hi, table.box.space_radius, table.margin,
          static_cast<std::int64_t>(table.sites.size()), dmin, dmax);
  ctx.outputs.emplace_back("green.csv", out.rows());
}

} // namespace

RunOutcome run(const std::string& subcommand, const config::Config& cfg, const std::string& outdir) {
  RunOutcome outcome;
  try {
    if (subcommand == "validate") {
      outcome.report = config::validate_config(cfg);
      outcome.exit_code = outcome.report.empty() ? 0 : 2;
      if (!outcome.report.empty()) outcome.error = "config validation failed";
      return outcome;
    }

    const auto t0 = std::chrono::steady_clock::now();
    Context ctx = make_context(cfg, outdir);
    if (subcommand == "partition") run_partition(ctx);
    else if (subcommand == "free-energy") run_free_energy(ctx);
    else if (subcommand == "phase-scan") run_phase_scan(ctx);
    else if (subcommand == "lln") run_lln(ctx);
    else if (subcommand == "tau") run_tau(ctx);
    else if (subcommand == "martingale") run_martingale(ctx);
    else if (subcommand == "concentration") run_concentration(ctx);
    else if (subcommand == "criteria") run_criteria(ctx);
    else if (subcommand == "green") run_green(ctx);
    else throw ConfigError("unknown subcommand: " + subcommand);
    const auto t1 = std::chrono::steady_clock::now();
    write_manifest(ctx, subcommand,
                   std::chrono::duration<double, std::milli>(t1 - t0).count());
  } catch (const ConfigError& e) {
    outcome.exit_code = 2;
    outcome.error = std::string("config error [") + subcommand + "]: " + e.what();
  } catch (const ResourceCapError& e) {
    outcome.exit_code = 4;
    outcome.error = std::string("resource cap [") + subcommand + "]: " + e.what();
  } catch (const NumericalError& e) {
    outcome.exit_code = 3;
    outcome.error = std::string("numerical error [") + subcommand + "]: " + e.what();
  } catch (const std::exception& e) {
    outcome.exit_code = 3;
    outcome.error = std::string("error [") + subcommand + "]: " + e.what();
  }
  return outcome;
}

} // namespace polymc::runner
