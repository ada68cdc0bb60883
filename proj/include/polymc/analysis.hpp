#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polymc/field.hpp"
#include "polymc/partition.hpp"
#include "polymc/rng.hpp"
#include "polymc/walk.hpp"

namespace polymc::analysis {

enum class AnnealedPolicy {
  kAuto,     // closed form for iid kinds, mc otherwise
  kAnalytic, // closed form (iid) or exact path sum (N <= 8)
  kMc,
};

AnnealedPolicy parse_annealed_policy(const std::string& name);

// log E[e^{beta omega_{1,0}}] for kinds with a closed form (iid kinds and the
// per-site marginal of ar_time).
double log_site_mgf(const field::FieldSpec& spec, double beta);
double site_mgf_derivative_over_mgf(const field::FieldSpec& spec, double beta); // d/dbeta log MGF

struct FreeEnergyRow {
  double beta = 0.0;
  int n_layers = 0;
  double rho_hat = 0.0, rho_se = 0.0;
  double lambda_hat = 0.0, lambda_se = 0.0;
  double lambda_prime = 0.0;
  double lambda_capital = 0.0;
  double gap = 0.0, gap_se = 0.0;
  std::int64_t n_disorder = 0;
  std::uint64_t seed = 0;
  bool heavy_tail_warning = false;
};

struct EstimateTable {
  std::vector<FreeEnergyRow> rows; // ordered by (beta, N)
};

struct FreeEnergyOptions {
  AnnealedPolicy policy = AnnealedPolicy::kAuto;
  bool with_derivative = true;
  bool with_lambda_capital = true;
  int workers = 1;
};

// rho-hat, lambda-hat, lambda', Lambda-hat and the paired gap on a
// (beta, N) grid. One DP pass per (replica, beta) snapshots every N in the
// schedule, and the same disorder replicas feed the quenched and annealed
// estimates, so gap standard errors shrink with the correlation.
EstimateTable free_energy_table(const walk::WalkModel& w, const field::FieldSpec& spec,
                                const std::vector<double>& betas, const std::vector<int>& n_schedule,
                                std::int64_t n_disorder, rng::Key key, const FreeEnergyOptions& opt);

struct DerivativeResult {
  double value = 0.0;
  std::string method; // "closed_form" | "tilted_path_sum" | "finite_difference"
  double h_used = 0.0;
  double richardson_err = 0.0;
  bool noise_floor_warning = false;
};

// lambda'_N(beta): closed form for iid kinds, exact tilted path sum for
// correlated Gaussian kinds at N <= 8, central finite difference otherwise.
DerivativeResult annealed_derivative(const walk::WalkModel& w, const field::FieldSpec& spec,
                                     double beta, int n_layers, AnnealedPolicy policy,
                                     std::int64_t n_disorder, rng::Key key);

struct LambdaCapitalResult {
  double value = 0.0;
  double kappa1 = 1.0, kappa2 = 1.0;
  double log_kappa_term = 0.0;
  double log_pos_moment = 0.0;  // log E[e^{2 beta omega}]
  double log_neg_moment = 0.0;  // 2 log E[e^{-beta omega}]
};

// Lambda(beta) = log kappa1 kappa2 + log E[e^{2 b w}] + 2 log E[e^{-b w}].
// kappa1/kappa2 are the suprema of joint-vs-product exponential moment
// ratios over a pair family within l1 distance pair_radius (lag 0 excluded);
// they equal 1 for iid kinds and exp(beta^2 max-cov) for Gaussian kinds.
LambdaCapitalResult lambda_capital(const field::FieldSpec& spec, double beta,
                                   std::int64_t pair_radius = 5);

struct LlnTrace {
  std::vector<int> checkpoints;
  // terminal and running averages: rows[replica][checkpoint index]
  std::vector<std::vector<double>> running_avg;
  double terminal_mean = 0.0;
  double terminal_variance = 0.0;
};

// Running averages N^{-1} sum_{k<=N} omega_{k,S_k} along independent
// (field, walk) replicas, recorded at the given checkpoints.
LlnTrace lln_trace(const walk::WalkModel& w, const field::FieldSpec& spec,
                   const std::vector<int>& checkpoints, std::int64_t n_paths, rng::Key key,
                   int workers = 1);

struct ConcentrationResult {
  double epsilon = 0.0;
  int n_layers = 0;
  double empirical_tail = 0.0;
  double bound = 0.0;      // exp(-eps^{2/3} N^{1/3} / 4)
  double binomial_se = 0.0;
  bool pass = false;       // empirical <= bound + 3 se
  std::string note;        // the bound holds only for N >= N_0(beta, eps)
};

ConcentrationResult concentration_test(const walk::WalkModel& w, const field::FieldSpec& spec,
                                       double beta, int n_layers, double epsilon,
                                       std::int64_t n_disorder, rng::Key key, int workers = 1);

struct CriterionVerdict {
  double lhs = 0.0; // beta lambda' - lambda
  double rhs = 0.0; // K(S) H(S_1) = -log p_S
  bool satisfied = false;

  bool window_applicable = false;
  std::string window_note;
  double window_lhs = 0.0; // log 1/P(omega = ess sup)
  double window_rhs = 0.0; // K' + K(S) H(S_1), K' = -2 log kappa
  bool window_satisfied = false;
};

// Localization criterion beta lambda'(beta) - lambda(beta) > -K(S) sum P log P,
// plus the bounded-field window test with K' = -2 log kappa.
CriterionVerdict entropy_criterion(const walk::WalkModel& w, const field::FieldSpec& spec,
                                   double beta, double lambda_hat, double lambda_prime,
                                   double kappa_hat);

struct AsymptoteRow {
  double beta = 0.0;
  double lhs = 0.0;     // beta lambda' - lambda
  double band_lo = 0.0; // log 1/P(omega = ess sup) - log kappa^2
  double band_hi = 0.0; // ... + log kappa^2
  bool in_band = false;
};

struct AsymptoteTrace {
  std::vector<AsymptoteRow> rows;
  bool enters_and_stays = false;
};

// Large-beta trace of beta lambda' - lambda against the entropy band. Only
// bounded kinds (finite ess sup) qualify.
AsymptoteTrace entropy_gap_asymptote(const walk::WalkModel& w, const field::FieldSpec& spec,
                                     const std::vector<double>& betas, double kappa_hat);

struct TruncationRow {
  double l = 0.0;
  double rho_l = 0.0, rho_se = 0.0;
  double lambda_l = 0.0, lambda_se = 0.0;
  double rho_dist = 0.0;    // |rho_l - rho(untruncated)|
  double lambda_dist = 0.0;
};

struct TruncationSweep {
  std::vector<TruncationRow> rows; // ascending l
  double rho_untruncated = 0.0;
  double lambda_untruncated = 0.0;
};

// Free energies on omega(l) = max(omega, -l) over an ascending l grid,
// common disorder replicas throughout.
TruncationSweep truncation_sweep(const walk::WalkModel& w, const field::FieldSpec& spec, double beta,
                                 int n_layers, const std::vector<double>& l_grid,
                                 std::int64_t n_disorder, rng::Key key, int workers = 1);

struct PhaseScanRow {
  double beta = 0.0;
  double gap = 0.0;     // at the largest N of the schedule
  double gap_lo = 0.0;  // gap - 2 se
  double gap_hi = 0.0;  // gap + 2 se
  std::vector<double> gap_by_n; // finite-size trend note
};

struct PhaseScanReport {
  std::vector<PhaseScanRow> rows;
  bool monotone_ok = false;
  bool bracket_detected = false;
  double bracket_lo = 0.0; // largest beta whose gap CI contains 0
  double bracket_hi = 0.0; // smallest beta whose gap CI lies strictly below 0
};

PhaseScanReport phase_scan(const walk::WalkModel& w, const field::FieldSpec& spec,
                           const std::vector<double>& betas, const std::vector<int>& n_schedule,
                           std::int64_t n_disorder, rng::Key key, const FreeEnergyOptions& opt);

// Nested time-directed sets {(n0+j, 0) : j = 2..k+1}, k = 1..max_sets; each
// set sits inside the forward cone at d1 distance > 1 from the center.
std::vector<std::vector<field::Site>> default_cone_family(int d, int max_sets = 5,
                                                          std::int64_t n0 = 4);

// Kappa estimate over the default cone family.
double default_kappa(const field::FieldSpec& spec, double beta);

} // namespace polymc::analysis
