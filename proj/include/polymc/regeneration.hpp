#pragma once

#include <cstdint>
#include <vector>

#include "polymc/field.hpp"
#include "polymc/partition.hpp"
#include "polymc/rng.hpp"
#include "polymc/walk.hpp"

namespace polymc::regeneration {

// i.i.d. sequence on {-1, 0, +1} with P(+1) = P(-1) = 1/4, P(0) = 1/2,
// indexed from 1.
struct EpsilonSeq {
  std::vector<std::int8_t> values;
  rng::Key seed;

  std::int8_t at(std::int64_t i) const { return values[static_cast<std::size_t>(i - 1)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
};

EpsilonSeq sample_epsilon(std::int64_t n, rng::Key key);
std::int8_t epsilon_value(rng::Key eps_key, std::int64_t i); // pure in (key, i)

// Regeneration times: tau_k = inf{ j >= tau_{k-1}+L : eps_{j-L..j-1} = 1..1,
// eps_j in {-1,0} }, scanned greedily left to right; the first admissible
// candidate is j = L+1 because eps_{j-L} must exist.
std::vector<std::int64_t> regeneration_times(const EpsilonSeq& eps, int L, std::int64_t horizon);

// Streaming variant: scans eps_key until `need` regenerations are found or
// the horizon is hit. Optionally records the epsilon values seen so far.
std::vector<std::int64_t> find_regenerations(rng::Key eps_key, int L, std::int64_t horizon,
                                             std::int64_t need,
                                             std::vector<std::int8_t>* eps_out = nullptr);

// Pattern predicate used for post-validation in tests.
bool is_regeneration(const EpsilonSeq& eps, int L, std::int64_t j);

// eta_{n,z} = 0 on {eps_n = +-1}, 2 omega_{n,z} on {eps_n = 0}.
field::FieldSample eta_field(const field::FieldSample& omega, const EpsilonSeq& eps);

// xi^l_{n,z} = -beta*l on {eps_n = +-1}, log(2 e^{beta*omega(l)} - e^{-beta*l})
// on {eps_n = 0}, with omega(l) = max(omega, -l) substituted so the log
// argument stays positive.
field::FieldSample xi_field(const field::FieldSample& omega, const EpsilonSeq& eps, double beta,
                            double l);

struct TauMomentEstimate {
  int L = 0;
  double p = 1.0;
  double moment = 0.0;       // estimate of E[(4^-L tau_1)^p]^(1/p)
  double se = 0.0;           // delta-method standard error of the root
  double censored_frac = 0.0;
  std::int64_t n_samples = 0;
};

// Safety horizon: E[tau_1] ~ 4^(L+1)/3, so 100*4^L leaves negligible mass.
inline std::int64_t tau_safety_horizon(int L) {
  std::int64_t h = 100;
  for (int i = 0; i < L; ++i) h *= 4;
  return h;
}

TauMomentEstimate tau_moments(int L, double p, std::int64_t n_samples, rng::Key key);

// One (eps, tau, eta, xi) realization over the reachable window of n_layers
// steps, for inspection and identity tests.
struct RegenerationTrace {
  int L = 0;
  double l = 0.0;
  EpsilonSeq eps;
  std::vector<std::int64_t> taus;
  std::vector<double> taus_scaled; // 4^-L (tau_k - tau_{k-1})
  field::FieldSample omega;
  field::FieldSample eta;
  field::FieldSample xi;
};

RegenerationTrace sample_trace(const walk::WalkModel& w, const field::FieldSpec& spec, double beta,
                               int L, double l, int n_layers, rng::Key key);

// ---------------------------------------------------------------------------
// Block-normalized partition processes L_n and H_n.

struct HProcessParams {
  int L = 2;
  double l = 1.0;            // truncation level, l >= 1. Keep beta*l small:
                             // the +-1 branch injects variance ~ (beta l)^2
                             // per layer into L_n and H_n, and their means
                             // become unmeasurable by MC once beta*l is
                             // order one.
  int n_blocks = 10;
  std::int64_t n_inner = 256;   // inner draws per block for Delta_j
  std::int64_t n_psi = 400'000; // draws for the global psi estimate
  double slab_mult = 4.0;       // diffusive slab cap: radius ~ mult*sqrt(n)+pad
  std::int64_t slab_pad = 6;
  std::int64_t horizon = 0;     // 0 -> 24 * n_blocks * 4^L
};

struct MartingaleStats {
  int n_blocks = 0;
  std::int64_t n_replicas = 0; // completed replicas
  std::int64_t n_failed = 0;   // replicas without enough regenerations
  double psi_log = 0.0;        // log psi-hat used for normalization

  // Per block count n = 1..n_blocks (index n-1):
  std::vector<double> h_mean, h_se;
  std::vector<double> h_second, h_second_se;
  std::vector<double> l_mean, l_se;
  std::vector<double> mean_abs_delta; // mean |Delta_j| over replicas and blocks <= n

  // Per replica samples (replica-major, n_blocks entries each).
  std::vector<std::vector<double>> h_samples;
  std::vector<std::vector<double>> l_samples;
  std::vector<std::vector<double>> delta_samples;
};

// Monte Carlo over (omega, eps) of the processes
//   L_n = Z^{1,xi(l)}_{tau_n} / psi^n
//   H_n = exp(sum_{j<n} Delta_j) * L_n
// with Delta_j the conditional-vs-marginal log block weight correction,
// estimated by paired inner draws (identical epsilon continuations and walk
// paths for both sides, so Delta vanishes identically for iid kinds).
// Supported kinds: iid_gaussian, iid_bernoulli, ar_time.
MartingaleStats h_process(const walk::WalkModel& w, const field::FieldSpec& spec, double beta,
                          const HProcessParams& params, std::int64_t n_replicas, rng::Key key,
                          int workers = 1);

} // namespace polymc::regeneration
