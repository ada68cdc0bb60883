#include "polymc/regeneration.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "polymc/errors.hpp"
#include "polymc/parallel.hpp"

namespace polymc::regeneration {

std::int8_t epsilon_value(rng::Key eps_key, std::int64_t i) {
  const double u = eps_key.uniform_at(static_cast<std::uint64_t>(i));
  if (u < 0.25) return 1;
  if (u < 0.5) return -1;
  return 0;
}

EpsilonSeq sample_epsilon(std::int64_t n, rng::Key key) {
  if (n < 1) throw ConfigError("sample_epsilon: n must be >= 1");
  EpsilonSeq eps;
  eps.seed = key;
  eps.values.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 1; i <= n; ++i)
    eps.values[static_cast<std::size_t>(i - 1)] = epsilon_value(key, i);
  return eps;
}

std::vector<std::int64_t> regeneration_times(const EpsilonSeq& eps, int L, std::int64_t horizon) {
  if (L < 1) throw ConfigError("regeneration_times: L must be >= 1");
  if (horizon < L + 1) throw ConfigError("regeneration_times: horizon must be >= L+1");
  horizon = std::min<std::int64_t>(horizon, eps.size());
  std::vector<std::int64_t> taus;
  std::int64_t run = 0;
  std::int64_t tau_prev = 0;
  for (std::int64_t j = 1; j <= horizon; ++j) {
    const std::int8_t v = eps.at(j);
    if (v != 1 && run >= L && j >= tau_prev + L) {
      taus.push_back(j);
      tau_prev = j;
    }
    run = (v == 1) ? run + 1 : 0;
  }
  return taus;
}

std::vector<std::int64_t> find_regenerations(rng::Key eps_key, int L, std::int64_t horizon,
                                             std::int64_t need, std::vector<std::int8_t>* eps_out) {
  std::vector<std::int64_t> taus;
  std::int64_t run = 0;
  std::int64_t tau_prev = 0;
  for (std::int64_t j = 1; j <= horizon; ++j) {
    const std::int8_t v = epsilon_value(eps_key, j);
    if (eps_out) eps_out->push_back(v);
    if (v != 1 && run >= L && j >= tau_prev + L) {
      taus.push_back(j);
      tau_prev = j;
      if (static_cast<std::int64_t>(taus.size()) == need) return taus;
    }
    run = (v == 1) ? run + 1 : 0;
  }
  return taus;
}

bool is_regeneration(const EpsilonSeq& eps, int L, std::int64_t j) {
  if (j - L < 1 || j > eps.size()) return false;
  if (eps.at(j) == 1) return false;
  for (std::int64_t i = j - L; i <= j - 1; ++i)
    if (eps.at(i) != 1) return false;
  return true;
}

field::FieldSample eta_field(const field::FieldSample& omega, const EpsilonSeq& eps) {
  if (eps.size() < omega.window.n_layers)
    throw ConfigError("eta_field: epsilon sequence shorter than the window");
  field::FieldSample out = omega;
  for (int n = 1; n <= out.window.n_layers; ++n) {
    auto& layer = out.layers[static_cast<std::size_t>(n - 1)];
    if (eps.at(n) != 0) {
      std::fill(layer.begin(), layer.end(), 0.0);
    } else {
      for (double& v : layer) v *= 2.0;
    }
  }
  return out;
}

field::FieldSample xi_field(const field::FieldSample& omega, const EpsilonSeq& eps, double beta,
                            double l) {
  if (beta < 0.0) throw ConfigError("xi_field: beta must be >= 0");
  if (!(l > 0.0)) throw ConfigError("xi_field: l must be > 0");
  if (eps.size() < omega.window.n_layers)
    throw ConfigError("xi_field: epsilon sequence shorter than the window");
  field::FieldSample out = omega;
  const double e_neg = std::exp(-beta * l);
  for (int n = 1; n <= out.window.n_layers; ++n) {
    auto& layer = out.layers[static_cast<std::size_t>(n - 1)];
    if (eps.at(n) != 0) {
      std::fill(layer.begin(), layer.end(), -beta * l);
    } else {
      for (double& v : layer) {
        const double arg = 2.0 * std::exp(beta * std::max(v, -l)) - e_neg;
        if (!(arg > 0.0)) throw NumericalError("xi_field: log argument not positive");
        v = std::log(arg);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// tau moments

namespace {

// First regeneration of a fresh sequence read from `st`; returns 0 when none
// occurs within the horizon. Epsilon values are appended to eps_out if given.
std::int64_t first_regeneration(rng::Stream& st, int L, std::int64_t horizon,
                                std::vector<std::int8_t>* eps_out) {
  std::int64_t run = 0;
  for (std::int64_t j = 1; j <= horizon; ++j) {
    const double u = st.uniform();
    const std::int8_t v = u < 0.25 ? 1 : (u < 0.5 ? -1 : 0);
    if (eps_out) eps_out->push_back(v);
    if (v != 1 && run >= L) return j;
    run = (v == 1) ? run + 1 : 0;
  }
  return 0;
}

} // namespace

TauMomentEstimate tau_moments(int L, double p, std::int64_t n_samples, rng::Key key) {
  if (L < 1) throw ConfigError("tau_moments: L must be >= 1");
  if (p < 1.0) throw ConfigError("tau_moments: p must be >= 1");
  if (n_samples < 100) throw ConfigError("tau_moments: n_samples must be >= 100");
  const std::int64_t horizon = tau_safety_horizon(L);
  const double scale = std::pow(4.0, -L);

  double sum = 0.0, sumsq = 0.0;
  std::int64_t censored = 0, kept = 0;
  for (std::int64_t s = 0; s < n_samples; ++s) {
    rng::Stream st(key.child(static_cast<std::uint64_t>(s)));
    const std::int64_t tau = first_regeneration(st, L, horizon, nullptr);
    if (tau == 0) {
      ++censored;
      continue;
    }
    const double x = std::pow(scale * static_cast<double>(tau), p);
    sum += x;
    sumsq += x * x;
    ++kept;
  }
  TauMomentEstimate est;
  est.L = L;
  est.p = p;
  est.n_samples = n_samples;
  est.censored_frac = static_cast<double>(censored) / static_cast<double>(n_samples);
  if (kept == 0) throw NumericalError("tau_moments: all samples censored");
  const double n = static_cast<double>(kept);
  const double mean = sum / n;
  const double var = std::max(0.0, (sumsq - sum * sum / n) / std::max(1.0, n - 1.0));
  const double se_mean = std::sqrt(var / n);
  est.moment = std::pow(mean, 1.0 / p);
  // delta method for the p-th root
  est.se = se_mean * std::pow(mean, 1.0 / p - 1.0) / p;
  return est;
}

RegenerationTrace sample_trace(const walk::WalkModel& w, const field::FieldSpec& spec, double beta,
                               int L, double l, int n_layers, rng::Key key) {
  RegenerationTrace trace;
  trace.L = L;
  trace.l = l;
  trace.eps = sample_epsilon(n_layers, key.child(rng::tag::kEpsilon));
  trace.taus = regeneration_times(trace.eps, L, n_layers);
  const double scale = std::pow(4.0, -L);
  std::int64_t prev = 0;
  for (std::int64_t t : trace.taus) {
    trace.taus_scaled.push_back(scale * static_cast<double>(t - prev));
    prev = t;
  }
  trace.omega = field::sample_window(spec, field::reachable_window(w, n_layers), key);
  trace.eta = eta_field(trace.omega, trace.eps);
  trace.xi = xi_field(trace.omega, trace.eps, beta, l);
  return trace;
}

// ---------------------------------------------------------------------------
// H process

namespace {

struct BlockParams {
  bool bernoulli = false;
  double atime = 0.0; // AR coefficient; 0 for iid Gaussian
  double var = 1.0;   // marginal variance (Gaussian kinds)
  double bern_ml = 1.0;
  double beta = 0.0;
  double l = 0.0;
  double e_neg = 1.0; // e^{-beta l}
  int L = 1;
};

BlockParams make_block_params(const field::FieldSpec& spec, double beta, double l, int L) {
  BlockParams bp;
  bp.beta = beta;
  bp.l = l;
  bp.e_neg = std::exp(-beta * l);
  bp.L = L;
  switch (spec.kind) {
    case field::Kind::kIidBernoulli:
      bp.bernoulli = true;
      bp.bern_ml = (1.0 - spec.p) * std::exp(beta * std::max(spec.v0, -l)) +
                   spec.p * std::exp(beta * std::max(spec.v1, -l));
      break;
    case field::Kind::kIidGaussian:
      bp.atime = 0.0;
      bp.var = spec.sigma * spec.sigma;
      break;
    case field::Kind::kArTime:
      bp.atime = spec.a;
      bp.var = spec.sigma * spec.sigma;
      break;
    case field::Kind::kGffGaussian:
      throw NumericalError("H-process conditional corrections support iid and ar_time kinds");
  }
  return bp;
}

constexpr int kMaxGroupVisits = 16;

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

// Closed-form expectation of prod_i (2 e^{beta omega(l)_i} - e^{-beta l})
// over the (conditionally) Gaussian visits of one site. Offsets are times
// past the block start; the conditioning layer sits L+offset steps back.
// Single visits use the exact truncated-Gaussian moment; multi-visit groups
// drop the truncation (its weight is Phi(-l/s) per visit and multi-visit
// groups are rare for a transient walk).
double gaussian_group_factor(const BlockParams& bp, const std::vector<std::int64_t>& offs,
                             double cond_value, bool conditional) {
  const int q = static_cast<int>(offs.size());
  if (q > kMaxGroupVisits)
    throw NumericalError("H-process: site revisited more than " + std::to_string(kMaxGroupVisits) +
                         " times within one block");
  if (q == 1) {
    const double lag = static_cast<double>(offs[0] + bp.L);
    const double c = conditional ? std::pow(bp.atime, lag) : 0.0;
    const double mu = c * cond_value;
    const double s2 = conditional ? bp.var * (1.0 - c * c) : bp.var;
    const double s = std::sqrt(s2);
    // E[e^{b max(w,-l)}] = e^{b mu + b^2 s^2/2} Phi((mu + b s^2 + l)/s)
    //                      + e^{-b l} Phi((-l - mu)/s)
    const double b = bp.beta;
    const double m_trunc = std::exp(b * mu + 0.5 * b * b * s2) * normal_cdf((mu + b * s2 + bp.l) / s) +
                           bp.e_neg * normal_cdf((-bp.l - mu) / s);
    return 2.0 * m_trunc - bp.e_neg;
  }
  double mean[kMaxGroupVisits];
  double cov[kMaxGroupVisits][kMaxGroupVisits];
  for (int i = 0; i < q; ++i) {
    const double lag = static_cast<double>(offs[static_cast<std::size_t>(i)] + bp.L);
    const double ci = conditional ? std::pow(bp.atime, lag) : 0.0;
    mean[i] = conditional ? ci * cond_value : 0.0;
    for (int j = 0; j <= i; ++j) {
      const double lagj = static_cast<double>(offs[static_cast<std::size_t>(j)] + bp.L);
      const double cj = conditional ? std::pow(bp.atime, lagj) : 0.0;
      double c = bp.var * std::pow(bp.atime, static_cast<double>(std::llabs(
                               offs[static_cast<std::size_t>(i)] - offs[static_cast<std::size_t>(j)])));
      if (i == j && bp.atime == 0.0) c = bp.var; // 0^0 convention for iid
      if (conditional) c -= bp.var * ci * cj;
      cov[i][j] = c;
      cov[j][i] = c;
    }
  }
  double total = 0.0;
  const unsigned masks = 1u << q;
  for (unsigned m = 0; m < masks; ++m) {
    double smean = 0.0, squad = 0.0;
    int bits = 0;
    for (int i = 0; i < q; ++i) {
      if (!(m & (1u << i))) continue;
      ++bits;
      smean += mean[i];
      for (int j = 0; j < q; ++j)
        if (m & (1u << j)) squad += cov[i][j];
    }
    const double term = std::pow(2.0, bits) * std::pow(-bp.e_neg, q - bits) *
                        std::exp(bp.beta * smean + 0.5 * bp.beta * bp.beta * squad);
    total += term;
  }
  return total;
}

// One inner draw: epsilon continuation to the next regeneration plus a walk
// path over the block. Times are offsets 1..b past the block start.
struct BlockDraw {
  std::int64_t b = 0;                 // block length (0 = censored)
  std::vector<std::int8_t> eps;       // values at offsets 1..b
  std::vector<std::int64_t> path;     // positions, flat b x d
};

BlockDraw sample_block_draw(rng::Stream& st, const walk::WalkModel& w, int L, std::int64_t horizon) {
  BlockDraw draw;
  draw.b = first_regeneration(st, L, horizon, &draw.eps);
  if (draw.b == 0) return draw;
  draw.eps.resize(static_cast<std::size_t>(draw.b));
  draw.path.assign(static_cast<std::size_t>(draw.b) * w.d, 0);
  std::vector<std::int64_t> pos(static_cast<std::size_t>(w.d), 0);
  for (std::int64_t o = 1; o <= draw.b; ++o) {
    const auto& step = w.steps[static_cast<std::size_t>(walk::sample_step_index(w, st.uniform()))];
    for (int j = 0; j < w.d; ++j) {
      pos[static_cast<std::size_t>(j)] += step.offset[static_cast<std::size_t>(j)];
      draw.path[static_cast<std::size_t>(o - 1) * w.d + j] = pos[static_cast<std::size_t>(j)];
    }
  }
  return draw;
}

// log E_omega[block weight | conditioning layer] for one realized draw.
// cond_layer == nullptr gives the marginal weight; the same draw evaluated
// both ways makes the Delta estimator exactly zero for iid kinds.
double log_block_weight(const BlockParams& bp, const walk::WalkModel& w, const BlockDraw& draw,
                        const double* cond_layer, const lattice::LayerBox* box,
                        std::int64_t cond_radius) {
  const int d = w.d;
  std::int64_t n_pm = 0;
  // zero-offsets grouped by visited site (first-occurrence scan)
  std::vector<std::int64_t> zero_offs;
  zero_offs.reserve(static_cast<std::size_t>(draw.b));
  for (std::int64_t o = 1; o <= draw.b; ++o) {
    if (draw.eps[static_cast<std::size_t>(o - 1)] != 0) ++n_pm;
    else zero_offs.push_back(o);
  }
  double logw = -bp.beta * bp.l * static_cast<double>(n_pm);
  if (zero_offs.empty()) return logw;

  std::vector<bool> used(zero_offs.size(), false);
  std::vector<std::int64_t> group;
  for (std::size_t i = 0; i < zero_offs.size(); ++i) {
    if (used[i]) continue;
    const std::int64_t* zi = draw.path.data() + static_cast<std::size_t>(zero_offs[i] - 1) * d;
    group.clear();
    group.push_back(zero_offs[i]);
    for (std::size_t j = i + 1; j < zero_offs.size(); ++j) {
      if (used[j]) continue;
      const std::int64_t* zj = draw.path.data() + static_cast<std::size_t>(zero_offs[j] - 1) * d;
      if (std::equal(zi, zi + d, zj)) {
        group.push_back(zero_offs[j]);
        used[j] = true;
      }
    }
    double factor;
    if (bp.bernoulli) {
      factor = std::pow(2.0 * bp.bern_ml - bp.e_neg, static_cast<double>(group.size()));
    } else {
      double v = 0.0;
      bool conditional = cond_layer != nullptr;
      if (conditional) {
        std::int64_t l1 = 0;
        for (int j = 0; j < d; ++j) l1 += std::llabs(zi[j]);
        // Sites beyond the stored conditioning radius carry marginal mean 0.
        if (l1 <= cond_radius) v = cond_layer[box->index(zi)];
      }
      factor = gaussian_group_factor(bp, group, v, conditional);
    }
    if (!(factor > 0.0)) throw NumericalError("H-process: nonpositive block moment factor");
    logw += std::log(factor);
  }
  return logw;
}

struct ReplicaOut {
  bool ok = false;
  std::vector<double> h, l, delta; // h/l per n, delta per block j >= 1
};

} // namespace

MartingaleStats h_process(const walk::WalkModel& w, const field::FieldSpec& spec, double beta,
                          const HProcessParams& params, std::int64_t n_replicas, rng::Key key,
                          int workers) {
  spec.validate();
  if (beta < 0.0) throw ConfigError("h_process: beta must be >= 0");
  if (params.n_blocks < 1) throw ConfigError("h_process: n_blocks must be >= 1");
  if (params.n_inner < 10) throw ConfigError("h_process: n_inner too small");
  if (!(params.l > 0.0)) throw ConfigError("h_process: l must be > 0");
  const int L = params.L;
  if (L < 1) throw ConfigError("h_process: L must be >= 1");
  const int nb = params.n_blocks;

  MartingaleStats stats;
  stats.n_blocks = nb;
  stats.h_samples.resize(static_cast<std::size_t>(n_replicas));
  stats.l_samples.resize(static_cast<std::size_t>(n_replicas));
  stats.delta_samples.resize(static_cast<std::size_t>(n_replicas));

  std::int64_t horizon = params.horizon;
  if (horizon <= 0) {
    horizon = 24 * static_cast<std::int64_t>(nb);
    for (int i = 0; i < L; ++i) horizon *= 4;
  }

  // beta = 0: xi vanishes identically, every weight is 1.
  if (beta == 0.0) {
    stats.psi_log = 0.0;
    stats.n_replicas = n_replicas;
    for (std::int64_t r = 0; r < n_replicas; ++r) {
      stats.h_samples[static_cast<std::size_t>(r)].assign(static_cast<std::size_t>(nb), 1.0);
      stats.l_samples[static_cast<std::size_t>(r)].assign(static_cast<std::size_t>(nb), 1.0);
      stats.delta_samples[static_cast<std::size_t>(r)].assign(static_cast<std::size_t>(nb > 1 ? nb - 1 : 0), 0.0);
    }
  } else {
    const BlockParams bp = make_block_params(spec, beta, params.l, L);
    const std::int64_t safety = tau_safety_horizon(L);

    // Global psi estimate from a dedicated stream; shared by every replica.
    {
      const rng::Key psi_key = key.child(rng::tag::kPsi);
      double sum = 0.0;
      std::int64_t kept = 0;
      for (std::int64_t i = 0; i < params.n_psi; ++i) {
        rng::Stream st(psi_key.child(static_cast<std::uint64_t>(i)));
        const BlockDraw draw = sample_block_draw(st, w, L, safety);
        if (draw.b == 0) continue;
        sum += std::exp(log_block_weight(bp, w, draw, nullptr, nullptr, 0));
        ++kept;
      }
      if (kept == 0) throw NumericalError("h_process: psi estimation produced no blocks");
      stats.psi_log = std::log(sum / static_cast<double>(kept));
    }

    std::vector<ReplicaOut> outs(static_cast<std::size_t>(n_replicas));
    const rng::Key rep_base = key.child(rng::tag::kReplica);

    parallel_for(static_cast<std::size_t>(n_replicas), workers, [&](std::size_t r) {
      ReplicaOut& out = outs[r];
      const rng::Key rk = rep_base.child(static_cast<std::uint64_t>(r));
      std::vector<std::int8_t> epsvals;
      const auto taus = find_regenerations(rk.child(rng::tag::kEpsilon), L, horizon,
                                           nb, &epsvals);
      if (static_cast<int>(taus.size()) < nb) return; // insufficient regenerations

      const auto T = static_cast<int>(taus.back());
      const field::Window win = field::capped_window(w, T, params.slab_mult, params.slab_pad);
      const field::FieldSampler sampler(spec, win);
      auto src = sampler.source(rk);
      partition::LayerDP dp(w, win);
      std::vector<double> fieldbuf(dp.box().size, 0.0);

      // Layers needed for the conditional corrections: tau_j - L, j = 1..nb-1.
      std::vector<std::int64_t> cond_times;
      for (int j = 0; j + 1 < nb; ++j) cond_times.push_back(taus[static_cast<std::size_t>(j)] - L);
      std::vector<std::vector<double>> cond_layers(cond_times.size());
      std::vector<std::int64_t> cond_radii(cond_times.size(), 0);

      std::vector<double> logz(static_cast<std::size_t>(nb), 0.0);
      std::size_t next_tau = 0;
      const double e_neg = std::exp(-beta * params.l);
      for (int n = 1; n <= T; ++n) {
        dp.step_transfer();
        // Field layers are generated unconditionally so the AR chain state
        // advances even where xi is constant.
        src->fill_layer(n, fieldbuf.data(), dp.box());
        for (std::size_t ci = 0; ci < cond_times.size(); ++ci) {
          if (cond_times[ci] == n) { // snapshot raw omega before transforming
            cond_layers[ci] = fieldbuf;
            cond_radii[ci] = win.radius(n);
          }
        }
        const std::int8_t ev = epsvals[static_cast<std::size_t>(n - 1)];
        if (ev != 0) {
          dp.apply_log_constant(-beta * params.l);
        } else {
          const std::int64_t r = win.radius(n);
          lattice::for_each_ball_row(dp.box(), r, [&](const std::int64_t*, std::int64_t s, std::size_t base) {
            const std::int64_t hw = r - s;
            double* f = fieldbuf.data() + base - static_cast<std::size_t>(hw);
            const std::int64_t len = 2 * hw + 1;
            for (std::int64_t i = 0; i < len; ++i)
              f[i] = 2.0 * std::exp(beta * std::max(f[i], -params.l)) - e_neg;
          });
          dp.apply_factors(fieldbuf.data());
        }
        dp.maybe_rescale();
        if (next_tau < taus.size() && taus[next_tau] == n) {
          logz[next_tau] = dp.log_partition();
          ++next_tau;
        }
      }

      // Delta corrections via paired inner draws.
      std::vector<double> delta(static_cast<std::size_t>(nb > 1 ? nb - 1 : 0), 0.0);
      const rng::Key inner_base = rk.child(rng::tag::kInner);
      for (std::size_t j = 0; j < delta.size(); ++j) {
        double wc_sum = 0.0, wm_sum = 0.0;
        const rng::Key jk = inner_base.child(j + 1);
        for (std::int64_t i = 0; i < params.n_inner; ++i) {
          rng::Stream st(jk.child(static_cast<std::uint64_t>(i)));
          const BlockDraw draw = sample_block_draw(st, w, L, safety);
          if (draw.b == 0) continue;
          const double lwm = log_block_weight(bp, w, draw, nullptr, nullptr, 0);
          const double lwc = log_block_weight(bp, w, draw, cond_layers[j].data(), &dp.box(),
                                              cond_radii[j]);
          wm_sum += std::exp(lwm);
          wc_sum += std::exp(lwc);
        }
        if (!(wc_sum > 0.0 && wm_sum > 0.0))
          throw NumericalError("h_process: inner draws produced no usable blocks");
        delta[j] = std::log(wc_sum) - std::log(wm_sum);
      }

      out.h.resize(static_cast<std::size_t>(nb));
      out.l.resize(static_cast<std::size_t>(nb));
      out.delta = delta;
      double delta_acc = 0.0;
      for (int n = 1; n <= nb; ++n) {
        const double ll = logz[static_cast<std::size_t>(n - 1)] - n * stats.psi_log;
        out.l[static_cast<std::size_t>(n - 1)] = std::exp(ll);
        if (n >= 2) delta_acc += delta[static_cast<std::size_t>(n - 2)];
        out.h[static_cast<std::size_t>(n - 1)] = std::exp(ll + delta_acc);
      }
      out.ok = true;
    });

    std::int64_t done = 0;
    for (std::int64_t r = 0; r < n_replicas; ++r) {
      auto& out = outs[static_cast<std::size_t>(r)];
      if (!out.ok) {
        ++stats.n_failed;
        continue;
      }
      stats.h_samples[static_cast<std::size_t>(done)] = std::move(out.h);
      stats.l_samples[static_cast<std::size_t>(done)] = std::move(out.l);
      stats.delta_samples[static_cast<std::size_t>(done)] = std::move(out.delta);
      ++done;
    }
    stats.n_replicas = done;
    stats.h_samples.resize(static_cast<std::size_t>(done));
    stats.l_samples.resize(static_cast<std::size_t>(done));
    stats.delta_samples.resize(static_cast<std::size_t>(done));
    if (done == 0) throw NumericalError("insufficient regenerations: every replica hit the horizon");
  }

  // Aggregate moments per block count.
  const auto R = static_cast<double>(stats.n_replicas);
  stats.h_mean.assign(static_cast<std::size_t>(nb), 0.0);
  stats.h_se.assign(static_cast<std::size_t>(nb), 0.0);
  stats.h_second.assign(static_cast<std::size_t>(nb), 0.0);
  stats.h_second_se.assign(static_cast<std::size_t>(nb), 0.0);
  stats.l_mean.assign(static_cast<std::size_t>(nb), 0.0);
  stats.l_se.assign(static_cast<std::size_t>(nb), 0.0);
  stats.mean_abs_delta.assign(static_cast<std::size_t>(nb), 0.0);
  for (int n = 0; n < nb; ++n) {
    double sh = 0, shh = 0, s22 = 0, sl = 0, sll = 0, sd = 0;
    for (std::int64_t r = 0; r < stats.n_replicas; ++r) {
      const double h = stats.h_samples[static_cast<std::size_t>(r)][static_cast<std::size_t>(n)];
      const double lv = stats.l_samples[static_cast<std::size_t>(r)][static_cast<std::size_t>(n)];
      sh += h;
      shh += h * h;
      s22 += h * h * h * h;
      sl += lv;
      sll += lv * lv;
      if (n > 0) {
        double dsum = 0.0;
        for (int j = 0; j < n; ++j)
          dsum += std::abs(stats.delta_samples[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)]);
        sd += dsum / n;
      }
    }
    auto moments = [R](double s, double ss, double& mean, double& se) {
      mean = s / R;
      const double var = std::max(0.0, (ss - s * s / R) / std::max(1.0, R - 1.0));
      se = std::sqrt(var / R);
    };
    moments(sh, shh, stats.h_mean[static_cast<std::size_t>(n)], stats.h_se[static_cast<std::size_t>(n)]);
    moments(shh, s22, stats.h_second[static_cast<std::size_t>(n)], stats.h_second_se[static_cast<std::size_t>(n)]);
    moments(sl, sll, stats.l_mean[static_cast<std::size_t>(n)], stats.l_se[static_cast<std::size_t>(n)]);
    stats.mean_abs_delta[static_cast<std::size_t>(n)] = n > 0 ? sd / R : 0.0;
  }
  return stats;
}

} // namespace polymc::regeneration
