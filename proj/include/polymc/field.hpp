#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "polymc/lattice.hpp"
#include "polymc/rng.hpp"
#include "polymc/walk.hpp"

namespace polymc::field {

// A space-time site (n, z) with n >= 1 (time), z in Z^d.
struct Site {
  std::int64_t n = 0;
  std::vector<std::int64_t> z;
};

std::int64_t d1_distance(const Site& a, const Site& b); // |z-z'|_1 + |n-n'|

struct CorrelationParams {
  double C = 1.0;
  double g = 1.0;
};

enum class Kind { kIidGaussian, kIidBernoulli, kArTime, kGffGaussian };

const char* kind_name(Kind k);
Kind parse_kind(const std::string& name);

// Box in Z_+ x Z^d: times [t_lo..t_hi], space [-radius..radius]^d.
struct BoxSpec {
  std::int64_t t_lo = 0;
  std::int64_t t_hi = 0;
  std::int64_t space_radius = 0;
};

struct FieldSpec {
  Kind kind = Kind::kIidGaussian;
  int d = 3;
  double sigma = 1.0;          // iid_gaussian / ar_time marginal sd
  double p = 0.5;              // bernoulli P(omega = v1)
  double v0 = 0.0, v1 = 1.0;   // bernoulli values, v0 < v1
  double a = 0.5;              // ar_time coefficient in (0,1)
  BoxSpec gff_box;             // gff truncation box
  std::int64_t gff_margin = 4; // Dirichlet margin for the Green solve
  CorrelationParams corr;      // nominal (C, g); g = -log a for ar_time

  void validate() const;               // throws ConfigError
  bool gaussian() const { return kind != Kind::kIidBernoulli; }
  bool iid() const { return kind == Kind::kIidGaussian || kind == Kind::kIidBernoulli; }
  // Covariance of omega at two sites (Gaussian kinds; bernoulli uses its
  // two-point law directly and never calls this).
  double covariance(const Site& u, const Site& v) const;
  double marginal_variance() const;
  // Largest value attained with positive probability, or +inf.
  double ess_sup() const;
  double ess_sup_prob() const; // P(omega = ess sup), 0 for continuous kinds

  static FieldSpec iid_gaussian(double sigma, int d = 3);
  static FieldSpec iid_bernoulli(double p, double v0, double v1, int d = 3);
  static FieldSpec ar_time(double a, double sigma, int d = 3);
  static FieldSpec gff(BoxSpec box, std::int64_t margin, int d = 3);
};

// Per-layer l1-radius window on {1..N} x Z^d. Layer n (1-based) covers
// {|z|_1 <= radii[n-1]}.
struct Window {
  int d = 0;
  int n_layers = 0;
  std::vector<std::int64_t> radii;

  std::int64_t radius(int n) const { return radii[static_cast<std::size_t>(n - 1)]; }
  std::int64_t box_radius() const { return n_layers > 0 ? radii.back() : 0; }
  std::uint64_t site_count() const;
  bool covers(std::int64_t n, const std::int64_t* z) const;
};

// Window reaching every admissible polymer site: radius n * max_step_l1 at
// layer n.
Window reachable_window(const walk::WalkModel& w, int n_layers);
// Same, but radii capped at cap(n) = ceil(mult * sqrt(n)) + pad. Used when
// the full reachable slab is wastefully large; mass crossing the cap is
// dropped by the DP, which is only acceptable for estimators that tolerate
// a controlled relative truncation (see regeneration::HProcessParams).
Window capped_window(const walk::WalkModel& w, int n_layers, double mult, std::int64_t pad);

// One realized field window. Layer n is stored as a dense cube of side
// 2*radii[n-1]+1; entries outside the l1 ball are zero and never read.
struct FieldSample {
  FieldSpec spec;
  Window window;
  std::vector<std::vector<double>> layers;
  rng::Key seed;

  double at(std::int64_t n, const std::int64_t* z) const;
  double& mutable_at(std::int64_t n, const std::int64_t* z);
};

// Streaming per-replica access to field layers in DP box layout. fill_layer
// must be called with n = 1..N ascending, once each; it writes the l1-ball
// sites of layer n (other entries of dst are left untouched).
class LayerSource {
public:
  virtual ~LayerSource() = default;
  virtual void fill_layer(int n, double* dst, const lattice::LayerBox& box) = 0;
};

// Immutable sampler for (spec, window); safe to share across threads. The
// gff covariance factorization is computed once here.
class FieldSampler {
public:
  struct GffState; // covariance factorization shared across replicas

  FieldSampler(FieldSpec spec, Window window);
  ~FieldSampler();

  const FieldSpec& spec() const { return spec_; }
  const Window& window() const { return window_; }

  std::unique_ptr<LayerSource> source(rng::Key replica_key) const;
  FieldSample materialize(rng::Key replica_key) const;

private:
  FieldSpec spec_;
  Window window_;
  std::shared_ptr<const GffState> gff_;
};

// Spec operation wrappers.
FieldSample sample_window(const FieldSpec& spec, const Window& window, rng::Key key);
FieldSample truncate_field(const FieldSample& sample, double l); // pointwise max(omega, -l)

struct Weighted {
  Site site;
  double w = 0.0;
};

// E[exp(sum_v w_v omega_v)], exact. Gaussian kinds use exp(w' Sigma w / 2);
// bernoulli factorizes over sites. Throws NumericalError for unsupported
// kinds ("no analytic oracle").
double analytic_exp_moment(const FieldSpec& spec, const std::vector<Weighted>& weights);

// Dense covariance over an explicit site list. Gaussian kinds only; the gff
// kind runs one Green solve for the whole list.
Eigen::MatrixXd covariance_matrix(const FieldSpec& spec, const std::vector<Site>& sites);

struct KappaEstimate {
  double kappa = 1.0;          // max ratio over the family
  std::vector<double> ratios;  // per input set
};

// Ratio E[e^{b w_c + b sum_I w}] / (E[e^{b w_c}] E[e^{b sum_I w}]) maximized
// over a family of sets, each at d1 distance > 1 from the center. Analytic
// for Gaussian kinds, exactly 1 for iid kinds; mc_samples > 0 forces a Monte
// Carlo estimate instead.
KappaEstimate estimate_kappa(const FieldSpec& spec, double beta, const Site& center,
                             const std::vector<std::vector<Site>>& family,
                             std::int64_t mc_samples = 0, rng::Key key = {});

// --- Green function of the Dirichlet problem on Z_+ x Z^d ----------------

struct GreenTable {
  int d = 0;
  BoxSpec box;
  std::int64_t margin = 0;
  std::vector<Site> sites; // canonical (n, z lexicographic) order
  Eigen::MatrixXd G;       // symmetric, positive diagonal

  std::int64_t site_index(const Site& s) const; // -1 when absent
};

inline constexpr std::uint64_t kDefaultGreenDomainCap = 2'000'000;

// G(x,y) = expected visits to y of the simple random walk on Z_+ x Z^d
// started at x and killed on leaving the margin-enlarged box; equivalently
// (I - P) G = I on the enlarged domain, restricted back to the box.
GreenTable green_function(int d, BoxSpec box, std::int64_t margin,
                          std::uint64_t domain_cap = kDefaultGreenDomainCap);

// Same solve, restricted to an arbitrary site list (used by the gff sampler
// and the kappa/moment oracles).
Eigen::MatrixXd green_matrix_for_sites(int d, const std::vector<Site>& sites,
                                       std::int64_t margin,
                                       std::uint64_t domain_cap = kDefaultGreenDomainCap);

void save_green(const GreenTable& table, const std::string& path);
GreenTable load_green(const std::string& path);
std::string green_cache_name(int d, BoxSpec box, std::int64_t margin);

} // namespace polymc::field
