#include "polymc/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>

#include "polymc/errors.hpp"
#include "polymc/kernels.hpp"

namespace polymc::field {

std::int64_t d1_distance(const Site& a, const Site& b) {
  std::int64_t dist = std::llabs(a.n - b.n);
  for (std::size_t j = 0; j < a.z.size(); ++j) dist += std::llabs(a.z[j] - b.z[j]);
  return dist;
}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kIidGaussian: return "iid_gaussian";
    case Kind::kIidBernoulli: return "iid_bernoulli";
    case Kind::kArTime: return "ar_time";
    case Kind::kGffGaussian: return "gff_gaussian";
  }
  return "?";
}

Kind parse_kind(const std::string& name) {
  if (name == "iid_gaussian") return Kind::kIidGaussian;
  if (name == "iid_bernoulli") return Kind::kIidBernoulli;
  if (name == "ar_time") return Kind::kArTime;
  if (name == "gff_gaussian") return Kind::kGffGaussian;
  throw ConfigError("field.kind: unknown kind '" + name + "'");
}

void FieldSpec::validate() const {
  if (d < 3) throw ConfigError("transience required: d >= 3");
  if (corr.C <= 0.0 || corr.g <= 0.0) throw ConfigError("field correlation params require C > 0, g > 0");
  switch (kind) {
    case Kind::kIidGaussian:
      if (!(sigma > 0.0)) throw ConfigError("field.sigma must be > 0");
      break;
    case Kind::kIidBernoulli:
      if (!(p > 0.0 && p < 1.0)) throw ConfigError("field.p must be in (0,1)");
      if (!(v0 < v1)) throw ConfigError("field.values must satisfy v0 < v1");
      break;
    case Kind::kArTime:
      if (!(sigma > 0.0)) throw ConfigError("field.sigma must be > 0");
      if (!(a > 0.0 && a < 1.0)) throw ConfigError("field.a must be in (0,1)");
      break;
    case Kind::kGffGaussian:
      if (gff_box.t_lo < 0 || gff_box.t_hi < gff_box.t_lo || gff_box.space_radius < 0)
        throw ConfigError("field.box must describe a box in Z_+ x Z^d");
      if (gff_margin < 0) throw ConfigError("field.margin must be >= 0");
      break;
  }
}

double FieldSpec::covariance(const Site& u, const Site& v) const {
  const bool same_z = std::equal(u.z.begin(), u.z.end(), v.z.begin());
  switch (kind) {
    case Kind::kIidGaussian:
      return (same_z && u.n == v.n) ? sigma * sigma : 0.0;
    case Kind::kIidBernoulli:
      return (same_z && u.n == v.n) ? p * (1.0 - p) * (v1 - v0) * (v1 - v0) : 0.0;
    case Kind::kArTime:
      return same_z ? sigma * sigma * std::pow(a, static_cast<double>(std::llabs(u.n - v.n))) : 0.0;
    case Kind::kGffGaussian:
      throw NumericalError("gff covariance requires a Green solve; use covariance_matrix");
  }
  return 0.0;
}

double FieldSpec::marginal_variance() const {
  switch (kind) {
    case Kind::kIidGaussian:
    case Kind::kArTime:
      return sigma * sigma;
    case Kind::kIidBernoulli:
      return p * (1.0 - p) * (v1 - v0) * (v1 - v0);
    case Kind::kGffGaussian:
      throw NumericalError("gff marginal variance is site-dependent; use covariance_matrix");
  }
  return 0.0;
}

double FieldSpec::ess_sup() const {
  if (kind == Kind::kIidBernoulli) return v1;
  return std::numeric_limits<double>::infinity();
}

double FieldSpec::ess_sup_prob() const {
  if (kind == Kind::kIidBernoulli) return p;
  return 0.0;
}

FieldSpec FieldSpec::iid_gaussian(double sigma, int d) {
  FieldSpec s;
  s.kind = Kind::kIidGaussian;
  s.d = d;
  s.sigma = sigma;
  s.validate();
  return s;
}

FieldSpec FieldSpec::iid_bernoulli(double p, double v0, double v1, int d) {
  FieldSpec s;
  s.kind = Kind::kIidBernoulli;
  s.d = d;
  s.p = p;
  s.v0 = v0;
  s.v1 = v1;
  s.validate();
  return s;
}

FieldSpec FieldSpec::ar_time(double a, double sigma, int d) {
  FieldSpec s;
  s.kind = Kind::kArTime;
  s.d = d;
  s.a = a;
  s.sigma = sigma;
  s.corr.g = -std::log(a);
  s.validate();
  return s;
}

FieldSpec FieldSpec::gff(BoxSpec box, std::int64_t margin, int d) {
  FieldSpec s;
  s.kind = Kind::kGffGaussian;
  s.d = d;
  s.gff_box = box;
  s.gff_margin = margin;
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Window

std::uint64_t Window::site_count() const {
  std::uint64_t total = 0;
  for (std::int64_t r : radii) total += lattice::l1_ball_count(d, r);
  return total;
}

bool Window::covers(std::int64_t n, const std::int64_t* z) const {
  if (n < 1 || n > n_layers) return false;
  std::int64_t l1 = 0;
  for (int j = 0; j < d; ++j) l1 += std::llabs(z[j]);
  return l1 <= radii[static_cast<std::size_t>(n - 1)];
}

Window reachable_window(const walk::WalkModel& w, int n_layers) {
  Window win;
  win.d = w.d;
  win.n_layers = n_layers;
  win.radii.resize(static_cast<std::size_t>(n_layers));
  for (int n = 1; n <= n_layers; ++n)
    win.radii[static_cast<std::size_t>(n - 1)] = static_cast<std::int64_t>(n) * w.max_step_l1;
  return win;
}

Window capped_window(const walk::WalkModel& w, int n_layers, double mult, std::int64_t pad) {
  Window win = reachable_window(w, n_layers);
  for (int n = 1; n <= n_layers; ++n) {
    const auto cap = static_cast<std::int64_t>(std::ceil(mult * std::sqrt(static_cast<double>(n)))) + pad;
    auto& r = win.radii[static_cast<std::size_t>(n - 1)];
    r = std::min(r, cap * w.max_step_l1);
  }
  return win;
}

// ---------------------------------------------------------------------------
// FieldSample

double FieldSample::at(std::int64_t n, const std::int64_t* z) const {
  if (!window.covers(n, z))
    throw NumericalError("field sample window does not cover requested site");
  const auto box = lattice::make_box(window.d, window.radius(static_cast<int>(n)));
  return layers[static_cast<std::size_t>(n - 1)][box.index(z)];
}

double& FieldSample::mutable_at(std::int64_t n, const std::int64_t* z) {
  if (!window.covers(n, z))
    throw NumericalError("field sample window does not cover requested site");
  const auto box = lattice::make_box(window.d, window.radius(static_cast<int>(n)));
  return layers[static_cast<std::size_t>(n - 1)][box.index(z)];
}

// ---------------------------------------------------------------------------
// Samplers

namespace {

// Draw keyed by the absolute site coordinates: values are independent of the
// window shape and of evaluation order.
inline double site_normal(rng::Key base, std::int64_t n, const std::int64_t* z, int d) {
  rng::Stream s(rng::site_key(base, n, z, d));
  return s.normal();
}

inline double site_uniform(rng::Key base, std::int64_t n, const std::int64_t* z, int d) {
  return rng::site_key(base, n, z, d).uniform_at(0);
}

class IidSource final : public LayerSource {
public:
  IidSource(const FieldSpec& spec, const Window& win, rng::Key key)
      : spec_(spec), win_(win), key_(key) {}

  void fill_layer(int n, double* dst, const lattice::LayerBox& box) override {
    const std::int64_t r = win_.radius(n);
    const int d = win_.d;
    std::vector<std::int64_t> z(static_cast<std::size_t>(d));
    const bool gaussian = spec_.kind == Kind::kIidGaussian;
    lattice::for_each_ball_row(box, r, [&](const std::int64_t* row, std::int64_t s, std::size_t base) {
      for (int j = 0; j < d - 1; ++j) z[j] = row[j];
      const std::int64_t hw = r - s;
      for (std::int64_t c = -hw; c <= hw; ++c) {
        z[d - 1] = c;
        double v;
        if (gaussian) {
          v = spec_.sigma * site_normal(key_, n, z.data(), d);
        } else {
          v = site_uniform(key_, n, z.data(), d) < spec_.p ? spec_.v1 : spec_.v0;
        }
        dst[static_cast<std::size_t>(static_cast<std::int64_t>(base) + c)] = v;
      }
    });
  }

private:
  FieldSpec spec_;
  Window win_;
  rng::Key key_;
};

class ArSource final : public LayerSource {
public:
  ArSource(const FieldSpec& spec, const Window& win, rng::Key key)
      : spec_(spec), win_(win), key_(key) {}

  void fill_layer(int n, double* dst, const lattice::LayerBox& box) override {
    const int d = win_.d;
    if (prev_.empty()) prev_.assign(box.size, 0.0);
    if (noise_.empty()) noise_.assign(static_cast<std::size_t>(2 * box.B + 1), 0.0);
    const std::int64_t r = win_.radius(n);
    const std::int64_t r_prev = n > 1 ? win_.radius(n - 1) : -1;
    const double a = spec_.a;
    const double innov = spec_.sigma * std::sqrt(1.0 - a * a);
    const auto& K = kernels::active();
    std::vector<std::int64_t> z(static_cast<std::size_t>(d));

    lattice::for_each_ball_row(box, r, [&](const std::int64_t* row, std::int64_t s, std::size_t base) {
      for (int j = 0; j < d - 1; ++j) z[j] = row[j];
      const std::int64_t hw = r - s;
      // Old sites continue the chain; sites entering the window start
      // stationary. Both consume exactly one keyed normal per site.
      const std::int64_t hw_old = (r_prev >= s) ? (r_prev - s) : -1;
      for (std::int64_t c = -hw; c <= hw; ++c) {
        z[d - 1] = c;
        const double g = site_normal(key_, n, z.data(), d);
        if (std::llabs(c) <= hw_old) {
          noise_[static_cast<std::size_t>(c + hw)] = g;
        } else {
          dst[static_cast<std::size_t>(static_cast<std::int64_t>(base) + c)] = spec_.sigma * g;
        }
      }
      if (hw_old >= 0) {
        double* out = dst + base - static_cast<std::size_t>(hw_old);
        const double* pv = prev_.data() + base - static_cast<std::size_t>(hw_old);
        const double* nz = noise_.data() + static_cast<std::size_t>(hw - hw_old);
        K.ar1_update(out, pv, nz, a, innov, static_cast<std::size_t>(2 * hw_old + 1));
      }
      // Keep the chain state for the next layer.
      std::memcpy(prev_.data() + base - static_cast<std::size_t>(hw),
                  dst + base - static_cast<std::size_t>(hw),
                  static_cast<std::size_t>(2 * hw + 1) * sizeof(double));
    });
  }

private:
  FieldSpec spec_;
  Window win_;
  rng::Key key_;
  std::vector<double> prev_;
  std::vector<double> noise_;
};

} // namespace

struct FieldSampler::GffState {
  std::vector<Site> sites;                    // canonical window order
  std::vector<std::size_t> layer_begin;       // first site index of each layer
  Eigen::MatrixXd chol;                       // lower Cholesky factor of Sigma
};

namespace {

class GffSource final : public LayerSource {
public:
  GffSource(const Window& win, std::shared_ptr<const FieldSampler::GffState> state, rng::Key key)
      : win_(win), state_(std::move(state)) {
    const auto n = static_cast<Eigen::Index>(state_->sites.size());
    Eigen::VectorXd g(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Site& s = state_->sites[static_cast<std::size_t>(i)];
      g[i] = site_normal(key, s.n, s.z.data(), win_.d);
    }
    values_ = state_->chol * g;
  }

  void fill_layer(int n, double* dst, const lattice::LayerBox& box) override {
    std::size_t i = state_->layer_begin[static_cast<std::size_t>(n - 1)];
    const std::size_t end = state_->layer_begin[static_cast<std::size_t>(n)];
    for (; i < end; ++i) {
      const Site& s = state_->sites[i];
      dst[box.index(s.z.data())] = values_[static_cast<Eigen::Index>(i)];
    }
  }

private:
  Window win_;
  std::shared_ptr<const FieldSampler::GffState> state_;
  Eigen::VectorXd values_;
};

std::vector<Site> window_sites(const Window& win, std::vector<std::size_t>* layer_begin) {
  std::vector<Site> sites;
  sites.reserve(win.site_count());
  if (layer_begin) layer_begin->assign(static_cast<std::size_t>(win.n_layers) + 1, 0);
  for (int n = 1; n <= win.n_layers; ++n) {
    if (layer_begin) (*layer_begin)[static_cast<std::size_t>(n - 1)] = sites.size();
    const std::int64_t r = win.radius(n);
    const auto box = lattice::make_box(win.d, r);
    lattice::for_each_ball_row(box, r, [&](const std::int64_t* row, std::int64_t s, std::size_t) {
      const std::int64_t hw = r - s;
      for (std::int64_t c = -hw; c <= hw; ++c) {
        Site site;
        site.n = n;
        site.z.assign(static_cast<std::size_t>(win.d), 0);
        for (int j = 0; j < win.d - 1; ++j) site.z[static_cast<std::size_t>(j)] = row[j];
        site.z[static_cast<std::size_t>(win.d - 1)] = c;
        sites.push_back(std::move(site));
      }
    });
  }
  if (layer_begin) (*layer_begin)[static_cast<std::size_t>(win.n_layers)] = sites.size();
  return sites;
}

Eigen::MatrixXd gaussian_covariance_or_throw(const FieldSpec& spec, const std::vector<Site>& sites);

} // namespace

FieldSampler::FieldSampler(FieldSpec spec, Window window)
    : spec_(std::move(spec)), window_(std::move(window)) {
  spec_.validate();
  if (spec_.kind != Kind::kGffGaussian) return;

  auto state = std::make_shared<GffState>();
  state->sites = window_sites(window_, &state->layer_begin);
  Eigen::MatrixXd cov = gaussian_covariance_or_throw(spec_, state->sites);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    const double min_ev = es.eigenvalues().minCoeff();
    throw NumericalError("covariance not positive semidefinite after truncation; min eigenvalue = " +
                         std::to_string(min_ev));
  }
  state->chol = llt.matrixL();
  gff_ = std::move(state);
}

FieldSampler::~FieldSampler() = default;

std::unique_ptr<LayerSource> FieldSampler::source(rng::Key replica_key) const {
  const rng::Key field_key = replica_key.child(rng::tag::kField);
  switch (spec_.kind) {
    case Kind::kIidGaussian:
    case Kind::kIidBernoulli:
      return std::make_unique<IidSource>(spec_, window_, field_key);
    case Kind::kArTime:
      return std::make_unique<ArSource>(spec_, window_, field_key);
    case Kind::kGffGaussian:
      return std::make_unique<GffSource>(window_, gff_, field_key);
  }
  return nullptr;
}

FieldSample FieldSampler::materialize(rng::Key replica_key) const {
  FieldSample sample;
  sample.spec = spec_;
  sample.window = window_;
  sample.seed = replica_key;
  sample.layers.resize(static_cast<std::size_t>(window_.n_layers));

  auto src = source(replica_key);
  const auto big = lattice::make_box(window_.d, window_.box_radius());
  std::vector<double> buf(big.size, 0.0);
  std::vector<std::int64_t> z(static_cast<std::size_t>(window_.d));
  for (int n = 1; n <= window_.n_layers; ++n) {
    src->fill_layer(n, buf.data(), big);
    const std::int64_t r = window_.radius(n);
    const auto small = lattice::make_box(window_.d, r);
    auto& layer = sample.layers[static_cast<std::size_t>(n - 1)];
    layer.assign(small.size, 0.0);
    lattice::for_each_ball_row(small, r, [&](const std::int64_t* row, std::int64_t s, std::size_t base_small) {
      for (int j = 0; j < window_.d - 1; ++j) z[j] = row[j];
      z[window_.d - 1] = 0;
      const std::size_t base_big = big.index(z.data());
      const std::int64_t hw = r - s;
      std::memcpy(layer.data() + base_small - static_cast<std::size_t>(hw),
                  buf.data() + base_big - static_cast<std::size_t>(hw),
                  static_cast<std::size_t>(2 * hw + 1) * sizeof(double));
    });
  }
  return sample;
}

FieldSample sample_window(const FieldSpec& spec, const Window& window, rng::Key key) {
  return FieldSampler(spec, window).materialize(key);
}

FieldSample truncate_field(const FieldSample& sample, double l) {
  if (!(l > 0.0)) throw ConfigError("truncation level l must be > 0");
  FieldSample out = sample;
  for (auto& layer : out.layers)
    for (double& v : layer) v = std::max(v, -l);
  return out;
}

// ---------------------------------------------------------------------------
// Analytic moments and kappa

namespace {

Eigen::MatrixXd gaussian_covariance_or_throw(const FieldSpec& spec, const std::vector<Site>& sites) {
  const auto n = static_cast<Eigen::Index>(sites.size());
  if (spec.kind == Kind::kGffGaussian) {
    Eigen::MatrixXd G = green_matrix_for_sites(spec.d, sites, spec.gff_margin);
    Eigen::MatrixXd cov(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double dist = static_cast<double>(
            d1_distance(sites[static_cast<std::size_t>(i)], sites[static_cast<std::size_t>(j)]));
        const double v = std::exp(-dist) * G(i, j);
        cov(i, j) = v;
        cov(j, i) = v;
      }
    return cov;
  }
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = spec.covariance(sites[static_cast<std::size_t>(i)], sites[static_cast<std::size_t>(j)]);
      cov(i, j) = v;
      cov(j, i) = v;
    }
  return cov;
}

} // namespace

Eigen::MatrixXd covariance_matrix(const FieldSpec& spec, const std::vector<Site>& sites) {
  return gaussian_covariance_or_throw(spec, sites);
}

double analytic_exp_moment(const FieldSpec& spec, const std::vector<Weighted>& weights) {
  if (weights.empty()) return 1.0;
  switch (spec.kind) {
    case Kind::kIidBernoulli: {
      // Coincident sites must be merged before factorizing.
      std::vector<Weighted> merged;
      for (const auto& w : weights) {
        bool found = false;
        for (auto& m : merged) {
          if (m.site.n == w.site.n && m.site.z == w.site.z) {
            m.w += w.w;
            found = true;
            break;
          }
        }
        if (!found) merged.push_back(w);
      }
      double prod = 1.0;
      for (const auto& m : merged)
        prod *= (1.0 - spec.p) * std::exp(m.w * spec.v0) + spec.p * std::exp(m.w * spec.v1);
      return prod;
    }
    case Kind::kIidGaussian: {
      double q = 0.0;
      for (std::size_t i = 0; i < weights.size(); ++i)
        for (std::size_t j = 0; j < weights.size(); ++j)
          q += weights[i].w * weights[j].w * spec.covariance(weights[i].site, weights[j].site);
      return std::exp(0.5 * q);
    }
    case Kind::kArTime: {
      double q = 0.0;
      for (std::size_t i = 0; i < weights.size(); ++i)
        for (std::size_t j = 0; j < weights.size(); ++j)
          q += weights[i].w * weights[j].w * spec.covariance(weights[i].site, weights[j].site);
      return std::exp(0.5 * q);
    }
    case Kind::kGffGaussian: {
      std::vector<Site> sites;
      sites.reserve(weights.size());
      for (const auto& w : weights) sites.push_back(w.site);
      const Eigen::MatrixXd cov = gaussian_covariance_or_throw(spec, sites);
      double q = 0.0;
      for (Eigen::Index i = 0; i < cov.rows(); ++i)
        for (Eigen::Index j = 0; j < cov.cols(); ++j)
          q += weights[static_cast<std::size_t>(i)].w * weights[static_cast<std::size_t>(j)].w * cov(i, j);
      return std::exp(0.5 * q);
    }
  }
  throw NumericalError("no analytic oracle for this field kind");
}

KappaEstimate estimate_kappa(const FieldSpec& spec, double beta, const Site& center,
                             const std::vector<std::vector<Site>>& family,
                             std::int64_t mc_samples, rng::Key key) {
  if (beta < 0.0) throw ConfigError("estimate_kappa requires beta >= 0");
  for (const auto& set : family) {
    for (const auto& s : set) {
      if (d1_distance(center, s) <= 1)
        throw ConfigError("cone-separated set violates d1(center, I) > 1");
    }
  }

  KappaEstimate out;
  out.ratios.reserve(family.size());
  for (const auto& set : family) {
    double ratio = 1.0;
    if (mc_samples > 0) {
      // Monte Carlo cross-check: draw the joint vector (center, I) from the
      // field law and average the exponentials.
      std::vector<Site> sites;
      sites.push_back(center);
      for (const auto& s : set) sites.push_back(s);
      double num = 0.0, den_c = 0.0, den_i = 0.0;
      if (spec.kind == Kind::kIidBernoulli) {
        rng::Stream stream(key.child(out.ratios.size() + 1));
        for (std::int64_t it = 0; it < mc_samples; ++it) {
          double sum_i = 0.0;
          const double wc = stream.uniform() < spec.p ? spec.v1 : spec.v0;
          for (std::size_t j = 1; j < sites.size(); ++j)
            sum_i += stream.uniform() < spec.p ? spec.v1 : spec.v0;
          num += std::exp(beta * wc + beta * sum_i);
          den_c += std::exp(beta * wc);
          den_i += std::exp(beta * sum_i);
        }
      } else {
        const Eigen::MatrixXd cov = gaussian_covariance_or_throw(spec, sites);
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success)
          throw NumericalError("kappa MC: covariance factorization failed");
        const Eigen::MatrixXd L = llt.matrixL();
        const auto nsites = static_cast<Eigen::Index>(sites.size());
        Eigen::VectorXd g(nsites);
        rng::Stream stream(key.child(out.ratios.size() + 1));
        for (std::int64_t it = 0; it < mc_samples; ++it) {
          for (Eigen::Index j = 0; j < nsites; ++j) g[j] = stream.normal();
          const Eigen::VectorXd vals = L * g;
          double sum_i = 0.0;
          for (Eigen::Index j = 1; j < nsites; ++j) sum_i += vals[j];
          num += std::exp(beta * vals[0] + beta * sum_i);
          den_c += std::exp(beta * vals[0]);
          den_i += std::exp(beta * sum_i);
        }
      }
      ratio = (num / static_cast<double>(mc_samples)) /
              ((den_c / static_cast<double>(mc_samples)) * (den_i / static_cast<double>(mc_samples)));
    } else if (spec.iid()) {
      ratio = 1.0; // independence factorizes exactly
    } else {
      // Gaussian MGF identity: ratio = exp(beta^2 * sum_I Cov(center, nu)).
      std::vector<Site> sites;
      sites.push_back(center);
      for (const auto& s : set) sites.push_back(s);
      const Eigen::MatrixXd cov = gaussian_covariance_or_throw(spec, sites);
      double cross = 0.0;
      for (Eigen::Index j = 1; j < cov.cols(); ++j) cross += cov(0, j);
      ratio = std::exp(beta * beta * cross);
    }
    out.ratios.push_back(ratio);
    out.kappa = std::max(out.kappa, ratio);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Green function

namespace {

// Killing domain: the d1-dilation of the requested sites by the margin,
// clipped to t >= 0. Much smaller than the bounding rectangle for slab-like
// site sets, with the same Dirichlet distance to the boundary.
struct Domain {
  int d;
  std::vector<Site> sites; // sorted (t, z lexicographic)

  std::int64_t index(const Site& s) const {
    const auto it = std::lower_bound(sites.begin(), sites.end(), s, site_less);
    if (it == sites.end() || it->n != s.n || it->z != s.z) return -1;
    return it - sites.begin();
  }

  static bool site_less(const Site& a, const Site& b) {
    if (a.n != b.n) return a.n < b.n;
    return a.z < b.z;
  }
};

Domain make_domain(int d, const std::vector<Site>& seeds, std::int64_t margin, std::uint64_t cap) {
  Domain dom;
  dom.d = d;
  std::vector<Site> frontier = seeds;
  std::sort(frontier.begin(), frontier.end(), Domain::site_less);
  frontier.erase(std::unique(frontier.begin(), frontier.end(),
                             [](const Site& a, const Site& b) { return a.n == b.n && a.z == b.z; }),
                 frontier.end());
  dom.sites = frontier;
  for (std::int64_t round = 0; round < margin; ++round) {
    std::vector<Site> next;
    for (const auto& s : frontier) {
      auto push = [&](Site t) {
        if (t.n < 0) return;
        next.push_back(std::move(t));
      };
      Site t = s;
      t.n = s.n - 1;
      push(t);
      t.n = s.n + 1;
      push(t);
      t.n = s.n;
      for (int j = 0; j < d; ++j) {
        for (int sgn : {-1, +1}) {
          t.z[static_cast<std::size_t>(j)] += sgn;
          push(t);
          t.z[static_cast<std::size_t>(j)] -= sgn;
        }
      }
    }
    std::sort(next.begin(), next.end(), Domain::site_less);
    next.erase(std::unique(next.begin(), next.end(),
                           [](const Site& a, const Site& b) { return a.n == b.n && a.z == b.z; }),
               next.end());
    std::vector<Site> fresh;
    for (auto& s : next)
      if (dom.index(s) < 0) fresh.push_back(std::move(s));
    std::vector<Site> merged;
    merged.reserve(dom.sites.size() + fresh.size());
    std::merge(dom.sites.begin(), dom.sites.end(), fresh.begin(), fresh.end(),
               std::back_inserter(merged), Domain::site_less);
    dom.sites = std::move(merged);
    frontier = std::move(fresh);
    if (dom.sites.size() > cap)
      throw ResourceCapError("green solve domain exceeds memory cap (" +
                             std::to_string(dom.sites.size()) + " sites > " + std::to_string(cap) + ")");
  }
  return dom;
}

// Below this size the exact factorization wins; above it, preconditioned CG
// avoids the 4D fill-in blowup.
constexpr std::size_t kDirectSolveLimit = 16000;

Eigen::SparseMatrix<double> build_matrix(const Domain& dom) {
  const int d = dom.d;
  const double pstep = 1.0 / (2.0 * (d + 1));
  const auto n = static_cast<Eigen::Index>(dom.sites.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(dom.sites.size() * static_cast<std::size_t>(2 * d + 3));
  for (std::size_t i = 0; i < dom.sites.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    trip.emplace_back(row, row, 1.0);
    Site t = dom.sites[i];
    auto link = [&](const Site& s) {
      const std::int64_t j = dom.index(s);
      if (j >= 0) trip.emplace_back(row, static_cast<Eigen::Index>(j), -pstep);
    };
    t.n -= 1;
    if (t.n >= 0) link(t);
    t.n += 2;
    link(t);
    t.n -= 1;
    for (int j = 0; j < d; ++j) {
      for (int sgn : {-1, +1}) {
        t.z[static_cast<std::size_t>(j)] += sgn;
        link(t);
        t.z[static_cast<std::size_t>(j)] -= sgn;
      }
    }
  }
  Eigen::SparseMatrix<double> M(n, n);
  M.setFromTriplets(trip.begin(), trip.end());
  return M;
}

Eigen::MatrixXd solve_green(const Domain& dom, const std::vector<Site>& sites) {
  const Eigen::SparseMatrix<double> M = build_matrix(dom);
  const auto m = static_cast<Eigen::Index>(sites.size());
  std::vector<Eigen::Index> rows(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) {
    const std::int64_t r = dom.index(sites[i]);
    if (r < 0) throw NumericalError("green solve: requested site outside domain");
    rows[i] = static_cast<Eigen::Index>(r);
  }

  Eigen::MatrixXd G(m, m);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(M.rows());

  if (dom.sites.size() <= kDirectSolveLimit) {
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    solver.compute(M);
    if (solver.info() != Eigen::Success) {
      double min_d = std::numeric_limits<double>::infinity(), max_d = 0.0;
      if (solver.vectorD().size() > 0) {
        min_d = solver.vectorD().minCoeff();
        max_d = solver.vectorD().maxCoeff();
      }
      throw NumericalError("green solve failed: factorization not successful (diag range [" +
                           std::to_string(min_d) + ", " + std::to_string(max_d) + "])");
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      rhs[rows[static_cast<std::size_t>(j)]] = 1.0;
      const Eigen::VectorXd x = solver.solve(rhs);
      rhs[rows[static_cast<std::size_t>(j)]] = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) G(i, j) = x[rows[static_cast<std::size_t>(i)]];
    }
  } else {
    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                             Eigen::IncompleteCholesky<double>>
        solver;
    solver.setTolerance(1e-12);
    solver.setMaxIterations(20000);
    solver.compute(M);
    if (solver.info() != Eigen::Success)
      throw NumericalError("green solve failed: CG preconditioner setup unsuccessful");
    for (Eigen::Index j = 0; j < m; ++j) {
      rhs[rows[static_cast<std::size_t>(j)]] = 1.0;
      const Eigen::VectorXd x = solver.solve(rhs);
      if (solver.info() != Eigen::Success)
        throw NumericalError("green solve failed: CG did not converge (error " +
                             std::to_string(solver.error()) + ")");
      rhs[rows[static_cast<std::size_t>(j)]] = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) G(i, j) = x[rows[static_cast<std::size_t>(i)]];
    }
  }
  // The operator is symmetric; make the table exactly so.
  G = ((G + G.transpose()) * 0.5).eval();
  return G;
}

} // namespace

std::int64_t GreenTable::site_index(const Site& s) const {
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (sites[i].n == s.n && sites[i].z == s.z) return static_cast<std::int64_t>(i);
  }
  return -1;
}

GreenTable green_function(int d, BoxSpec box, std::int64_t margin, std::uint64_t domain_cap) {
  if (d < 1) throw ConfigError("green_function: d must be >= 1");
  if (box.t_lo < 0 || box.t_hi < box.t_lo || box.space_radius < 0)
    throw ConfigError("green_function: invalid box");
  GreenTable table;
  table.d = d;
  table.box = box;
  table.margin = margin;
  // Canonical enumeration of the box sites: time ascending, space lexicographic.
  std::vector<std::int64_t> z(static_cast<std::size_t>(d));
  for (std::int64_t t = box.t_lo; t <= box.t_hi; ++t) {
    std::fill(z.begin(), z.end(), -box.space_radius);
    for (;;) {
      Site s;
      s.n = t;
      s.z.assign(z.begin(), z.end());
      table.sites.push_back(std::move(s));
      int j = d - 1;
      for (; j >= 0; --j) {
        if (z[j] < box.space_radius) {
          ++z[j];
          std::fill(z.begin() + j + 1, z.end(), -box.space_radius);
          break;
        }
      }
      if (j < 0) break;
    }
  }
  const Domain dom = make_domain(d, table.sites, margin, domain_cap);
  table.G = solve_green(dom, table.sites);
  return table;
}

Eigen::MatrixXd green_matrix_for_sites(int d, const std::vector<Site>& sites, std::int64_t margin,
                                       std::uint64_t domain_cap) {
  if (sites.empty()) return Eigen::MatrixXd(0, 0);
  const Domain dom = make_domain(d, sites, margin, domain_cap);
  return solve_green(dom, sites);
}

// ---------------------------------------------------------------------------
// Green cache (binary, versioned, keyed by (d, box, margin))

namespace {
constexpr std::uint32_t kGreenMagic = 0x544D4750; // "PGMT"
constexpr std::uint32_t kGreenVersion = 1;
} // namespace

std::string green_cache_name(int d, BoxSpec box, std::int64_t margin) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "green_d%d_t%lld-%lld_r%lld_m%lld.bin", d,
                static_cast<long long>(box.t_lo), static_cast<long long>(box.t_hi),
                static_cast<long long>(box.space_radius), static_cast<long long>(margin));
  return buf;
}

void save_green(const GreenTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NumericalError("cannot open green cache for writing: " + path);
  auto put = [&out](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  put(&kGreenMagic, 4);
  put(&kGreenVersion, 4);
  const std::int64_t hdr[5] = {table.d, table.box.t_lo, table.box.t_hi, table.box.space_radius, table.margin};
  put(hdr, sizeof hdr);
  const std::uint64_t n = table.sites.size();
  put(&n, 8);
  put(table.G.data(), sizeof(double) * n * n);
}

GreenTable load_green(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericalError("cannot open green cache: " + path);
  auto get = [&in](void* p, std::size_t n) { in.read(static_cast<char*>(p), static_cast<std::streamsize>(n)); };
  std::uint32_t magic = 0, version = 0;
  get(&magic, 4);
  get(&version, 4);
  if (magic != kGreenMagic || version != kGreenVersion)
    throw NumericalError("green cache has wrong magic/version: " + path);
  std::int64_t hdr[5];
  get(hdr, sizeof hdr);
  GreenTable table;
  table.d = static_cast<int>(hdr[0]);
  table.box = BoxSpec{hdr[1], hdr[2], hdr[3]};
  table.margin = hdr[4];
  std::uint64_t n = 0;
  get(&n, 8);
  GreenTable fresh;
  // Rebuild the canonical site list from the header key.
  fresh = table;
  std::vector<std::int64_t> z(static_cast<std::size_t>(table.d));
  for (std::int64_t t = table.box.t_lo; t <= table.box.t_hi; ++t) {
    std::fill(z.begin(), z.end(), -table.box.space_radius);
    for (;;) {
      Site s;
      s.n = t;
      s.z.assign(z.begin(), z.end());
      fresh.sites.push_back(std::move(s));
      int j = table.d - 1;
      for (; j >= 0; --j) {
        if (z[j] < table.box.space_radius) {
          ++z[j];
          std::fill(z.begin() + j + 1, z.end(), -table.box.space_radius);
          break;
        }
      }
      if (j < 0) break;
    }
  }
  if (fresh.sites.size() != n) throw NumericalError("green cache size mismatch: " + path);
  fresh.G.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  get(fresh.G.data(), sizeof(double) * n * n);
  if (!in) throw NumericalError("green cache truncated: " + path);
  return fresh;
}

} // namespace polymc::field
