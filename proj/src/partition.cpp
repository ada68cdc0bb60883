#include "polymc/partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_map>

#include "polymc/errors.hpp"
#include "polymc/kernels.hpp"
#include "polymc/parallel.hpp"

namespace polymc::partition {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_config(const PolymerConfig& c) {
  if (c.beta < 0.0) throw ConfigError("beta must be >= 0");
  if (c.n_layers < 1) throw ConfigError("N must be >= 1");
  if (c.rescale_cadence < 1) throw ConfigError("rescale cadence must be >= 1");
}

} // namespace

LayerDP::LayerDP(const walk::WalkModel& w, field::Window window, int rescale_cadence)
    : walk_(w),
      window_(std::move(window)),
      box_(lattice::make_box(w.d, window_.box_radius())),
      cadence_(rescale_cadence),
      max_layer_log_(kNegInf),
      min_layer_log_(std::numeric_limits<double>::infinity()) {
  cur_.assign(box_.size, 0.0);
  next_.assign(box_.size, 0.0);
  cur_[box_.origin] = 1.0; // layer 0: delta at the origin
  const std::size_t k = walk_.steps.size();
  shifts_.resize(k);
  probs_.resize(k);
  row_offsets_.resize(k);
  last_offsets_.resize(k);
  for (std::size_t s = 0; s < k; ++s) {
    const auto& st = walk_.steps[s];
    std::int64_t shift = 0;
    for (int j = 0; j < walk_.d; ++j) shift += st.offset[static_cast<std::size_t>(j)] * box_.strides[static_cast<std::size_t>(j)];
    shifts_[s] = shift;
    probs_[s] = st.prob;
    row_offsets_[s].assign(st.offset.begin(), st.offset.end() - 1);
    last_offsets_[s] = st.offset.back();
  }
}

std::int64_t LayerDP::eff_radius(int n) const {
  if (n <= 0) return 0;
  const std::int64_t reachable = static_cast<std::int64_t>(n) * walk_.max_step_l1;
  return std::min(window_.radius(n), reachable);
}

void LayerDP::step_transfer() {
  const int n = layer_ + 1;
  if (n > window_.n_layers) throw NumericalError("LayerDP advanced past its window");
  const std::int64_t r_dst = eff_radius(n);
  const std::int64_t r_src = eff_radius(n - 1);
  const auto& K = kernels::active();
  const int d = walk_.d;
  const std::size_t nsteps = probs_.size();

  lattice::for_each_ball_row(box_, r_dst, [&](const std::int64_t* row, std::int64_t s_dst, std::size_t base) {
    const std::int64_t hw = r_dst - s_dst;
    double* dst = next_.data() + base - static_cast<std::size_t>(hw);
    K.fill(dst, 0.0, static_cast<std::size_t>(2 * hw + 1));
    for (std::size_t st = 0; st < nsteps; ++st) {
      std::int64_t s_src = 0;
      for (int j = 0; j < d - 1; ++j) s_src += std::llabs(row[j] - row_offsets_[st][static_cast<std::size_t>(j)]);
      if (s_src > r_src) continue;
      const std::int64_t dz = last_offsets_[st];
      const std::int64_t lo = std::max(-hw, dz - (r_src - s_src));
      const std::int64_t hi = std::min(hw, dz + (r_src - s_src));
      if (lo > hi) continue;
      double* out = next_.data() + static_cast<std::size_t>(static_cast<std::int64_t>(base) + lo);
      const double* in = cur_.data() + static_cast<std::size_t>(static_cast<std::int64_t>(base) + lo - shifts_[st]);
      K.axpy(out, in, probs_[st], static_cast<std::size_t>(hi - lo + 1));
    }
  });
  cur_.swap(next_);
  layer_ = n;
}

void LayerDP::apply_exp_field(const double* field_layer, double beta) {
  const std::int64_t r = eff_radius(layer_);
  lattice::for_each_ball_row(box_, r, [&](const std::int64_t*, std::int64_t s, std::size_t base) {
    const std::int64_t hw = r - s;
    double* w = cur_.data() + base - static_cast<std::size_t>(hw);
    const double* f = field_layer + base - static_cast<std::size_t>(hw);
    const std::int64_t len = 2 * hw + 1;
    for (std::int64_t i = 0; i < len; ++i) w[i] *= std::exp(beta * f[i]);
  });
}

void LayerDP::apply_factors(const double* factors) {
  const std::int64_t r = eff_radius(layer_);
  lattice::for_each_ball_row(box_, r, [&](const std::int64_t*, std::int64_t s, std::size_t base) {
    const std::int64_t hw = r - s;
    double* w = cur_.data() + base - static_cast<std::size_t>(hw);
    const double* f = factors + base - static_cast<std::size_t>(hw);
    const std::int64_t len = 2 * hw + 1;
    for (std::int64_t i = 0; i < len; ++i) w[i] *= f[i];
  });
}

void LayerDP::apply_log_constant(double c) { offset_ += c; }

void LayerDP::rescale_now() {
  const std::int64_t r = eff_radius(layer_);
  const auto& K = kernels::active();
  double m = kNegInf;
  lattice::for_each_ball_row(box_, r, [&](const std::int64_t*, std::int64_t s, std::size_t base) {
    const std::int64_t hw = r - s;
    const double seg = K.reduce_max(cur_.data() + base - static_cast<std::size_t>(hw),
                                    static_cast<std::size_t>(2 * hw + 1));
    m = seg > m ? seg : m;
  });
  if (!(m > 0.0)) throw NumericalError("layer weights vanished during DP rescaling");
  const double logm = std::log(m) + offset_;
  max_layer_log_ = std::max(max_layer_log_, logm);
  min_layer_log_ = std::min(min_layer_log_, logm);
  const double inv = 1.0 / m;
  lattice::for_each_ball_row(box_, r, [&](const std::int64_t*, std::int64_t s, std::size_t base) {
    const std::int64_t hw = r - s;
    K.scale(cur_.data() + base - static_cast<std::size_t>(hw), inv, static_cast<std::size_t>(2 * hw + 1));
  });
  offset_ += std::log(m);
}

void LayerDP::maybe_rescale() {
  if (layer_ % cadence_ == 0) rescale_now();
}

double LayerDP::log_partition() const {
  const std::int64_t r = eff_radius(layer_);
  const auto& K = kernels::active();
  double total = 0.0;
  lattice::for_each_ball_row(box_, r, [&](const std::int64_t*, std::int64_t s, std::size_t base) {
    const std::int64_t hw = r - s;
    total += K.reduce_sum(cur_.data() + base - static_cast<std::size_t>(hw),
                          static_cast<std::size_t>(2 * hw + 1));
  });
  if (!(total > 0.0)) throw NumericalError("partition sum vanished");
  return offset_ + std::log(total);
}

PartitionResult LayerDP::result() const {
  PartitionResult res;
  res.log_z = log_partition();
  res.method = "dp";
  res.endpoint_log_scale = offset_;
  res.max_layer_log = max_layer_log_;
  res.min_layer_log = min_layer_log_;
  const std::int64_t r = eff_radius(layer_);
  const int d = walk_.d;
  std::vector<std::int64_t> z(static_cast<std::size_t>(d));
  lattice::for_each_ball_row(box_, r, [&](const std::int64_t* row, std::int64_t s, std::size_t base) {
    for (int j = 0; j < d - 1; ++j) z[j] = row[j];
    const std::int64_t hw = r - s;
    for (std::int64_t c = -hw; c <= hw; ++c) {
      const double w = cur_[static_cast<std::size_t>(static_cast<std::int64_t>(base) + c)];
      if (w != 0.0) {
        z[d - 1] = c;
        EndpointWeight e;
        e.z.assign(z.begin(), z.end());
        e.scaled = w;
        res.endpoint.push_back(std::move(e));
      }
    }
  });
  return res;
}

namespace {

// The window must cover every site the walk can reach; names the first
// missing one otherwise.
void require_reachable_coverage(const PolymerConfig& config, const field::Window& win) {
  if (win.d != config.walk.d) throw NumericalError("window dimension mismatch");
  if (win.n_layers < config.n_layers)
    throw NumericalError("window missing site (n=" + std::to_string(win.n_layers + 1) + ", z=0,...): too few layers");
  for (int n = 1; n <= config.n_layers; ++n) {
    const std::int64_t need = static_cast<std::int64_t>(n) * config.walk.max_step_l1;
    if (win.radius(n) < need) {
      throw NumericalError("window missing site (n=" + std::to_string(n) + ", z=" +
                           std::to_string(win.radius(n) + 1) + ",0,...): layer radius " +
                           std::to_string(win.radius(n)) + " < reachable " + std::to_string(need));
    }
  }
}

} // namespace

PartitionResult quenched_partition_dp_streamed(const PolymerConfig& config,
                                               const field::Window& window,
                                               field::LayerSource& source) {
  check_config(config);
  LayerDP dp(config.walk, window, config.rescale_cadence);
  std::vector<double> layer(dp.box().size, 0.0);
  for (int n = 1; n <= config.n_layers; ++n) {
    dp.step_transfer();
    source.fill_layer(n, layer.data(), dp.box());
    if (config.beta != 0.0) dp.apply_exp_field(layer.data(), config.beta);
    dp.maybe_rescale();
  }
  PartitionResult res = dp.result();
  if (config.beta == 0.0) res.log_z = 0.0; // unit weights: Z_N = 1 identically
  return res;
}

void SampleSource::fill_layer(int n, double* dst, const lattice::LayerBox& box) {
  const std::int64_t r = s_.window.radius(n);
  const auto small = lattice::make_box(s_.window.d, r);
  const auto& layer = s_.layers[static_cast<std::size_t>(n - 1)];
  std::vector<std::int64_t> z(static_cast<std::size_t>(s_.window.d));
  lattice::for_each_ball_row(small, r, [&](const std::int64_t* row, std::int64_t sn, std::size_t base_small) {
    for (int j = 0; j < s_.window.d - 1; ++j) z[j] = row[j];
    z[s_.window.d - 1] = 0;
    const std::size_t base_big = box.index(z.data());
    const std::int64_t hw = r - sn;
    std::memcpy(dst + base_big - static_cast<std::size_t>(hw),
                layer.data() + base_small - static_cast<std::size_t>(hw),
                static_cast<std::size_t>(2 * hw + 1) * sizeof(double));
  });
}

PartitionResult quenched_partition_dp(const PolymerConfig& config, const field::FieldSample& sample) {
  check_config(config);
  require_reachable_coverage(config, sample.window);
  SampleSource src(sample);
  return quenched_partition_dp_streamed(config, sample.window, src);
}

std::vector<double> quenched_logz_snapshots(const PolymerConfig& config,
                                            const field::Window& window,
                                            field::LayerSource& source,
                                            const std::vector<int>& snapshots) {
  check_config(config);
  if (snapshots.empty() || snapshots.back() != config.n_layers)
    throw ConfigError("snapshots must be ascending and end at N");
  LayerDP dp(config.walk, window, config.rescale_cadence);
  std::vector<double> layer(dp.box().size, 0.0);
  std::vector<double> out;
  out.reserve(snapshots.size());
  std::size_t next = 0;
  for (int n = 1; n <= config.n_layers; ++n) {
    dp.step_transfer();
    source.fill_layer(n, layer.data(), dp.box());
    if (config.beta != 0.0) dp.apply_exp_field(layer.data(), config.beta);
    dp.maybe_rescale();
    if (next < snapshots.size() && snapshots[next] == n) {
      out.push_back(config.beta == 0.0 ? 0.0 : dp.log_partition());
      ++next;
    }
  }
  if (out.size() != snapshots.size()) throw ConfigError("snapshots must be ascending and end at N");
  return out;
}

PartitionResult quenched_partition_enum(const PolymerConfig& config, const field::FieldSample& sample,
                                        std::uint64_t cap) {
  check_config(config);
  require_reachable_coverage(config, sample.window);
  const auto paths = walk::enumerate_paths(config.walk, config.n_layers, cap);

  // Layer boxes hoisted out of the path loop: at() would rebuild them per call.
  std::vector<lattice::LayerBox> boxes;
  boxes.reserve(static_cast<std::size_t>(config.n_layers));
  for (int k = 1; k <= config.n_layers; ++k)
    boxes.push_back(lattice::make_box(config.walk.d, sample.window.radius(k)));

  // Two passes: max exponent first, then compensated sum of shifted terms.
  std::vector<double> expo(paths.size());
  double m = kNegInf;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    double acc = 0.0;
    for (int k = 1; k <= config.n_layers; ++k)
      acc += sample.layers[static_cast<std::size_t>(k - 1)]
                          [boxes[static_cast<std::size_t>(k - 1)].index(paths[i].first.site(k - 1))];
    expo[i] = config.beta * acc;
    m = std::max(m, expo[i]);
  }

  double sum = 0.0, comp = 0.0;
  std::unordered_map<std::uint64_t, std::pair<std::vector<std::int64_t>, double>> endpoints;
  const auto box = lattice::make_box(config.walk.d, static_cast<std::int64_t>(config.n_layers) * config.walk.max_step_l1);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const double term = paths[i].second * std::exp(expo[i] - m);
    const double y = term - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    const std::int64_t* end = paths[i].first.site(config.n_layers - 1);
    const std::uint64_t key = static_cast<std::uint64_t>(box.index(end));
    auto& slot = endpoints[key];
    if (slot.first.empty()) slot.first.assign(end, end + config.walk.d);
    slot.second += term;
  }

  PartitionResult res;
  res.method = "enumeration";
  res.log_z = config.beta == 0.0 ? 0.0 : m + std::log(sum);
  res.endpoint_log_scale = m;
  res.max_layer_log = m;
  res.min_layer_log = m;
  res.endpoint.reserve(endpoints.size());
  for (auto& [k, v] : endpoints) {
    (void)k;
    EndpointWeight e;
    e.z = std::move(v.first);
    e.scaled = v.second;
    res.endpoint.push_back(std::move(e));
  }
  // Canonical order for reproducibility.
  std::sort(res.endpoint.begin(), res.endpoint.end(),
            [](const EndpointWeight& a, const EndpointWeight& b) { return a.z < b.z; });
  return res;
}

namespace {

double path_weight_sum_covariance(const field::FieldSpec& spec, const walk::Path& path, int n) {
  // 1' C 1 over the path's site vector.
  double q = 0.0;
  field::Site u, v;
  u.z.resize(static_cast<std::size_t>(spec.d));
  v.z.resize(static_cast<std::size_t>(spec.d));
  for (int i = 1; i <= n; ++i) {
    u.n = i;
    const std::int64_t* zi = path.site(i - 1);
    u.z.assign(zi, zi + spec.d);
    for (int j = 1; j <= n; ++j) {
      v.n = j;
      const std::int64_t* zj = path.site(j - 1);
      v.z.assign(zj, zj + spec.d);
      q += spec.covariance(u, v);
    }
  }
  return q;
}

} // namespace

AnnealedEstimate annealed_partition(const PolymerConfig& config, const field::FieldSpec& spec,
                                    AnnealedMode mode, std::int64_t n_disorder, rng::Key key) {
  check_config(config);
  spec.validate();
  AnnealedEstimate est;

  if (mode == AnnealedMode::kAnalytic) {
    if (config.n_layers > kAnalyticAnnealedMaxN)
      throw ConfigError("annealed analytic mode is limited to N <= " + std::to_string(kAnalyticAnnealedMaxN));
    const auto paths = walk::enumerate_paths(config.walk, config.n_layers);
    double sum = 0.0, comp = 0.0;
    const double beta = config.beta;

    // gff needs the joint covariance over the whole window once.
    std::unique_ptr<Eigen::MatrixXd> cov;
    std::unordered_map<std::uint64_t, std::size_t> site_index;
    const auto box = lattice::make_box(config.walk.d,
                                       static_cast<std::int64_t>(config.n_layers) * config.walk.max_step_l1);
    std::vector<field::Site> sites;
    if (spec.kind == field::Kind::kGffGaussian) {
      const field::Window win = field::reachable_window(config.walk, config.n_layers);
      for (int n = 1; n <= win.n_layers; ++n) {
        const std::int64_t r = win.radius(n);
        const auto small = lattice::make_box(win.d, r);
        lattice::for_each_ball_row(small, r, [&](const std::int64_t* row, std::int64_t s, std::size_t) {
          const std::int64_t hw = r - s;
          for (std::int64_t c = -hw; c <= hw; ++c) {
            field::Site site;
            site.n = n;
            site.z.assign(static_cast<std::size_t>(win.d), 0);
            for (int j = 0; j < win.d - 1; ++j) site.z[static_cast<std::size_t>(j)] = row[j];
            site.z[static_cast<std::size_t>(win.d - 1)] = c;
            site_index[static_cast<std::uint64_t>(n) * box.size + box.index(site.z.data())] = sites.size();
            sites.push_back(std::move(site));
          }
        });
      }
      cov = std::make_unique<Eigen::MatrixXd>(field::covariance_matrix(spec, sites));
    }

    for (const auto& [path, prob] : paths) {
      double moment;
      if (spec.kind == field::Kind::kIidBernoulli) {
        const double m1 = (1.0 - spec.p) * std::exp(beta * spec.v0) + spec.p * std::exp(beta * spec.v1);
        moment = std::pow(m1, config.n_layers);
      } else if (spec.kind == field::Kind::kGffGaussian) {
        double q = 0.0;
        for (int i = 1; i <= config.n_layers; ++i) {
          const std::size_t ui = site_index.at(static_cast<std::uint64_t>(i) * box.size + box.index(path.site(i - 1)));
          for (int j = 1; j <= config.n_layers; ++j) {
            const std::size_t vj = site_index.at(static_cast<std::uint64_t>(j) * box.size + box.index(path.site(j - 1)));
            q += (*cov)(static_cast<Eigen::Index>(ui), static_cast<Eigen::Index>(vj));
          }
        }
        moment = std::exp(0.5 * beta * beta * q);
      } else {
        moment = std::exp(0.5 * beta * beta * path_weight_sum_covariance(spec, path, config.n_layers));
      }
      const double term = prob * moment;
      const double y = term - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    est.log_mean_z = std::log(sum);
    est.method = "analytic";
    est.n_disorder = 0;
    return est;
  }

  if (n_disorder < 2) throw ConfigError("annealed mc mode requires n_disorder >= 2");
  const field::Window win = field::reachable_window(config.walk, config.n_layers);
  const field::FieldSampler sampler(spec, win);
  std::vector<double> logs(static_cast<std::size_t>(n_disorder));
  for (std::int64_t i = 0; i < n_disorder; ++i) {
    auto src = sampler.source(key.child(static_cast<std::uint64_t>(i)));
    logs[static_cast<std::size_t>(i)] = quenched_partition_dp_streamed(config, win, *src).log_z;
  }
  const double m = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0, sumsq = 0.0;
  std::vector<double> shifted(logs.size());
  for (std::size_t i = 0; i < logs.size(); ++i) {
    shifted[i] = std::exp(logs[i] - m);
    sum += shifted[i];
    sumsq += shifted[i] * shifted[i];
  }
  const double R = static_cast<double>(n_disorder);
  const double mean = sum / R;
  const double var = std::max(0.0, (sumsq - sum * sum / R) / std::max(1.0, R - 1.0));
  est.log_mean_z = m + std::log(mean);
  est.se_log = std::sqrt(var / R) / mean;
  std::sort(shifted.begin(), shifted.end());
  const std::size_t top = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(R / 100.0)));
  double top_mass = 0.0;
  for (std::size_t i = shifted.size() - top; i < shifted.size(); ++i) top_mass += shifted[i];
  est.top1_mass = top_mass / sum;
  est.heavy_tail_warning = est.top1_mass > 0.5;
  est.n_disorder = static_cast<int>(n_disorder);
  est.method = "mc";
  return est;
}

TiltedMoments annealed_tilted_moments(const PolymerConfig& config, const field::FieldSpec& spec) {
  check_config(config);
  if (config.n_layers > kAnalyticAnnealedMaxN)
    throw ConfigError("annealed tilted moments limited to N <= " + std::to_string(kAnalyticAnnealedMaxN));
  if (spec.kind == field::Kind::kGffGaussian)
    throw ConfigError("annealed tilted moments: use finite differences for gff");
  const auto paths = walk::enumerate_paths(config.walk, config.n_layers);
  const double beta = config.beta;
  TiltedMoments out;
  for (const auto& [path, prob] : paths) {
    if (spec.kind == field::Kind::kIidBernoulli) {
      const double e0 = std::exp(beta * spec.v0), e1 = std::exp(beta * spec.v1);
      const double m1 = (1.0 - spec.p) * e0 + spec.p * e1;
      const double t1 = (1.0 - spec.p) * spec.v0 * e0 + spec.p * spec.v1 * e1;
      const double zN = std::pow(m1, config.n_layers);
      out.mean_z += prob * zN;
      out.mean_sum_z += prob * config.n_layers * (t1 / m1) * zN;
    } else {
      // Gaussian: E[(1'w) e^{b 1'w}] = (b 1'C1) exp(b^2 1'C1 / 2).
      const double q = path_weight_sum_covariance(spec, path, config.n_layers);
      const double zpath = std::exp(0.5 * beta * beta * q);
      out.mean_z += prob * zpath;
      out.mean_sum_z += prob * beta * q * zpath;
    }
  }
  return out;
}

std::vector<EndpointProb> endpoint_distribution(const PolymerConfig& config,
                                                const field::FieldSample& sample) {
  const PartitionResult res = quenched_partition_dp(config, sample);
  double total = 0.0;
  for (const auto& e : res.endpoint) total += e.scaled;
  std::vector<EndpointProb> out;
  out.reserve(res.endpoint.size());
  for (const auto& e : res.endpoint) out.push_back({e.z, e.scaled / total});
  return out;
}

} // namespace polymc::partition
