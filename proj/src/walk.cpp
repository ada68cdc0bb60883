#include "polymc/walk.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <string>

#include "polymc/errors.hpp"

namespace polymc::walk {

WalkModel WalkModel::create(int d, std::vector<Step> steps) {
  if (d < 3) throw ConfigError("transience required: d >= 3");
  if (steps.empty()) throw ConfigError("walk needs at least one step");
  double sum = 0.0;
  std::set<std::vector<std::int64_t>> seen;
  WalkModel w;
  w.d = d;
  w.p_min = 2.0;
  for (const auto& s : steps) {
    if (static_cast<int>(s.offset.size()) != d)
      throw ConfigError("walk step offset has wrong dimension (expected " + std::to_string(d) + ")");
    if (!(s.prob > 0.0)) throw ConfigError("walk step probabilities must be strictly positive");
    if (!seen.insert(s.offset).second) throw ConfigError("walk step offsets must be distinct");
    sum += s.prob;
    std::int64_t l1 = 0, linf = 0;
    for (std::int64_t c : s.offset) {
      l1 += std::llabs(c);
      linf = std::max<std::int64_t>(linf, std::llabs(c));
    }
    w.max_step_l1 = std::max(w.max_step_l1, l1);
    w.max_step_linf = std::max(w.max_step_linf, linf);
    w.p_min = std::min(w.p_min, s.prob);
    w.entropy -= s.prob * std::log(s.prob);
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw ConfigError("walk step probabilities sum to " + std::to_string(sum) + ", expected 1");
  if (w.entropy < 0.0) w.entropy = 0.0;
  w.steps = std::move(steps);
  return w;
}

WalkModel WalkModel::nn3d() {
  std::vector<Step> steps;
  for (int j = 0; j < 3; ++j) {
    for (int sgn : {+1, -1}) {
      Step s;
      s.offset.assign(3, 0);
      s.offset[j] = sgn;
      s.prob = 1.0 / 6.0;
      steps.push_back(std::move(s));
    }
  }
  return create(3, std::move(steps));
}

WalkConstants walk_constants(const WalkModel& w) {
  if (w.degenerate() || w.entropy <= 0.0)
    throw NumericalError("entropy zero, criterion undefined");
  return {w.p_min, w.entropy, -std::log(w.p_min) / w.entropy};
}

bool path_valid(const WalkModel& w, const Path& p) {
  if (p.d != w.d) return false;
  std::vector<std::int64_t> prev(static_cast<std::size_t>(w.d), 0);
  std::vector<std::int64_t> inc(static_cast<std::size_t>(w.d));
  for (int k = 0; k < p.n_steps; ++k) {
    const std::int64_t* site = p.site(k);
    for (int j = 0; j < w.d; ++j) inc[j] = site[j] - prev[j];
    bool found = false;
    for (const auto& s : w.steps) {
      if (std::equal(inc.begin(), inc.end(), s.offset.begin())) {
        found = true;
        break;
      }
    }
    if (!found) return false;
    for (int j = 0; j < w.d; ++j) prev[j] = site[j];
  }
  return true;
}

std::vector<std::pair<Path, double>> enumerate_paths(const WalkModel& w, int n_steps,
                                                     std::uint64_t cap) {
  if (n_steps < 0) throw ConfigError("n_steps must be >= 0");
  const std::uint64_t k = w.steps.size();
  std::uint64_t count = 1;
  for (int i = 0; i < n_steps; ++i) {
    if (count > cap / k) throw ResourceCapError("enumeration too large: |steps|^n exceeds cap");
    count *= k;
  }
  std::vector<std::pair<Path, double>> out;
  out.reserve(count);

  std::vector<int> choice(static_cast<std::size_t>(std::max(n_steps, 1)), 0);
  for (std::uint64_t idx = 0; idx < count; ++idx) {
    std::uint64_t rem = idx;
    for (int i = 0; i < n_steps; ++i) {
      choice[i] = static_cast<int>(rem % k);
      rem /= k;
    }
    Path p;
    p.d = w.d;
    p.n_steps = n_steps;
    p.flat.resize(static_cast<std::size_t>(w.d) * n_steps);
    double prob = 1.0;
    std::vector<std::int64_t> pos(static_cast<std::size_t>(w.d), 0);
    for (int i = 0; i < n_steps; ++i) {
      const Step& s = w.steps[static_cast<std::size_t>(choice[i])];
      prob *= s.prob;
      for (int j = 0; j < w.d; ++j) {
        pos[j] += s.offset[j];
        p.flat[static_cast<std::size_t>(i) * w.d + j] = pos[j];
      }
    }
    out.emplace_back(std::move(p), prob);
  }
  return out;
}

int sample_step_index(const WalkModel& w, double u) {
  double acc = 0.0;
  const int k = static_cast<int>(w.steps.size());
  for (int i = 0; i < k; ++i) {
    acc += w.steps[static_cast<std::size_t>(i)].prob;
    if (u < acc) return i;
  }
  return k - 1;
}

Path sample_path(const WalkModel& w, int n_steps, rng::Stream& stream) {
  if (n_steps < 0) throw ConfigError("n_steps must be >= 0");
  Path p;
  p.d = w.d;
  p.n_steps = n_steps;
  p.flat.resize(static_cast<std::size_t>(w.d) * n_steps);
  std::vector<std::int64_t> pos(static_cast<std::size_t>(w.d), 0);
  for (int i = 0; i < n_steps; ++i) {
    const Step& s = w.steps[static_cast<std::size_t>(sample_step_index(w, stream.uniform()))];
    for (int j = 0; j < w.d; ++j) {
      pos[j] += s.offset[j];
      p.flat[static_cast<std::size_t>(i) * w.d + j] = pos[j];
    }
  }
  return p;
}

VisitSumEstimate ball_visit_sum(const WalkModel& w, double r, std::int64_t horizon,
                                std::int64_t n_samples, rng::Key key, bool keep_counts) {
  if (w.d < 3) throw ConfigError("transience required: d >= 3");
  if (!(r > 0.0)) throw ConfigError("ball radius must be positive");
  if (horizon < 0 || n_samples < 1) throw ConfigError("ball_visit_sum: bad horizon/sample count");

  const int d = w.d;
  // Flattened per-step offsets for the inner loop.
  std::vector<std::int64_t> offs(w.steps.size() * static_cast<std::size_t>(d));
  for (std::size_t s = 0; s < w.steps.size(); ++s)
    for (int j = 0; j < d; ++j) offs[s * d + j] = w.steps[s].offset[j];

  const std::int64_t decile = horizon / 10;
  double sum = 0.0, sumsq = 0.0;
  double last_decile = 0.0, prev_decile = 0.0;
  VisitSumEstimate est;
  if (keep_counts) est.counts.reserve(static_cast<std::size_t>(n_samples));

  std::vector<std::int64_t> z(static_cast<std::size_t>(d));
  for (std::int64_t run = 0; run < n_samples; ++run) {
    rng::Stream stream(key.child(static_cast<std::uint64_t>(run)));
    std::fill(z.begin(), z.end(), 0);
    double visits = 1.0; // n = 0 term: Z_0 = 0 is inside every ball
    double tail1 = 0.0, tail2 = 0.0;
    for (std::int64_t n = 1; n <= horizon; ++n) {
      const int a = sample_step_index(w, stream.uniform());
      const int b = sample_step_index(w, stream.uniform());
      std::int64_t l1 = 0;
      for (int j = 0; j < d; ++j) {
        z[j] += offs[static_cast<std::size_t>(a) * d + j] - offs[static_cast<std::size_t>(b) * d + j];
        l1 += std::llabs(z[j]);
      }
      if (static_cast<double>(l1) <= r) {
        visits += 1.0;
        if (n > horizon - decile) tail1 += 1.0;
        else if (n > horizon - 2 * decile) tail2 += 1.0;
      }
    }
    sum += visits;
    sumsq += visits * visits;
    last_decile += tail1;
    prev_decile += tail2;
    if (keep_counts) est.counts.push_back(visits);
  }

  const double n = static_cast<double>(n_samples);
  est.mean = sum / n;
  const double var = std::max(0.0, (sumsq - sum * sum / n) / std::max(1.0, n - 1.0));
  est.se = std::sqrt(var / n);

  // Geometric extrapolation from the last two deciles of the horizon.
  const double v1 = last_decile / n;
  const double v0 = prev_decile / n;
  if (v1 > 0.0 && v0 > v1) {
    const double q = v1 / v0;
    est.tail_estimate = v1 * q / (1.0 - q);
  } else {
    est.tail_estimate = v1; // no decay resolved; report the raw decile mass
  }
  return est;
}

} // namespace polymc::walk
