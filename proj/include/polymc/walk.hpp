#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "polymc/rng.hpp"

namespace polymc::walk {

struct Step {
  std::vector<std::int64_t> offset; // size d
  double prob = 0.0;
};

// Finite-range reference walk on Z^d, d >= 3. Probabilities must be strictly
// positive and sum to 1 within 1e-12; offsets must be distinct.
struct WalkModel {
  int d = 0;
  std::vector<Step> steps;

  double p_min = 0.0;            // smallest step probability
  double entropy = 0.0;          // -sum p log p, nats
  std::int64_t max_step_l1 = 0;  // max l1 norm of an offset
  std::int64_t max_step_linf = 0;

  static WalkModel create(int d, std::vector<Step> steps);
  static WalkModel nn3d(); // nearest-neighbor walk on Z^3, 6 steps of 1/6

  bool degenerate() const { return steps.size() == 1; }
};

struct WalkConstants {
  double p_min;
  double entropy;  // H(S_1)
  double k_ratio;  // -log p_min / entropy
};

// Throws NumericalError for a degenerate (single-step) walk, whose entropy
// is zero and the ratio undefined.
WalkConstants walk_constants(const WalkModel& w);

// Path of n sites S_1..S_N starting from the origin, stored flat with
// stride d.
struct Path {
  int d = 0;
  int n_steps = 0;
  std::vector<std::int64_t> flat; // size d * n_steps

  const std::int64_t* site(int k) const { return flat.data() + static_cast<std::size_t>(k) * d; }
};

bool path_valid(const WalkModel& w, const Path& p);

inline constexpr std::uint64_t kDefaultEnumerationCap = 10'000'000;

// All |steps|^n paths with their probabilities. Throws ResourceCapError when
// the count exceeds the cap.
std::vector<std::pair<Path, double>> enumerate_paths(const WalkModel& w, int n_steps,
                                                     std::uint64_t cap = kDefaultEnumerationCap);

Path sample_path(const WalkModel& w, int n_steps, rng::Stream& stream);

// Samples one increment index from the step law.
int sample_step_index(const WalkModel& w, double u);

struct VisitSumEstimate {
  double mean = 0.0;       // MC estimate of sum_{n>=0} P(|Z_n|_1 <= r)
  double se = 0.0;
  double tail_estimate = 0.0; // geometric extrapolation beyond the horizon
  std::vector<double> counts; // per-run visit counts (when keep_counts)
};

// Visit statistics of the difference walk Z_n = S_n - S~_n over the l1-ball
// of radius r, truncated at `horizon` steps. Z_0 = 0 always counts.
VisitSumEstimate ball_visit_sum(const WalkModel& w, double r, std::int64_t horizon,
                                std::int64_t n_samples, rng::Key key,
                                bool keep_counts = false);

} // namespace polymc::walk
