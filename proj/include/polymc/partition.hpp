#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "polymc/field.hpp"
#include "polymc/rng.hpp"
#include "polymc/walk.hpp"

namespace polymc::partition {

struct PolymerConfig {
  walk::WalkModel walk;
  double beta = 0.0;
  int n_layers = 1;        // N
  int rescale_cadence = 1; // rescale every k layers
};

struct EndpointWeight {
  std::vector<std::int64_t> z;
  double scaled = 0.0; // weight = scaled * exp(log_scale)
};

struct PartitionResult {
  double log_z = 0.0;
  std::vector<EndpointWeight> endpoint; // nonzero endpoint weights
  double endpoint_log_scale = 0.0;
  std::string method;       // "dp" | "enumeration"
  double max_layer_log = 0; // numerical notes: per-layer magnitude range
  double min_layer_log = 0; // before rescaling, in log scale
};

// Layer-by-layer forward recursion over the window's slab. The caller drives
// it one layer at a time:
//
//   LayerDP dp(walk, window);
//   for n = 1..N: dp.step_transfer(); dp.apply_exp_field(layer, beta);
//                 dp.maybe_rescale();
//
// Weights live in a dense cube of side 2*box_radius+1; only l1-ball segments
// are touched. Mass stepping outside the window's layer radius is dropped,
// which is exact when the window covers the reachable slab and a controlled
// truncation otherwise.
class LayerDP {
public:
  LayerDP(const walk::WalkModel& w, field::Window window, int rescale_cadence = 1);

  void step_transfer();                                      // advance to layer()+1
  void apply_exp_field(const double* field_layer, double beta); // w *= exp(beta*field)
  void apply_factors(const double* factors);                 // w *= factors (ball sites)
  void apply_log_constant(double c);                         // fold constant into offset
  void maybe_rescale();
  void rescale_now();

  int layer() const { return layer_; }
  double log_partition() const; // offset + log(sum of current layer)
  PartitionResult result() const;

  const lattice::LayerBox& box() const { return box_; }
  const double* weights() const { return cur_.data(); }
  double max_layer_log() const { return max_layer_log_; }
  double min_layer_log() const { return min_layer_log_; }

private:
  std::int64_t eff_radius(int n) const;

  walk::WalkModel walk_;
  field::Window window_;
  lattice::LayerBox box_;
  std::vector<double> cur_, next_;
  std::vector<std::int64_t> shifts_;      // per-step full linear shift
  std::vector<double> probs_;
  std::vector<std::vector<std::int64_t>> row_offsets_; // per-step first d-1 offsets
  std::vector<std::int64_t> last_offsets_;             // per-step last-coordinate offset
  int layer_ = 0;
  int cadence_ = 1;
  double offset_ = 0.0;
  double max_layer_log_;
  double min_layer_log_;
};

// Exact Z_N via the forward recursion. The sample window must cover the
// reachable slab; the first missing site is named otherwise.
PartitionResult quenched_partition_dp(const PolymerConfig& config, const field::FieldSample& sample);

// Streaming variant used by the estimators (field layers generated on the
// fly, nothing materialized).
PartitionResult quenched_partition_dp_streamed(const PolymerConfig& config,
                                               const field::Window& window,
                                               field::LayerSource& source);

// Adapter exposing a materialized sample as a streaming layer source.
class SampleSource final : public field::LayerSource {
public:
  explicit SampleSource(const field::FieldSample& sample) : s_(sample) {}
  void fill_layer(int n, double* dst, const lattice::LayerBox& box) override;

private:
  const field::FieldSample& s_;
};

// One DP pass recording log Z_n at every n in `snapshots` (ascending,
// snapshots.back() == config.n_layers).
std::vector<double> quenched_logz_snapshots(const PolymerConfig& config,
                                            const field::Window& window,
                                            field::LayerSource& source,
                                            const std::vector<int>& snapshots);

// Brute-force oracle over all |steps|^N paths, compensated summation.
PartitionResult quenched_partition_enum(const PolymerConfig& config, const field::FieldSample& sample,
                                        std::uint64_t cap = walk::kDefaultEnumerationCap);

enum class AnnealedMode { kAnalytic, kMc };

struct AnnealedEstimate {
  double log_mean_z = 0.0; // log E[Z_N] (exact in analytic mode)
  double se_log = 0.0;     // standard error on the log scale (mc only)
  double top1_mass = 0.0;  // fraction of the MC mass carried by the top 1% of samples
  bool heavy_tail_warning = false;
  int n_disorder = 0;
  std::string method; // "analytic" | "mc"
};

inline constexpr int kAnalyticAnnealedMaxN = 8;

// E[Z_N]: analytic mode enumerates paths and applies the exact per-path
// exponential moment (N <= 8); mc averages quenched Z_N over disorder.
AnnealedEstimate annealed_partition(const PolymerConfig& config, const field::FieldSpec& spec,
                                    AnnealedMode mode, std::int64_t n_disorder, rng::Key key);

// log E[(sum_k omega_{k,S_k}) e^{beta sum omega}] path-sum companion used for
// the exact annealed derivative at small N: returns the tilted numerator
// E E^S[(sum omega) I_N] (not logged) together with E[Z_N].
struct TiltedMoments {
  double mean_z = 0.0;      // E[Z_N]
  double mean_sum_z = 0.0;  // E E^S[(sum_k omega) I_N]
};
TiltedMoments annealed_tilted_moments(const PolymerConfig& config, const field::FieldSpec& spec);

struct EndpointProb {
  std::vector<std::int64_t> z;
  double p = 0.0;
};

// Normalized endpoint law of the polymer measure.
std::vector<EndpointProb> endpoint_distribution(const PolymerConfig& config,
                                                const field::FieldSample& sample);

} // namespace polymc::partition
