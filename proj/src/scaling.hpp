#pragma once

#include <functional>

#include "arch.hpp"
#include "latency.hpp"
#include "network.hpp"
#include "synth.hpp"

namespace s3nas {

// Width and depth share one coefficient to preserve the linear depth-width
// relationship; resolution scales independently.
struct ScalingCoefficients {
  double depth_width_coef = 1.0;
  double resolution_coef = 1.0;

  void validate() const;
};

using LatencyEstimator = std::function<double(const ConcreteArchitecture&)>;

LatencyEstimator table_estimator(const LatencyTable& table);
LatencyEstimator model_estimator(const CostModelParams& params, bool simulate = false,
                                 double se_reduction = 0.25);

struct ScaleReport {
  ConcreteArchitecture architecture;
  double estimated_latency_ms = 0.0;
  bool within_target = true;
  int resolution_rollbacks = 0;
  int depth_rollbacks = 0;
};

// Compound scaling: per stage new_depth = round(depth * coef) with added
// blocks replicating existing block types largest-parameter-count first;
// widths scale by the same coefficient and land on multiples of 16; the
// resolution scales and lands on a multiple of the total stride. When the
// estimate exceeds target_latency_ms (> 0), the resolution steps back first,
// then depth additions roll back in reverse order.
ScaleReport compound_scale(const ConcreteArchitecture& arch, const ScalingCoefficients& coefs,
                           const LatencyEstimator& estimator, double target_latency_ms);

// Parameter count of one block's convolutions (and SE, when enabled).
long long block_parameter_count(const ConcreteBlock& block, int input_width, int output_width,
                                double se_reduction = 0.25);

// Post-processing step one: SE on every block, h-swish everywhere.
ConcreteArchitecture add_se_hswish(const ConcreteArchitecture& arch);

// ---------------------------------------------------------------------------
// Selective SE removal.
// ---------------------------------------------------------------------------

struct SeDispersionReport {
  struct Row {
    int block_index = 0;
    double metric = 0.0;  // mean over channels of the cross-image std
    int channels = 0;
    int samples = 0;
  };
  std::vector<Row> rows;

  // CSV wire format: header `block_index,metric,channels,samples`.
  std::string to_csv() const;
  static SeDispersionReport from_csv(const std::string& text);
};

// Runs `samples` images through the network and measures, per SE block, the
// per-channel standard deviation of the excitation activations across
// images, averaged over channels. Requires trained weights in `net`.
SeDispersionReport se_dispersion(PlainNetwork& net, const SynthTaskSpec& synth, int samples,
                                 int batch_size);

// Streaming per-channel variance accumulator (order-independent merges).
class WelfordAccumulator {
 public:
  explicit WelfordAccumulator(int channels);
  void add(const double* values);
  void merge(const WelfordAccumulator& other);
  int count() const { return count_; }
  // Sample standard deviation per channel (count >= 2 required).
  std::vector<double> std_dev() const;
  double mean_std() const;

 private:
  int count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

// Disables SE on the (1 - keep_fraction) lowest-metric blocks; ties break
// toward removing the earlier block. Only se_enabled flags change.
ConcreteArchitecture remove_se(const ConcreteArchitecture& arch, const SeDispersionReport& report,
                               double keep_fraction);

}  // namespace s3nas
