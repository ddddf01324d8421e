#pragma once

#include <functional>

#include "config.hpp"
#include "latency.hpp"
#include "network.hpp"
#include "synth.hpp"

namespace s3nas {

// Per-superkernel sampling options: the skip decision once (when offered)
// plus every (kernel, positive expansion) pair.
std::vector<BranchDecision> superkernel_options(const SuperkernelSpec& spec);

// Uniform valid decision for a block: every superkernel samples its options
// uniformly; a joint all-zero draw on a block that cannot skip is redrawn.
Decision sample_block_decision(const BlockSpec& block, Rng& rng);

// Eq.-(8) estimated latency of one block: sum over decision vectors of the
// profiled latency of the canonicalized vector times the product of the
// condition variables. Exact under hard indicators; differentiable through
// the logistic relaxation.
NodeId differentiable_block_latency(Graph& g, const BlockSpec& block,
                                    const std::vector<SuperkernelNodes>& nodes,
                                    const LatencyTable& table, int block_index);

// Eq. (9): ce + lambda1 * ln(1 + lambda2 * relu(total_latency - T)).
NodeId latency_gated_loss(Graph& g, NodeId ce, NodeId total_latency, const SearchConfig& cfg);

// q-th percentile (0..1) of estimated latency over `samples` random valid
// architectures.
double latency_percentile(const SupernetSpec& supernet, const LatencyTable& table, double q,
                          int samples, std::uint64_t seed);

struct RepairStep {
  int block_index;
  std::string from;
  std::string to;
  double saved_ms;
};

struct SearchOutputs {
  ConcreteArchitecture architecture;
  double target_latency_ms = 0.0;
  double estimated_latency_ms = 0.0;
  bool feasible = false;
  std::vector<RepairStep> repairs;
  std::vector<int> promoted_blocks;
  double supernet_val_accuracy = 0.0;
  std::string metrics_csv;   // step,ce,latency_ms,gated_term,lr
  std::string summary_json;
};

// The two-phase Single-Path search over one supernet.
class SearchEngine {
 public:
  SearchEngine(SupernetSpec supernet, SynthTaskSpec synth, SearchConfig config,
               LatencyTable table);

  // Phase 1: per step every superkernel samples a config uniformly and the
  // supernet trains with cross entropy only; thresholds are bypassed.
  void phase1_train();
  // Phase 2: full masked forward with the gated latency loss; weights and
  // thresholds train together. Thresholds are re-synced to their shell norms
  // on entry so every indicator starts at its decision boundary.
  void phase2_train();
  // Extraction, feasibility check and greedy repair, metrics and summary.
  SearchOutputs finish();

  SearchOutputs run();

  SupernetModel& model() { return *model_; }
  double resolved_target() const { return target_ms_; }

 private:
  struct StepLog {
    int step;
    double ce;
    double latency_ms;
    double gated;
    double lr;
  };

  double lr_at(double epochs_done) const;
  double network_latency_of(const std::vector<Decision>& decisions) const;
  double validation_accuracy(const std::vector<Decision>& decisions);

  SupernetSpec supernet_;
  SynthTaskSpec synth_;
  SearchConfig config_;
  LatencyTable table_;
  std::unique_ptr<SupernetModel> model_;
  SgdOptimizer optimizer_;
  Rng rng_;
  SplitIndices split_;
  double target_ms_ = 0.0;
  int global_step_ = 0;
  double epochs_done_ = 0.0;
  std::vector<StepLog> log_;
  bool phase1_done_ = false;
  bool phase2_done_ = false;
};

// Greedy feasibility repair: repeatedly apply the single-superkernel
// downgrade with the best latency-saving per unit of dropped shell norm until
// the estimate reaches the target. Returns the repaired decisions.
std::vector<Decision> greedy_repair(const SupernetModel& model, std::vector<Decision> decisions,
                                    const LatencyTable& table, double target_ms,
                                    std::vector<RepairStep>* log);

// ---------------------------------------------------------------------------
// Plain-network training (random baselines, final evaluation).
// ---------------------------------------------------------------------------

struct TrainOptions {
  double epochs = 1.0;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double grad_clip = 10.0;
  bool cosine_decay = true;
  std::uint64_t seed = 1;
};

struct TrainResult {
  double val_accuracy = 0.0;
  double final_ce = 0.0;
};

TrainResult train_plain_network(PlainNetwork& net, const SynthTaskSpec& synth,
                                const TrainOptions& options);

double evaluate_plain_network(PlainNetwork& net, const SynthTaskSpec& synth,
                              const std::vector<int>& indices, int batch_size);

// ---------------------------------------------------------------------------
// Random baselines (Sec. 5.4.1 style).
// ---------------------------------------------------------------------------

struct BaselineCandidate {
  ConcreteArchitecture architecture;
  double latency_ms = 0.0;
  double val_accuracy = 0.0;
};

struct BaselineOutputs {
  BaselineCandidate best;
  std::vector<BaselineCandidate> candidates;
  std::string summary_json;
};

// Rejection-samples n_models canonical architectures with estimated latency
// in [band_low*T, T], trains each for the given epochs, and returns the
// highest-validation-accuracy candidate (ties: lowest latency, then
// lexicographic config order). `full` selects full_epochs (random selection)
// over proxy_epochs (random search).
BaselineOutputs random_search_baseline(const SupernetSpec& supernet, const SynthTaskSpec& synth,
                                       const LatencyTable& table, const SearchConfig& search,
                                       const BaselineConfig& baseline, double target_ms,
                                       bool full, const std::string& best_checkpoint_path = "");

// Uniform random architecture in the latency band; throws InfeasibleError
// after 1e5 rejected draws.
ConcreteArchitecture sample_architecture_in_band(const SupernetSpec& supernet,
                                                 const LatencyTable& table, double lo_ms,
                                                 double hi_ms, Rng& rng);

}  // namespace s3nas
