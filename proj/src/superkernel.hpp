#pragma once

#include "arch.hpp"
#include "autodiff.hpp"

namespace s3nas {

// Graph handles produced by one searchable superkernel per step.
struct SuperkernelNodes {
  NodeId masked_weights = -1;  // (channels, k_max, k_max)
  std::vector<NodeId> F;       // kernel-size condition variables, one per candidate
  std::vector<NodeId> G;       // expansion condition variables, one per candidate
  NodeId gate_vector = -1;     // (channels,) expansion gate applied to branch outputs
  NodeId branch_on = -1;       // scalar, 1 iff the selected expansion is > 0
};

// The over-parameterized depthwise kernel: weights of the largest candidate
// kernel at the largest candidate expansion, plus one trainable threshold per
// non-minimal kernel size and per non-minimal expansion ratio. Nested shells
// are gated by hard indicators whose backward pass is the logistic
// relaxation, so gradients reach both the weights and the thresholds.
class SuperkernelModule {
 public:
  SuperkernelModule(ParameterStore& store, std::string prefix, SuperkernelSpec spec, int c_in);

  const SuperkernelSpec& spec() const { return spec_; }
  int input_width() const { return c_in_; }
  int channels() const;    // max_expansion * c_in
  int max_kernel() const { return spec_.max_kernel(); }
  int expansion_channels(double ratio) const;

  void init_weights(Rng& rng);
  // Sets every threshold to its shell's squared norm at the current weights,
  // so each indicator starts on the decision boundary.
  void sync_thresholds();

  // Threshold-gated masking (search mode).
  SuperkernelNodes build(Graph& g) const;
  // Forced decision (phase-1 sampling and equivalence oracles); thresholds do
  // not enter the graph.
  SuperkernelNodes build_forced(Graph& g, const BranchDecision& decision) const;

  // The hard decision currently encoded by the weights and thresholds.
  BranchDecision extract_decision() const;

  // Squared norms of the raw kernel ring shells (at full expansion), indexed
  // like kernel_sizes; entry 0 is the core.
  std::vector<double> kernel_shell_norms() const;
  // Squared norms of expansion shells of the kernel-masked weights under the
  // current kernel decision.
  std::vector<double> expansion_shell_norms() const;

  Parameter& weights() { return *weights_; }
  const Parameter& weights() const { return *weights_; }
  Parameter& kernel_thresholds() { return *t_kernel_; }
  Parameter& expansion_thresholds() { return *t_expansion_; }

  // Constant 0/1 masks over (channels, k_max, k_max).
  Tensor ring_mask(int kernel_index) const;
  Tensor expansion_mask(int expansion_index) const;
  // Combined mask selecting the (kernel, expansion) sub-kernel.
  Tensor decision_mask(const BranchDecision& decision) const;

 private:
  SuperkernelSpec spec_;
  int c_in_;
  Parameter* weights_ = nullptr;
  Parameter* t_kernel_ = nullptr;     // shape (K-1); empty dimension not allowed, so K=1 stores (1) unused? see ctor
  Parameter* t_expansion_ = nullptr;  // shape (E-1)
  bool has_kernel_thresholds_ = false;
  bool has_expansion_thresholds_ = false;
};

}  // namespace s3nas
