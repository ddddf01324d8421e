#pragma once

#include <optional>

#include "arch.hpp"
#include "autodiff.hpp"
#include "superkernel.hpp"

namespace s3nas {

// Batch-norm running-buffer updates are collected during a training forward
// and applied by the trainer after the step; forward itself stays pure.
struct BnPendingUpdate {
  Parameter* mean_buffer;
  Parameter* var_buffer;
  Tensor batch_mean;
  Tensor batch_var;
};

struct ForwardContext {
  Graph& graph;
  bool training = false;
  std::vector<BnPendingUpdate>* bn_updates = nullptr;
};

void apply_bn_updates(const std::vector<BnPendingUpdate>& updates, double momentum = 0.1);

class BnModule {
 public:
  BnModule(ParameterStore& store, const std::string& prefix, int channels);
  NodeId build(ForwardContext& ctx, NodeId x) const;
  Parameter& gamma() { return *gamma_; }
  Parameter& beta() { return *beta_; }
  Parameter& running_mean() { return *mean_; }
  Parameter& running_var() { return *var_; }
  const Parameter& gamma() const { return *gamma_; }
  const Parameter& beta() const { return *beta_; }
  const Parameter& running_mean() const { return *mean_; }
  const Parameter& running_var() const { return *var_; }

 private:
  Parameter* gamma_;
  Parameter* beta_;
  Parameter* mean_;
  Parameter* var_;
};

// Squeeze-and-excitation: global average pool, FC down to
// ceil(channels * reduction), ReLU, FC back up, logistic gate, channel-wise
// multiply.
class SeModule {
 public:
  SeModule(ParameterStore& store, const std::string& prefix, int channels, double reduction);
  void init_weights(Rng& rng);
  NodeId build(ForwardContext& ctx, NodeId x, NodeId* excitation = nullptr) const;
  int reduced_channels() const { return reduced_; }

 private:
  Parameter* w1_;
  Parameter* b1_;
  Parameter* w2_;
  Parameter* b2_;
  int channels_;
  int reduced_;
};

// ---------------------------------------------------------------------------
// Supernet model
// ---------------------------------------------------------------------------

struct BlockNodes {
  NodeId output = -1;
  std::vector<SuperkernelNodes> superkernels;  // empty for non-searchable paths
};

class SupernetBlockModule {
 public:
  SupernetBlockModule(ParameterStore& store, const std::string& prefix, BlockSpec spec);
  void init_weights(Rng& rng);
  void sync_thresholds();

  // forced == nullptr: threshold-gated masking. Otherwise the raw decision is
  // applied per superkernel with constant indicators.
  BlockNodes build(ForwardContext& ctx, NodeId x, const Decision* forced) const;

  Decision extract_decision() const;
  const BlockSpec& spec() const { return spec_; }
  std::vector<SuperkernelModule>& superkernels() { return superkernels_; }
  const std::vector<SuperkernelModule>& superkernels() const { return superkernels_; }
  int mid_channels() const;
  int branch_offset(int j) const;
  Parameter& expand_weights() { return *expand_w_; }
  Parameter& project_weights() { return *project_w_; }
  BnModule& expand_bn() { return expand_bn_; }
  BnModule& branch_bn(int j) { return branch_bns_[static_cast<std::size_t>(j)]; }
  BnModule& project_bn() { return project_bn_; }

 private:
  BlockSpec spec_;
  Parameter* expand_w_;
  BnModule expand_bn_;
  std::vector<SuperkernelModule> superkernels_;
  std::vector<BnModule> branch_bns_;
  Parameter* project_w_;
  BnModule project_bn_;
};

class SupernetModel {
 public:
  SupernetModel(SupernetSpec spec, std::uint64_t seed);

  struct ForwardResult {
    NodeId logits = -1;
    std::vector<BlockNodes> blocks;
  };
  ForwardResult forward(ForwardContext& ctx, NodeId images,
                        const std::vector<Decision>* forced = nullptr);

  const SupernetSpec& spec() const { return spec_; }
  ParameterStore& store() { return store_; }
  std::vector<SupernetBlockModule>& blocks() { return blocks_; }
  const std::vector<SupernetBlockModule>& blocks() const { return blocks_; }
  void sync_thresholds();

  std::vector<Decision> extract_raw() const;
  // Raw decisions with invalid states repaired: a block that cannot be a skip
  // connection but whose thresholds currently select all-zero is promoted to
  // the largest-norm superkernel at its smallest positive expansion; promoted
  // block indices are appended to *promoted when given.
  std::vector<Decision> extract_raw_valid(std::vector<int>* promoted = nullptr) const;
  std::vector<CanonicalConfig> extract_canonical(std::vector<int>* promoted = nullptr) const;

 private:
  SupernetSpec spec_;
  ParameterStore store_;
  Parameter* stem_w_;
  std::optional<BnModule> stem_bn_;
  std::vector<SupernetBlockModule> blocks_;
  Parameter* head_conv_w_;
  std::optional<BnModule> head_bn_;
  Parameter* head_fc_w_;
  Parameter* head_fc_b_;
};

// ---------------------------------------------------------------------------
// Concrete (plain) networks
// ---------------------------------------------------------------------------

class PlainBlockModule {
 public:
  PlainBlockModule(ParameterStore& store, const std::string& prefix, const ConcreteBlock& block,
                   int input_width, int output_width, int stride, Activation activation,
                   double se_reduction);
  void init_weights(Rng& rng);
  NodeId build(ForwardContext& ctx, NodeId x, NodeId* excitation = nullptr) const;

  bool has_se() const { return se_.has_value(); }
  const CanonicalConfig& config() const { return config_; }
  int mid_channels() const;
  int branch_offset(int b) const;
  Parameter& expand_weights() { return *expand_w_; }
  Parameter& project_weights() { return *project_w_; }
  Parameter& branch_weights(int b) { return *branch_ws_[static_cast<std::size_t>(b)]; }
  BnModule& expand_bn() { return *expand_bn_; }
  BnModule& branch_bn(int b) { return branch_bns_[static_cast<std::size_t>(b)]; }
  BnModule& project_bn() { return *project_bn_; }

 private:
  CanonicalConfig config_;
  int input_width_;
  int output_width_;
  int stride_;
  Activation activation_;
  Parameter* expand_w_ = nullptr;
  std::optional<BnModule> expand_bn_;
  std::vector<Parameter*> branch_ws_;
  std::vector<BnModule> branch_bns_;
  std::optional<SeModule> se_;
  Parameter* project_w_ = nullptr;
  std::optional<BnModule> project_bn_;
};

class PlainNetwork {
 public:
  PlainNetwork(ConcreteArchitecture arch, std::uint64_t seed, double se_reduction = 0.25);

  struct ForwardResult {
    NodeId logits = -1;
    // One excitation node (B, C) per SE-enabled block, in block order.
    std::vector<NodeId> excitations;
  };
  ForwardResult forward(ForwardContext& ctx, NodeId images);

  const ConcreteArchitecture& arch() const { return arch_; }
  ParameterStore& store() { return store_; }
  std::vector<PlainBlockModule>& blocks() { return blocks_; }

 private:
  ConcreteArchitecture arch_;
  ParameterStore store_;
  Parameter* stem_w_;
  std::optional<BnModule> stem_bn_;
  std::vector<PlainBlockModule> blocks_;
  Parameter* head_conv_w_;
  std::optional<BnModule> head_bn_;
  Parameter* head_fc_w_;
  Parameter* head_fc_b_;
};

// Builds the plain network realizing the raw per-superkernel decisions with
// every weight and batch-norm statistic copied from the matching slices of
// the supernet, so the two forwards compute the same function.
PlainNetwork materialize_from_supernet(SupernetModel& model,
                                       const std::vector<Decision>& raw_decisions);

}  // namespace s3nas
