#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace s3nas {

// ---------------------------------------------------------------------------
// Search-space types. Immutable after construction; validate() throws
// InvariantError on malformed specs.
// ---------------------------------------------------------------------------

struct SuperkernelSpec {
  std::vector<int> kernel_sizes;         // odd, strictly increasing, >= 1
  std::vector<double> expansion_ratios;  // non-negative, strictly increasing

  void validate() const;
  int max_kernel() const { return kernel_sizes.back(); }
  double max_expansion() const { return expansion_ratios.back(); }
  bool allows_skip() const { return !expansion_ratios.empty() && expansion_ratios.front() == 0.0; }
};

enum class BlockKind { MixconvMbconv, FusedConv };

std::string to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& s);

struct BlockSpec {
  std::vector<SuperkernelSpec> superkernels;  // N >= 1
  int input_width = 0;
  int output_width = 0;
  int stride = 1;  // 1 or 2
  BlockKind kind = BlockKind::MixconvMbconv;

  void validate() const;
  int branch_count() const { return static_cast<int>(superkernels.size()); }
  // A block may collapse to a plain skip connection only when the residual
  // path exists.
  bool can_skip() const { return stride == 1 && input_width == output_width; }
};

struct StageSpec {
  int width = 0;
  int depth = 0;
  int stride = 1;  // stride of the first block
  std::vector<BlockSpec> blocks;

  void validate() const;
};

struct StemSpec {
  int kernel = 7;
  int stride = 2;
  int width = 32;
};

struct HeadSpec {
  int feature_width = 1280;
  int num_classes = 1000;
};

struct SupernetSpec {
  StemSpec stem;
  std::vector<StageSpec> stages;
  HeadSpec head;
  int input_resolution = 224;
  int input_channels = 3;

  void validate() const;
  int total_blocks() const;
  const BlockSpec& block_at(int index) const;  // flat block position
  // Product of all strides (stem included); input resolutions are kept at
  // multiples of this so every stage sees an integral feature map.
  int total_stride() const;
};

// The Table-4 supernet: widths (32,64,128,160,256), strides (2,2,2,1,2),
// depths (3,4,7,4,11), 7x7 stem of width 32, 1280-wide head, 224 input.
// Three superkernels per block with expansions {0,2}; kernels {3,5}, with the
// first superkernel also offering 7.
SupernetSpec build_default_supernet(int num_classes = 1000);

struct LinearDepthReport {
  struct Row {
    int width = 0;
    int cumulative_depth = 0;
    double ratio = 0.0;  // cumulative_depth / width
  };
  std::vector<Row> rows;
  bool is_monotone = false;
};

// Reports per-stage cumulative depth and whether it is non-decreasing when
// stages are ordered by width. Proportionality is reported via the fitted
// per-stage ratio, never enforced.
LinearDepthReport validate_linear_depth(const SupernetSpec& supernet);

// ---------------------------------------------------------------------------
// Block decisions and canonical configurations.
// ---------------------------------------------------------------------------

struct BranchDecision {
  int kernel = 0;
  double expansion = 0.0;

  auto operator<=>(const BranchDecision&) const = default;
};

// One raw decision per superkernel, in superkernel order.
using Decision = std::vector<BranchDecision>;

// Canonical form of a block decision: zero-expansion branches dropped,
// branches of equal kernel size merged by summing expansions, sorted by
// ascending kernel size. The empty config is the skip connection.
struct CanonicalConfig {
  std::vector<BranchDecision> branches;

  bool is_skip() const { return branches.empty(); }
  double total_expansion() const;
  // Wire format: "k1:e1+k2:e2+..."; the skip config is the empty string.
  std::string id() const;
  static CanonicalConfig parse(const std::string& id);

  auto operator<=>(const CanonicalConfig&) const = default;
};

// Merges same-size kernels and drops zero-expansion branches (the Fig.-9
// rule: equivalent blocks must share one latency-table key). Throws
// InvariantError if a decision is not drawn from the block's candidate sets
// or a merged expansion exceeds the representable maximum.
CanonicalConfig canonicalize(const BlockSpec& block, const Decision& decision);

// Canonicalize without a block context (used on already-validated decisions).
CanonicalConfig canonicalize_unchecked(const Decision& decision);

// All canonical configs reachable from the block's candidate sets, deduped,
// in lexicographic order. The all-zero (skip) config is included only when
// the block can legally collapse to a skip connection.
std::vector<CanonicalConfig> enumerate_configs(const BlockSpec& block);

// ---------------------------------------------------------------------------
// Concrete architectures.
// ---------------------------------------------------------------------------

enum class Activation { Relu, HSwish };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct ConcreteBlock {
  CanonicalConfig config;
  bool se_enabled = false;
  BlockKind kind = BlockKind::MixconvMbconv;
};

struct ConcreteStage {
  int width = 0;
  int stride = 1;
  std::vector<ConcreteBlock> blocks;
};

// A fully decided network. Stored in canonical per-block form so equivalent
// networks serialize identically and share latency-table keys.
struct ConcreteArchitecture {
  int version = 1;
  int input_resolution = 224;
  int input_channels = 3;
  Activation activation = Activation::Relu;
  StemSpec stem;
  std::vector<ConcreteStage> stages;
  HeadSpec head;

  void validate() const;  // structural invariants only
  int total_blocks() const;
  int total_stride() const;

  struct BlockRef {
    const ConcreteBlock* block;
    int stage_index;
    int input_width;
    int output_width;
    int stride;
  };
  std::vector<BlockRef> flat_blocks() const;
};

// Byte-stable serialization (fixed key order, two-space indent, trailing
// newline). deserialize() validates structural invariants; when a supernet
// is supplied it additionally checks that every block decision is reachable
// from the corresponding block's candidate sets.
std::string serialize_architecture(const ConcreteArchitecture& arch);
ConcreteArchitecture deserialize_architecture(const std::string& text,
                                              const SupernetSpec* supernet = nullptr);

void save_architecture(const ConcreteArchitecture& arch, const std::string& path);
ConcreteArchitecture load_architecture(const std::string& path,
                                       const SupernetSpec* supernet = nullptr);

// Supernet files share the same structured-text container with a
// "kind": "supernet" marker and per-block candidate sets.
std::string serialize_supernet(const SupernetSpec& spec);
SupernetSpec deserialize_supernet(const std::string& text);
void save_supernet(const SupernetSpec& spec, const std::string& path);
SupernetSpec load_supernet(const std::string& path);

// Architecture made of every block's extracted decision; helper shared by
// search extraction and tests.
ConcreteArchitecture architecture_from_decisions(const SupernetSpec& supernet,
                                                 const std::vector<CanonicalConfig>& per_block);

// File helpers shared across modules.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace s3nas
