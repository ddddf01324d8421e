#pragma once

#include <map>
#include <string>
#include <vector>

#include "arch.hpp"

namespace s3nas {

// Cost-model parameters for the adder-tree NPU. Defaults are calibration
// knobs, not measurements: 256 MAC units at 1 GHz, 25.6 GB/s DRAM with
// double-buffered transfers, and native DWConv/SE/pooling units.
struct CostModelParams {
  int mac_units = 256;
  double clock_hz = 1.0e9;
  double dram_bandwidth = 25.6e9;  // bytes/s
  double dram_latency = 1.0e-6;    // seconds per burst
  double weight_buffer = 512.0 * 1024.0;  // bytes
  bool double_buffered = true;
  bool dwconv_native = true;
  bool se_native = true;
  bool pooling_native = true;

  void validate() const;
};

// Input-side geometry of one block.
struct BlockGeometry {
  int h = 0;
  int w = 0;
  int c_in = 0;
  int c_out = 0;
  int stride = 1;
  BlockKind kind = BlockKind::MixconvMbconv;
};

// MAC count of one depthwise branch: H' x W' x channels x k^2.
long long dwconv_branch_macs(int out_h, int out_w, int channels, int kernel);

// Closed-form per-block latency: every layer of the block (expansion conv,
// each DWConv branch, projection conv) contributes max(compute, memory) plus
// the pipeline-fill share, summed in milliseconds.
double analytical_block_latency(const BlockGeometry& geom, const CanonicalConfig& config,
                                const CostModelParams& params);

// Event-driven reference: DMA bursts and compute tiles on a single
// shared-bandwidth queue with optional double buffering. The oracle the
// analytical model is validated against.
double simulate_block_latency(const BlockGeometry& geom, const CanonicalConfig& config,
                              const CostModelParams& params);

double stem_latency(const StemSpec& stem, int input_resolution, int input_channels,
                    const CostModelParams& params, bool simulate = false);
double head_latency(const HeadSpec& head, int feature_h, int feature_w, int c_in,
                    const CostModelParams& params, bool simulate = false);
// Additive squeeze-excitation cost for a block with C output channels on an
// H' x W' feature map.
double se_block_latency(int channels, int out_h, int out_w, double se_reduction,
                        const CostModelParams& params, bool simulate = false);

enum class LatencyProvider { Analytical, Simulator, File };

LatencyProvider provider_from_string(const std::string& s);
std::string to_string(LatencyProvider p);

// Per-block-position map from canonical config to milliseconds, plus fixed
// stem/head costs and the per-block SE cost. Immutable after build.
class LatencyTable {
 public:
  LatencyTable() = default;

  int block_count() const { return static_cast<int>(blocks_.size()); }
  double lookup(int block_index, const CanonicalConfig& config) const;
  bool contains(int block_index, const CanonicalConfig& config) const;
  const std::map<CanonicalConfig, double>& block_entries(int block_index) const;
  double stem_ms() const { return stem_ms_; }
  double head_ms() const { return head_ms_; }
  double se_ms(int block_index) const;
  std::size_t total_entries() const;

  // CSV wire format: header `block_index,config_id,latency_ms`, one row per
  // (block, canonical config), then `stem,,ms`, `head,,ms` and one
  // `se,<block_index>,ms` row per block. Stored at full double precision.
  std::string to_csv() const;
  static LatencyTable from_csv(const std::string& text);
  void save(const std::string& path) const;
  static LatencyTable load(const std::string& path);

  // Scales every stored latency (block entries, stem, head, SE) by c.
  LatencyTable scaled(double c) const;

  friend LatencyTable build_latency_table(const SupernetSpec&, LatencyProvider,
                                          const CostModelParams&, const std::string&);

 private:
  std::vector<std::map<CanonicalConfig, double>> blocks_;
  std::vector<double> se_ms_;
  double stem_ms_ = 0.0;
  double head_ms_ = 0.0;
};

// Geometry of every block position in a supernet (input feature map sizes).
std::vector<BlockGeometry> block_geometries(const SupernetSpec& supernet);
std::vector<BlockGeometry> block_geometries(const ConcreteArchitecture& arch);

// Builds the table covering every block position x every canonical config.
// The file provider loads `file_path` and verifies exact coverage, listing
// any absent keys in the error.
LatencyTable build_latency_table(const SupernetSpec& supernet, LatencyProvider provider,
                                 const CostModelParams& params,
                                 const std::string& file_path = "");

// Sum of per-block table entries plus stem/head fixed costs plus the SE cost
// of every SE-enabled block. Throws on missing keys.
double estimate_network_latency(const ConcreteArchitecture& arch, const LatencyTable& table);

// Direct model evaluation for architectures whose geometry is not covered by
// a prebuilt table (e.g. after compound scaling).
double estimate_network_latency_model(const ConcreteArchitecture& arch,
                                      const CostModelParams& params,
                                      bool simulate = false,
                                      double se_reduction = 0.25);

}  // namespace s3nas
