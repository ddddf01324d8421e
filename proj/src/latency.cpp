#include "latency.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace s3nas {

namespace {

constexpr double kBytesPerValue = 4.0;

int ceil_div(int a, int b) { return (a + b - 1) / b; }

// One schedulable unit: a compute phase plus its DRAM traffic.
struct LayerCost {
  double macs = 0.0;
  double bytes = 0.0;          // weights + streamed features
  double effective_units = 1;  // MAC lanes usable for this layer
};

double compute_seconds(const LayerCost& layer, const CostModelParams& params) {
  if (layer.macs <= 0.0) return 0.0;
  return layer.macs / (layer.effective_units * params.clock_hz);
}

// Burst count for a layer's DRAM traffic, shared by the analytical model and
// the simulator. Double buffering streams the traffic in chunks bounded by
// half the weight buffer and by the output rows the compute can be cut into.
int tile_count(double bytes, int out_rows, const CostModelParams& params) {
  if (!params.double_buffered) return 1;
  const double half_buffer = std::max(1.0, params.weight_buffer / 2.0);
  const int by_capacity = static_cast<int>(std::ceil(bytes / half_buffer));
  const int n = std::clamp(std::max(by_capacity, 8), 2, 64);
  return std::min(n, std::max(1, out_rows));
}

double analytical_layer_seconds(const LayerCost& layer, const CostModelParams& params,
                                int out_rows) {
  const double c = compute_seconds(layer, params);
  const int n = tile_count(layer.bytes, out_rows, params);
  const double m = layer.bytes / params.dram_bandwidth + n * params.dram_latency;
  if (!params.double_buffered || n <= 1) return c + m;
  return std::max(c, m) + std::min(c, m) / n;
}

// Event-driven accounting of the same pipeline: per-tile DMA bursts go
// through the single shared-bandwidth queue and compute may only run one
// tile behind the transfers (two buffers).
double simulated_layer_seconds(const LayerCost& layer, const CostModelParams& params,
                               int out_rows) {
  const double c = compute_seconds(layer, params);
  const int n = tile_count(layer.bytes, out_rows, params);

  double dma_free = 0.0;
  double compute_done_prev = 0.0;   // tile i-1
  double compute_done_prev2 = 0.0;  // tile i-2 (frees the buffer tile i loads into)
  for (int i = 0; i < n; ++i) {
    const double frac = 1.0 / n;
    const double dma = layer.bytes * frac / params.dram_bandwidth + params.dram_latency;
    const double comp = c * frac;
    double dma_start = std::max(dma_free, compute_done_prev2);
    if (!params.double_buffered) dma_start = std::max(dma_start, compute_done_prev);
    const double dma_done = dma_start + dma;
    dma_free = dma_done;
    const double comp_done = std::max(compute_done_prev, dma_done) + comp;
    compute_done_prev2 = compute_done_prev;
    compute_done_prev = comp_done;
  }
  return compute_done_prev;
}

std::vector<std::pair<LayerCost, int>> block_layer_costs(const BlockGeometry& geom,
                                                         const CanonicalConfig& config,
                                                         const CostModelParams& params) {
  const double h = geom.h, w = geom.w;
  const int out_h = ceil_div(geom.h, geom.stride);
  const int out_w = ceil_div(geom.w, geom.stride);
  const double feature_in = h * w * geom.c_in * kBytesPerValue;
  const double feature_out = static_cast<double>(out_h) * out_w * geom.c_out * kBytesPerValue;

  std::vector<std::pair<LayerCost, int>> layers;
  if (config.is_skip()) {
    // Plain feature passthrough: no weights, no compute.
    LayerCost pass;
    pass.bytes = feature_in + feature_out;
    pass.effective_units = params.mac_units;
    layers.push_back({pass, geom.h});
    return layers;
  }

  if (geom.kind == BlockKind::FusedConv) {
    double c_mid = 0.0;
    for (const auto& br : config.branches) {
      const double branch_channels = br.expansion * geom.c_in;
      LayerCost fused;
      fused.macs = static_cast<double>(out_h) * out_w * branch_channels * geom.c_in *
                   br.kernel * br.kernel;
      fused.bytes = br.kernel * br.kernel * geom.c_in * branch_channels * kBytesPerValue;
      fused.effective_units = params.mac_units;
      layers.push_back({fused, out_h});
      c_mid += branch_channels;
    }
    layers.front().first.bytes += feature_in;
    LayerCost projection;
    projection.macs = static_cast<double>(out_h) * out_w * c_mid * geom.c_out;
    projection.bytes = c_mid * geom.c_out * kBytesPerValue + feature_out;
    projection.effective_units = params.mac_units;
    layers.push_back({projection, out_h});
    return layers;
  }

  double c_mid = 0.0;
  for (const auto& br : config.branches) c_mid += br.expansion * geom.c_in;

  LayerCost expansion;  // 1x1 at input resolution
  expansion.macs = h * w * geom.c_in * c_mid;
  expansion.bytes = geom.c_in * c_mid * kBytesPerValue + feature_in;
  expansion.effective_units = params.mac_units;
  layers.push_back({expansion, geom.h});

  for (const auto& br : config.branches) {
    const double branch_channels = br.expansion * geom.c_in;
    LayerCost dw;
    dw.macs = static_cast<double>(dwconv_branch_macs(out_h, out_w,
                                                     static_cast<int>(branch_channels), br.kernel));
    dw.bytes = br.kernel * br.kernel * branch_channels * kBytesPerValue;
    // Without the dedicated accumulator logic only k^2 of the adder-tree
    // lanes contribute to a depthwise output.
    dw.effective_units = params.dwconv_native
                             ? params.mac_units
                             : std::min<double>(params.mac_units, br.kernel * br.kernel);
    layers.push_back({dw, out_h});
  }

  LayerCost projection;  // 1x1 at output resolution
  projection.macs = static_cast<double>(out_h) * out_w * c_mid * geom.c_out;
  projection.bytes = c_mid * geom.c_out * kBytesPerValue + feature_out;
  projection.effective_units = params.mac_units;
  layers.push_back({projection, out_h});
  return layers;
}

double block_latency_ms(const BlockGeometry& geom, const CanonicalConfig& config,
                        const CostModelParams& params, bool simulate) {
  params.validate();
  if (geom.h <= 0 || geom.w <= 0 || geom.c_in <= 0 || geom.c_out <= 0) {
    throw InvariantError("block geometry must have positive dimensions");
  }
  double seconds = 0.0;
  for (const auto& [layer, out_rows] : block_layer_costs(geom, config, params)) {
    seconds += simulate ? simulated_layer_seconds(layer, params, out_rows)
                        : analytical_layer_seconds(layer, params, out_rows);
  }
  return seconds * 1e3;
}

}  // namespace

void CostModelParams::validate() const {
  if (mac_units <= 0 || clock_hz <= 0.0 || dram_bandwidth <= 0.0 || weight_buffer <= 0.0) {
    throw ConfigError("cost model parameters must be positive");
  }
  if (dram_latency < 0.0) {
    throw ConfigError("dram latency must be non-negative");
  }
}

long long dwconv_branch_macs(int out_h, int out_w, int channels, int kernel) {
  return static_cast<long long>(out_h) * out_w * channels * kernel * kernel;
}

double analytical_block_latency(const BlockGeometry& geom, const CanonicalConfig& config,
                                const CostModelParams& params) {
  return block_latency_ms(geom, config, params, /*simulate=*/false);
}

double simulate_block_latency(const BlockGeometry& geom, const CanonicalConfig& config,
                              const CostModelParams& params) {
  return block_latency_ms(geom, config, params, /*simulate=*/true);
}

double stem_latency(const StemSpec& stem, int input_resolution, int input_channels,
                    const CostModelParams& params, bool simulate) {
  const int out = ceil_div(input_resolution, stem.stride);
  LayerCost conv;
  conv.macs = static_cast<double>(out) * out * stem.kernel * stem.kernel * input_channels *
              stem.width;
  conv.bytes = stem.kernel * stem.kernel * input_channels * stem.width * kBytesPerValue +
               static_cast<double>(input_resolution) * input_resolution * input_channels *
                   kBytesPerValue +
               static_cast<double>(out) * out * stem.width * kBytesPerValue;
  conv.effective_units = params.mac_units;
  return (simulate ? simulated_layer_seconds(conv, params, out)
                   : analytical_layer_seconds(conv, params, out)) *
         1e3;
}

double head_latency(const HeadSpec& head, int feature_h, int feature_w, int c_in,
                    const CostModelParams& params, bool simulate) {
  LayerCost feature_conv;  // 1x1 to the head feature width
  feature_conv.macs = static_cast<double>(feature_h) * feature_w * c_in * head.feature_width;
  feature_conv.bytes = c_in * head.feature_width * kBytesPerValue +
                       static_cast<double>(feature_h) * feature_w * c_in * kBytesPerValue;
  feature_conv.effective_units = params.mac_units;

  LayerCost classifier;
  classifier.macs = static_cast<double>(head.feature_width) * head.num_classes;
  classifier.bytes = (static_cast<double>(head.feature_width) + 1.0) * head.num_classes *
                         kBytesPerValue +
                     head.num_classes * kBytesPerValue;
  classifier.effective_units = params.mac_units;
  if (!params.pooling_native) {
    // Pool runs on the scalar path instead of the reduction pipeline.
    classifier.macs += static_cast<double>(feature_h) * feature_w * head.feature_width /
                       params.mac_units;
  }

  double seconds = 0.0;
  for (const auto& layer : {feature_conv, classifier}) {
    seconds += simulate ? simulated_layer_seconds(layer, params, feature_h)
                        : analytical_layer_seconds(layer, params, feature_h);
  }
  return seconds * 1e3;
}

double se_block_latency(int channels, int out_h, int out_w, double se_reduction,
                        const CostModelParams& params, bool simulate) {
  const int reduced = std::max(1, static_cast<int>(std::ceil(channels * se_reduction)));
  LayerCost se;
  se.macs = 2.0 * channels * reduced;  // the two cascaded FC layers
  se.bytes = (static_cast<double>(channels) * reduced + static_cast<double>(reduced) * channels +
              reduced + channels) *
             kBytesPerValue;
  se.effective_units = params.mac_units;
  if (!params.se_native) {
    // Squeeze reduction and the channel-wise multiply leave the pipeline.
    se.macs += 2.0 * out_h * out_w * channels / params.mac_units;
  }
  return (simulate ? simulated_layer_seconds(se, params, 1)
                   : analytical_layer_seconds(se, params, 1)) *
         1e3;
}

LatencyProvider provider_from_string(const std::string& s) {
  if (s == "analytical") return LatencyProvider::Analytical;
  if (s == "simulator") return LatencyProvider::Simulator;
  if (s == "file") return LatencyProvider::File;
  throw ConfigError("unknown latency provider '" + s + "'");
}

std::string to_string(LatencyProvider p) {
  switch (p) {
    case LatencyProvider::Analytical: return "analytical";
    case LatencyProvider::Simulator: return "simulator";
    case LatencyProvider::File: return "file";
  }
  return "analytical";
}

double LatencyTable::lookup(int block_index, const CanonicalConfig& config) const {
  const auto& entries = block_entries(block_index);
  const auto it = entries.find(config);
  if (it == entries.end()) {
    throw InvariantError("latency table has no entry for block " + std::to_string(block_index) +
                         " config '" + config.id() + "'");
  }
  return it->second;
}

bool LatencyTable::contains(int block_index, const CanonicalConfig& config) const {
  if (block_index < 0 || block_index >= block_count()) return false;
  return blocks_[block_index].count(config) > 0;
}

const std::map<CanonicalConfig, double>& LatencyTable::block_entries(int block_index) const {
  if (block_index < 0 || block_index >= block_count()) {
    throw InvariantError("block index " + std::to_string(block_index) +
                         " outside latency table");
  }
  return blocks_[block_index];
}

double LatencyTable::se_ms(int block_index) const {
  if (block_index < 0 || block_index >= static_cast<int>(se_ms_.size())) {
    throw InvariantError("block index " + std::to_string(block_index) +
                         " outside latency table SE costs");
  }
  return se_ms_[block_index];
}

std::size_t LatencyTable::total_entries() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.size();
  return n;
}

std::string LatencyTable::to_csv() const {
  std::ostringstream out;
  out << "block_index,config_id,latency_ms\n";
  for (int l = 0; l < block_count(); ++l) {
    for (const auto& [config, ms] : blocks_[l]) {
      out << l << ',' << config.id() << ',' << format_exact(ms) << '\n';
    }
  }
  out << "stem,," << format_exact(stem_ms_) << '\n';
  out << "head,," << format_exact(head_ms_) << '\n';
  for (std::size_t l = 0; l < se_ms_.size(); ++l) {
    out << "se," << l << ',' << format_exact(se_ms_[l]) << '\n';
  }
  return out.str();
}

LatencyTable LatencyTable::from_csv(const std::string& text) {
  LatencyTable table;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "block_index,config_id,latency_ms") {
    throw ConfigError("latency table CSV missing header");
  }
  std::map<int, double> se_rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw ConfigError("malformed latency table row '" + line + "'");
    }
    const std::string first = line.substr(0, c1);
    const std::string second = line.substr(c1 + 1, c2 - c1 - 1);
    const double ms = parse_double(line.substr(c2 + 1), "latency table");
    if (ms < 0.0) throw InvariantError("latency values must be non-negative");
    if (first == "stem") {
      table.stem_ms_ = ms;
    } else if (first == "head") {
      table.head_ms_ = ms;
    } else if (first == "se") {
      se_rows[static_cast<int>(parse_int(second, "latency table SE row"))] = ms;
    } else {
      const int index = static_cast<int>(parse_int(first, "latency table block row"));
      if (index < 0) throw ConfigError("negative block index in latency table");
      if (index >= static_cast<int>(table.blocks_.size())) {
        table.blocks_.resize(index + 1);
      }
      table.blocks_[index][CanonicalConfig::parse(second)] = ms;
    }
  }
  table.se_ms_.assign(table.blocks_.size(), 0.0);
  for (const auto& [index, ms] : se_rows) {
    if (index < 0 || index >= static_cast<int>(table.se_ms_.size())) {
      throw ConfigError("SE row refers to unknown block index");
    }
    table.se_ms_[index] = ms;
  }
  return table;
}

void LatencyTable::save(const std::string& path) const { write_text_file(path, to_csv()); }

LatencyTable LatencyTable::load(const std::string& path) {
  return from_csv(read_text_file(path));
}

LatencyTable LatencyTable::scaled(double c) const {
  LatencyTable out = *this;
  for (auto& block : out.blocks_) {
    for (auto& [config, ms] : block) ms *= c;
  }
  out.stem_ms_ *= c;
  out.head_ms_ *= c;
  for (auto& ms : out.se_ms_) ms *= c;
  return out;
}

namespace {

template <typename Spec>
std::vector<BlockGeometry> geometries_impl(const Spec& spec) {
  std::vector<BlockGeometry> out;
  int r = ceil_div(spec.input_resolution, spec.stem.stride);
  int prev_width = spec.stem.width;
  for (const auto& stage : spec.stages) {
    const int depth = static_cast<int>(stage.blocks.size());
    for (int b = 0; b < depth; ++b) {
      BlockGeometry geom;
      geom.h = r;
      geom.w = r;
      geom.c_in = b == 0 ? prev_width : stage.width;
      geom.c_out = stage.width;
      geom.stride = b == 0 ? stage.stride : 1;
      if constexpr (requires { stage.blocks[b].kind; }) {
        geom.kind = stage.blocks[b].kind;
      }
      out.push_back(geom);
      r = ceil_div(r, geom.stride);
    }
    prev_width = stage.width;
  }
  return out;
}

}  // namespace

std::vector<BlockGeometry> block_geometries(const SupernetSpec& supernet) {
  return geometries_impl(supernet);
}

std::vector<BlockGeometry> block_geometries(const ConcreteArchitecture& arch) {
  return geometries_impl(arch);
}

LatencyTable build_latency_table(const SupernetSpec& supernet, LatencyProvider provider,
                                 const CostModelParams& params, const std::string& file_path) {
  supernet.validate();
  params.validate();
  const auto geoms = block_geometries(supernet);

  if (provider == LatencyProvider::File) {
    if (file_path.empty()) {
      throw ConfigError("file latency provider requires a table path");
    }
    LatencyTable table = LatencyTable::load(file_path);
    std::vector<std::string> missing;
    for (int l = 0; l < supernet.total_blocks(); ++l) {
      for (const auto& config : enumerate_configs(supernet.block_at(l))) {
        if (!table.contains(l, config)) {
          missing.push_back(std::to_string(l) + ":'" + config.id() + "'");
        }
      }
    }
    if (!missing.empty()) {
      std::string message = "latency table file is missing entries:";
      for (const auto& m : missing) message += " " + m;
      throw ConfigError(message);
    }
    return table;
  }

  const bool simulate = provider == LatencyProvider::Simulator;
  LatencyTable table;
  table.blocks_.resize(geoms.size());
  table.se_ms_.resize(geoms.size());
  for (std::size_t l = 0; l < geoms.size(); ++l) {
    const auto& block = supernet.block_at(static_cast<int>(l));
    for (const auto& config : enumerate_configs(block)) {
      const double ms = simulate ? simulate_block_latency(geoms[l], config, params)
                                 : analytical_block_latency(geoms[l], config, params);
      table.blocks_[l][config] = ms;
    }
    const int out_h = ceil_div(geoms[l].h, geoms[l].stride);
    table.se_ms_[l] = se_block_latency(geoms[l].c_out, out_h, out_h, 0.25, params, simulate);
    // Skip must be the cheapest implementation of its block.
    const auto skip_it = table.blocks_[l].find(CanonicalConfig{});
    if (skip_it != table.blocks_[l].end()) {
      for (const auto& [config, ms] : table.blocks_[l]) {
        if (ms < skip_it->second) {
          throw InvariantError("skip config is not minimal for block " + std::to_string(l));
        }
      }
    }
  }
  table.stem_ms_ = stem_latency(supernet.stem, supernet.input_resolution,
                                supernet.input_channels, params, simulate);
  const int feature_r = supernet.input_resolution / supernet.total_stride();
  table.head_ms_ = head_latency(supernet.head, feature_r, feature_r,
                                supernet.stages.back().width, params, simulate);
  return table;
}

double estimate_network_latency(const ConcreteArchitecture& arch, const LatencyTable& table) {
  const auto refs = arch.flat_blocks();
  if (static_cast<int>(refs.size()) != table.block_count()) {
    throw InvariantError("architecture block count does not match latency table");
  }
  double total = table.stem_ms() + table.head_ms();
  for (std::size_t l = 0; l < refs.size(); ++l) {
    total += table.lookup(static_cast<int>(l), refs[l].block->config);
    if (refs[l].block->se_enabled) total += table.se_ms(static_cast<int>(l));
  }
  return total;
}

double estimate_network_latency_model(const ConcreteArchitecture& arch,
                                      const CostModelParams& params, bool simulate,
                                      double se_reduction) {
  arch.validate();
  const auto geoms = block_geometries(arch);
  const auto refs = arch.flat_blocks();
  double total = stem_latency(arch.stem, arch.input_resolution, arch.input_channels, params,
                              simulate);
  for (std::size_t l = 0; l < refs.size(); ++l) {
    total += simulate ? simulate_block_latency(geoms[l], refs[l].block->config, params)
                      : analytical_block_latency(geoms[l], refs[l].block->config, params);
    if (refs[l].block->se_enabled) {
      const int out_h = ceil_div(geoms[l].h, geoms[l].stride);
      total += se_block_latency(geoms[l].c_out, out_h, out_h, se_reduction, params, simulate);
    }
  }
  const int feature_r = arch.input_resolution / arch.total_stride();
  total += head_latency(arch.head, feature_r, feature_r, arch.stages.back().width, params,
                        simulate);
  return total;
}

}  // namespace s3nas
