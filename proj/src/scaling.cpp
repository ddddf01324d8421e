#include "scaling.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace s3nas {

void ScalingCoefficients::validate() const {
  if (depth_width_coef < 1.0) {
    throw ConfigError("depth/width coefficient must be >= 1");
  }
  if (resolution_coef < 1.0) {
    throw ConfigError("resolution coefficient must be >= 1");
  }
}

LatencyEstimator table_estimator(const LatencyTable& table) {
  return [table](const ConcreteArchitecture& arch) {
    return estimate_network_latency(arch, table);
  };
}

LatencyEstimator model_estimator(const CostModelParams& params, bool simulate,
                                 double se_reduction) {
  return [params, simulate, se_reduction](const ConcreteArchitecture& arch) {
    return estimate_network_latency_model(arch, params, simulate, se_reduction);
  };
}

long long block_parameter_count(const ConcreteBlock& block, int input_width, int output_width,
                                double se_reduction) {
  if (block.config.is_skip()) return 0;
  const long long mid = static_cast<long long>(block.config.total_expansion() * input_width);
  long long count = static_cast<long long>(input_width) * mid;  // expansion conv
  for (const auto& br : block.config.branches) {
    count += static_cast<long long>(br.expansion * input_width) * br.kernel * br.kernel;
  }
  count += mid * output_width;  // projection conv
  if (block.se_enabled) {
    const long long reduced = static_cast<long long>(std::ceil(mid * se_reduction));
    count += 2 * mid * reduced + mid + reduced;
  }
  return count;
}

namespace {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

// Widths land on multiples of 16, rounded toward the scaling direction so an
// upscale never shrinks a width.
int scale_width(int width, double coef) {
  if (coef == 1.0) return width;
  const double scaled = width * coef;
  if (coef > 1.0) {
    return static_cast<int>(std::ceil(scaled / 16.0)) * 16;
  }
  return std::max(16, static_cast<int>(std::floor(scaled / 16.0)) * 16);
}

int scale_resolution(int resolution, double coef, int stride_product) {
  const double scaled = resolution * coef;
  const int multiples = std::max(1, round_half_up(scaled / stride_product));
  return multiples * stride_product;
}

struct Addition {
  int stage;
  int position;  // index into the stage's block list
};

}  // namespace

ScaleReport compound_scale(const ConcreteArchitecture& arch, const ScalingCoefficients& coefs,
                           const LatencyEstimator& estimator, double target_latency_ms) {
  arch.validate();
  coefs.validate();

  if (target_latency_ms > 0.0 && estimator(arch) > target_latency_ms) {
    throw InfeasibleError("architecture exceeds the latency target before scaling");
  }

  ScaleReport report;
  ConcreteArchitecture scaled = arch;

  // Depth: added blocks replicate existing block types, largest parameter
  // count first (ties: larger kernel, then earlier block).
  std::vector<Addition> additions;
  const auto refs = arch.flat_blocks();
  int flat_base = 0;
  for (std::size_t s = 0; s < arch.stages.size(); ++s) {
    const auto& stage = arch.stages[s];
    const int old_depth = static_cast<int>(stage.blocks.size());
    const int new_depth = round_half_up(old_depth * coefs.depth_width_coef);

    std::vector<int> ranked(stage.blocks.size());
    for (std::size_t b = 0; b < ranked.size(); ++b) ranked[b] = static_cast<int>(b);
    std::stable_sort(ranked.begin(), ranked.end(), [&](int a, int b) {
      const auto& ra = refs[static_cast<std::size_t>(flat_base + a)];
      const auto& rb = refs[static_cast<std::size_t>(flat_base + b)];
      const long long pa = block_parameter_count(*ra.block, ra.input_width, ra.output_width);
      const long long pb = block_parameter_count(*rb.block, rb.input_width, rb.output_width);
      if (pa != pb) return pa > pb;
      const int ka = ra.block->config.is_skip() ? 0 : ra.block->config.branches.back().kernel;
      const int kb = rb.block->config.is_skip() ? 0 : rb.block->config.branches.back().kernel;
      if (ka != kb) return ka > kb;
      return a < b;
    });

    for (int add = 0; add < new_depth - old_depth; ++add) {
      ConcreteBlock copy = stage.blocks[static_cast<std::size_t>(
          ranked[static_cast<std::size_t>(add) % ranked.size()])];
      scaled.stages[s].blocks.push_back(copy);
      additions.push_back({static_cast<int>(s),
                           static_cast<int>(scaled.stages[s].blocks.size()) - 1});
    }
    flat_base += old_depth;
  }

  // Width and resolution.
  for (auto& stage : scaled.stages) stage.width = scale_width(stage.width, coefs.depth_width_coef);
  scaled.input_resolution =
      scale_resolution(arch.input_resolution, coefs.resolution_coef, arch.total_stride());
  scaled.validate();

  double estimate = estimator(scaled);
  if (target_latency_ms > 0.0) {
    // Resolution steps back first, never below the original.
    while (estimate > target_latency_ms &&
           scaled.input_resolution - arch.total_stride() >= arch.input_resolution) {
      scaled.input_resolution -= arch.total_stride();
      ++report.resolution_rollbacks;
      estimate = estimator(scaled);
    }
    // Then depth additions roll back in reverse order.
    while (estimate > target_latency_ms && !additions.empty()) {
      const Addition last = additions.back();
      additions.pop_back();
      auto& blocks = scaled.stages[static_cast<std::size_t>(last.stage)].blocks;
      blocks.erase(blocks.begin() + last.position);
      ++report.depth_rollbacks;
      estimate = estimator(scaled);
    }
  }

  scaled.validate();
  report.architecture = std::move(scaled);
  report.estimated_latency_ms = estimate;
  report.within_target = target_latency_ms <= 0.0 || estimate <= target_latency_ms;
  return report;
}

ConcreteArchitecture add_se_hswish(const ConcreteArchitecture& arch) {
  arch.validate();
  ConcreteArchitecture out = arch;
  out.activation = Activation::HSwish;
  for (auto& stage : out.stages) {
    for (auto& block : stage.blocks) {
      // A skip connection has no excitation to gate.
      block.se_enabled = !block.config.is_skip();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dispersion
// ---------------------------------------------------------------------------

WelfordAccumulator::WelfordAccumulator(int channels)
    : mean_(static_cast<std::size_t>(channels), 0.0),
      m2_(static_cast<std::size_t>(channels), 0.0) {}

void WelfordAccumulator::add(const double* values) {
  ++count_;
  for (std::size_t c = 0; c < mean_.size(); ++c) {
    const double delta = values[c] - mean_[c];
    mean_[c] += delta / count_;
    m2_[c] += delta * (values[c] - mean_[c]);
  }
}

void WelfordAccumulator::merge(const WelfordAccumulator& other) {
  if (other.mean_.size() != mean_.size()) {
    throw InvariantError("cannot merge accumulators of different widths");
  }
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const int total = count_ + other.count_;
  for (std::size_t c = 0; c < mean_.size(); ++c) {
    const double delta = other.mean_[c] - mean_[c];
    m2_[c] += other.m2_[c] +
              delta * delta * static_cast<double>(count_) * other.count_ / total;
    mean_[c] += delta * other.count_ / total;
  }
  count_ = total;
}

std::vector<double> WelfordAccumulator::std_dev() const {
  if (count_ < 2) throw InvariantError("dispersion needs at least two samples");
  std::vector<double> out(mean_.size());
  for (std::size_t c = 0; c < mean_.size(); ++c) {
    out[c] = std::sqrt(m2_[c] / (count_ - 1));
  }
  return out;
}

double WelfordAccumulator::mean_std() const {
  const auto stds = std_dev();
  double total = 0.0;
  for (double s : stds) total += s;
  return total / static_cast<double>(stds.size());
}

std::string SeDispersionReport::to_csv() const {
  std::ostringstream out;
  out << "block_index,metric,channels,samples\n";
  for (const auto& row : rows) {
    out << row.block_index << ',' << format_exact(row.metric) << ',' << row.channels << ','
        << row.samples << '\n';
  }
  return out.str();
}

SeDispersionReport SeDispersionReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "block_index,metric,channels,samples") {
    throw ConfigError("dispersion report CSV missing header");
  }
  SeDispersionReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    Row r;
    if (!std::getline(row, field, ',')) throw ConfigError("malformed dispersion row");
    r.block_index = static_cast<int>(parse_int(field, "dispersion report"));
    if (!std::getline(row, field, ',')) throw ConfigError("malformed dispersion row");
    r.metric = parse_double(field, "dispersion report");
    if (!std::getline(row, field, ',')) throw ConfigError("malformed dispersion row");
    r.channels = static_cast<int>(parse_int(field, "dispersion report"));
    if (!std::getline(row, field, ',')) throw ConfigError("malformed dispersion row");
    r.samples = static_cast<int>(parse_int(field, "dispersion report"));
    report.rows.push_back(r);
  }
  return report;
}

SeDispersionReport se_dispersion(PlainNetwork& net, const SynthTaskSpec& synth, int samples,
                                 int batch_size) {
  const auto refs = net.arch().flat_blocks();
  std::vector<int> se_blocks;
  std::vector<WelfordAccumulator> accumulators;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].block->se_enabled) {
      se_blocks.push_back(static_cast<int>(i));
      accumulators.emplace_back(
          static_cast<int>(refs[i].block->config.total_expansion() * refs[i].input_width));
    }
  }
  if (se_blocks.empty()) {
    throw InvariantError("architecture has no SE blocks to measure");
  }

  const SplitIndices split = split_indices(synth);
  const int available = static_cast<int>(split.val.size());
  const int used = std::min(samples, available);
  if (used < 2) throw ConfigError("dispersion needs at least two images");

  for (int pos = 0; pos < used; pos += batch_size) {
    const std::size_t count = static_cast<std::size_t>(std::min(batch_size, used - pos));
    const Batch batch = make_batch(synth, split.val, static_cast<std::size_t>(pos), count);
    Graph g;
    ForwardContext ctx{g, /*training=*/false, nullptr};
    const auto fwd = net.forward(ctx, g.constant(batch.images));
    if (fwd.excitations.size() != se_blocks.size()) {
      throw InvariantError("excitation count does not match SE block count");
    }
    for (std::size_t e = 0; e < fwd.excitations.size(); ++e) {
      const Tensor& exc = g.value(fwd.excitations[e]);
      const int channels = exc.dim(1);
      for (std::size_t b = 0; b < count; ++b) {
        accumulators[e].add(&exc.v[b * static_cast<std::size_t>(channels)]);
      }
    }
  }

  SeDispersionReport report;
  for (std::size_t e = 0; e < se_blocks.size(); ++e) {
    SeDispersionReport::Row row;
    row.block_index = se_blocks[e];
    row.metric = accumulators[e].mean_std();
    row.channels = static_cast<int>(accumulators[e].std_dev().size());
    row.samples = accumulators[e].count();
    report.rows.push_back(row);
  }
  return report;
}

ConcreteArchitecture remove_se(const ConcreteArchitecture& arch, const SeDispersionReport& report,
                               double keep_fraction) {
  arch.validate();
  if (keep_fraction < 0.0 || keep_fraction > 1.0) {
    throw ConfigError("keep_fraction must be in [0, 1]");
  }
  const auto refs = arch.flat_blocks();
  std::vector<int> se_blocks;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].block->se_enabled) se_blocks.push_back(static_cast<int>(i));
  }
  std::map<int, double> metric;
  for (const auto& row : report.rows) metric[row.block_index] = row.metric;
  for (int index : se_blocks) {
    if (!metric.count(index)) {
      throw InvariantError("dispersion report is missing SE block " + std::to_string(index));
    }
  }

  const int n_keep = std::clamp<int>(
      static_cast<int>(std::llround(keep_fraction * static_cast<double>(se_blocks.size()))), 0,
      static_cast<int>(se_blocks.size()));
  const int n_remove = static_cast<int>(se_blocks.size()) - n_keep;

  // Lowest metric first; ties remove the earlier block.
  std::vector<int> order = se_blocks;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (metric[a] != metric[b]) return metric[a] < metric[b];
    return a < b;
  });

  std::vector<bool> drop(refs.size(), false);
  for (int i = 0; i < n_remove; ++i) drop[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  ConcreteArchitecture out = arch;
  int flat = 0;
  for (auto& stage : out.stages) {
    for (auto& block : stage.blocks) {
      if (drop[static_cast<std::size_t>(flat)]) block.se_enabled = false;
      ++flat;
    }
  }
  return out;
}

}  // namespace s3nas
