#include "network.hpp"

#include <algorithm>
#include <cmath>

namespace s3nas {

namespace {

double he_std(double fan_in) { return std::sqrt(2.0 / fan_in); }

void init_normal(Parameter& p, Rng& rng, double std) {
  for (auto& w : p.value.v) w = rng.normal() * std;
}

NodeId apply_activation(Graph& g, NodeId x, Activation act) {
  return act == Activation::Relu ? ops::relu(g, x) : ops::h_swish(g, x);
}

NodeId one_minus(Graph& g, NodeId x) {
  return ops::add_const(g, ops::scale_const(g, x, -1.0), 1.0);
}

}  // namespace

void apply_bn_updates(const std::vector<BnPendingUpdate>& updates, double momentum) {
  for (const auto& u : updates) {
    for (std::size_t i = 0; i < u.mean_buffer->value.v.size(); ++i) {
      u.mean_buffer->value.v[i] =
          (1.0 - momentum) * u.mean_buffer->value.v[i] + momentum * u.batch_mean.v[i];
      u.var_buffer->value.v[i] =
          (1.0 - momentum) * u.var_buffer->value.v[i] + momentum * u.batch_var.v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// BnModule
// ---------------------------------------------------------------------------

BnModule::BnModule(ParameterStore& store, const std::string& prefix, int channels) {
  gamma_ = &store.create(prefix + ".gamma", {channels});
  beta_ = &store.create(prefix + ".beta", {channels});
  mean_ = &store.create(prefix + ".mean", {channels}, /*trainable=*/false);
  var_ = &store.create(prefix + ".var", {channels}, /*trainable=*/false);
  gamma_->value.fill(1.0);
  var_->value.fill(1.0);
}

NodeId BnModule::build(ForwardContext& ctx, NodeId x) const {
  Graph& g = ctx.graph;
  Tensor batch_mean, batch_var;
  const NodeId out =
      ops::batch_norm(g, x, g.leaf(*gamma_), g.leaf(*beta_), mean_->value, var_->value,
                      ctx.training, &batch_mean, &batch_var);
  if (ctx.training && ctx.bn_updates != nullptr) {
    ctx.bn_updates->push_back({mean_, var_, std::move(batch_mean), std::move(batch_var)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// SeModule
// ---------------------------------------------------------------------------

SeModule::SeModule(ParameterStore& store, const std::string& prefix, int channels,
                   double reduction)
    : channels_(channels),
      reduced_(std::max(1, static_cast<int>(std::ceil(channels * reduction)))) {
  w1_ = &store.create(prefix + ".fc1.w", {reduced_, channels_});
  b1_ = &store.create(prefix + ".fc1.b", {reduced_});
  w2_ = &store.create(prefix + ".fc2.w", {channels_, reduced_});
  b2_ = &store.create(prefix + ".fc2.b", {channels_});
}

void SeModule::init_weights(Rng& rng) {
  init_normal(*w1_, rng, he_std(channels_));
  init_normal(*w2_, rng, he_std(reduced_));
  b1_->value.fill(0.0);
  b2_->value.fill(0.0);
}

NodeId SeModule::build(ForwardContext& ctx, NodeId x, NodeId* excitation) const {
  Graph& g = ctx.graph;
  const NodeId pooled = ops::global_avg_pool(g, x);
  const NodeId hidden = ops::relu(g, ops::fc(g, pooled, g.leaf(*w1_), g.leaf(*b1_)));
  const NodeId exc = ops::sigmoid(g, ops::fc(g, hidden, g.leaf(*w2_), g.leaf(*b2_)));
  if (excitation != nullptr) *excitation = exc;
  return ops::channelwise_mul(g, x, exc);
}

// ---------------------------------------------------------------------------
// SupernetBlockModule
// ---------------------------------------------------------------------------

SupernetBlockModule::SupernetBlockModule(ParameterStore& store, const std::string& prefix,
                                         BlockSpec spec)
    : spec_(std::move(spec)),
      expand_w_(nullptr),
      expand_bn_(store, prefix + ".expand_bn", [&] {
        spec_.validate();
        if (spec_.kind != BlockKind::MixconvMbconv) {
          throw InvariantError("only mixconv-mbconv blocks are searchable");
        }
        int mid = 0;
        for (const auto& sk : spec_.superkernels) {
          mid += static_cast<int>(sk.max_expansion() * spec_.input_width);
        }
        return mid;
      }()),
      project_w_(nullptr),
      project_bn_(store, prefix + ".project_bn", spec_.output_width) {
  int mid = 0;
  for (const auto& sk : spec_.superkernels) {
    mid += static_cast<int>(sk.max_expansion() * spec_.input_width);
  }
  expand_w_ = &store.create(prefix + ".expand.w", {mid, spec_.input_width});
  for (std::size_t j = 0; j < spec_.superkernels.size(); ++j) {
    const std::string sk_prefix = prefix + ".sk" + std::to_string(j);
    superkernels_.emplace_back(store, sk_prefix, spec_.superkernels[j], spec_.input_width);
    branch_bns_.emplace_back(store, sk_prefix + ".bn", superkernels_.back().channels());
  }
  project_w_ = &store.create(prefix + ".project.w", {spec_.output_width, mid});
}

int SupernetBlockModule::mid_channels() const {
  int mid = 0;
  for (const auto& sk : superkernels_) mid += sk.channels();
  return mid;
}

int SupernetBlockModule::branch_offset(int j) const {
  int off = 0;
  for (int i = 0; i < j; ++i) off += superkernels_[static_cast<std::size_t>(i)].channels();
  return off;
}

void SupernetBlockModule::init_weights(Rng& rng) {
  init_normal(*expand_w_, rng, he_std(spec_.input_width));
  for (auto& sk : superkernels_) sk.init_weights(rng);
  init_normal(*project_w_, rng, he_std(mid_channels()));
}

void SupernetBlockModule::sync_thresholds() {
  for (auto& sk : superkernels_) sk.sync_thresholds();
}

BlockNodes SupernetBlockModule::build(ForwardContext& ctx, NodeId x, const Decision* forced) const {
  Graph& g = ctx.graph;
  if (forced != nullptr && forced->size() != superkernels_.size()) {
    throw InvariantError("forced decision length does not match superkernel count");
  }

  NodeId mid = ops::pointwise_conv(g, x, g.leaf(*expand_w_));
  mid = expand_bn_.build(ctx, mid);
  mid = ops::relu(g, mid);

  BlockNodes result;
  std::vector<NodeId> branch_outputs;
  NodeId all_off = g.constant_scalar(1.0);
  for (std::size_t j = 0; j < superkernels_.size(); ++j) {
    const auto& sk = superkernels_[j];
    SuperkernelNodes nodes = forced != nullptr ? sk.build_forced(g, (*forced)[j]) : sk.build(g);
    const NodeId branch_in =
        ops::slice_channels(g, mid, branch_offset(static_cast<int>(j)), sk.channels());
    NodeId y = ops::dwconv2d(g, branch_in, nodes.masked_weights, spec_.stride);
    y = branch_bns_[j].build(ctx, y);
    y = ops::relu(g, y);
    // Zero the unselected channels after batch norm so the projection sees
    // exactly the selected sub-network.
    y = ops::channel_scale_vec(g, y, nodes.gate_vector);
    branch_outputs.push_back(y);
    all_off = ops::mul(g, all_off, one_minus(g, nodes.branch_on));
    result.superkernels.push_back(std::move(nodes));
  }

  NodeId merged = ops::concat_channels(g, branch_outputs);
  NodeId projected = ops::pointwise_conv(g, merged, g.leaf(*project_w_));
  projected = project_bn_.build(ctx, projected);
  // With every branch disabled the conv path must vanish entirely so a skip
  // block is an exact identity.
  projected = ops::scale(g, projected, one_minus(g, all_off));

  result.output = spec_.can_skip() ? ops::add(g, x, projected) : projected;
  return result;
}

Decision SupernetBlockModule::extract_decision() const {
  Decision d;
  for (const auto& sk : superkernels_) d.push_back(sk.extract_decision());
  return d;
}

// ---------------------------------------------------------------------------
// SupernetModel
// ---------------------------------------------------------------------------

SupernetModel::SupernetModel(SupernetSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  stem_w_ = &store_.create("stem.conv.w",
                           {spec_.stem.width, spec_.input_channels, spec_.stem.kernel,
                            spec_.stem.kernel});
  stem_bn_.emplace(store_, "stem.bn", spec_.stem.width);
  int index = 0;
  for (const auto& stage : spec_.stages) {
    for (const auto& block : stage.blocks) {
      blocks_.emplace_back(store_, "b" + std::to_string(index), block);
      ++index;
    }
  }
  head_conv_w_ = &store_.create("head.conv.w",
                                {spec_.head.feature_width, spec_.stages.back().width});
  head_bn_.emplace(store_, "head.bn", spec_.head.feature_width);
  head_fc_w_ = &store_.create("head.fc.w", {spec_.head.num_classes, spec_.head.feature_width});
  head_fc_b_ = &store_.create("head.fc.b", {spec_.head.num_classes});

  Rng rng = Rng::derive(seed, 0x5357);
  init_normal(*stem_w_, rng,
              he_std(static_cast<double>(spec_.input_channels) * spec_.stem.kernel *
                     spec_.stem.kernel));
  for (auto& block : blocks_) block.init_weights(rng);
  init_normal(*head_conv_w_, rng, he_std(spec_.stages.back().width));
  init_normal(*head_fc_w_, rng, he_std(spec_.head.feature_width));
}

SupernetModel::ForwardResult SupernetModel::forward(ForwardContext& ctx, NodeId images,
                                                    const std::vector<Decision>* forced) {
  Graph& g = ctx.graph;
  if (forced != nullptr && forced->size() != blocks_.size()) {
    throw InvariantError("forced decision list does not match block count");
  }
  NodeId x = ops::conv2d(g, images, g.leaf(*stem_w_), spec_.stem.stride);
  x = stem_bn_->build(ctx, x);
  x = ops::relu(g, x);

  ForwardResult result;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    BlockNodes nodes = blocks_[i].build(ctx, x, forced != nullptr ? &(*forced)[i] : nullptr);
    x = nodes.output;
    result.blocks.push_back(std::move(nodes));
  }

  x = ops::pointwise_conv(g, x, g.leaf(*head_conv_w_));
  x = head_bn_->build(ctx, x);
  x = ops::relu(g, x);
  const NodeId pooled = ops::global_avg_pool(g, x);
  result.logits = ops::fc(g, pooled, g.leaf(*head_fc_w_), g.leaf(*head_fc_b_));
  return result;
}

void SupernetModel::sync_thresholds() {
  for (auto& block : blocks_) block.sync_thresholds();
}

std::vector<Decision> SupernetModel::extract_raw() const {
  std::vector<Decision> out;
  for (const auto& block : blocks_) out.push_back(block.extract_decision());
  return out;
}

std::vector<Decision> SupernetModel::extract_raw_valid(std::vector<int>* promoted) const {
  std::vector<Decision> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& block = blocks_[i];
    Decision raw = block.extract_decision();
    const CanonicalConfig config = canonicalize(block.spec(), raw);
    if (config.is_skip() && !block.spec().can_skip()) {
      // The thresholds selected a state the block cannot realize; promote the
      // superkernel with the largest core-shell norm to its smallest positive
      // expansion.
      int best = -1;
      double best_norm = -1.0;
      for (std::size_t j = 0; j < block.superkernels().size(); ++j) {
        const double n0 = block.superkernels()[j].kernel_shell_norms()[0];
        if (n0 > best_norm) {
          best_norm = n0;
          best = static_cast<int>(j);
        }
      }
      const auto& sk = block.superkernels()[static_cast<std::size_t>(best)].spec();
      double min_positive = 0.0;
      for (double e : sk.expansion_ratios) {
        if (e > 0.0) {
          min_positive = e;
          break;
        }
      }
      raw[static_cast<std::size_t>(best)] = {raw[static_cast<std::size_t>(best)].kernel,
                                             min_positive};
      if (promoted != nullptr) promoted->push_back(static_cast<int>(i));
    }
    out.push_back(std::move(raw));
  }
  return out;
}

std::vector<CanonicalConfig> SupernetModel::extract_canonical(std::vector<int>* promoted) const {
  std::vector<CanonicalConfig> out;
  const auto raw = extract_raw_valid(promoted);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out.push_back(canonicalize(blocks_[i].spec(), raw[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// PlainBlockModule
// ---------------------------------------------------------------------------

PlainBlockModule::PlainBlockModule(ParameterStore& store, const std::string& prefix,
                                   const ConcreteBlock& block, int input_width, int output_width,
                                   int stride, Activation activation, double se_reduction)
    : config_(block.config),
      input_width_(input_width),
      output_width_(output_width),
      stride_(stride),
      activation_(activation) {
  if (config_.is_skip()) return;  // identity block, no parameters
  const int mid = mid_channels();
  expand_w_ = &store.create(prefix + ".expand.w", {mid, input_width_});
  expand_bn_.emplace(store, prefix + ".expand_bn", mid);
  for (std::size_t b = 0; b < config_.branches.size(); ++b) {
    const auto& br = config_.branches[b];
    const int channels = static_cast<int>(br.expansion * input_width_);
    branch_ws_.push_back(&store.create(prefix + ".branch" + std::to_string(b) + ".w",
                                       {channels, br.kernel, br.kernel}));
    branch_bns_.emplace_back(store, prefix + ".branch" + std::to_string(b) + ".bn", channels);
  }
  if (block.se_enabled) {
    se_.emplace(store, prefix + ".se", mid, se_reduction);
  }
  project_w_ = &store.create(prefix + ".project.w", {output_width_, mid});
  project_bn_.emplace(store, prefix + ".project_bn", output_width_);
}

int PlainBlockModule::mid_channels() const {
  return static_cast<int>(config_.total_expansion() * input_width_);
}

int PlainBlockModule::branch_offset(int b) const {
  int off = 0;
  for (int i = 0; i < b; ++i) {
    off += static_cast<int>(config_.branches[static_cast<std::size_t>(i)].expansion * input_width_);
  }
  return off;
}

void PlainBlockModule::init_weights(Rng& rng) {
  if (config_.is_skip()) return;
  init_normal(*expand_w_, rng, he_std(input_width_));
  for (std::size_t b = 0; b < branch_ws_.size(); ++b) {
    const int k = config_.branches[b].kernel;
    init_normal(*branch_ws_[b], rng, he_std(static_cast<double>(k) * k));
  }
  if (se_) se_->init_weights(rng);
  init_normal(*project_w_, rng, he_std(mid_channels()));
}

NodeId PlainBlockModule::build(ForwardContext& ctx, NodeId x, NodeId* excitation) const {
  Graph& g = ctx.graph;
  if (config_.is_skip()) return x;

  NodeId mid = ops::pointwise_conv(g, x, g.leaf(*expand_w_));
  mid = expand_bn_->build(ctx, mid);
  mid = apply_activation(g, mid, activation_);

  std::vector<NodeId> branch_outputs;
  for (std::size_t b = 0; b < config_.branches.size(); ++b) {
    const auto& br = config_.branches[b];
    const int channels = static_cast<int>(br.expansion * input_width_);
    const NodeId branch_in = ops::slice_channels(g, mid, branch_offset(static_cast<int>(b)),
                                                 channels);
    NodeId y = ops::dwconv2d(g, branch_in, g.leaf(*branch_ws_[b]), stride_);
    y = branch_bns_[b].build(ctx, y);
    y = apply_activation(g, y, activation_);
    branch_outputs.push_back(y);
  }

  NodeId merged = ops::concat_channels(g, branch_outputs);
  if (se_) merged = se_->build(ctx, merged, excitation);
  NodeId projected = ops::pointwise_conv(g, merged, g.leaf(*project_w_));
  projected = project_bn_->build(ctx, projected);
  return stride_ == 1 && input_width_ == output_width_ ? ops::add(g, x, projected) : projected;
}

// ---------------------------------------------------------------------------
// PlainNetwork
// ---------------------------------------------------------------------------

PlainNetwork::PlainNetwork(ConcreteArchitecture arch, std::uint64_t seed, double se_reduction)
    : arch_(std::move(arch)) {
  arch_.validate();
  stem_w_ = &store_.create("stem.conv.w", {arch_.stem.width, arch_.input_channels,
                                           arch_.stem.kernel, arch_.stem.kernel});
  stem_bn_.emplace(store_, "stem.bn", arch_.stem.width);
  const auto refs = arch_.flat_blocks();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    blocks_.emplace_back(store_, "b" + std::to_string(i), *refs[i].block, refs[i].input_width,
                         refs[i].output_width, refs[i].stride, arch_.activation, se_reduction);
  }
  head_conv_w_ = &store_.create("head.conv.w",
                                {arch_.head.feature_width, arch_.stages.back().width});
  head_bn_.emplace(store_, "head.bn", arch_.head.feature_width);
  head_fc_w_ = &store_.create("head.fc.w", {arch_.head.num_classes, arch_.head.feature_width});
  head_fc_b_ = &store_.create("head.fc.b", {arch_.head.num_classes});

  Rng rng = Rng::derive(seed, 0x504c);
  init_normal(*stem_w_, rng,
              he_std(static_cast<double>(arch_.input_channels) * arch_.stem.kernel *
                     arch_.stem.kernel));
  for (auto& block : blocks_) block.init_weights(rng);
  init_normal(*head_conv_w_, rng, he_std(arch_.stages.back().width));
  init_normal(*head_fc_w_, rng, he_std(arch_.head.feature_width));
  head_fc_b_->value.fill(0.0);
}

PlainNetwork::ForwardResult PlainNetwork::forward(ForwardContext& ctx, NodeId images) {
  Graph& g = ctx.graph;
  NodeId x = ops::conv2d(g, images, g.leaf(*stem_w_), arch_.stem.stride);
  x = stem_bn_->build(ctx, x);
  x = apply_activation(g, x, arch_.activation);

  ForwardResult result;
  for (auto& block : blocks_) {
    NodeId excitation = -1;
    x = block.build(ctx, x, &excitation);
    if (block.has_se()) result.excitations.push_back(excitation);
  }

  x = ops::pointwise_conv(g, x, g.leaf(*head_conv_w_));
  x = head_bn_->build(ctx, x);
  x = apply_activation(g, x, arch_.activation);
  const NodeId pooled = ops::global_avg_pool(g, x);
  result.logits = ops::fc(g, pooled, g.leaf(*head_fc_w_), g.leaf(*head_fc_b_));
  return result;
}

// ---------------------------------------------------------------------------
// Materialization from supernet slices
// ---------------------------------------------------------------------------

namespace {

void copy_tensor(const Tensor& src, Tensor& dst) {
  if (!src.same_shape(dst)) throw InvariantError("materialize: tensor shape mismatch");
  dst.v = src.v;
}

// For one canonical branch (kernel k), the contributing superkernels in
// superkernel order with their selected channel counts.
struct Contribution {
  int sk_index;
  int channels;
};

std::vector<Contribution> contributions_for(const SupernetBlockModule& block, int kernel,
                                            const Decision& raw) {
  std::vector<Contribution> out;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    if (raw[j].kernel == kernel && raw[j].expansion > 0.0) {
      out.push_back({static_cast<int>(j),
                     block.superkernels()[j].expansion_channels(raw[j].expansion)});
    }
  }
  return out;
}

}  // namespace

PlainNetwork materialize_from_supernet(SupernetModel& model,
                                       const std::vector<Decision>& raw_decisions) {
  if (raw_decisions.size() != model.blocks().size()) {
    throw InvariantError("materialize: decision list does not match block count");
  }
  std::vector<CanonicalConfig> configs;
  for (std::size_t i = 0; i < raw_decisions.size(); ++i) {
    configs.push_back(canonicalize(model.blocks()[i].spec(), raw_decisions[i]));
  }
  const ConcreteArchitecture arch = architecture_from_decisions(model.spec(), configs);
  PlainNetwork net(arch, /*seed=*/0);

  // Stem and head copy over unchanged.
  copy_tensor(model.store().at("stem.conv.w").value, net.store().at("stem.conv.w").value);
  for (const std::string suffix : {".gamma", ".beta", ".mean", ".var"}) {
    copy_tensor(model.store().at("stem.bn" + suffix).value,
                net.store().at("stem.bn" + suffix).value);
    copy_tensor(model.store().at("head.bn" + suffix).value,
                net.store().at("head.bn" + suffix).value);
  }
  copy_tensor(model.store().at("head.conv.w").value, net.store().at("head.conv.w").value);
  copy_tensor(model.store().at("head.fc.w").value, net.store().at("head.fc.w").value);
  copy_tensor(model.store().at("head.fc.b").value, net.store().at("head.fc.b").value);

  for (std::size_t i = 0; i < model.blocks().size(); ++i) {
    auto& sblock = model.blocks()[i];
    auto& pblock = net.blocks()[i];
    const CanonicalConfig& config = configs[i];
    if (config.is_skip()) continue;

    const Decision& raw = raw_decisions[i];
    const int c_in = sblock.spec().input_width;

    // Selected mid-channel indices in plain order: canonical branches in
    // order, each contribution's first e*c_in channels of its branch slice.
    std::vector<int> mid_indices;
    for (std::size_t b = 0; b < config.branches.size(); ++b) {
      for (const auto& contrib : contributions_for(sblock, config.branches[b].kernel, raw)) {
        const int off = sblock.branch_offset(contrib.sk_index);
        for (int ch = 0; ch < contrib.channels; ++ch) mid_indices.push_back(off + ch);
      }
    }
    const int mid = pblock.mid_channels();
    if (static_cast<int>(mid_indices.size()) != mid) {
      throw InvariantError("materialize: selected channel count mismatch");
    }

    // Expansion conv rows and its batch norm.
    for (int r = 0; r < mid; ++r) {
      const int src_row = mid_indices[static_cast<std::size_t>(r)];
      for (int c = 0; c < c_in; ++c) {
        pblock.expand_weights().value.v[static_cast<std::size_t>(r) * c_in + c] =
            sblock.expand_weights().value.v[static_cast<std::size_t>(src_row) * c_in + c];
      }
      pblock.expand_bn().gamma().value.v[static_cast<std::size_t>(r)] =
          sblock.expand_bn().gamma().value.v[static_cast<std::size_t>(src_row)];
      pblock.expand_bn().beta().value.v[static_cast<std::size_t>(r)] =
          sblock.expand_bn().beta().value.v[static_cast<std::size_t>(src_row)];
      pblock.expand_bn().running_mean().value.v[static_cast<std::size_t>(r)] =
          sblock.expand_bn().running_mean().value.v[static_cast<std::size_t>(src_row)];
      pblock.expand_bn().running_var().value.v[static_cast<std::size_t>(r)] =
          sblock.expand_bn().running_var().value.v[static_cast<std::size_t>(src_row)];
    }

    // Depthwise branches: per canonical branch, concatenate the contributing
    // superkernels' central k x k windows over their selected channels.
    for (std::size_t b = 0; b < config.branches.size(); ++b) {
      const int k = config.branches[b].kernel;
      Parameter& dst = pblock.branch_weights(static_cast<int>(b));
      BnModule& dst_bn = pblock.branch_bn(static_cast<int>(b));
      int dst_ch = 0;
      for (const auto& contrib : contributions_for(sblock, k, raw)) {
        auto& sk = sblock.superkernels()[static_cast<std::size_t>(contrib.sk_index)];
        BnModule& src_bn = sblock.branch_bn(contrib.sk_index);
        const int k_max = sk.max_kernel();
        const int off = (k_max - k) / 2;
        for (int ch = 0; ch < contrib.channels; ++ch) {
          for (int r = 0; r < k; ++r) {
            for (int c = 0; c < k; ++c) {
              dst.value.v[(static_cast<std::size_t>(dst_ch) * k + r) * k + c] =
                  sk.weights().value.v[(static_cast<std::size_t>(ch) * k_max + off + r) * k_max +
                                       off + c];
            }
          }
          dst_bn.gamma().value.v[static_cast<std::size_t>(dst_ch)] =
              src_bn.gamma().value.v[static_cast<std::size_t>(ch)];
          dst_bn.beta().value.v[static_cast<std::size_t>(dst_ch)] =
              src_bn.beta().value.v[static_cast<std::size_t>(ch)];
          dst_bn.running_mean().value.v[static_cast<std::size_t>(dst_ch)] =
              src_bn.running_mean().value.v[static_cast<std::size_t>(ch)];
          dst_bn.running_var().value.v[static_cast<std::size_t>(dst_ch)] =
              src_bn.running_var().value.v[static_cast<std::size_t>(ch)];
          ++dst_ch;
        }
      }
    }

    // Projection columns and its batch norm (full copy).
    const int c_out = sblock.spec().output_width;
    const int s_mid = sblock.mid_channels();
    for (int r = 0; r < c_out; ++r) {
      for (int c = 0; c < mid; ++c) {
        pblock.project_weights().value.v[static_cast<std::size_t>(r) * mid + c] =
            sblock.project_weights()
                .value.v[static_cast<std::size_t>(r) * s_mid +
                         mid_indices[static_cast<std::size_t>(c)]];
      }
    }
    copy_tensor(sblock.project_bn().gamma().value, pblock.project_bn().gamma().value);
    copy_tensor(sblock.project_bn().beta().value, pblock.project_bn().beta().value);
    copy_tensor(sblock.project_bn().running_mean().value,
                pblock.project_bn().running_mean().value);
    copy_tensor(sblock.project_bn().running_var().value, pblock.project_bn().running_var().value);
  }
  return net;
}

}  // namespace s3nas
