#include "search.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace s3nas {

using ordered_json = nlohmann::ordered_json;

std::vector<BranchDecision> superkernel_options(const SuperkernelSpec& spec) {
  std::vector<BranchDecision> options;
  if (spec.allows_skip()) {
    options.push_back({spec.kernel_sizes.front(), 0.0});
  }
  for (int k : spec.kernel_sizes) {
    for (double e : spec.expansion_ratios) {
      if (e > 0.0) options.push_back({k, e});
    }
  }
  return options;
}

Decision sample_block_decision(const BlockSpec& block, Rng& rng) {
  std::vector<std::vector<BranchDecision>> options;
  for (const auto& sk : block.superkernels) options.push_back(superkernel_options(sk));
  Decision decision(block.superkernels.size());
  while (true) {
    bool any_on = false;
    for (std::size_t j = 0; j < options.size(); ++j) {
      decision[j] = options[j][static_cast<std::size_t>(rng.index(options[j].size()))];
      any_on = any_on || decision[j].expansion > 0.0;
    }
    if (any_on || block.can_skip()) return decision;
  }
}

NodeId differentiable_block_latency(Graph& g, const BlockSpec& block,
                                    const std::vector<SuperkernelNodes>& nodes,
                                    const LatencyTable& table, int block_index) {
  if (nodes.size() != block.superkernels.size()) {
    throw InvariantError("condition-variable list does not match superkernel count");
  }
  NodeId total = g.constant_scalar(0.0);
  Decision decision(block.superkernels.size());
  // Depth-first product over every raw decision vector; lookups go through
  // the canonical form so equivalent vectors share one profiled value.
  auto recurse = [&](auto&& self, std::size_t j, NodeId prefix) -> void {
    if (j == block.superkernels.size()) {
      const CanonicalConfig config = canonicalize_unchecked(decision);
      if (config.is_skip() && !block.can_skip()) return;
      const double p = table.lookup(block_index, config);
      total = ops::add(g, total, ops::scale_const(g, prefix, p));
      return;
    }
    const auto& sk = block.superkernels[j];
    for (std::size_t ki = 0; ki < sk.kernel_sizes.size(); ++ki) {
      for (std::size_t ei = 0; ei < sk.expansion_ratios.size(); ++ei) {
        decision[j] = {sk.kernel_sizes[ki], sk.expansion_ratios[ei]};
        const NodeId fg = ops::mul(g, nodes[j].F[ki], nodes[j].G[ei]);
        self(self, j + 1, ops::mul(g, prefix, fg));
      }
    }
  };
  recurse(recurse, 0, g.constant_scalar(1.0));
  return total;
}

NodeId latency_gated_loss(Graph& g, NodeId ce, NodeId total_latency, const SearchConfig& cfg) {
  const NodeId overshoot =
      ops::relu_scalar(g, ops::add_const(g, total_latency, -cfg.target_latency_ms));
  const NodeId inner = ops::add_const(g, ops::scale_const(g, overshoot, cfg.lambda2), 1.0);
  const NodeId penalty = ops::scale_const(g, ops::log_scalar(g, inner), cfg.lambda1);
  return ops::add(g, ce, penalty);
}

namespace {

double decisions_latency(const SupernetSpec& supernet, const LatencyTable& table,
                         const std::vector<Decision>& decisions) {
  double total = table.stem_ms() + table.head_ms();
  for (std::size_t l = 0; l < decisions.size(); ++l) {
    const auto& block = supernet.block_at(static_cast<int>(l));
    total += table.lookup(static_cast<int>(l), canonicalize(block, decisions[l]));
  }
  return total;
}

std::vector<CanonicalConfig> canonical_of(const SupernetSpec& supernet,
                                          const std::vector<Decision>& decisions) {
  std::vector<CanonicalConfig> out;
  for (std::size_t l = 0; l < decisions.size(); ++l) {
    out.push_back(canonicalize(supernet.block_at(static_cast<int>(l)), decisions[l]));
  }
  return out;
}

void shuffle_indices(std::vector<int>& indices, Rng& rng) {
  for (std::size_t i = indices.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(indices[i - 1], indices[j]);
  }
}

}  // namespace

double latency_percentile(const SupernetSpec& supernet, const LatencyTable& table, double q,
                          int samples, std::uint64_t seed) {
  if (samples < 1) throw ConfigError("latency percentile needs at least one sample");
  Rng rng = Rng::derive(seed, 0x9c7);
  std::vector<double> latencies;
  latencies.reserve(static_cast<std::size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    std::vector<Decision> decisions;
    for (int l = 0; l < supernet.total_blocks(); ++l) {
      decisions.push_back(sample_block_decision(supernet.block_at(l), rng));
    }
    latencies.push_back(decisions_latency(supernet, table, decisions));
  }
  std::sort(latencies.begin(), latencies.end());
  const double pos = std::clamp(q, 0.0, 1.0) * (latencies.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, latencies.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return latencies[lo] * (1.0 - frac) + latencies[hi] * frac;
}

// ---------------------------------------------------------------------------
// SearchEngine
// ---------------------------------------------------------------------------

SearchEngine::SearchEngine(SupernetSpec supernet, SynthTaskSpec synth, SearchConfig config,
                           LatencyTable table)
    : supernet_(std::move(supernet)),
      synth_(std::move(synth)),
      config_(config),
      table_(std::move(table)),
      optimizer_(config.momentum, config.grad_clip),
      rng_(Rng::derive(config.seed, 0x5ea2c4)) {
  config_.validate();
  synth_.validate();
  supernet_.validate();
  model_ = std::make_unique<SupernetModel>(supernet_, config_.seed);
  split_ = split_indices(synth_);
  if (static_cast<int>(split_.train.size()) < config_.batch_size) {
    throw ConfigError("training split smaller than one batch");
  }
  target_ms_ = config_.target_latency_ms > 0.0
                   ? config_.target_latency_ms
                   : latency_percentile(supernet_, table_, 0.40, 1000, config_.seed);
}

double SearchEngine::lr_at(double epochs_done) const {
  const double decays = std::floor(epochs_done / config_.lr_decay_interval_epochs);
  return config_.lr * std::pow(config_.lr_decay, decays);
}

double SearchEngine::network_latency_of(const std::vector<Decision>& decisions) const {
  return decisions_latency(supernet_, table_, decisions);
}

void SearchEngine::phase1_train() {
  const int steps_per_epoch = static_cast<int>(split_.train.size()) / config_.batch_size;
  const long long steps = std::llround(config_.phase1_epochs * steps_per_epoch);
  std::vector<int> order = split_.train;
  for (long long step = 0; step < steps; ++step) {
    const std::size_t pos = static_cast<std::size_t>(step % steps_per_epoch) *
                            static_cast<std::size_t>(config_.batch_size);
    if (step % steps_per_epoch == 0) shuffle_indices(order, rng_);

    std::vector<Decision> decisions;
    for (auto& block : model_->blocks()) {
      decisions.push_back(sample_block_decision(block.spec(), rng_));
    }

    const Batch batch = make_batch(synth_, order, pos, static_cast<std::size_t>(config_.batch_size));
    Graph g;
    std::vector<BnPendingUpdate> bn_updates;
    ForwardContext ctx{g, /*training=*/true, &bn_updates};
    const NodeId images = g.constant(batch.images);
    const auto fwd = model_->forward(ctx, images, &decisions);
    const NodeId ce = ops::softmax_cross_entropy(g, fwd.logits, batch.labels);
    const double ce_value = g.value(ce).item();
    if (!std::isfinite(ce_value)) {
      throw NumericError("phase-1 loss diverged at step " + std::to_string(global_step_));
    }
    model_->store().zero_grads();
    g.backward(ce);
    const double lr = lr_at(epochs_done_);
    optimizer_.step(model_->store(), lr);
    apply_bn_updates(bn_updates);

    log_.push_back({global_step_, ce_value, network_latency_of(decisions), 0.0, lr});
    ++global_step_;
    epochs_done_ += 1.0 / steps_per_epoch;
  }
  phase1_done_ = true;
}

void SearchEngine::phase2_train() {
  // Thresholds begin training here; re-sync them to the current shell norms
  // so every indicator sits on its decision boundary.
  model_->sync_thresholds();
  const int steps_per_epoch = static_cast<int>(split_.train.size()) / config_.batch_size;
  const long long steps = std::llround(config_.phase2_epochs * steps_per_epoch);
  const double fixed_ms = table_.stem_ms() + table_.head_ms();
  std::vector<int> order = split_.train;
  SearchConfig gate_cfg = config_;
  gate_cfg.target_latency_ms = target_ms_;
  for (long long step = 0; step < steps; ++step) {
    const std::size_t pos = static_cast<std::size_t>(step % steps_per_epoch) *
                            static_cast<std::size_t>(config_.batch_size);
    if (step % steps_per_epoch == 0) shuffle_indices(order, rng_);

    const Batch batch = make_batch(synth_, order, pos, static_cast<std::size_t>(config_.batch_size));
    Graph g;
    std::vector<BnPendingUpdate> bn_updates;
    ForwardContext ctx{g, /*training=*/true, &bn_updates};
    const NodeId images = g.constant(batch.images);
    const auto fwd = model_->forward(ctx, images, nullptr);
    const NodeId ce = ops::softmax_cross_entropy(g, fwd.logits, batch.labels);

    NodeId total_latency = g.constant_scalar(fixed_ms);
    for (std::size_t l = 0; l < model_->blocks().size(); ++l) {
      const NodeId block_latency =
          differentiable_block_latency(g, model_->blocks()[l].spec(), fwd.blocks[l].superkernels,
                                       table_, static_cast<int>(l));
      total_latency = ops::add(g, total_latency, block_latency);
    }
    const NodeId loss = latency_gated_loss(g, ce, total_latency, gate_cfg);

    const double loss_value = g.value(loss).item();
    if (!std::isfinite(loss_value)) {
      throw NumericError("phase-2 loss diverged at step " + std::to_string(global_step_));
    }
    model_->store().zero_grads();
    g.backward(loss);
    const double lr = lr_at(epochs_done_);
    optimizer_.step(model_->store(), lr);
    apply_bn_updates(bn_updates);

    log_.push_back({global_step_, g.value(ce).item(), g.value(total_latency).item(),
                    loss_value - g.value(ce).item(), lr});
    ++global_step_;
    epochs_done_ += 1.0 / steps_per_epoch;
  }
  phase2_done_ = true;
}

double SearchEngine::validation_accuracy(const std::vector<Decision>& decisions) {
  int correct = 0;
  const int batch = config_.batch_size;
  for (std::size_t pos = 0; pos < split_.val.size(); pos += static_cast<std::size_t>(batch)) {
    const std::size_t count = std::min<std::size_t>(batch, split_.val.size() - pos);
    const Batch b = make_batch(synth_, split_.val, pos, count);
    Graph g;
    ForwardContext ctx{g, /*training=*/false, nullptr};
    const auto fwd = model_->forward(ctx, g.constant(b.images), &decisions);
    const Tensor& logits = g.value(fwd.logits);
    const int classes = logits.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = &logits.v[i * static_cast<std::size_t>(classes)];
      int arg = 0;
      for (int k = 1; k < classes; ++k) {
        if (row[k] > row[arg]) arg = k;
      }
      if (arg == b.labels[i]) ++correct;
    }
  }
  return split_.val.empty() ? 0.0 : static_cast<double>(correct) / split_.val.size();
}

SearchOutputs SearchEngine::finish() {
  SearchOutputs out;
  out.target_latency_ms = target_ms_;

  std::vector<Decision> decisions = model_->extract_raw_valid(&out.promoted_blocks);
  double estimate = network_latency_of(decisions);
  if (estimate > target_ms_) {
    decisions = greedy_repair(*model_, std::move(decisions), table_, target_ms_, &out.repairs);
    estimate = network_latency_of(decisions);
  }
  out.estimated_latency_ms = estimate;
  out.feasible = estimate <= target_ms_;
  out.architecture = architecture_from_decisions(supernet_, canonical_of(supernet_, decisions));
  out.supernet_val_accuracy = validation_accuracy(decisions);

  std::ostringstream metrics;
  metrics << "step,ce,latency_ms,gated_term,lr\n";
  for (const auto& row : log_) {
    metrics << row.step << ',' << format_exact(row.ce) << ',' << format_exact(row.latency_ms)
            << ',' << format_exact(row.gated) << ',' << format_exact(row.lr) << '\n';
  }
  out.metrics_csv = metrics.str();

  ordered_json j;
  j["seed"] = config_.seed;
  j["target_latency_ms"] = target_ms_;
  j["estimated_latency_ms"] = out.estimated_latency_ms;
  j["feasible"] = out.feasible;
  j["val_accuracy"] = out.supernet_val_accuracy;
  j["decisions"] = ordered_json::array();
  for (const auto& ref : out.architecture.flat_blocks()) {
    j["decisions"].push_back(ref.block->config.id());
  }
  j["promoted_blocks"] = out.promoted_blocks;
  j["repairs"] = ordered_json::array();
  for (const auto& r : out.repairs) {
    ordered_json jr;
    jr["block"] = r.block_index;
    jr["from"] = r.from;
    jr["to"] = r.to;
    jr["saved_ms"] = r.saved_ms;
    j["repairs"].push_back(std::move(jr));
  }
  j["steps"] = global_step_;
  out.summary_json = j.dump(2) + "\n";
  return out;
}

SearchOutputs SearchEngine::run() {
  phase1_train();
  phase2_train();
  return finish();
}

std::vector<Decision> greedy_repair(const SupernetModel& model, std::vector<Decision> decisions,
                                    const LatencyTable& table, double target_ms,
                                    std::vector<RepairStep>* log) {
  const auto& blocks = model.blocks();
  auto block_latency = [&](std::size_t l, const Decision& d) {
    return table.lookup(static_cast<int>(l), canonicalize(blocks[l].spec(), d));
  };
  double total = table.stem_ms() + table.head_ms();
  for (std::size_t l = 0; l < decisions.size(); ++l) total += block_latency(l, decisions[l]);

  while (total > target_ms) {
    double best_score = -1.0;
    double best_saved = 0.0;
    std::size_t best_block = 0;
    Decision best_decision;
    for (std::size_t l = 0; l < decisions.size(); ++l) {
      const auto& spec = blocks[l].spec();
      const double current_ms = block_latency(l, decisions[l]);
      for (std::size_t j = 0; j < decisions[l].size(); ++j) {
        const auto& sk_spec = spec.superkernels[j];
        const auto& sk = blocks[l].superkernels()[j];
        const BranchDecision current = decisions[l][j];
        if (current.expansion <= 0.0) continue;

        std::vector<std::pair<BranchDecision, double>> moves;  // (new decision, dropped norm)
        // Kernel downgrade: drop the outermost ring over the selected
        // channels.
        const auto kit = std::find(sk_spec.kernel_sizes.begin(), sk_spec.kernel_sizes.end(),
                                   current.kernel);
        if (kit != sk_spec.kernel_sizes.begin()) {
          const int smaller = *(kit - 1);
          const int k_max = sk.max_kernel();
          const int off_outer = (k_max - current.kernel) / 2;
          const int off_inner = (k_max - smaller) / 2;
          const int keep_c = sk.expansion_channels(current.expansion);
          double dropped = 0.0;
          for (int ch = 0; ch < keep_c; ++ch) {
            for (int r = off_outer; r < k_max - off_outer; ++r) {
              for (int c = off_outer; c < k_max - off_outer; ++c) {
                const bool inner = r >= off_inner && r < k_max - off_inner && c >= off_inner &&
                                   c < k_max - off_inner;
                if (inner) continue;
                const double w =
                    sk.weights().value.v[(static_cast<std::size_t>(ch) * k_max + r) * k_max + c];
                dropped += w * w;
              }
            }
          }
          moves.push_back({{smaller, current.expansion}, dropped});
        }
        // Expansion downgrade: drop the outer channel slice at the current
        // kernel window.
        const auto eit = std::find(sk_spec.expansion_ratios.begin(),
                                   sk_spec.expansion_ratios.end(), current.expansion);
        if (eit != sk_spec.expansion_ratios.begin()) {
          const double smaller = *(eit - 1);
          const int k_max = sk.max_kernel();
          const int off = (k_max - current.kernel) / 2;
          const int lo = sk.expansion_channels(smaller);
          const int hi = sk.expansion_channels(current.expansion);
          double dropped = 0.0;
          for (int ch = lo; ch < hi; ++ch) {
            for (int r = off; r < k_max - off; ++r) {
              for (int c = off; c < k_max - off; ++c) {
                const double w =
                    sk.weights().value.v[(static_cast<std::size_t>(ch) * k_max + r) * k_max + c];
                dropped += w * w;
              }
            }
          }
          moves.push_back({{current.kernel, smaller}, dropped});
        }

        for (const auto& [move, dropped] : moves) {
          Decision candidate = decisions[l];
          candidate[j] = move;
          const CanonicalConfig canon = canonicalize_unchecked(candidate);
          if (canon.is_skip() && !spec.can_skip()) continue;
          const double saved = current_ms - block_latency(l, candidate);
          if (saved <= 0.0) continue;
          const double score = saved / (dropped + 1e-12);
          if (score > best_score) {
            best_score = score;
            best_saved = saved;
            best_block = l;
            best_decision = candidate;
          }
        }
      }
    }
    if (best_score < 0.0) break;  // nothing left to downgrade
    if (log != nullptr) {
      log->push_back({static_cast<int>(best_block),
                      canonicalize_unchecked(decisions[best_block]).id(),
                      canonicalize_unchecked(best_decision).id(), best_saved});
    }
    decisions[best_block] = std::move(best_decision);
    total -= best_saved;
  }
  return decisions;
}

// ---------------------------------------------------------------------------
// Plain-network training
// ---------------------------------------------------------------------------

TrainResult train_plain_network(PlainNetwork& net, const SynthTaskSpec& synth,
                                const TrainOptions& options) {
  const SplitIndices split = split_indices(synth);
  if (static_cast<int>(split.train.size()) < options.batch_size) {
    throw ConfigError("training split smaller than one batch");
  }
  const int steps_per_epoch = static_cast<int>(split.train.size()) / options.batch_size;
  const long long total_steps = std::max<long long>(1, std::llround(options.epochs * steps_per_epoch));
  SgdOptimizer optimizer(options.momentum, options.grad_clip);
  Rng rng = Rng::derive(options.seed, 0x7a41);
  std::vector<int> order = split.train;

  TrainResult result;
  for (long long step = 0; step < total_steps; ++step) {
    if (step % steps_per_epoch == 0) shuffle_indices(order, rng);
    const std::size_t pos = static_cast<std::size_t>(step % steps_per_epoch) *
                            static_cast<std::size_t>(options.batch_size);
    const Batch batch = make_batch(synth, order, pos, static_cast<std::size_t>(options.batch_size));
    Graph g;
    std::vector<BnPendingUpdate> bn_updates;
    ForwardContext ctx{g, /*training=*/true, &bn_updates};
    const auto fwd = net.forward(ctx, g.constant(batch.images));
    const NodeId ce = ops::softmax_cross_entropy(g, fwd.logits, batch.labels);
    result.final_ce = g.value(ce).item();
    if (!std::isfinite(result.final_ce)) {
      throw NumericError("training loss diverged at step " + std::to_string(step));
    }
    net.store().zero_grads();
    g.backward(ce);
    const double lr = options.cosine_decay
                          ? options.lr * 0.5 *
                                (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                                static_cast<double>(total_steps)))
                          : options.lr;
    optimizer.step(net.store(), lr);
    apply_bn_updates(bn_updates);
  }
  result.val_accuracy = evaluate_plain_network(net, synth, split.val, options.batch_size);
  return result;
}

double evaluate_plain_network(PlainNetwork& net, const SynthTaskSpec& synth,
                              const std::vector<int>& indices, int batch_size) {
  if (indices.empty()) return 0.0;
  int correct = 0;
  for (std::size_t pos = 0; pos < indices.size(); pos += static_cast<std::size_t>(batch_size)) {
    const std::size_t count = std::min<std::size_t>(batch_size, indices.size() - pos);
    const Batch b = make_batch(synth, indices, pos, count);
    Graph g;
    ForwardContext ctx{g, /*training=*/false, nullptr};
    const auto fwd = net.forward(ctx, g.constant(b.images));
    const Tensor& logits = g.value(fwd.logits);
    const int classes = logits.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      const double* row = &logits.v[i * static_cast<std::size_t>(classes)];
      int arg = 0;
      for (int k = 1; k < classes; ++k) {
        if (row[k] > row[arg]) arg = k;
      }
      if (arg == b.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / indices.size();
}

// ---------------------------------------------------------------------------
// Random baselines
// ---------------------------------------------------------------------------

ConcreteArchitecture sample_architecture_in_band(const SupernetSpec& supernet,
                                                 const LatencyTable& table, double lo_ms,
                                                 double hi_ms, Rng& rng) {
  constexpr long long kMaxDraws = 100000;
  for (long long draw = 0; draw < kMaxDraws; ++draw) {
    std::vector<Decision> decisions;
    for (int l = 0; l < supernet.total_blocks(); ++l) {
      decisions.push_back(sample_block_decision(supernet.block_at(l), rng));
    }
    const double ms = decisions_latency(supernet, table, decisions);
    if (ms >= lo_ms && ms <= hi_ms) {
      return architecture_from_decisions(supernet, canonical_of(supernet, decisions));
    }
  }
  throw InfeasibleError("no architecture found in latency band [" + format_number(lo_ms) + ", " +
                        format_number(hi_ms) + "] ms after 100000 draws");
}

namespace {

std::vector<CanonicalConfig> arch_configs(const ConcreteArchitecture& arch) {
  std::vector<CanonicalConfig> out;
  for (const auto& ref : arch.flat_blocks()) out.push_back(ref.block->config);
  return out;
}

}  // namespace

BaselineOutputs random_search_baseline(const SupernetSpec& supernet, const SynthTaskSpec& synth,
                                       const LatencyTable& table, const SearchConfig& search,
                                       const BaselineConfig& baseline, double target_ms,
                                       bool full, const std::string& best_checkpoint_path) {
  if (baseline.n_models < 1) throw ConfigError("baseline needs at least one model");
  Rng rng = Rng::derive(search.seed, full ? 0xba5e1 : 0xba5e0);
  const double lo = baseline.band_low * target_ms;

  BaselineOutputs out;
  std::size_t best = 0;
  std::unique_ptr<PlainNetwork> best_net;
  for (int i = 0; i < baseline.n_models; ++i) {
    BaselineCandidate candidate;
    candidate.architecture = sample_architecture_in_band(supernet, table, lo, target_ms, rng);
    candidate.latency_ms = estimate_network_latency(candidate.architecture, table);
    auto net = std::make_unique<PlainNetwork>(candidate.architecture,
                                              search.seed + static_cast<std::uint64_t>(i) + 1);
    TrainOptions options;
    options.epochs = full ? baseline.full_epochs : baseline.proxy_epochs;
    options.batch_size = search.batch_size;
    options.lr = search.lr;
    options.momentum = search.momentum;
    options.grad_clip = search.grad_clip;
    options.cosine_decay = true;
    options.seed = search.seed + static_cast<std::uint64_t>(i) + 1;
    candidate.val_accuracy = train_plain_network(*net, synth, options).val_accuracy;
    out.candidates.push_back(std::move(candidate));

    const auto& a = out.candidates.back();
    const auto& b = out.candidates[best];
    const bool better =
        i == 0 || a.val_accuracy > b.val_accuracy ||
        (a.val_accuracy == b.val_accuracy && a.latency_ms < b.latency_ms) ||
        (a.val_accuracy == b.val_accuracy && a.latency_ms == b.latency_ms &&
         arch_configs(a.architecture) < arch_configs(b.architecture));
    if (better) {
      best = out.candidates.size() - 1;
      best_net = std::move(net);
    }
  }
  out.best = out.candidates[best];
  if (!best_checkpoint_path.empty() && best_net != nullptr) {
    best_net->store().save(best_checkpoint_path);
  }

  ordered_json j;
  j["mode"] = full ? "random-selection" : "random-search";
  j["seed"] = search.seed;
  j["target_latency_ms"] = target_ms;
  j["band"] = ordered_json::array({lo, target_ms});
  j["best_index"] = best;
  j["best_latency_ms"] = out.best.latency_ms;
  j["best_val_accuracy"] = out.best.val_accuracy;
  j["candidates"] = ordered_json::array();
  for (const auto& c : out.candidates) {
    ordered_json jc;
    jc["latency_ms"] = c.latency_ms;
    jc["val_accuracy"] = c.val_accuracy;
    j["candidates"].push_back(std::move(jc));
  }
  out.summary_json = j.dump(2) + "\n";
  return out;
}

}  // namespace s3nas
