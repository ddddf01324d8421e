#include "superkernel.hpp"

#include <algorithm>
#include <cmath>

namespace s3nas {

namespace {

NodeId one_minus(Graph& g, NodeId x) {
  return ops::add_const(g, ops::scale_const(g, x, -1.0), 1.0);
}

}  // namespace

SuperkernelModule::SuperkernelModule(ParameterStore& store, std::string prefix,
                                     SuperkernelSpec spec, int c_in)
    : spec_(std::move(spec)), c_in_(c_in) {
  spec_.validate();
  if (c_in <= 0) throw InvariantError("superkernel input width must be positive");
  const int c = channels();
  if (c <= 0) {
    throw InvariantError("superkernel must have a positive maximum expansion");
  }
  const int k = spec_.max_kernel();
  weights_ = &store.create(prefix + ".w", {c, k, k});
  const int K = static_cast<int>(spec_.kernel_sizes.size());
  const int E = static_cast<int>(spec_.expansion_ratios.size());
  if (K > 1) {
    t_kernel_ = &store.create(prefix + ".t_kernel", {K - 1});
    has_kernel_thresholds_ = true;
  }
  if (E > 1) {
    t_expansion_ = &store.create(prefix + ".t_expansion", {E - 1});
    has_expansion_thresholds_ = true;
  }
}

int SuperkernelModule::channels() const {
  return expansion_channels(spec_.max_expansion());
}

int SuperkernelModule::expansion_channels(double ratio) const {
  const double c = ratio * c_in_;
  if (c != std::floor(c)) {
    throw InvariantError("expansion ratio gives a fractional channel count");
  }
  return static_cast<int>(c);
}

void SuperkernelModule::init_weights(Rng& rng) {
  const int k = spec_.max_kernel();
  const double std = std::sqrt(2.0 / (static_cast<double>(k) * k));
  for (auto& w : weights_->value.v) w = rng.normal() * std;
  sync_thresholds();
}

void SuperkernelModule::sync_thresholds() {
  if (has_kernel_thresholds_) {
    const auto norms = kernel_shell_norms();
    for (std::size_t i = 1; i < norms.size(); ++i) {
      t_kernel_->value.v[i - 1] = norms[i];
    }
  }
  if (has_expansion_thresholds_) {
    const auto norms = expansion_shell_norms();
    for (std::size_t d = 1; d < norms.size(); ++d) {
      t_expansion_->value.v[d - 1] = norms[d];
    }
  }
}

Tensor SuperkernelModule::ring_mask(int kernel_index) const {
  const int k_max = spec_.max_kernel();
  const int c = channels();
  const int outer = spec_.kernel_sizes[static_cast<std::size_t>(kernel_index)];
  const int inner = kernel_index == 0 ? 0 : spec_.kernel_sizes[static_cast<std::size_t>(kernel_index - 1)];
  const int outer_off = (k_max - outer) / 2;
  const int inner_off = (k_max - inner) / 2;
  Tensor mask({c, k_max, k_max});
  for (int ch = 0; ch < c; ++ch) {
    for (int r = 0; r < k_max; ++r) {
      for (int col = 0; col < k_max; ++col) {
        const bool in_outer = r >= outer_off && r < k_max - outer_off && col >= outer_off &&
                              col < k_max - outer_off;
        const bool in_inner = inner > 0 && r >= inner_off && r < k_max - inner_off &&
                              col >= inner_off && col < k_max - inner_off;
        if (in_outer && !in_inner) {
          mask.v[(static_cast<std::size_t>(ch) * k_max + r) * k_max + col] = 1.0;
        }
      }
    }
  }
  return mask;
}

Tensor SuperkernelModule::expansion_mask(int expansion_index) const {
  const int k_max = spec_.max_kernel();
  const int c = channels();
  const int hi = expansion_channels(spec_.expansion_ratios[static_cast<std::size_t>(expansion_index)]);
  const int lo = expansion_index == 0
                     ? 0
                     : expansion_channels(spec_.expansion_ratios[static_cast<std::size_t>(expansion_index - 1)]);
  Tensor mask({c, k_max, k_max});
  for (int ch = lo; ch < hi; ++ch) {
    for (int i = 0; i < k_max * k_max; ++i) {
      mask.v[static_cast<std::size_t>(ch) * k_max * k_max + i] = 1.0;
    }
  }
  return mask;
}

Tensor SuperkernelModule::decision_mask(const BranchDecision& decision) const {
  const int k_max = spec_.max_kernel();
  const int c = channels();
  const int keep_c = expansion_channels(decision.expansion);
  const int off = (k_max - decision.kernel) / 2;
  Tensor mask({c, k_max, k_max});
  for (int ch = 0; ch < keep_c; ++ch) {
    for (int r = off; r < k_max - off; ++r) {
      for (int col = off; col < k_max - off; ++col) {
        mask.v[(static_cast<std::size_t>(ch) * k_max + r) * k_max + col] = 1.0;
      }
    }
  }
  return mask;
}

SuperkernelNodes SuperkernelModule::build(Graph& g) const {
  const int K = static_cast<int>(spec_.kernel_sizes.size());
  const int E = static_cast<int>(spec_.expansion_ratios.size());
  const int c = channels();
  if (!weights_->value.all_finite()) {
    throw NumericError("superkernel weights are non-finite");
  }

  SuperkernelNodes out;
  const NodeId w = g.leaf(*weights_);
  const NodeId one = g.constant_scalar(1.0);

  // Kernel-size indicators on the raw ring shells at full expansion width.
  std::vector<NodeId> kernel_ind(static_cast<std::size_t>(K), -1);  // index i>=1
  for (int i = 1; i < K; ++i) {
    const NodeId shell = ops::mask_mul(g, w, ring_mask(i));
    const NodeId norm = ops::squared_norm(g, shell);
    const NodeId t = ops::vector_element(g, g.leaf(*t_kernel_), i - 1);
    kernel_ind[static_cast<std::size_t>(i)] = ops::hard_indicator_st(g, norm, t);
  }
  std::vector<NodeId> kernel_prod(static_cast<std::size_t>(K), one);
  for (int i = 1; i < K; ++i) {
    kernel_prod[static_cast<std::size_t>(i)] =
        ops::mul(g, kernel_prod[static_cast<std::size_t>(i - 1)],
                 kernel_ind[static_cast<std::size_t>(i)]);
  }

  // Kernel-masked weights: shell i participates iff every indicator up to i
  // is on.
  NodeId kernel_masked = ops::mask_mul(g, w, ring_mask(0));
  for (int i = 1; i < K; ++i) {
    const NodeId shell = ops::mask_mul(g, w, ring_mask(i));
    kernel_masked =
        ops::add(g, kernel_masked, ops::scale(g, shell, kernel_prod[static_cast<std::size_t>(i)]));
  }

  // Expansion indicators on the kernel-masked channel slices.
  std::vector<NodeId> exp_ind(static_cast<std::size_t>(E), -1);
  for (int d = 1; d < E; ++d) {
    const NodeId slice = ops::mask_mul(g, kernel_masked, expansion_mask(d));
    const NodeId norm = ops::squared_norm(g, slice);
    const NodeId t = ops::vector_element(g, g.leaf(*t_expansion_), d - 1);
    exp_ind[static_cast<std::size_t>(d)] = ops::hard_indicator_st(g, norm, t);
  }
  std::vector<NodeId> exp_prod(static_cast<std::size_t>(E), one);
  for (int d = 1; d < E; ++d) {
    exp_prod[static_cast<std::size_t>(d)] =
        ops::mul(g, exp_prod[static_cast<std::size_t>(d - 1)], exp_ind[static_cast<std::size_t>(d)]);
  }

  NodeId masked = ops::mask_mul(g, kernel_masked, expansion_mask(0));
  for (int d = 1; d < E; ++d) {
    const NodeId slice = ops::mask_mul(g, kernel_masked, expansion_mask(d));
    masked = ops::add(g, masked, ops::scale(g, slice, exp_prod[static_cast<std::size_t>(d)]));
  }
  out.masked_weights = masked;

  // Condition variables: F selects exactly one kernel size, G exactly one
  // expansion; each is the nested product times the complement of the next
  // indicator.
  out.F.resize(static_cast<std::size_t>(K));
  for (int c_idx = 0; c_idx < K; ++c_idx) {
    NodeId f = kernel_prod[static_cast<std::size_t>(c_idx)];
    if (c_idx + 1 < K) {
      f = ops::mul(g, f, one_minus(g, kernel_ind[static_cast<std::size_t>(c_idx + 1)]));
    }
    out.F[static_cast<std::size_t>(c_idx)] = f;
  }
  out.G.resize(static_cast<std::size_t>(E));
  for (int d = 0; d < E; ++d) {
    NodeId gnode = exp_prod[static_cast<std::size_t>(d)];
    if (d + 1 < E) {
      gnode = ops::mul(g, gnode, one_minus(g, exp_ind[static_cast<std::size_t>(d + 1)]));
    }
    out.G[static_cast<std::size_t>(d)] = gnode;
  }

  // Per-channel expansion gate (applied to branch outputs downstream of
  // batch norm) and the branch-on scalar.
  Tensor base({c});
  const int first_hi = expansion_channels(spec_.expansion_ratios[0]);
  for (int ch = 0; ch < first_hi; ++ch) base.v[static_cast<std::size_t>(ch)] = 1.0;
  NodeId gate = g.constant(std::move(base));
  for (int d = 1; d < E; ++d) {
    const int lo = expansion_channels(spec_.expansion_ratios[static_cast<std::size_t>(d - 1)]);
    const int hi = expansion_channels(spec_.expansion_ratios[static_cast<std::size_t>(d)]);
    Tensor basis({c});
    for (int ch = lo; ch < hi; ++ch) basis.v[static_cast<std::size_t>(ch)] = 1.0;
    gate = ops::add(g, gate,
                    ops::scale(g, g.constant(std::move(basis)), exp_prod[static_cast<std::size_t>(d)]));
  }
  out.gate_vector = gate;

  if (spec_.allows_skip()) {
    out.branch_on = E > 1 ? exp_ind[1] : g.constant_scalar(0.0);
  } else {
    out.branch_on = one;
  }
  return out;
}

SuperkernelNodes SuperkernelModule::build_forced(Graph& g, const BranchDecision& decision) const {
  const auto& kernels = spec_.kernel_sizes;
  const auto& expansions = spec_.expansion_ratios;
  const auto kit = std::find(kernels.begin(), kernels.end(), decision.kernel);
  const auto eit = std::find(expansions.begin(), expansions.end(), decision.expansion);
  if (kit == kernels.end() || eit == expansions.end()) {
    throw InvariantError("forced decision is not in the candidate sets");
  }
  if (!weights_->value.all_finite()) {
    throw NumericError("superkernel weights are non-finite");
  }

  SuperkernelNodes out;
  const NodeId w = g.leaf(*weights_);
  out.masked_weights = ops::mask_mul(g, w, decision_mask(decision));

  const std::size_t kidx = static_cast<std::size_t>(kit - kernels.begin());
  const std::size_t eidx = static_cast<std::size_t>(eit - expansions.begin());
  out.F.resize(kernels.size());
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    out.F[i] = g.constant_scalar(i == kidx ? 1.0 : 0.0);
  }
  out.G.resize(expansions.size());
  for (std::size_t d = 0; d < expansions.size(); ++d) {
    out.G[d] = g.constant_scalar(d == eidx ? 1.0 : 0.0);
  }

  const int c = channels();
  const int keep = expansion_channels(decision.expansion);
  Tensor gate({c});
  for (int ch = 0; ch < keep; ++ch) gate.v[static_cast<std::size_t>(ch)] = 1.0;
  out.gate_vector = g.constant(std::move(gate));
  out.branch_on = g.constant_scalar(decision.expansion > 0.0 ? 1.0 : 0.0);
  return out;
}

std::vector<double> SuperkernelModule::kernel_shell_norms() const {
  const int K = static_cast<int>(spec_.kernel_sizes.size());
  std::vector<double> norms(static_cast<std::size_t>(K), 0.0);
  for (int i = 0; i < K; ++i) {
    const Tensor mask = ring_mask(i);
    double s = 0.0;
    for (std::size_t j = 0; j < mask.v.size(); ++j) {
      if (mask.v[j] != 0.0) {
        const double x = weights_->value.v[j];
        s += x * x;
      }
    }
    norms[static_cast<std::size_t>(i)] = s;
  }
  return norms;
}

std::vector<double> SuperkernelModule::expansion_shell_norms() const {
  // Kernel-mask first with the current hard kernel decision, per the nesting
  // of the expansion indicators.
  const auto knorms = kernel_shell_norms();
  const int K = static_cast<int>(spec_.kernel_sizes.size());
  int chosen = 0;
  for (int i = 1; i < K; ++i) {
    if (knorms[static_cast<std::size_t>(i)] > t_kernel_->value.v[static_cast<std::size_t>(i - 1)]) {
      chosen = i;
    } else {
      break;
    }
  }
  const int k_keep = spec_.kernel_sizes[static_cast<std::size_t>(chosen)];
  const int k_max = spec_.max_kernel();
  const int off = (k_max - k_keep) / 2;

  const int E = static_cast<int>(spec_.expansion_ratios.size());
  std::vector<double> norms(static_cast<std::size_t>(E), 0.0);
  for (int d = 0; d < E; ++d) {
    const int lo = d == 0 ? 0
                          : expansion_channels(spec_.expansion_ratios[static_cast<std::size_t>(d - 1)]);
    const int hi = expansion_channels(spec_.expansion_ratios[static_cast<std::size_t>(d)]);
    double s = 0.0;
    for (int ch = lo; ch < hi; ++ch) {
      for (int r = off; r < k_max - off; ++r) {
        for (int col = off; col < k_max - off; ++col) {
          const double x = weights_->value.v[(static_cast<std::size_t>(ch) * k_max + r) * k_max + col];
          s += x * x;
        }
      }
    }
    norms[static_cast<std::size_t>(d)] = s;
  }
  return norms;
}

BranchDecision SuperkernelModule::extract_decision() const {
  const auto knorms = kernel_shell_norms();
  const int K = static_cast<int>(spec_.kernel_sizes.size());
  int kidx = 0;
  for (int i = 1; i < K; ++i) {
    if (knorms[static_cast<std::size_t>(i)] > t_kernel_->value.v[static_cast<std::size_t>(i - 1)]) {
      kidx = i;
    } else {
      break;
    }
  }
  const auto enorms = expansion_shell_norms();
  const int E = static_cast<int>(spec_.expansion_ratios.size());
  int eidx = 0;
  for (int d = 1; d < E; ++d) {
    if (enorms[static_cast<std::size_t>(d)] > t_expansion_->value.v[static_cast<std::size_t>(d - 1)]) {
      eidx = d;
    } else {
      break;
    }
  }
  return {spec_.kernel_sizes[static_cast<std::size_t>(kidx)],
          spec_.expansion_ratios[static_cast<std::size_t>(eidx)]};
}

}  // namespace s3nas
