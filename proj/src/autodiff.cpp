#include "autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace s3nas {

bool Tensor::all_finite() const {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double Tensor::squared_norm() const {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

// ---------------------------------------------------------------------------
// ParameterStore
// ---------------------------------------------------------------------------

Parameter& ParameterStore::create(const std::string& name, std::vector<int> shape,
                                  bool trainable) {
  if (index_.count(name)) {
    throw InvariantError("duplicate parameter name '" + name + "'");
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(shape);
  p->grad = Tensor(shape);
  p->trainable = trainable;
  index_[name] = items_.size();
  items_.push_back(std::move(p));
  return *items_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw InvariantError("unknown parameter '" + name + "'");
  return *items_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw InvariantError("unknown parameter '" + name + "'");
  return *items_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : items_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

void ParameterStore::zero_grads() {
  for (auto& p : items_) p->zero_grad();
}

namespace {
constexpr char kCheckpointMagic[8] = {'S', '3', 'N', 'C', 'K', 'P', 'T', '1'};
}

void ParameterStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t count = items_.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& p : items_) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(p->name.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(p->name.data(), name_len);
    const std::uint32_t ndim = static_cast<std::uint32_t>(p->value.shape.size());
    out.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
    for (int d : p->value.shape) {
      const std::int64_t dim = d;
      out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    }
    out.write(reinterpret_cast<const char*>(p->value.v.data()),
              static_cast<std::streamsize>(p->value.v.size() * sizeof(double)));
  }
  if (!out) throw ConfigError("write failed for checkpoint '" + path + "'");
}

void ParameterStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ConfigError("file '" + path + "' is not a checkpoint");
  }
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (count != items_.size()) {
    throw ConfigError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(items_.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), sizeof(ndim));
    std::vector<int> shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) {
      std::int64_t dim = 0;
      in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
      shape[d] = static_cast<int>(dim);
    }
    if (!in) throw ConfigError("truncated checkpoint '" + path + "'");
    if (!contains(name)) throw ConfigError("checkpoint tensor '" + name + "' unknown to model");
    Parameter& p = at(name);
    if (p.value.shape != shape) {
      throw ConfigError("checkpoint tensor '" + name + "' has mismatched shape");
    }
    in.read(reinterpret_cast<char*>(p.value.v.data()),
            static_cast<std::streamsize>(p.value.v.size() * sizeof(double)));
    if (!in) throw ConfigError("truncated checkpoint '" + path + "'");
  }
}

double global_grad_norm(ParameterStore& store) {
  double sq = 0.0;
  for (Parameter* p : store.trainable()) sq += p->grad.squared_norm();
  return std::sqrt(sq);
}

void SgdOptimizer::step(ParameterStore& store, double lr) {
  const double norm = global_grad_norm(store);
  last_grad_norm_ = norm;
  const double scale = (grad_clip_ > 0.0 && norm > grad_clip_) ? grad_clip_ / norm : 1.0;
  for (Parameter* p : store.trainable()) {
    auto [it, inserted] = velocity_.try_emplace(p->name, Tensor(p->value.shape));
    Tensor& vel = it->second;
    for (std::size_t i = 0; i < p->value.v.size(); ++i) {
      const double g = p->grad.v[i] * scale;
      vel.v[i] = momentum_ * vel.v[i] + g;
      p->value.v[i] -= lr * vel.v[i];
    }
    if (!p->value.all_finite()) {
      throw NumericError("parameter '" + p->name + "' became non-finite during update");
    }
  }
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

NodeId Graph::leaf(Parameter& p) {
  Node node;
  node.value = p.value;
  node.requires_grad = p.trainable;
  node.param = &p;
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::constant(Tensor t) {
  Node node;
  node.value = std::move(t);
  node.requires_grad = false;
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::add_node(Tensor value, std::vector<NodeId> inputs,
                       std::function<void(Graph&, Node&)> backward) {
  if (!value.all_finite()) {
    throw NumericError("operation produced non-finite values");
  }
  Node node;
  node.value = std::move(value);
  for (NodeId in : inputs) {
    if (nodes_[static_cast<std::size_t>(in)].requires_grad) {
      node.requires_grad = true;
      break;
    }
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::backward(NodeId loss) {
  Node& top = nodes_[static_cast<std::size_t>(loss)];
  if (!top.value.is_scalar() && top.value.numel() != 1) {
    throw InvariantError("backward() requires a scalar loss");
  }
  for (auto& n : nodes_) {
    if (n.requires_grad && n.grad.v.size() != n.value.v.size()) {
      n.grad = Tensor(n.value.shape);
    } else if (n.requires_grad) {
      n.grad.fill(0.0);
    }
  }
  if (!top.requires_grad) return;
  top.grad.v[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (n.backward) n.backward(*this, n);
    if (n.param != nullptr) {
      for (std::size_t k = 0; k < n.grad.v.size(); ++k) {
        n.param->grad.v[k] += n.grad.v[k];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

double stable_sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double sigmoid_derivative(double z) {
  const double s = stable_sigmoid(z);
  return s * (1.0 - s);
}

namespace ops {

namespace {

void check_shape(const Tensor& t, std::size_t rank, const std::string& what) {
  if (t.shape.size() != rank) {
    throw InvariantError(what + ": expected rank " + std::to_string(rank) + " tensor");
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

NodeId unary_elementwise(Graph& g, NodeId x, double (*fwd)(double), double (*dfdx)(double)) {
  const Tensor& xv = g.value(x);
  Tensor out(xv.shape.empty() ? Tensor::scalar(0.0) : Tensor(xv.shape));
  out.shape = xv.shape;
  out.v.resize(xv.v.size());
  for (std::size_t i = 0; i < xv.v.size(); ++i) out.v[i] = fwd(xv.v[i]);
  return g.add_node(std::move(out), {x}, [x, dfdx](Graph& g2, Graph::Node& n) {
    const Tensor& xv2 = g2.value(x);
    if (!g2.requires_grad(x)) return;
    Tensor& gx = g2.grad(x);
    for (std::size_t i = 0; i < xv2.v.size(); ++i) {
      gx.v[i] += n.grad.v[i] * dfdx(xv2.v[i]);
    }
  });
}

int out_size(int in, int kernel, int stride) {
  const int pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace

NodeId conv2d(Graph& g, NodeId x, NodeId w, int stride) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  check_shape(xv, 4, "conv2d input");
  check_shape(wv, 4, "conv2d weight");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Co = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != C || wv.dim(3) != k) {
    throw InvariantError("conv2d weight shape does not match input channels");
  }
  const int pad = k / 2;
  const int Ho = out_size(H, k, stride), Wo = out_size(W, k, stride);
  Tensor out({B, Co, Ho, Wo});
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Co; ++co) {
      for (int ci = 0; ci < C; ++ci) {
        const double* xp = &xv.v[((static_cast<std::size_t>(b) * C + ci) * H) * W];
        const double* wp = &wv.v[((static_cast<std::size_t>(co) * C + ci) * k) * k];
        double* op = &out.v[((static_cast<std::size_t>(b) * Co + co) * Ho) * Wo];
        for (int kh = 0; kh < k; ++kh) {
          for (int kw = 0; kw < k; ++kw) {
            const double weight = wp[kh * k + kw];
            if (weight == 0.0) continue;
            for (int oh = 0; oh < Ho; ++oh) {
              const int ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = xp + static_cast<std::size_t>(ih) * W;
              double* orow = op + static_cast<std::size_t>(oh) * Wo;
              for (int ow = 0; ow < Wo; ++ow) {
                const int iw = ow * stride - pad + kw;
                if (iw < 0 || iw >= W) continue;
                orow[ow] += weight * xrow[iw];
              }
            }
          }
        }
      }
    }
  }
  return g.add_node(std::move(out), {x, w}, [x, w, stride](Graph& g2, Graph::Node& n) {
    const Tensor& xv2 = g2.value(x);
    const Tensor& wv2 = g2.value(w);
    const int B = xv2.dim(0), C = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
    const int Co = wv2.dim(0), k = wv2.dim(2);
    const int pad = k / 2;
    const int Ho = n.value.dim(2), Wo = n.value.dim(3);
    const bool need_x = g2.requires_grad(x);
    const bool need_w = g2.requires_grad(w);
    for (int b = 0; b < B; ++b) {
      for (int co = 0; co < Co; ++co) {
        const double* gp = &n.grad.v[((static_cast<std::size_t>(b) * Co + co) * Ho) * Wo];
        for (int ci = 0; ci < C; ++ci) {
          const double* xp = &xv2.v[((static_cast<std::size_t>(b) * C + ci) * H) * W];
          const double* wp = &wv2.v[((static_cast<std::size_t>(co) * C + ci) * k) * k];
          double* gxp = need_x ? &g2.grad(x).v[((static_cast<std::size_t>(b) * C + ci) * H) * W]
                               : nullptr;
          double* gwp = need_w ? &g2.grad(w).v[((static_cast<std::size_t>(co) * C + ci) * k) * k]
                               : nullptr;
          for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
              double wgrad = 0.0;
              const double weight = wp[kh * k + kw];
              for (int oh = 0; oh < Ho; ++oh) {
                const int ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                for (int ow = 0; ow < Wo; ++ow) {
                  const int iw = ow * stride - pad + kw;
                  if (iw < 0 || iw >= W) continue;
                  const double go = gp[oh * Wo + ow];
                  wgrad += go * xp[ih * W + iw];
                  if (need_x) gxp[ih * W + iw] += go * weight;
                }
              }
              if (need_w) gwp[kh * k + kw] += wgrad;
            }
          }
        }
      }
    }
  });
}

NodeId dwconv2d(Graph& g, NodeId x, NodeId w, int stride) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  check_shape(xv, 4, "dwconv2d input");
  check_shape(wv, 3, "dwconv2d weight");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int k = wv.dim(1);
  if (wv.dim(0) != C || wv.dim(2) != k) {
    throw InvariantError("dwconv2d weight shape does not match input channels");
  }
  const int pad = k / 2;
  const int Ho = out_size(H, k, stride), Wo = out_size(W, k, stride);
  Tensor out({B, C, Ho, Wo});
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const double* xp = &xv.v[((static_cast<std::size_t>(b) * C + c) * H) * W];
      const double* wp = &wv.v[(static_cast<std::size_t>(c) * k) * k];
      double* op = &out.v[((static_cast<std::size_t>(b) * C + c) * Ho) * Wo];
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = 0.0;
          for (int kh = 0; kh < k; ++kh) {
            const int ih = oh * stride - pad + kh;
            if (ih < 0 || ih >= H) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int iw = ow * stride - pad + kw;
              if (iw < 0 || iw >= W) continue;
              acc += wp[kh * k + kw] * xp[ih * W + iw];
            }
          }
          op[oh * Wo + ow] = acc;
        }
      }
    }
  }
  return g.add_node(std::move(out), {x, w}, [x, w, stride](Graph& g2, Graph::Node& n) {
    const Tensor& xv2 = g2.value(x);
    const Tensor& wv2 = g2.value(w);
    const int B = xv2.dim(0), C = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
    const int k = wv2.dim(1);
    const int pad = k / 2;
    const int Ho = n.value.dim(2), Wo = n.value.dim(3);
    const bool need_x = g2.requires_grad(x);
    const bool need_w = g2.requires_grad(w);
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        const double* gp = &n.grad.v[((static_cast<std::size_t>(b) * C + c) * Ho) * Wo];
        const double* xp = &xv2.v[((static_cast<std::size_t>(b) * C + c) * H) * W];
        const double* wp = &wv2.v[(static_cast<std::size_t>(c) * k) * k];
        double* gxp = need_x ? &g2.grad(x).v[((static_cast<std::size_t>(b) * C + c) * H) * W]
                             : nullptr;
        double* gwp = need_w ? &g2.grad(w).v[(static_cast<std::size_t>(c) * k) * k] : nullptr;
        for (int oh = 0; oh < Ho; ++oh) {
          for (int ow = 0; ow < Wo; ++ow) {
            const double go = gp[oh * Wo + ow];
            if (go == 0.0) continue;
            for (int kh = 0; kh < k; ++kh) {
              const int ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= H) continue;
              for (int kw = 0; kw < k; ++kw) {
                const int iw = ow * stride - pad + kw;
                if (iw < 0 || iw >= W) continue;
                if (need_w) gwp[kh * k + kw] += go * xp[ih * W + iw];
                if (need_x) gxp[ih * W + iw] += go * wp[kh * k + kw];
              }
            }
          }
        }
      }
    }
  });
}

NodeId pointwise_conv(Graph& g, NodeId x, NodeId w) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  check_shape(xv, 4, "pointwise_conv input");
  check_shape(wv, 2, "pointwise_conv weight");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Co = wv.dim(0);
  if (wv.dim(1) != C) throw InvariantError("pointwise_conv weight/channel mismatch");
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out({B, Co, H, W});
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Co; ++co) {
      double* op = &out.v[(static_cast<std::size_t>(b) * Co + co) * hw];
      for (int ci = 0; ci < C; ++ci) {
        const double weight = wv.v[static_cast<std::size_t>(co) * C + ci];
        if (weight == 0.0) continue;
        const double* xp = &xv.v[(static_cast<std::size_t>(b) * C + ci) * hw];
        for (std::size_t i = 0; i < hw; ++i) op[i] += weight * xp[i];
      }
    }
  }
  return g.add_node(std::move(out), {x, w}, [x, w](Graph& g2, Graph::Node& n) {
    const Tensor& xv2 = g2.value(x);
    const Tensor& wv2 = g2.value(w);
    const int B = xv2.dim(0), C = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
    const int Co = wv2.dim(0);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const bool need_x = g2.requires_grad(x);
    const bool need_w = g2.requires_grad(w);
    for (int b = 0; b < B; ++b) {
      for (int co = 0; co < Co; ++co) {
        const double* gp = &n.grad.v[(static_cast<std::size_t>(b) * Co + co) * hw];
        for (int ci = 0; ci < C; ++ci) {
          const double* xp = &xv2.v[(static_cast<std::size_t>(b) * C + ci) * hw];
          const double weight = wv2.v[static_cast<std::size_t>(co) * C + ci];
          double wgrad = 0.0;
          double* gxp = need_x ? &g2.grad(x).v[(static_cast<std::size_t>(b) * C + ci) * hw]
                               : nullptr;
          for (std::size_t i = 0; i < hw; ++i) {
            wgrad += gp[i] * xp[i];
            if (need_x) gxp[i] += gp[i] * weight;
          }
          if (need_w) g2.grad(w).v[static_cast<std::size_t>(co) * C + ci] += wgrad;
        }
      }
    }
  });
}

NodeId fc(Graph& g, NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  const Tensor& bv = g.value(b);
  check_shape(xv, 2, "fc input");
  check_shape(wv, 2, "fc weight");
  check_shape(bv, 1, "fc bias");
  const int B = xv.dim(0), In = xv.dim(1), Out = wv.dim(0);
  if (wv.dim(1) != In || bv.dim(0) != Out) throw InvariantError("fc shape mismatch");
  Tensor out({B, Out});
  for (int n = 0; n < B; ++n) {
    for (int o = 0; o < Out; ++o) {
      double acc = bv.v[static_cast<std::size_t>(o)];
      const double* xp = &xv.v[static_cast<std::size_t>(n) * In];
      const double* wp = &wv.v[static_cast<std::size_t>(o) * In];
      for (int i = 0; i < In; ++i) acc += xp[i] * wp[i];
      out.v[static_cast<std::size_t>(n) * Out + o] = acc;
    }
  }
  return g.add_node(std::move(out), {x, w, b}, [x, w, b](Graph& g2, Graph::Node& n) {
    const Tensor& xv2 = g2.value(x);
    const Tensor& wv2 = g2.value(w);
    const int B = xv2.dim(0), In = xv2.dim(1), Out = wv2.dim(0);
    const bool need_x = g2.requires_grad(x);
    const bool need_w = g2.requires_grad(w);
    const bool need_b = g2.requires_grad(b);
    for (int s = 0; s < B; ++s) {
      const double* gp = &n.grad.v[static_cast<std::size_t>(s) * Out];
      const double* xp = &xv2.v[static_cast<std::size_t>(s) * In];
      for (int o = 0; o < Out; ++o) {
        const double go = gp[o];
        if (go == 0.0) continue;
        if (need_b) g2.grad(b).v[static_cast<std::size_t>(o)] += go;
        const double* wp = &wv2.v[static_cast<std::size_t>(o) * In];
        double* gwp = need_w ? &g2.grad(w).v[static_cast<std::size_t>(o) * In] : nullptr;
        double* gxp = need_x ? &g2.grad(x).v[static_cast<std::size_t>(s) * In] : nullptr;
        for (int i = 0; i < In; ++i) {
          if (need_w) gwp[i] += go * xp[i];
          if (need_x) gxp[i] += go * wp[i];
        }
      }
    }
  });
}

NodeId relu(Graph& g, NodeId x) {
  return unary_elementwise(
      g, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

NodeId relu6(Graph& g, NodeId x) {
  return unary_elementwise(
      g, x, [](double v) { return std::min(std::max(v, 0.0), 6.0); },
      [](double v) { return v > 0.0 && v < 6.0 ? 1.0 : 0.0; });
}

NodeId h_swish(Graph& g, NodeId x) {
  // x * relu6(x + 3) / 6
  return unary_elementwise(
      g, x,
      [](double v) { return v * std::min(std::max(v + 3.0, 0.0), 6.0) / 6.0; },
      [](double v) {
        if (v <= -3.0) return 0.0;
        if (v >= 3.0) return 1.0;
        return (2.0 * v + 3.0) / 6.0;
      });
}

NodeId sigmoid(Graph& g, NodeId x) {
  return unary_elementwise(g, x, [](double v) { return stable_sigmoid(v); },
                           [](double v) { return sigmoid_derivative(v); });
}

NodeId global_avg_pool(Graph& g, NodeId x) {
  const Tensor& xv = g.value(x);
  check_shape(xv, 4, "global_avg_pool input");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out({B, C});
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const double* xp = &xv.v[(static_cast<std::size_t>(b) * C + c) * hw];
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += xp[i];
      out.v[static_cast<std::size_t>(b) * C + c] = acc / static_cast<double>(hw);
    }
  }
  return g.add_node(std::move(out), {x}, [x](Graph& g2, Graph::Node& n) {
    if (!g2.requires_grad(x)) return;
    const Tensor& xv2 = g2.value(x);
    const int B = xv2.dim(0), C = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        const double go = n.grad.v[static_cast<std::size_t>(b) * C + c] / static_cast<double>(hw);
        double* gxp = &g2.grad(x).v[(static_cast<std::size_t>(b) * C + c) * hw];
        for (std::size_t i = 0; i < hw; ++i) gxp[i] += go;
      }
    }
  });
}

NodeId channelwise_mul(Graph& g, NodeId x, NodeId s) {
  const Tensor& xv = g.value(x);
  const Tensor& sv = g.value(s);
  check_shape(xv, 4, "channelwise_mul input");
  check_shape(sv, 2, "channelwise_mul scale");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (sv.dim(0) != B || sv.dim(1) != C) {
    throw InvariantError("channelwise_mul scale must be (B, C)");
  }
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out(xv.shape);
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const double sc = sv.v[static_cast<std::size_t>(b) * C + c];
      const double* xp = &xv.v[(static_cast<std::size_t>(b) * C + c) * hw];
      double* op = &out.v[(static_cast<std::size_t>(b) * C + c) * hw];
      for (std::size_t i = 0; i < hw; ++i) op[i] = xp[i] * sc;
    }
  }
  return g.add_node(std::move(out), {x, s}, [x, s](Graph& g2, Graph::Node& n) {
    const Tensor& xv2 = g2.value(x);
    const Tensor& sv2 = g2.value(s);
    const int B = xv2.dim(0), C = xv2.dim(1), H = xv2.dim(2), W = xv2.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    const bool need_x = g2.requires_grad(x);
    const bool need_s = g2.requires_grad(s);
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        const std::size_t base = (static_cast<std::size_t>(b) * C + c) * hw;
        const double sc = sv2.v[static_cast<std::size_t>(b) * C + c];
        double sgrad = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          const double go = n.grad.v[base + i];
          if (need_x) g2.grad(x).v[base + i] += go * sc;
          sgrad += go * xv2.v[base + i];
        }
        if (need_s) g2.grad(s).v[static_cast<std::size_t>(b) * C + c] += sgrad;
      }
    }
  });
}

NodeId add(Graph& g, NodeId a, NodeId b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (!av.same_shape(bv)) throw InvariantError("add: shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
  return g.add_node(std::move(out), {a, b}, [a, b](Graph& g2, Graph::Node& n) {
    if (g2.requires_grad(a)) accumulate(g2.grad(a), n.grad);
    if (g2.requires_grad(b)) accumulate(g2.grad(b), n.grad);
  });
}

NodeId sub(Graph& g, NodeId a, NodeId b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (!av.same_shape(bv)) throw InvariantError("sub: shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv.v[i];
  return g.add_node(std::move(out), {a, b}, [a, b](Graph& g2, Graph::Node& n) {
    if (g2.requires_grad(a)) accumulate(g2.grad(a), n.grad);
    if (g2.requires_grad(b)) {
      Tensor& gb = g2.grad(b);
      for (std::size_t i = 0; i < gb.v.size(); ++i) gb.v[i] -= n.grad.v[i];
    }
  });
}

NodeId mul(Graph& g, NodeId a, NodeId b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (!av.same_shape(bv)) throw InvariantError("mul: shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv.v[i];
  return g.add_node(std::move(out), {a, b}, [a, b](Graph& g2, Graph::Node& n) {
    const Tensor& av2 = g2.value(a);
    const Tensor& bv2 = g2.value(b);
    if (g2.requires_grad(a)) {
      Tensor& ga = g2.grad(a);
      for (std::size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += n.grad.v[i] * bv2.v[i];
    }
    if (g2.requires_grad(b)) {
      Tensor& gb = g2.grad(b);
      for (std::size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += n.grad.v[i] * av2.v[i];
    }
  });
}

NodeId scale(Graph& g, NodeId x, NodeId s) {
  const Tensor& xv = g.value(x);
  const Tensor& sv = g.value(s);
  if (sv.numel() != 1) throw InvariantError("scale: scale must be a scalar node");
  Tensor out = xv;
  const double sc = sv.v[0];
  for (auto& e : out.v) e *= sc;
  return g.add_node(std::move(out), {x, s}, [x, s](Graph& g2, Graph::Node& n) {
    const Tensor& xv2 = g2.value(x);
    const double sc = g2.value(s).v[0];
    if (g2.requires_grad(x)) {
      Tensor& gx = g2.grad(x);
      for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += n.grad.v[i] * sc;
    }
    if (g2.requires_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv2.v.size(); ++i) acc += n.grad.v[i] * xv2.v[i];
      g2.grad(s).v[0] += acc;
    }
  });
}

NodeId scale_const(Graph& g, NodeId x, double c) {
  Tensor out = g.value(x);
  for (auto& e : out.v) e *= c;
  return g.add_node(std::move(out), {x}, [x, c](Graph& g2, Graph::Node& n) {
    if (!g2.requires_grad(x)) return;
    Tensor& gx = g2.grad(x);
    for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += n.grad.v[i] * c;
  });
}

NodeId add_const(Graph& g, NodeId x, double c) {
  Tensor out = g.value(x);
  for (auto& e : out.v) e += c;
  return g.add_node(std::move(out), {x}, [x](Graph& g2, Graph::Node& n) {
    if (g2.requires_grad(x)) accumulate(g2.grad(x), n.grad);
  });
}

NodeId mask_mul(Graph& g, NodeId x, const Tensor& mask) {
  const Tensor& xv = g.value(x);
  if (!xv.same_shape(mask)) throw InvariantError("mask_mul: shape mismatch");
  Tensor out = xv;
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= mask.v[i];
  Tensor mask_copy = mask;
  return g.add_node(std::move(out), {x},
                    [x, mask_copy = std::move(mask_copy)](Graph& g2, Graph::Node& n) {
                      if (!g2.requires_grad(x)) return;
                      Tensor& gx = g2.grad(x);
                      for (std::size_t i = 0; i < gx.v.size(); ++i) {
                        gx.v[i] += n.grad.v[i] * mask_copy.v[i];
                      }
                    });
}

NodeId squared_norm(Graph& g, NodeId x) {
  const Tensor& xv = g.value(x);
  Tensor out = Tensor::scalar(xv.squared_norm());
  return g.add_node(std::move(out), {x}, [x](Graph& g2, Graph::Node& n) {
    if (!g2.requires_grad(x)) return;
    const Tensor& xv2 = g2.value(x);
    const double go = n.grad.v[0];
    Tensor& gx = g2.grad(x);
    for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += 2.0 * go * xv2.v[i];
  });
}

NodeId softmax_cross_entropy(Graph& g, NodeId logits, const std::vector<int>& labels) {
  const Tensor& lv = g.value(logits);
  check_shape(lv, 2, "softmax_cross_entropy logits");
  const int B = lv.dim(0), K = lv.dim(1);
  if (static_cast<int>(labels.size()) != B) {
    throw InvariantError("softmax_cross_entropy: one label per row required");
  }
  Tensor probs({B, K});
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* row = &lv.v[static_cast<std::size_t>(b) * K];
    double maxv = row[0];
    for (int k = 1; k < K; ++k) maxv = std::max(maxv, row[k]);
    double denom = 0.0;
    for (int k = 0; k < K; ++k) denom += std::exp(row[k] - maxv);
    const double log_denom = std::log(denom);
    const int label = labels[static_cast<std::size_t>(b)];
    if (label < 0 || label >= K) throw InvariantError("label out of range");
    for (int k = 0; k < K; ++k) {
      probs.v[static_cast<std::size_t>(b) * K + k] = std::exp(row[k] - maxv) / denom;
    }
    total += -(row[label] - maxv - log_denom);
  }
  Tensor out = Tensor::scalar(total / B);
  return g.add_node(std::move(out), {logits},
                    [logits, labels, probs = std::move(probs)](Graph& g2, Graph::Node& n) {
                      if (!g2.requires_grad(logits)) return;
                      const int B = probs.dim(0), K = probs.dim(1);
                      const double go = n.grad.v[0] / B;
                      Tensor& gl = g2.grad(logits);
                      for (int b = 0; b < B; ++b) {
                        for (int k = 0; k < K; ++k) {
                          const std::size_t i = static_cast<std::size_t>(b) * K + k;
                          const double onehot = k == labels[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
                          gl.v[i] += go * (probs.v[i] - onehot);
                        }
                      }
                    });
}

NodeId relu_scalar(Graph& g, NodeId x) { return relu(g, x); }

NodeId log_scalar(Graph& g, NodeId x) {
  const Tensor& xv = g.value(x);
  if (xv.numel() != 1) throw InvariantError("log_scalar requires a scalar");
  if (xv.v[0] <= 0.0) throw NumericError("log_scalar of non-positive value");
  Tensor out = Tensor::scalar(std::log(xv.v[0]));
  return g.add_node(std::move(out), {x}, [x](Graph& g2, Graph::Node& n) {
    if (!g2.requires_grad(x)) return;
    g2.grad(x).v[0] += n.grad.v[0] / g2.value(x).v[0];
  });
}

NodeId concat_channels(Graph& g, const std::vector<NodeId>& xs) {
  if (xs.empty()) throw InvariantError("concat_channels: empty input list");
  const Tensor& first = g.value(xs[0]);
  check_shape(first, 4, "concat_channels input");
  const int B = first.dim(0), H = first.dim(2), W = first.dim(3);
  int C = 0;
  for (NodeId x : xs) {
    const Tensor& xv = g.value(x);
    if (xv.dim(0) != B || xv.dim(2) != H || xv.dim(3) != W) {
      throw InvariantError("concat_channels: incompatible shapes");
    }
    C += xv.dim(1);
  }
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out({B, C, H, W});
  for (int b = 0; b < B; ++b) {
    int offset = 0;
    for (NodeId x : xs) {
      const Tensor& xv = g.value(x);
      const int Cx = xv.dim(1);
      std::memcpy(&out.v[(static_cast<std::size_t>(b) * C + offset) * hw],
                  &xv.v[static_cast<std::size_t>(b) * Cx * hw], Cx * hw * sizeof(double));
      offset += Cx;
    }
  }
  return g.add_node(std::move(out), xs, [xs](Graph& g2, Graph::Node& n) {
    const int B = n.value.dim(0), C = n.value.dim(1);
    const std::size_t hw = static_cast<std::size_t>(n.value.dim(2)) * n.value.dim(3);
    int offset = 0;
    for (NodeId x : xs) {
      const int Cx = g2.value(x).dim(1);
      if (g2.requires_grad(x)) {
        Tensor& gx = g2.grad(x);
        for (int b = 0; b < B; ++b) {
          const double* gp = &n.grad.v[(static_cast<std::size_t>(b) * C + offset) * hw];
          double* dst = &gx.v[static_cast<std::size_t>(b) * Cx * hw];
          for (std::size_t i = 0; i < static_cast<std::size_t>(Cx) * hw; ++i) dst[i] += gp[i];
        }
      }
      offset += Cx;
    }
  });
}

NodeId slice_channels(Graph& g, NodeId x, int from, int count) {
  const Tensor& xv = g.value(x);
  check_shape(xv, 4, "slice_channels input");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (from < 0 || count <= 0 || from + count > C) {
    throw InvariantError("slice_channels: range out of bounds");
  }
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out({B, count, H, W});
  for (int b = 0; b < B; ++b) {
    std::memcpy(&out.v[static_cast<std::size_t>(b) * count * hw],
                &xv.v[(static_cast<std::size_t>(b) * C + from) * hw],
                static_cast<std::size_t>(count) * hw * sizeof(double));
  }
  return g.add_node(std::move(out), {x}, [x, from, count](Graph& g2, Graph::Node& n) {
    if (!g2.requires_grad(x)) return;
    const Tensor& xv2 = g2.value(x);
    const int B = xv2.dim(0), C = xv2.dim(1);
    const std::size_t hw = static_cast<std::size_t>(xv2.dim(2)) * xv2.dim(3);
    Tensor& gx = g2.grad(x);
    for (int b = 0; b < B; ++b) {
      const double* gp = &n.grad.v[static_cast<std::size_t>(b) * count * hw];
      double* dst = &gx.v[(static_cast<std::size_t>(b) * C + from) * hw];
      for (std::size_t i = 0; i < static_cast<std::size_t>(count) * hw; ++i) dst[i] += gp[i];
    }
  });
}

NodeId channel_scale_vec(Graph& g, NodeId x, NodeId s) {
  const Tensor& xv = g.value(x);
  const Tensor& sv = g.value(s);
  check_shape(xv, 4, "channel_scale_vec input");
  check_shape(sv, 1, "channel_scale_vec scale");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (sv.dim(0) != C) throw InvariantError("channel_scale_vec: scale length mismatch");
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out(xv.shape);
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * C + c) * hw;
      const double sc = sv.v[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < hw; ++i) out.v[base + i] = xv.v[base + i] * sc;
    }
  }
  return g.add_node(std::move(out), {x, s}, [x, s](Graph& g2, Graph::Node& n) {
    const Tensor& xv2 = g2.value(x);
    const Tensor& sv2 = g2.value(s);
    const int B = xv2.dim(0), C = xv2.dim(1);
    const std::size_t hw = static_cast<std::size_t>(xv2.dim(2)) * xv2.dim(3);
    const bool need_x = g2.requires_grad(x);
    const bool need_s = g2.requires_grad(s);
    for (int c = 0; c < C; ++c) {
      const double sc = sv2.v[static_cast<std::size_t>(c)];
      double sgrad = 0.0;
      for (int b = 0; b < B; ++b) {
        const std::size_t base = (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double go = n.grad.v[base + i];
          if (need_x) g2.grad(x).v[base + i] += go * sc;
          sgrad += go * xv2.v[base + i];
        }
      }
      if (need_s) g2.grad(s).v[static_cast<std::size_t>(c)] += sgrad;
    }
  });
}

NodeId vector_element(Graph& g, NodeId x, int i) {
  const Tensor& xv = g.value(x);
  check_shape(xv, 1, "vector_element input");
  if (i < 0 || i >= xv.dim(0)) throw InvariantError("vector_element: index out of range");
  Tensor out = Tensor::scalar(xv.v[static_cast<std::size_t>(i)]);
  return g.add_node(std::move(out), {x}, [x, i](Graph& g2, Graph::Node& n) {
    if (!g2.requires_grad(x)) return;
    g2.grad(x).v[static_cast<std::size_t>(i)] += n.grad.v[0];
  });
}

NodeId hard_indicator_st(Graph& g, NodeId x, NodeId t) {
  const Tensor& xv = g.value(x);
  const Tensor& tv = g.value(t);
  if (xv.numel() != 1 || tv.numel() != 1) {
    throw InvariantError("hard_indicator_st requires scalar inputs");
  }
  Tensor out = Tensor::scalar(xv.v[0] > tv.v[0] ? 1.0 : 0.0);
  return g.add_node(std::move(out), {x, t}, [x, t](Graph& g2, Graph::Node& n) {
    const double d = sigmoid_derivative(g2.value(x).v[0] - g2.value(t).v[0]);
    const double go = n.grad.v[0];
    if (g2.requires_grad(x)) g2.grad(x).v[0] += go * d;
    if (g2.requires_grad(t)) g2.grad(t).v[0] -= go * d;
  });
}

NodeId batch_norm(Graph& g, NodeId x, NodeId gamma, NodeId beta, const Tensor& running_mean,
                  const Tensor& running_var, bool training, Tensor* batch_mean,
                  Tensor* batch_var) {
  constexpr double kEps = 1e-5;
  const Tensor& xv = g.value(x);
  const bool spatial = xv.shape.size() == 4;
  if (!spatial) check_shape(xv, 2, "batch_norm input");
  const int B = xv.dim(0), C = xv.dim(1);
  const std::size_t hw = spatial ? static_cast<std::size_t>(xv.dim(2)) * xv.dim(3) : 1;
  const double count = static_cast<double>(B) * static_cast<double>(hw);
  const Tensor& gv = g.value(gamma);
  const Tensor& bv = g.value(beta);
  if (gv.dim(0) != C || bv.dim(0) != C || running_mean.dim(0) != C || running_var.dim(0) != C) {
    throw InvariantError("batch_norm parameter shapes must be (C)");
  }

  Tensor mean({C}), var({C});
  if (training) {
    for (int c = 0; c < C; ++c) {
      double sum = 0.0;
      for (int b = 0; b < B; ++b) {
        const double* xp = &xv.v[(static_cast<std::size_t>(b) * C + c) * hw];
        for (std::size_t i = 0; i < hw; ++i) sum += xp[i];
      }
      mean.v[static_cast<std::size_t>(c)] = sum / count;
    }
    for (int c = 0; c < C; ++c) {
      const double m = mean.v[static_cast<std::size_t>(c)];
      double sum = 0.0;
      for (int b = 0; b < B; ++b) {
        const double* xp = &xv.v[(static_cast<std::size_t>(b) * C + c) * hw];
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = xp[i] - m;
          sum += d * d;
        }
      }
      var.v[static_cast<std::size_t>(c)] = sum / count;
    }
    if (batch_mean != nullptr) *batch_mean = mean;
    if (batch_var != nullptr) *batch_var = var;
  } else {
    mean = running_mean;
    var = running_var;
  }

  Tensor inv_std({C});
  for (int c = 0; c < C; ++c) {
    inv_std.v[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var.v[static_cast<std::size_t>(c)] + kEps);
  }

  Tensor out(xv.shape);
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * C + c) * hw;
      const double m = mean.v[static_cast<std::size_t>(c)];
      const double is = inv_std.v[static_cast<std::size_t>(c)];
      const double ga = gv.v[static_cast<std::size_t>(c)];
      const double be = bv.v[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < hw; ++i) {
        out.v[base + i] = (xv.v[base + i] - m) * is * ga + be;
      }
    }
  }

  return g.add_node(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mean = std::move(mean), inv_std = std::move(inv_std), training, hw,
       count](Graph& g2, Graph::Node& n) {
        const Tensor& xv2 = g2.value(x);
        const Tensor& gv2 = g2.value(gamma);
        const int B = xv2.dim(0), C = xv2.dim(1);
        const bool need_x = g2.requires_grad(x);
        for (int c = 0; c < C; ++c) {
          const double m = mean.v[static_cast<std::size_t>(c)];
          const double is = inv_std.v[static_cast<std::size_t>(c)];
          const double ga = gv2.v[static_cast<std::size_t>(c)];
          double sum_g = 0.0, sum_gx = 0.0;
          for (int b = 0; b < B; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double go = n.grad.v[base + i];
              sum_g += go;
              sum_gx += go * (xv2.v[base + i] - m) * is;
            }
          }
          if (g2.requires_grad(beta)) g2.grad(beta).v[static_cast<std::size_t>(c)] += sum_g;
          if (g2.requires_grad(gamma)) g2.grad(gamma).v[static_cast<std::size_t>(c)] += sum_gx;
          if (!need_x) continue;
          for (int b = 0; b < B; ++b) {
            const std::size_t base = (static_cast<std::size_t>(b) * C + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const double go = n.grad.v[base + i];
              const double xhat = (xv2.v[base + i] - m) * is;
              double dx;
              if (training) {
                dx = ga * is * (go - sum_g / count - xhat * sum_gx / count);
              } else {
                dx = ga * is * go;
              }
              g2.grad(x).v[base + i] += dx;
            }
          }
        }
      });
}

}  // namespace ops

}  // namespace s3nas
