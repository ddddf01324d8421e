#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"

namespace s3nas {

// ---------------------------------------------------------------------------
// Dense double-precision tensors. Rank 0 is a scalar.
// ---------------------------------------------------------------------------

struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(numel_of(shape), 0.0);
  }
  static Tensor scalar(double value) {
    Tensor t;
    t.v.assign(1, value);
    return t;
  }

  static std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw InvariantError("tensor dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return v.size(); }
  bool is_scalar() const { return shape.empty(); }
  double item() const {
    if (v.size() != 1) throw InvariantError("item() on non-scalar tensor");
    return v[0];
  }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  double squared_norm() const;
};

// A named, persistent tensor with its gradient accumulator. Buffers
// (e.g. batch-norm running statistics) are checkpointed but never trained.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad.fill(0.0); }
};

class ParameterStore {
 public:
  Parameter& create(const std::string& name, std::vector<int> shape, bool trainable = true);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::vector<Parameter*> all();
  std::vector<Parameter*> trainable();
  void zero_grads();

  // Flat binary checkpoint of every named tensor; round-trip exact.
  void save(const std::string& path) const;
  // Loads values into existing parameters; names and shapes must match
  // exactly.
  void load(const std::string& path);

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::map<std::string, std::size_t> index_;
};

// Momentum SGD with global-norm gradient clipping.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double grad_clip) : momentum_(momentum), grad_clip_(grad_clip) {}
  void step(ParameterStore& store, double lr);
  double last_grad_norm() const { return last_grad_norm_; }

 private:
  double momentum_;
  double grad_clip_;
  double last_grad_norm_ = 0.0;
  std::map<std::string, Tensor> velocity_;
};

double global_grad_norm(ParameterStore& store);

// ---------------------------------------------------------------------------
// Reverse-mode tape. Nodes are appended in topological order; backward() is a
// single reverse sweep. A graph instance is confined to one execution
// context. Forward never mutates parameter tensors.
// ---------------------------------------------------------------------------

class Graph;
using NodeId = int;

class Graph {
 public:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;  // set on leaves bound to parameters
    std::function<void(Graph&, Node&)> backward;
  };

  NodeId leaf(Parameter& p);
  NodeId constant(Tensor t);
  NodeId constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  NodeId add_node(Tensor value, std::vector<NodeId> inputs,
                  std::function<void(Graph&, Node&)> backward);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor& grad(NodeId id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
  bool requires_grad(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss)=1 and accumulates parameter gradients.
  void backward(NodeId loss);

 private:
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operator set.
// ---------------------------------------------------------------------------

namespace ops {

// x: (B, C, H, W), w: (Cout, Cin, k, k); same padding k/2.
NodeId conv2d(Graph& g, NodeId x, NodeId w, int stride);
// x: (B, C, H, W), w: (C, k, k); per-channel convolution, same padding.
NodeId dwconv2d(Graph& g, NodeId x, NodeId w, int stride);
// 1x1 convolution expressed over (B, C, H, W) with w: (Cout, Cin).
NodeId pointwise_conv(Graph& g, NodeId x, NodeId w);
// x: (B, In), w: (Out, In), b: (Out).
NodeId fc(Graph& g, NodeId x, NodeId w, NodeId b);

NodeId relu(Graph& g, NodeId x);
NodeId relu6(Graph& g, NodeId x);
NodeId h_swish(Graph& g, NodeId x);
NodeId sigmoid(Graph& g, NodeId x);

// (B, C, H, W) -> (B, C)
NodeId global_avg_pool(Graph& g, NodeId x);
// x: (B, C, H, W) * s: (B, C) broadcast over the spatial extent.
NodeId channelwise_mul(Graph& g, NodeId x, NodeId s);

NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);          // elementwise, equal shapes
NodeId scale(Graph& g, NodeId x, NodeId s);        // tensor * scalar node
NodeId scale_const(Graph& g, NodeId x, double c);  // tensor * constant
NodeId add_const(Graph& g, NodeId x, double c);
// x * mask with a constant 0/1 (or arbitrary) mask; no gradient to the mask.
NodeId mask_mul(Graph& g, NodeId x, const Tensor& mask);

NodeId squared_norm(Graph& g, NodeId x);  // sum of squares -> scalar
// logits: (B, K); labels: one class index per row. Mean cross entropy.
NodeId softmax_cross_entropy(Graph& g, NodeId logits, const std::vector<int>& labels);
NodeId relu_scalar(Graph& g, NodeId x);
NodeId log_scalar(Graph& g, NodeId x);  // natural log

// Concatenate along the channel axis of (B, C, H, W) tensors.
NodeId concat_channels(Graph& g, const std::vector<NodeId>& xs);
// Channel slice [from, from+count) of a (B, C, H, W) tensor.
NodeId slice_channels(Graph& g, NodeId x, int from, int count);
// x: (B, C, H, W) scaled per channel by the vector node s: (C).
NodeId channel_scale_vec(Graph& g, NodeId x, NodeId s);
// Scalar element i of a rank-1 tensor node.
NodeId vector_element(Graph& g, NodeId x, int i);

// Hard indicator with straight-through relaxation: forward is exactly
// 1(x > t); backward uses the logistic derivative, +sigma'(x-t) into x and
// -sigma'(x-t) into t.
NodeId hard_indicator_st(Graph& g, NodeId x, NodeId t);

// Batch normalization over (B, C, H, W) or (B, C). In training mode the
// batch statistics are used and reported through *batch_mean/*batch_var (for
// the trainer to fold into the running buffers after the step — the op
// itself never mutates them); in eval mode the running buffers are used.
NodeId batch_norm(Graph& g, NodeId x, NodeId gamma, NodeId beta, const Tensor& running_mean,
                  const Tensor& running_var, bool training, Tensor* batch_mean = nullptr,
                  Tensor* batch_var = nullptr);

}  // namespace ops

double stable_sigmoid(double z);
double sigmoid_derivative(double z);

}  // namespace s3nas
