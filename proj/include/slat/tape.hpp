#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "slat/tensor.hpp"

namespace slat {

struct NodeId {
  std::size_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class OpKind {
  leaf,
  dense,
  conv2d,
  relu,
  softplus,
  sigmoid,
  maxpool2x2,
  flatten,
  add,
  scale,
  mul,
  mul_scalar,
  sum,
  softmax_xent,
  xent_grad,
  matmul_nn,
  matmul_tn,
  sum_rows,
  row_cosine,
};

const char* to_string(OpKind kind);

enum class Reduction { mean, sum };

/// Result of a reverse sweep: d(root)/d(node) for every node that requires
/// a gradient and lies upstream of the root.
class Gradients {
 public:
  bool has(NodeId node) const { return node.index < grads_.size() && grads_[node.index].has_value(); }
  /// Throws std::out_of_range when the node received no gradient.
  const Tensor& at(NodeId node) const;

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
};

/// Eagerly evaluated computation record for one forward pass.
///
/// Every op computes its value on insertion and stores what its backward rule
/// needs. Node ids are indices, so inputs always precede their consumers.
/// Batched ops take the example axis first: dense on [B,in], conv2d and
/// maxpool2x2 on [B,C,H,W]. A rank-1 dense input is a single example.
class Tape {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false);

  NodeId dense(NodeId x, NodeId weight, NodeId bias);
  NodeId conv2d(NodeId x, NodeId weight, NodeId bias);
  NodeId relu(NodeId x);
  NodeId softplus(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId maxpool2x2(NodeId x);
  NodeId flatten(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId x, double factor);
  NodeId mul(NodeId a, NodeId b);
  /// x times a one-element node.
  NodeId mul_scalar(NodeId x, NodeId s);
  NodeId sum(NodeId x);

  /// Softmax cross entropy of logits [C] or [B,C] against integer labels,
  /// reduced to one element.
  NodeId softmax_xent(NodeId logits, std::span<const int> labels, Reduction reduction = Reduction::mean);
  /// Mean over rows of cos(x_r, reference_r); reference is a constant.
  NodeId row_cosine(NodeId x, Tensor reference);

  // Ops emitted when gradients are recorded as graph nodes (grad_graph).
  NodeId xent_grad(NodeId logits, std::span<const int> labels, Reduction reduction);
  NodeId matmul_nn(NodeId a, NodeId b);
  NodeId matmul_tn(NodeId a, NodeId b);
  NodeId sum_rows(NodeId x);

  const Tensor& value(NodeId node) const { return nodes_.at(node.index).value; }
  OpKind kind(NodeId node) const { return nodes_.at(node.index).kind; }
  bool requires_grad(NodeId node) const { return nodes_.at(node.index).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Injection sites: site id k -> node holding h_k.
  void register_site(int site, NodeId node);
  NodeId site(int site) const;
  const std::map<int, NodeId>& sites() const noexcept { return sites_; }

  /// One reverse sweep from a one-element node. Throws NonScalarLoss.
  Gradients backward(NodeId loss) const;
  /// Vector-Jacobian product: reverse sweep seeded with `seed` at `output`.
  Gradients backward_from(NodeId output, const Tensor& seed) const;

  /// Records d(loss)/d(wrt[i]) as new nodes on this tape so the gradients can
  /// themselves be differentiated. Only dense, softplus, add, scale, sum and
  /// softmax_xent are supported along the path; anything else throws
  /// UnsupportedOps.
  std::vector<NodeId> grad_graph(NodeId loss, std::span<const NodeId> wrt);

 private:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<NodeId> inputs;
    Tensor value;
    bool requires_grad = false;
    double factor = 0.0;
    Reduction reduction = Reduction::mean;
    std::vector<int> labels;
    std::vector<std::uint32_t> argmax;
    Tensor aux;
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  void backprop_node(std::size_t index, const Tensor& grad, std::vector<std::optional<Tensor>>& grads) const;

  std::vector<Node> nodes_;
  std::map<int, NodeId> sites_;
};

/// Forward/backward pass counters for cost-contract checks. Thread local;
/// incremented by model forwards and Tape::backward/backward_from.
struct PassCounts {
  std::size_t forward = 0;
  std::size_t backward = 0;
};
PassCounts& pass_counts();
void count_forward_pass();

}  // namespace slat
