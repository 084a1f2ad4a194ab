#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tidsit/rng.hpp"
#include "tidsit/tensor.hpp"

namespace tidsit {

using Mask = std::vector<std::uint8_t>;  // 1 = valid, 0 = padded

enum class Mode { train, eval };

/// Reverse-mode tape. Every operation appends one node recording its value,
/// its parents and a closure that pushes adjoints to those parents. Replaying
/// the nodes in reverse order visits each operation once; a tensor consumed
/// by k operations accumulates k additive adjoint contributions.
class Tape {
 public:
  using NodeId = std::uint32_t;

  /// Non-differentiable leaf (inputs, labels).
  NodeId input(Tensor value);
  /// Differentiable leaf (model parameters).
  NodeId parameter(Tensor value);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  /// Adjoint of a node after backward(); exact zeros for nodes off the path.
  const Tensor& adjoint(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Seeds the scalar loss with 1 and sweeps the record in reverse.
  void backward(NodeId loss);

  // -- primitive operations ------------------------------------------------
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId scale(NodeId a, double s);
  NodeId add_scalar(NodeId a, double s);
  NodeId add_row(NodeId a, NodeId row);  // broadcast row over every row of a
  NodeId relu(NodeId a);
  /// Inverted dropout: zeroes entries with probability `rate` and scales
  /// survivors by 1/(1-rate) in train mode; exact identity in eval mode or
  /// at rate 0.
  NodeId dropout(NodeId a, double rate, Mode mode, RngStream& stream);
  /// Row-wise softmax over the last dimension with a key-side validity mask:
  /// masked logits get -1e9 before a stabilized softmax and their weights are
  /// re-zeroed afterwards, so masked positions hold exactly 0.
  NodeId softmax_masked(NodeId a, const Mask& key_mask);
  NodeId layer_norm(NodeId a, NodeId gamma, NodeId beta, double eps = 1e-5);
  NodeId concat_rows(NodeId a, NodeId b);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId slice_cols(NodeId a, std::size_t first, std::size_t count);
  NodeId mean_rows(NodeId a);                        // m x n -> 1 x n
  NodeId mean_rows(NodeId a, const Mask& row_mask);  // mean over valid rows
  NodeId mean_all(NodeId a);                         // -> 1 x 1
  NodeId sum_all(NodeId a);                          // -> 1 x 1

 private:
  struct Node {
    Tensor value;
    Tensor adjoint;
    bool needs_grad = false;
    std::function<void(Tape&)> pull;  // empty for leaves
  };

  NodeId push(Tensor value, bool needs_grad, std::function<void(Tape&)> pull);
  bool any_grad(std::initializer_list<NodeId> ids) const;
  Tensor& grad(NodeId id) { return nodes_[id].adjoint; }

  std::vector<Node> nodes_;
  bool swept_ = false;
};

}  // namespace tidsit
