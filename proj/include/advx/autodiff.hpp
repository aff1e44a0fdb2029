#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "advx/tensor.hpp"

namespace advx {

enum class ActivationTag { relu, relu6, tanh, relu_decay, elu };

struct ActivationKind {
  ActivationTag tag = ActivationTag::relu;
  double beta = 0.0;  // relu_decay only

  static ActivationKind relu() { return {ActivationTag::relu, 0.0}; }
  static ActivationKind relu6() { return {ActivationTag::relu6, 0.0}; }
  static ActivationKind tanh() { return {ActivationTag::tanh, 0.0}; }
  static ActivationKind elu() { return {ActivationTag::elu, 0.0}; }
  static ActivationKind relu_decay(double beta);

  // "relu", "relu6", "tanh", "elu", "relu_decay:0.01"
  static ActivationKind parse(const std::string& text);
  std::string to_string() const;

  friend bool operator==(const ActivationKind&, const ActivationKind&) = default;
};

double activate(const ActivationKind& kind, double x);
// Derivative with the subgradient conventions: 0 at the relu kink and at both
// relu6 kinks.
double activate_derivative(const ActivationKind& kind, double x);

// Handle to a node on a Tape.
struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

// Gradients produced by one backward pass, keyed by node id.
class Gradients {
 public:
  bool has(Var v) const { return v.id < grads_.size() && !grads_[v.id].empty(); }
  // Throws std::out_of_range when no gradient flowed to `v`.
  const Tensor& of(Var v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
};

// Append-only record of a forward computation. Each node stores its value, its
// parents (always earlier ids) and whatever it needs for its local gradient.
// A tape supports exactly one backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaf holding an input or parameter. Leaves with requires_grad=false are
  // treated as constants and no gradient work is done for them.
  Var leaf(Tensor value, bool requires_grad = true);

  // a[n,k] x b[k,m]
  Var matmul(Var a, Var b);
  // x[n,m] + bias[m] broadcast over rows
  Var add_bias(Var x, Var bias);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  Var activation(Var x, const ActivationKind& kind);
  // Inverted dropout. Identity when !training or rate == 0.
  Var dropout(Var x, double rate, std::mt19937_64& rng, bool training);
  // Per-example -sum q*log softmax(logits); result shape [n].
  Var softmax_cross_entropy(Var logits, const Tensor& label_dist);
  // Per-example entropy of softmax(logits); result shape [n].
  Var entropy(Var logits);
  // sum_i w_i x_i over all elements; result shape [1].
  Var weighted_sum(Var x, const Tensor& weights);
  Var sum(Var x);
  Var sum_squares(Var x);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Reverse pass from `root` seeded with `seed` (same shape as root).
  Gradients backward(Var root, const Tensor& seed);
  // Scalar root, seed 1.
  Gradients backward(Var root);

 private:
  enum class Op {
    leaf,
    matmul,
    add_bias,
    add,
    mul,
    scale,
    activation,
    dropout,
    softmax_xent,
    entropy,
    weighted_sum,
    sum,
    sum_squares
  };
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  struct Node {
    Op op = Op::leaf;
    std::size_t lhs = kNone;
    std::size_t rhs = kNone;
    Tensor value;
    Tensor saved;  // op-specific: mask, softmax, weights, label distribution
    double scalar = 0.0;
    ActivationKind act;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Var push(Node n);
  void check_open() const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Row-wise softmax of a [n,c] tensor, max-subtracted.
Tensor softmax_rows(const Tensor& logits);

// (1-s)*onehot + s/num_classes for each label.
Tensor smoothed_labels(std::span<const int> labels, std::size_t num_classes,
                       double smoothing = 0.0);

}  // namespace advx
