#pragma once

// Tensor-level reverse-mode (and forward-mode) differentiation.
//
// A Tape records every primitive applied to its variables in creation order,
// which is already a topological order. gradient() sweeps the record
// backwards once; jvp() sweeps it forwards once.

#include "raflow/types.hpp"

#include <span>
#include <vector>

namespace raflow::ad {

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Convenience accessor for 1x1 results.
  double scalar() const;
};

enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  MulConst,
  MatMul,
  Tanh,
  Exp,
  Log,
  Softplus,
  Square,
  Sqrt,
  Sum,
  SumCols,
  SliceCols,
  ConcatCols,
  Transpose,
  Reshape,
  RepeatRows,
  LogSumExpRows,
  TriSolve,
  DiagEmbed,
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable leaf (receives gradients).
  Var leaf(Tensor value);
  /// Non-trainable input; gradients never flow into it.
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  bool is_leaf(Var v) const;

  /// Reverse-mode gradient of a 1x1 `loss` with respect to each entry of
  /// `wrt`. Variables that do not influence `loss` receive zeros.
  std::vector<Tensor> gradient(Var loss, std::span<const Var> wrt) const;
  std::vector<Tensor> gradient(Var loss, std::initializer_list<Var> wrt) const {
    return gradient(loss, std::span<const Var>(wrt.begin(), wrt.size()));
  }

  /// Forward-mode directional derivative of `output` when each `inputs[k]`
  /// is perturbed along `tangents[k]`.
  Tensor jvp(Var output, std::span<const Var> inputs, std::span<const Tensor> tangents) const;
  Tensor jvp(Var output, Var input, const Tensor& tangent) const {
    return jvp(output, std::span<const Var>(&input, 1), std::span<const Tensor>(&tangent, 1));
  }

  /// Number of log-weights replaced by the floor in logsumexp_rows.
  int floored_count() const { return floored_; }

  // Internal record. Exposed for the free-function primitives.
  struct Node {
    Op op = Op::Constant;
    int a = -1;
    int b = -1;
    Tensor value;
    Tensor aux;  // constant operand, mask, or cached intermediate
    double c = 0.0;
    Index i0 = 0;
    Index i1 = 0;
    bool flag0 = false;
    bool flag1 = false;
  };
  Var push(Node node);
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  void note_floored(int n) { floored_ += n; }

 private:
  void backward_node(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const;
  Tensor jvp_node(const Node& n, const std::vector<Tensor>& tan) const;

  std::vector<Node> nodes_;
  std::vector<bool> requires_;
  int floored_ = 0;
};

// Elementwise binary operations accept equal shapes, a 1 x n operand against
// a B x n operand (row broadcast), or a 1 x 1 operand against anything.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator-(Var a);
Var operator*(double c, Var a);
Var operator+(Var a, double c);
Var operator-(Var a, double c);
Var operator-(double c, Var a);

Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// Elementwise product with a constant of the same shape (or broadcastable).
Var mul_const(Var a, const Tensor& k);
Var matmul(Var a, Var b);
/// a * K for a constant right factor.
Var matmul_const(Var a, const Tensor& k);

Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var softplus(Var a);
Var square(Var a);
Var sqrt(Var a);

/// Sum of all entries, 1 x 1.
Var sum(Var a);
Var mean(Var a);
/// Row sums, B x 1.
Var sum_cols(Var a);
Var slice_cols(Var a, Index start, Index count);
Var concat_cols(Var a, Var b);
Var transpose(Var a);
/// Row-major reinterpretation.
Var reshape(Var a, Index rows, Index cols);
/// Each row repeated `times` consecutively.
Var repeat_rows(Var a, Index times);
/// Row-wise log-sum-exp with max subtraction, B x 1. Non-finite entries are
/// floored at -745 (exp underflow threshold) and counted on the tape.
Var logsumexp_rows(Var a);
/// Solves M X = B where only the lower (or upper) triangle of M is read.
/// With `unit_diagonal` the diagonal is taken as ones and never read.
Var tri_solve(Var m, Var b, bool lower, bool unit_diagonal);
/// n x n diagonal matrix from a 1 x n or n x 1 vector.
Var diag_embed(Var v);

}  // namespace raflow::ad
