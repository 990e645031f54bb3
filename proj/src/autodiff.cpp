#include "raflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace raflow {

std::string shape_str(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << " x " << cols << "]";
  return os.str();
}

}  // namespace raflow

namespace raflow::ad {
namespace {

constexpr double kLogWeightFloor = -745.0;

bool broadcastable(const Tensor& x, Index rows, Index cols) {
  if (x.rows() == rows && x.cols() == cols) return true;
  if (x.rows() == 1 && x.cols() == cols) return true;
  return x.rows() == 1 && x.cols() == 1;
}

Tensor expand(const Tensor& x, Index rows, Index cols) {
  if (x.rows() == rows && x.cols() == cols) return x;
  if (x.rows() == 1 && x.cols() == cols) return x.replicate(rows, 1);
  return Tensor::Constant(rows, cols, x(0, 0));
}

Tensor reduce_to(const Tensor& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == g.cols()) return g.colwise().sum();
  return Tensor::Constant(1, 1, g.sum());
}

void accumulate(Tensor& slot, const Tensor& contribution) {
  if (slot.size() == 0) {
    slot = contribution;
  } else {
    slot += contribution;
  }
}

std::pair<Index, Index> broadcast_shape(const Tensor& a, const Tensor& b, const char* what) {
  const Index rows = std::max(a.rows(), b.rows());
  const Index cols = std::max(a.cols(), b.cols());
  if (!broadcastable(a, rows, cols) || !broadcastable(b, rows, cols)) {
    throw ShapeError(std::string(what) + ": incompatible shapes " + shape_of(a) + " and " + shape_of(b));
  }
  return {rows, cols};
}

Tensor triangle_mask(const Tensor& m, bool lower, bool unit) {
  Tensor out = Tensor::Zero(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      const bool keep = lower ? (unit ? j < i : j <= i) : (unit ? j > i : j >= i);
      if (keep) out(i, j) = m(i, j);
    }
  }
  return out;
}

Tensor solve_tri(const Tensor& m, const Tensor& b, bool lower, bool unit) {
  if (lower) {
    return unit ? Tensor(m.triangularView<Eigen::UnitLower>().solve(b)) : Tensor(m.triangularView<Eigen::Lower>().solve(b));
  }
  return unit ? Tensor(m.triangularView<Eigen::UnitUpper>().solve(b)) : Tensor(m.triangularView<Eigen::Upper>().solve(b));
}

Tensor solve_tri_transposed(const Tensor& m, const Tensor& b, bool lower, bool unit) {
  if (lower) {
    return unit ? Tensor(m.triangularView<Eigen::UnitLower>().transpose().solve(b))
                : Tensor(m.triangularView<Eigen::Lower>().transpose().solve(b));
  }
  return unit ? Tensor(m.triangularView<Eigen::UnitUpper>().transpose().solve(b))
              : Tensor(m.triangularView<Eigen::Upper>().transpose().solve(b));
}

Tensor reshape_rm(const Tensor& x, Index rows, Index cols) {
  return Eigen::Map<const Tensor>(x.data(), rows, cols);
}

Tape* tape_of(Var a) {
  if (a.tape == nullptr) throw Error("autodiff: variable is not attached to a tape");
  return a.tape;
}

Tape* tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw Error("autodiff: operands recorded on different tapes");
  return tape_of(a);
}

Var unary(Op op, Var a, Tensor value) {
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  n.value = std::move(value);
  return tape_of(a)->push(std::move(n));
}

}  // namespace

const Tensor& Var::value() const { return tape_of(*this)->value(*this); }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar(): value has shape " + shape_of(v));
  return v(0, 0);
}

Var Tape::push(Node node) {
  bool req = node.op == Op::Leaf;
  if (node.a >= 0) req = req || requires_[static_cast<std::size_t>(node.a)];
  if (node.b >= 0) req = req || requires_[static_cast<std::size_t>(node.b)];
  requires_.push_back(req);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const {
  if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw Error("autodiff: variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

bool Tape::is_leaf(Var v) const { return node(v.id).op == Op::Leaf; }

std::vector<Tensor> Tape::gradient(Var loss, std::span<const Var> wrt) const {
  const Tensor& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("gradient: loss must be scalar, got shape " + shape_of(lv));
  }
  std::vector<Tensor> grads(static_cast<std::size_t>(loss.id) + 1);
  grads[static_cast<std::size_t>(loss.id)] = Tensor::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Tensor& g = grads[static_cast<std::size_t>(i)];
    if (g.size() == 0) continue;
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.op == Op::Leaf || n.op == Op::Constant) continue;
    backward_node(n, g, grads);
  }
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    const Tensor& val = value(v);
    if (v.id <= loss.id && grads[static_cast<std::size_t>(v.id)].size() != 0) {
      out.push_back(grads[static_cast<std::size_t>(v.id)]);
    } else {
      out.push_back(Tensor::Zero(val.rows(), val.cols()));
    }
  }
  return out;
}

void Tape::backward_node(const Node& n, const Tensor& g, std::vector<Tensor>& grads) const {
  auto slot = [&](int id) -> Tensor& { return grads[static_cast<std::size_t>(id)]; };
  auto need = [&](int id) { return id >= 0 && requires_[static_cast<std::size_t>(id)]; };
  auto val = [&](int id) -> const Tensor& { return nodes_[static_cast<std::size_t>(id)].value; };
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      break;
    case Op::Add:
      if (need(n.a)) accumulate(slot(n.a), reduce_to(g, val(n.a).rows(), val(n.a).cols()));
      if (need(n.b)) accumulate(slot(n.b), reduce_to(g, val(n.b).rows(), val(n.b).cols()));
      break;
    case Op::Sub:
      if (need(n.a)) accumulate(slot(n.a), reduce_to(g, val(n.a).rows(), val(n.a).cols()));
      if (need(n.b)) accumulate(slot(n.b), reduce_to(-g, val(n.b).rows(), val(n.b).cols()));
      break;
    case Op::Mul: {
      const Tensor& a = val(n.a);
      const Tensor& b = val(n.b);
      if (need(n.a)) accumulate(slot(n.a), reduce_to(g.cwiseProduct(expand(b, g.rows(), g.cols())), a.rows(), a.cols()));
      if (need(n.b)) accumulate(slot(n.b), reduce_to(g.cwiseProduct(expand(a, g.rows(), g.cols())), b.rows(), b.cols()));
      break;
    }
    case Op::Scale:
      if (need(n.a)) accumulate(slot(n.a), n.c * g);
      break;
    case Op::AddScalar:
      if (need(n.a)) accumulate(slot(n.a), g);
      break;
    case Op::MulConst: {
      const Tensor& a = val(n.a);
      if (need(n.a)) accumulate(slot(n.a), reduce_to(g.cwiseProduct(expand(n.aux, g.rows(), g.cols())), a.rows(), a.cols()));
      break;
    }
    case Op::MatMul:
      if (need(n.a)) accumulate(slot(n.a), g * val(n.b).transpose());
      if (need(n.b)) accumulate(slot(n.b), val(n.a).transpose() * g);
      break;
    case Op::Tanh:
      if (need(n.a)) accumulate(slot(n.a), g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
      break;
    case Op::Exp:
      if (need(n.a)) accumulate(slot(n.a), g.cwiseProduct(n.value));
      break;
    case Op::Log:
      if (need(n.a)) accumulate(slot(n.a), g.cwiseQuotient(val(n.a)));
      break;
    case Op::Softplus: {
      Tensor sig = (1.0 / (1.0 + (-val(n.a).array()).exp())).matrix();
      if (need(n.a)) accumulate(slot(n.a), g.cwiseProduct(sig));
      break;
    }
    case Op::Square:
      if (need(n.a)) accumulate(slot(n.a), 2.0 * g.cwiseProduct(val(n.a)));
      break;
    case Op::Sqrt:
      if (need(n.a)) accumulate(slot(n.a), (g.array() / (2.0 * n.value.array())).matrix());
      break;
    case Op::Sum:
      if (need(n.a)) accumulate(slot(n.a), Tensor::Constant(val(n.a).rows(), val(n.a).cols(), g(0, 0)));
      break;
    case Op::SumCols:
      if (need(n.a)) accumulate(slot(n.a), g.replicate(1, val(n.a).cols()));
      break;
    case Op::SliceCols: {
      const Tensor& a = val(n.a);
      Tensor full = Tensor::Zero(a.rows(), a.cols());
      full.middleCols(n.i0, n.i1) = g;
      if (need(n.a)) accumulate(slot(n.a), full);
      break;
    }
    case Op::ConcatCols: {
      const Index ca = val(n.a).cols();
      if (need(n.a)) accumulate(slot(n.a), g.leftCols(ca));
      if (need(n.b)) accumulate(slot(n.b), g.rightCols(g.cols() - ca));
      break;
    }
    case Op::Transpose:
      if (need(n.a)) accumulate(slot(n.a), g.transpose());
      break;
    case Op::Reshape:
      if (need(n.a)) accumulate(slot(n.a), reshape_rm(g, val(n.a).rows(), val(n.a).cols()));
      break;
    case Op::RepeatRows: {
      const Tensor& a = val(n.a);
      Tensor ga = Tensor::Zero(a.rows(), a.cols());
      for (Index r = 0; r < a.rows(); ++r) ga.row(r) = g.middleRows(r * n.i0, n.i0).colwise().sum();
      if (need(n.a)) accumulate(slot(n.a), ga);
      break;
    }
    case Op::LogSumExpRows:
      // aux holds the softmax weights; floored entries carry weight but no gradient path.
      if (need(n.a)) accumulate(slot(n.a), n.aux.cwiseProduct(g.replicate(1, n.aux.cols())));
      break;
    case Op::TriSolve: {
      const Tensor& m = val(n.a);
      if (!need(n.a) && !need(n.b)) break;
      const Tensor gb = solve_tri_transposed(m, g, n.flag0, n.flag1);
      if (need(n.b)) accumulate(slot(n.b), gb);
      if (need(n.a)) accumulate(slot(n.a), triangle_mask(-gb * n.value.transpose(), n.flag0, n.flag1));
      break;
    }
    case Op::DiagEmbed: {
      Tensor d = g.diagonal().transpose();
      if (!n.flag0) d.transposeInPlace();
      if (need(n.a)) accumulate(slot(n.a), d);
      break;
    }
  }
}

Tensor Tape::jvp(Var output, std::span<const Var> inputs, std::span<const Tensor> tangents) const {
  if (inputs.size() != tangents.size()) throw ShapeError("jvp: inputs and tangents differ in count");
  std::vector<Tensor> tan(static_cast<std::size_t>(output.id) + 1);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor& x = value(inputs[k]);
    if (x.rows() != tangents[k].rows() || x.cols() != tangents[k].cols()) {
      throw ShapeError("jvp: tangent shape " + shape_of(tangents[k]) + " does not match input shape " + shape_of(x));
    }
    if (inputs[k].id <= output.id) tan[static_cast<std::size_t>(inputs[k].id)] = tangents[k];
  }
  int first = output.id;
  for (const Var& v : inputs) first = std::min(first, v.id);
  for (int i = std::max(first, 0); i <= output.id; ++i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.op == Op::Leaf || n.op == Op::Constant) continue;
    tan[static_cast<std::size_t>(i)] = jvp_node(n, tan);
  }
  Tensor out = tan[static_cast<std::size_t>(output.id)];
  if (out.size() == 0) out = Tensor::Zero(value(output).rows(), value(output).cols());
  return out;
}

Tensor Tape::jvp_node(const Node& n, const std::vector<Tensor>& tan) const {
  auto t = [&](int id) -> const Tensor& { return tan[static_cast<std::size_t>(id)]; };
  auto has = [&](int id) { return id >= 0 && t(id).size() != 0; };
  auto val = [&](int id) -> const Tensor& { return nodes_[static_cast<std::size_t>(id)].value; };
  const Index R = n.value.rows();
  const Index C = n.value.cols();
  if (!has(n.a) && !has(n.b)) return Tensor();
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return Tensor();
    case Op::Add:
    case Op::Sub: {
      Tensor out = Tensor::Zero(R, C);
      if (has(n.a)) out += expand(t(n.a), R, C);
      if (has(n.b)) out += (n.op == Op::Add ? 1.0 : -1.0) * expand(t(n.b), R, C);
      return out;
    }
    case Op::Mul: {
      Tensor out = Tensor::Zero(R, C);
      if (has(n.a)) out += expand(t(n.a), R, C).cwiseProduct(expand(val(n.b), R, C));
      if (has(n.b)) out += expand(val(n.a), R, C).cwiseProduct(expand(t(n.b), R, C));
      return out;
    }
    case Op::Scale:
      return n.c * t(n.a);
    case Op::AddScalar:
      return t(n.a);
    case Op::MulConst:
      return expand(t(n.a), R, C).cwiseProduct(expand(n.aux, R, C));
    case Op::MatMul: {
      Tensor out = Tensor::Zero(R, C);
      if (has(n.a)) out += t(n.a) * val(n.b);
      if (has(n.b)) out += val(n.a) * t(n.b);
      return out;
    }
    case Op::Tanh:
      return t(n.a).cwiseProduct((1.0 - n.value.array().square()).matrix());
    case Op::Exp:
      return t(n.a).cwiseProduct(n.value);
    case Op::Log:
      return t(n.a).cwiseQuotient(val(n.a));
    case Op::Softplus:
      return t(n.a).cwiseProduct((1.0 / (1.0 + (-val(n.a).array()).exp())).matrix());
    case Op::Square:
      return 2.0 * t(n.a).cwiseProduct(val(n.a));
    case Op::Sqrt:
      return (t(n.a).array() / (2.0 * n.value.array())).matrix();
    case Op::Sum:
      return Tensor::Constant(1, 1, t(n.a).sum());
    case Op::SumCols:
      return t(n.a).rowwise().sum();
    case Op::SliceCols:
      return t(n.a).middleCols(n.i0, n.i1);
    case Op::ConcatCols: {
      Tensor out = Tensor::Zero(R, C);
      const Index ca = val(n.a).cols();
      if (has(n.a)) out.leftCols(ca) = t(n.a);
      if (has(n.b)) out.rightCols(C - ca) = t(n.b);
      return out;
    }
    case Op::Transpose:
      return t(n.a).transpose();
    case Op::Reshape:
      return reshape_rm(t(n.a), R, C);
    case Op::RepeatRows: {
      Tensor out(R, C);
      for (Index r = 0; r < val(n.a).rows(); ++r) out.middleRows(r * n.i0, n.i0) = t(n.a).row(r).replicate(n.i0, 1);
      return out;
    }
    case Op::LogSumExpRows:
      return n.aux.cwiseProduct(t(n.a)).rowwise().sum();
    case Op::TriSolve: {
      Tensor rhs = Tensor::Zero(R, C);
      if (has(n.b)) rhs += t(n.b);
      if (has(n.a)) rhs -= triangle_mask(t(n.a), n.flag0, n.flag1) * n.value;
      return solve_tri(val(n.a), rhs, n.flag0, n.flag1);
    }
    case Op::DiagEmbed: {
      Tensor out = Tensor::Zero(R, C);
      const Tensor& dv = t(n.a);
      for (Index i = 0; i < R; ++i) out(i, i) = dv(n.flag0 ? 0 : i, n.flag0 ? i : 0);
      return out;
    }
  }
  return Tensor();
}

// ---- primitives -------------------------------------------------------------

namespace {

Var binary(Op op, Var a, Var b, const char* what) {
  Tape* tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  auto [rows, cols] = broadcast_shape(av, bv, what);
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  const Tensor ae = expand(av, rows, cols);
  const Tensor be = expand(bv, rows, cols);
  switch (op) {
    case Op::Add: n.value = ae + be; break;
    case Op::Sub: n.value = ae - be; break;
    default: n.value = ae.cwiseProduct(be); break;
  }
  return tape->push(std::move(n));
}

}  // namespace

Var operator+(Var a, Var b) { return binary(Op::Add, a, b, "add"); }
Var operator-(Var a, Var b) { return binary(Op::Sub, a, b, "sub"); }
Var operator*(Var a, Var b) { return binary(Op::Mul, a, b, "mul"); }
Var operator-(Var a) { return scale(a, -1.0); }
Var operator*(double c, Var a) { return scale(a, c); }
Var operator+(Var a, double c) { return add_scalar(a, c); }
Var operator-(Var a, double c) { return add_scalar(a, -c); }
Var operator-(double c, Var a) { return add_scalar(scale(a, -1.0), c); }

Var scale(Var a, double c) {
  Tape::Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.c = c;
  n.value = c * a.value();
  return tape_of(a)->push(std::move(n));
}

Var add_scalar(Var a, double c) {
  Tape::Node n;
  n.op = Op::AddScalar;
  n.a = a.id;
  n.c = c;
  n.value = (a.value().array() + c).matrix();
  return tape_of(a)->push(std::move(n));
}

Var mul_const(Var a, const Tensor& k) {
  const Tensor& av = a.value();
  if (!broadcastable(k, av.rows(), av.cols())) {
    throw ShapeError("mul_const: constant shape " + shape_of(k) + " does not broadcast to " + shape_of(av));
  }
  Tape::Node n;
  n.op = Op::MulConst;
  n.a = a.id;
  n.aux = k;
  n.value = av.cwiseProduct(expand(k, av.rows(), av.cols()));
  return tape_of(a)->push(std::move(n));
}

Var matmul(Var a, Var b) {
  Tape* tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_of(av) + " * " + shape_of(bv));
  }
  Tape::Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.value = av * bv;
  return tape->push(std::move(n));
}

Var matmul_const(Var a, const Tensor& k) { return matmul(a, tape_of(a)->constant(k)); }

Var tanh(Var a) { return unary(Op::Tanh, a, a.value().array().tanh().matrix()); }
Var exp(Var a) { return unary(Op::Exp, a, a.value().array().exp().matrix()); }
Var log(Var a) { return unary(Op::Log, a, a.value().array().log().matrix()); }
Var softplus(Var a) {
  const auto& x = a.value().array();
  return unary(Op::Softplus, a, (x.max(0.0) + (-x.abs()).exp().log1p()).matrix());
}
Var square(Var a) { return unary(Op::Square, a, a.value().array().square().matrix()); }
Var sqrt(Var a) { return unary(Op::Sqrt, a, a.value().array().sqrt().matrix()); }

Var sum(Var a) { return unary(Op::Sum, a, Tensor::Constant(1, 1, a.value().sum())); }
Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }
Var sum_cols(Var a) { return unary(Op::SumCols, a, a.value().rowwise().sum()); }

Var slice_cols(Var a, Index start, Index count) {
  const Tensor& av = a.value();
  if (start < 0 || count < 0 || start + count > av.cols()) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for shape " + shape_of(av));
  }
  Tape::Node n;
  n.op = Op::SliceCols;
  n.a = a.id;
  n.i0 = start;
  n.i1 = count;
  n.value = av.middleCols(start, count);
  return tape_of(a)->push(std::move(n));
}

Var concat_cols(Var a, Var b) {
  Tape* tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat_cols: row counts differ, " + shape_of(av) + " and " + shape_of(bv));
  }
  Tape::Node n;
  n.op = Op::ConcatCols;
  n.a = a.id;
  n.b = b.id;
  n.value.resize(av.rows(), av.cols() + bv.cols());
  n.value << av, bv;
  return tape->push(std::move(n));
}

Var transpose(Var a) { return unary(Op::Transpose, a, a.value().transpose()); }

Var reshape(Var a, Index rows, Index cols) {
  const Tensor& av = a.value();
  if (rows * cols != av.size()) {
    throw ShapeError("reshape: cannot view " + shape_of(av) + " as " + shape_str(rows, cols));
  }
  return unary(Op::Reshape, a, reshape_rm(av, rows, cols));
}

Var repeat_rows(Var a, Index times) {
  if (times < 1) throw ShapeError("repeat_rows: repeat count must be positive");
  const Tensor& av = a.value();
  Tensor out(av.rows() * times, av.cols());
  for (Index r = 0; r < av.rows(); ++r) out.middleRows(r * times, times) = av.row(r).replicate(times, 1);
  Tape::Node n;
  n.op = Op::RepeatRows;
  n.a = a.id;
  n.i0 = times;
  n.value = std::move(out);
  return tape_of(a)->push(std::move(n));
}

Var logsumexp_rows(Var a) {
  Tape* tape = tape_of(a);
  Tensor x = a.value();
  Tensor live = Tensor::Ones(x.rows(), x.cols());
  int floored = 0;
  for (Index i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x.data()[i])) {
      x.data()[i] = kLogWeightFloor;
      live.data()[i] = 0.0;
      ++floored;
    }
  }
  Tensor out(x.rows(), 1);
  Tensor w(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    const auto e = (x.row(r).array() - mx).exp();
    const double s = e.sum();
    out(r, 0) = mx + std::log(s);
    w.row(r) = (e / s).matrix();
  }
  tape->note_floored(floored);
  Tape::Node n;
  n.op = Op::LogSumExpRows;
  n.a = a.id;
  n.aux = w.cwiseProduct(live);
  n.value = std::move(out);
  return tape->push(std::move(n));
}

Var tri_solve(Var m, Var b, bool lower, bool unit_diagonal) {
  Tape* tape = tape_of(m, b);
  const Tensor& mv = m.value();
  const Tensor& bv = b.value();
  if (mv.rows() != mv.cols() || mv.rows() != bv.rows()) {
    throw ShapeError("tri_solve: matrix " + shape_of(mv) + " incompatible with right-hand side " + shape_of(bv));
  }
  Tape::Node n;
  n.op = Op::TriSolve;
  n.a = m.id;
  n.b = b.id;
  n.flag0 = lower;
  n.flag1 = unit_diagonal;
  n.value = solve_tri(mv, bv, lower, unit_diagonal);
  return tape->push(std::move(n));
}

Var diag_embed(Var v) {
  const Tensor& vv = v.value();
  if (vv.rows() != 1 && vv.cols() != 1) throw ShapeError("diag_embed: expected a vector, got " + shape_of(vv));
  const Index nn = vv.size();
  Tensor out = Tensor::Zero(nn, nn);
  for (Index i = 0; i < nn; ++i) out(i, i) = vv.data()[i];
  Tape::Node n;
  n.op = Op::DiagEmbed;
  n.a = v.id;
  n.flag0 = vv.rows() == 1;
  n.value = std::move(out);
  return tape_of(v)->push(std::move(n));
}

}  // namespace raflow::ad
