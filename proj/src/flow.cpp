#include "raflow/flow.hpp"

#include "raflow/json_util.hpp"

#include <cmath>
#include <numbers>

namespace raflow {

// ---- linear layer ------------------------------------------------------------

InvertibleLinearParams InvertibleLinearParams::identity(Index dim) {
  return {Mat::Zero(dim, dim), Mat::Zero(dim, dim), Vec::Ones(dim), Vec::Zero(dim)};
}

Mat InvertibleLinearParams::lower_matrix() const {
  Mat l = lower.triangularView<Eigen::StrictlyLower>();
  l.diagonal().setOnes();
  return l;
}

Mat InvertibleLinearParams::upper_matrix() const {
  Mat u = upper_offdiag.triangularView<Eigen::StrictlyUpper>();
  u.diagonal() = diag_sign.cwiseProduct(diag_logmag.array().exp().matrix());
  return u;
}

Mat InvertibleLinearParams::matrix() const { return lower_matrix() * upper_matrix(); }

Mat InvertibleLinearParams::inverse_matrix() const { return solve(Mat::Identity(lower.rows(), lower.cols())); }

Mat InvertibleLinearParams::apply(const Mat& x) const { return lower_matrix() * (upper_matrix() * x); }

Mat InvertibleLinearParams::solve(const Mat& x) const {
  const Mat z = lower.triangularView<Eigen::UnitLower>().solve(x);
  return upper_matrix().triangularView<Eigen::Upper>().solve(z);
}

// ---- model -------------------------------------------------------------------

FlowModel::FlowModel(Index dim, Index degree, std::vector<FlowLayer> layers)
    : dim_(dim), degree_(degree), layers_(std::move(layers)) {
  if (dim < 1) throw DomainError("flow: dimension must be positive");
  if (degree < 1) throw DomainError("flow: polynomial degree must be at least 1");
  for (const FlowLayer& l : layers_) {
    const auto& lin = l.linear;
    if (lin.lower.rows() != dim || lin.lower.cols() != dim || lin.upper_offdiag.rows() != dim ||
        lin.upper_offdiag.cols() != dim || lin.diag_sign.size() != dim || lin.diag_logmag.size() != dim) {
      throw ShapeError("flow: linear layer does not match dimension " + std::to_string(dim));
    }
    if (l.coupling.alpha.rows() != degree || l.coupling.alpha.cols() != dim / 2) {
      throw ShapeError("flow: coupling coefficients have shape " + shape_of(l.coupling.alpha) + ", expected " +
                       shape_str(degree, dim / 2));
    }
  }
}

FlowModel FlowModel::identity(Index dim, Index num_layers, Index degree) {
  std::vector<FlowLayer> layers;
  for (Index i = 0; i < num_layers; ++i) {
    layers.push_back({InvertibleLinearParams::identity(dim), {Mat::Zero(degree, dim / 2)}});
  }
  return FlowModel(dim, degree, std::move(layers));
}

FlowModel FlowModel::initialize(Index dim, Index num_layers, Index degree, std::uint64_t seed) {
  FlowModel m = identity(dim, num_layers, degree);
  Rng rng = make_rng(seed, 0x666c6f77);
  const double sd = std::sqrt(0.01 / static_cast<double>(dim));
  for (FlowLayer& l : m.layers_) {
    l.linear.lower = sd * standard_normal(dim, dim, rng);
    l.linear.lower = Mat(l.linear.lower.triangularView<Eigen::StrictlyLower>());
    l.linear.upper_offdiag = sd * standard_normal(dim, dim, rng);
    l.linear.upper_offdiag = Mat(l.linear.upper_offdiag.triangularView<Eigen::StrictlyUpper>());
  }
  return m;
}

std::vector<Tensor> FlowModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(parameter_block_count());
  for (const FlowLayer& l : layers_) {
    out.emplace_back(l.linear.lower);
    out.emplace_back(l.linear.upper_offdiag);
    out.emplace_back(l.linear.diag_logmag.transpose());
    out.emplace_back(l.coupling.alpha);
  }
  return out;
}

void FlowModel::set_parameters(const std::vector<Tensor>& values) {
  if (values.size() != parameter_block_count()) throw ShapeError("flow: wrong number of parameter blocks");
  std::size_t k = 0;
  for (FlowLayer& l : layers_) {
    l.linear.lower = Mat(Mat(values[k++]).triangularView<Eigen::StrictlyLower>());
    l.linear.upper_offdiag = Mat(Mat(values[k++]).triangularView<Eigen::StrictlyUpper>());
    l.linear.diag_logmag = values[k++].transpose();
    l.coupling.alpha = values[k++];
  }
}

FlowModel random_flow(Index dim, Index num_layers, Index degree, std::uint64_t seed, RandomFlowScales scales) {
  FlowModel m = FlowModel::identity(dim, num_layers, degree);
  Rng rng = make_rng(seed, 0x72616e64);
  for (FlowLayer& l : m.layers()) {
    l.linear.lower = Mat((scales.offdiag * standard_normal(dim, dim, rng)).triangularView<Eigen::StrictlyLower>());
    l.linear.upper_offdiag = Mat((scales.offdiag * standard_normal(dim, dim, rng)).triangularView<Eigen::StrictlyUpper>());
    l.linear.diag_logmag = scales.logmag * standard_normal(dim, rng);
    for (Index j = 0; j < dim; ++j) l.linear.diag_sign(j) = (rng() & 1U) ? 1.0 : -1.0;
    l.coupling.alpha = scales.alpha * standard_normal(degree, dim / 2, rng);
  }
  return m;
}

// ---- coupling ----------------------------------------------------------------

Vec coupling_shift(const CouplingLayerParams& c, const Vec& u) {
  Vec out = Vec::Zero(c.width());
  for (Index l = 0; l < c.width(); ++l) {
    const double t = std::tanh(u(l));
    double p = 1.0;
    for (Index r = 0; r < c.degree(); ++r) {
      p *= t;
      out(l) += c.alpha(r, l) * p;
    }
  }
  return out;
}

Vec coupling_shift_derivative(const CouplingLayerParams& c, const Vec& u) {
  Vec out = Vec::Zero(c.width());
  for (Index l = 0; l < c.width(); ++l) {
    const double t = std::tanh(u(l));
    const double s2 = 1.0 - t * t;
    double p = 1.0;  // t^{r-1}
    for (Index r = 1; r <= c.degree(); ++r) {
      out(l) += c.alpha(r - 1, l) * static_cast<double>(r) * p * s2;
      p *= t;
    }
  }
  return out;
}

Vec coupling_shift_second_derivative(const CouplingLayerParams& c, const Vec& u) {
  Vec out = Vec::Zero(c.width());
  for (Index l = 0; l < c.width(); ++l) {
    const double t = std::tanh(u(l));
    const double s2 = 1.0 - t * t;
    for (Index r = 1; r <= c.degree(); ++r) {
      const double rd = static_cast<double>(r);
      const double lead = r >= 2 ? (rd - 1.0) * std::pow(t, static_cast<double>(r - 2)) * s2 * s2 : 0.0;
      out(l) += c.alpha(r - 1, l) * rd * (lead - 2.0 * std::pow(t, rd) * s2);
    }
  }
  return out;
}

// ---- evaluation --------------------------------------------------------------

namespace {

void check_dim(const FlowModel& m, Index n, const char* what) {
  if (n != m.dim()) {
    throw ShapeError(std::string(what) + ": point has dimension " + std::to_string(n) + ", flow has dimension " +
                     std::to_string(m.dim()));
  }
}

}  // namespace

Vec forward(const FlowModel& model, const Vec& x) {
  check_dim(model, x.size(), "forward");
  const Index t = model.tail();
  Vec y = x;
  for (const FlowLayer& l : model.layers()) {
    y = l.linear.apply(y);
    y.tail(t) += coupling_shift(l.coupling, y.head(t));
  }
  return y;
}

Vec inverse(const FlowModel& model, const Vec& y) {
  check_dim(model, y.size(), "inverse");
  const Index t = model.tail();
  Vec x = y;
  for (auto it = model.layers().rbegin(); it != model.layers().rend(); ++it) {
    x.tail(t) -= coupling_shift(it->coupling, x.head(t));
    x = it->linear.solve(x);
  }
  return x;
}

Mat forward_batch(const FlowModel& model, const Mat& xs) {
  check_dim(model, xs.cols(), "forward");
  Mat out(xs.rows(), xs.cols());
  for (Index i = 0; i < xs.rows(); ++i) out.row(i) = forward(model, xs.row(i).transpose()).transpose();
  return out;
}

Mat inverse_batch(const FlowModel& model, const Mat& ys) {
  check_dim(model, ys.cols(), "inverse");
  Mat out(ys.rows(), ys.cols());
  for (Index i = 0; i < ys.rows(); ++i) out.row(i) = inverse(model, ys.row(i).transpose()).transpose();
  return out;
}

double log_abs_det(const FlowModel& model) {
  double s = 0.0;
  for (const FlowLayer& l : model.layers()) s += l.linear.log_abs_det();
  return s;
}

double log_density(const FlowModel& model, const Vec& x) {
  const Vec z = forward(model, x);
  const double d = static_cast<double>(model.dim());
  return -0.5 * z.squaredNorm() - 0.5 * d * std::log(2.0 * std::numbers::pi) + log_abs_det(model);
}

Vec log_density_batch(const FlowModel& model, const Mat& xs) {
  Vec out(xs.rows());
  for (Index i = 0; i < xs.rows(); ++i) out(i) = log_density(model, xs.row(i).transpose());
  return out;
}

Mat sample(const FlowModel& model, Index count, std::uint64_t seed) {
  if (count < 1) throw DomainError("sample: count must be at least 1");
  Rng rng = make_rng(seed, 0x73616d70);
  return inverse_batch(model, standard_normal(count, model.dim(), rng));
}

Vec jvp(const FlowModel& model, const Vec& x, const Vec& v) {
  check_dim(model, x.size(), "jvp");
  if (v.size() != x.size()) throw ShapeError("jvp: tangent dimension differs from point dimension");
  const Index t = model.tail();
  Vec y = x;
  Vec dy = v;
  for (const FlowLayer& l : model.layers()) {
    y = l.linear.apply(y);
    dy = l.linear.apply(dy);
    const Vec gp = coupling_shift_derivative(l.coupling, y.head(t));
    dy.tail(t) += gp.cwiseProduct(dy.head(t));
    y.tail(t) += coupling_shift(l.coupling, y.head(t));
  }
  return dy;
}

Vec inverse_jvp(const FlowModel& model, const Vec& y, const Vec& w) {
  check_dim(model, y.size(), "inverse_jvp");
  if (w.size() != y.size()) throw ShapeError("inverse_jvp: tangent dimension differs from point dimension");
  const Index t = model.tail();
  Vec x = y;
  Vec dx = w;
  for (auto it = model.layers().rbegin(); it != model.layers().rend(); ++it) {
    const Vec gp = coupling_shift_derivative(it->coupling, x.head(t));
    dx.tail(t) -= gp.cwiseProduct(dx.head(t));
    x.tail(t) -= coupling_shift(it->coupling, x.head(t));
    x = it->linear.solve(x);
    dx = it->linear.solve(dx);
  }
  return dx;
}

Mat jacobian_at(const FlowModel& model, const Vec& x) {
  const Index d = model.dim();
  Mat j(d, d);
  for (Index k = 0; k < d; ++k) j.col(k) = jvp(model, x, Vec::Unit(d, k));
  return j;
}

Mat inverse_jacobian_at(const FlowModel& model, const Vec& y) {
  const Index d = model.dim();
  Mat j(d, d);
  for (Index k = 0; k < d; ++k) j.col(k) = inverse_jvp(model, y, Vec::Unit(d, k));
  return j;
}

// ---- recorded evaluation -----------------------------------------------------

namespace ad_flow {
namespace {

Tensor strict_mask(Index d, bool lower) {
  Tensor m = Tensor::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      if (lower ? j < i : j > i) m(i, j) = 1.0;
    }
  }
  return m;
}

ad::Var upper_full(const LayerVars& l, Index d) {
  ad::Var diag = ad::diag_embed(ad::mul_const(ad::exp(l.diag_logmag), l.diag_sign));
  return ad::mul_const(l.upper_offdiag, strict_mask(d, false)) + diag;
}

ad::Var lower_full(const LayerVars& l, Index d) {
  ad::Var eye = l.lower.tape->constant(Tensor::Identity(d, d));
  return ad::mul_const(l.lower, strict_mask(d, true)) + eye;
}

ad::Var row_of(ad::Var m, Index r) {
  Tensor sel = Tensor::Zero(1, m.rows());
  sel(0, r) = 1.0;
  return ad::matmul(m.tape->constant(sel), m);
}

/// Sum_r alpha(r, .) tanh(u)^r for u of shape B x t.
ad::Var shift(const LayerVars& l, ad::Var u, Index degree) {
  ad::Var th = ad::tanh(u);
  ad::Var p = th;
  ad::Var acc = p * row_of(l.alpha, 0);
  for (Index r = 1; r < degree; ++r) {
    p = p * th;
    acc = acc + p * row_of(l.alpha, r);
  }
  return acc;
}

/// Sum_r r alpha(r, .) tanh(u)^{r-1} sech^2(u).
ad::Var shift_derivative(const LayerVars& l, ad::Var u, Index degree) {
  ad::Var th = ad::tanh(u);
  ad::Var sech2 = 1.0 - ad::square(th);
  ad::Var acc = row_of(l.alpha, 0);
  ad::Var p = th;
  for (Index r = 1; r < degree; ++r) {
    acc = acc + static_cast<double>(r + 1) * (p * row_of(l.alpha, r));
    p = p * th;
  }
  return acc * sech2;
}

}  // namespace

std::vector<ad::Var> FlowVars::parameters() const {
  std::vector<ad::Var> out;
  for (const LayerVars& l : layers) {
    out.push_back(l.lower);
    out.push_back(l.upper_offdiag);
    out.push_back(l.diag_logmag);
    out.push_back(l.alpha);
  }
  return out;
}

FlowVars record(ad::Tape& tape, const FlowModel& model, bool trainable) {
  FlowVars f;
  f.tape = &tape;
  f.dim = model.dim();
  f.degree = model.degree();
  auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  for (const FlowLayer& l : model.layers()) {
    LayerVars lv;
    lv.lower = put(l.linear.lower);
    lv.upper_offdiag = put(l.linear.upper_offdiag);
    lv.diag_logmag = put(l.linear.diag_logmag.transpose());
    lv.alpha = put(l.coupling.alpha);
    lv.diag_sign = l.linear.diag_sign.transpose();
    f.layers.push_back(lv);
  }
  return f;
}

ad::Var forward(const FlowVars& f, ad::Var x) {
  if (x.cols() != f.dim) {
    throw ShapeError("forward: points have dimension " + std::to_string(x.cols()) + ", flow has dimension " +
                     std::to_string(f.dim));
  }
  const Index d = f.dim;
  const Index t = d / 2;
  const Index h = d - t;
  ad::Var y = x;
  for (const LayerVars& l : f.layers) {
    // Rows: z = x V^T = x U^T L^T.
    y = ad::matmul(ad::matmul(y, ad::transpose(upper_full(l, d))), ad::transpose(lower_full(l, d)));
    if (t == 0) continue;
    ad::Var z1 = ad::slice_cols(y, 0, h);
    ad::Var z2 = ad::slice_cols(y, h, t);
    y = ad::concat_cols(z1, z2 + shift(l, ad::slice_cols(z1, 0, t), f.degree));
  }
  return y;
}

ad::Var inverse(const FlowVars& f, ad::Var y) {
  if (y.cols() != f.dim) {
    throw ShapeError("inverse: points have dimension " + std::to_string(y.cols()) + ", flow has dimension " +
                     std::to_string(f.dim));
  }
  const Index d = f.dim;
  const Index t = d / 2;
  const Index h = d - t;
  ad::Var x = y;
  for (auto it = f.layers.rbegin(); it != f.layers.rend(); ++it) {
    if (t > 0) {
      ad::Var z1 = ad::slice_cols(x, 0, h);
      ad::Var z2 = ad::slice_cols(x, h, t);
      x = ad::concat_cols(z1, z2 - shift(*it, ad::slice_cols(z1, 0, t), f.degree));
    }
    // Rows: x^T <- U^{-1} L^{-1} x^T.
    ad::Var cols = ad::transpose(x);
    cols = ad::tri_solve(it->lower, cols, true, true);
    cols = ad::tri_solve(upper_full(*it, d), cols, false, false);
    x = ad::transpose(cols);
  }
  return x;
}

ad::Var log_abs_det(const FlowVars& f) {
  if (f.layers.empty()) return f.tape->constant(Tensor::Zero(1, 1));
  ad::Var acc = ad::sum(f.layers.front().diag_logmag);
  for (std::size_t i = 1; i < f.layers.size(); ++i) acc = acc + ad::sum(f.layers[i].diag_logmag);
  return acc;
}

ad::Var log_density(const FlowVars& f, ad::Var x) {
  ad::Var z = forward(f, x);
  const double c = -0.5 * static_cast<double>(f.dim) * std::log(2.0 * std::numbers::pi);
  ad::Var quad = ad::scale(ad::sum_cols(ad::square(z)), -0.5);
  return (quad + log_abs_det(f)) + c;
}

ad::Var inverse_jacobian_transposed(const FlowVars& f, ad::Var y) {
  if (y.rows() != 1 || y.cols() != f.dim) throw ShapeError("inverse_jacobian_transposed: expected a single 1 x d point");
  const Index d = f.dim;
  const Index t = d / 2;
  const Index h = d - t;
  ad::Var x = y;
  // Row k of `tan` is (D phi^{-1} e_k)^T propagated layer by layer.
  ad::Var tan = y.tape->constant(Tensor::Identity(d, d));
  for (auto it = f.layers.rbegin(); it != f.layers.rend(); ++it) {
    if (t > 0) {
      ad::Var z1 = ad::slice_cols(x, 0, h);
      ad::Var u = ad::slice_cols(z1, 0, t);
      ad::Var gp = shift_derivative(*it, u, f.degree);
      ad::Var t1 = ad::slice_cols(tan, 0, h);
      ad::Var t2 = ad::slice_cols(tan, h, t) - ad::slice_cols(t1, 0, t) * gp;
      tan = ad::concat_cols(t1, t2);
      x = ad::concat_cols(z1, ad::slice_cols(x, h, t) - shift(*it, u, f.degree));
    }
    ad::Var cols = ad::concat_cols(ad::transpose(x), ad::transpose(tan));
    cols = ad::tri_solve(it->lower, cols, true, true);
    cols = ad::tri_solve(upper_full(*it, d), cols, false, false);
    x = ad::transpose(ad::slice_cols(cols, 0, 1));
    tan = ad::transpose(ad::slice_cols(cols, 1, d));
  }
  return tan;
}

}  // namespace ad_flow

// ---- checkpoint --------------------------------------------------------------

nlohmann::json flow_to_json(const FlowModel& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const FlowLayer& l : model.layers()) {
    layers.push_back({{"lower", json_util::matrix_to_json(l.linear.lower)},
                      {"upper_offdiag", json_util::matrix_to_json(l.linear.upper_offdiag)},
                      {"upper_diag_sign", json_util::vector_to_json(l.linear.diag_sign)},
                      {"upper_diag_logmag", json_util::vector_to_json(l.linear.diag_logmag)},
                      {"alpha", json_util::matrix_to_json(l.coupling.alpha)}});
  }
  return {{"version", kFlowCheckpointVersion},
          {"dim", model.dim()},
          {"L", model.num_layers()},
          {"degree", model.degree()},
          {"layers", layers}};
}

FlowModel flow_from_json(const nlohmann::json& doc) {
  json_util::require_version(doc, kFlowCheckpointVersion, "flow checkpoint");
  const Index dim = json_util::get_index(doc, "dim", "flow checkpoint");
  const Index num_layers = json_util::get_index(doc, "L", "flow checkpoint");
  const Index degree = json_util::get_index(doc, "degree", "flow checkpoint");
  if (!doc.contains("layers") || !doc["layers"].is_array() || static_cast<Index>(doc["layers"].size()) != num_layers) {
    throw SchemaError("flow checkpoint: 'layers' must be an array of length L = " + std::to_string(num_layers));
  }
  std::vector<FlowLayer> layers;
  for (std::size_t i = 0; i < doc["layers"].size(); ++i) {
    const auto& lj = doc["layers"][i];
    const std::string where = "flow checkpoint: layers[" + std::to_string(i) + "]";
    FlowLayer l;
    l.linear.lower = json_util::matrix_from_json(lj, "lower", where);
    l.linear.upper_offdiag = json_util::matrix_from_json(lj, "upper_offdiag", where);
    l.linear.diag_sign = json_util::vector_from_json(lj, "upper_diag_sign", where);
    l.linear.diag_logmag = json_util::vector_from_json(lj, "upper_diag_logmag", where);
    l.coupling.alpha = json_util::matrix_from_json(lj, "alpha", where);
    for (Index j = 0; j < l.linear.diag_sign.size(); ++j) {
      if (l.linear.diag_sign(j) != 1.0 && l.linear.diag_sign(j) != -1.0) {
        throw SchemaError(where + ".upper_diag_sign: entries must be +1 or -1");
      }
    }
    if (degree > 0 && dim / 2 == 0 && l.coupling.alpha.size() == 0) l.coupling.alpha = Mat::Zero(degree, 0);
    layers.push_back(std::move(l));
  }
  try {
    return FlowModel(dim, degree, std::move(layers));
  } catch (const Error& e) {
    throw SchemaError(std::string("flow checkpoint: ") + e.what());
  }
}

}  // namespace raflow
