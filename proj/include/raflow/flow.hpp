#pragma once

// Volume-controlled normalizing flow
//
//   phi = phi_L o ... o phi_1,   phi_i(x) = f_i(V_i x),
//   f_i([z1, z2]) = [z1, z2 + g_i(z1)],  g_i(u)_l = sum_r alpha_i(r, l) tanh(u_l)^r.
//
// V_i = L_i U_i with L_i unit lower triangular and U_i upper triangular whose
// diagonal is stored as (fixed sign, log-magnitude). Couplings are volume
// preserving, so log|det D_x phi| = sum_i sum_j logmag_i(j) for every x.
//
// For odd d the leading block z1 has ceil(d/2) coordinates and z2 has
// floor(d/2); g_i reads the first floor(d/2) coordinates of z1.

#include "raflow/autodiff.hpp"
#include "raflow/random.hpp"
#include "raflow/types.hpp"

#include <nlohmann/json.hpp>

#include <vector>

namespace raflow {

struct InvertibleLinearParams {
  Mat lower;          // only the strictly lower part is used
  Mat upper_offdiag;  // only the strictly upper part is used
  Vec diag_sign;      // entries in {-1, +1}, fixed at initialization
  Vec diag_logmag;

  static InvertibleLinearParams identity(Index dim);

  Mat lower_matrix() const;
  Mat upper_matrix() const;
  /// V = L U.
  Mat matrix() const;
  Mat inverse_matrix() const;
  double log_abs_det() const { return diag_logmag.sum(); }
  /// Applies V to each column of x.
  Mat apply(const Mat& x) const;
  /// Applies V^{-1} to each column of x via two triangular solves.
  Mat solve(const Mat& x) const;
};

struct CouplingLayerParams {
  Mat alpha;  // degree x floor(d/2)

  Index degree() const { return alpha.rows(); }
  Index width() const { return alpha.cols(); }
};

struct FlowLayer {
  InvertibleLinearParams linear;
  CouplingLayerParams coupling;
};

class FlowModel {
 public:
  FlowModel() = default;
  FlowModel(Index dim, Index degree, std::vector<FlowLayer> layers);

  /// Identity map: V = I, alpha = 0.
  static FlowModel identity(Index dim, Index num_layers, Index degree);
  /// Training initialization: off-diagonals ~ N(0, 0.01/d), log-magnitudes 0,
  /// alpha 0. Starts as a near-identity map with log|det| = 0.
  static FlowModel initialize(Index dim, Index num_layers, Index degree, std::uint64_t seed);

  Index dim() const { return dim_; }
  Index degree() const { return degree_; }
  Index num_layers() const { return static_cast<Index>(layers_.size()); }
  /// Size of the untouched leading block z1.
  Index head() const { return dim_ - dim_ / 2; }
  /// Size of the shifted block z2.
  Index tail() const { return dim_ / 2; }

  const std::vector<FlowLayer>& layers() const { return layers_; }
  std::vector<FlowLayer>& layers() { return layers_; }

  /// Trainable parameter blocks in a fixed order: per layer
  /// {lower, upper_offdiag, diag_logmag (1 x d), alpha}.
  std::vector<Tensor> parameters() const;
  void set_parameters(const std::vector<Tensor>& values);
  std::size_t parameter_block_count() const { return 4 * layers_.size(); }

 private:
  Index dim_ = 0;
  Index degree_ = 0;
  std::vector<FlowLayer> layers_;
};

/// Scales used to draw random (non-identity) models for tests and checks.
struct RandomFlowScales {
  double offdiag = 0.3;
  double logmag = 0.3;
  double alpha = 0.3;
};
FlowModel random_flow(Index dim, Index num_layers, Index degree, std::uint64_t seed, RandomFlowScales scales = {});

// Coupling nonlinearity, elementwise on the first floor(d/2) head coordinates.
Vec coupling_shift(const CouplingLayerParams& c, const Vec& u);
Vec coupling_shift_derivative(const CouplingLayerParams& c, const Vec& u);
Vec coupling_shift_second_derivative(const CouplingLayerParams& c, const Vec& u);

Vec forward(const FlowModel& model, const Vec& x);
Vec inverse(const FlowModel& model, const Vec& y);
/// Rows of `xs` are points.
Mat forward_batch(const FlowModel& model, const Mat& xs);
Mat inverse_batch(const FlowModel& model, const Mat& ys);

double log_abs_det(const FlowModel& model);
double log_density(const FlowModel& model, const Vec& x);
Vec log_density_batch(const FlowModel& model, const Mat& xs);

/// x = phi^{-1}(z), z ~ N(0, I); one row per sample.
Mat sample(const FlowModel& model, Index count, std::uint64_t seed);

/// D_x phi [v].
Vec jvp(const FlowModel& model, const Vec& x, const Vec& v);
/// D_y phi^{-1} [w].
Vec inverse_jvp(const FlowModel& model, const Vec& y, const Vec& w);
/// D_x phi assembled column by column from jvp.
Mat jacobian_at(const FlowModel& model, const Vec& x);
/// D_y phi^{-1} assembled column by column from inverse_jvp.
Mat inverse_jacobian_at(const FlowModel& model, const Vec& y);

// ---- recorded evaluation ---------------------------------------------------

namespace ad_flow {

struct LayerVars {
  ad::Var lower;
  ad::Var upper_offdiag;
  ad::Var diag_logmag;  // 1 x d
  ad::Var alpha;
  Tensor diag_sign;     // 1 x d
};

struct FlowVars {
  ad::Tape* tape = nullptr;
  Index dim = 0;
  Index degree = 0;
  std::vector<LayerVars> layers;

  /// Parameter handles in FlowModel::parameters() order.
  std::vector<ad::Var> parameters() const;
};

/// Records the model parameters on `tape` as leaves (or constants).
FlowVars record(ad::Tape& tape, const FlowModel& model, bool trainable = true);

/// Rows of x are points.
ad::Var forward(const FlowVars& f, ad::Var x);
ad::Var inverse(const FlowVars& f, ad::Var y);
/// 1 x 1.
ad::Var log_abs_det(const FlowVars& f);
/// B x 1.
ad::Var log_density(const FlowVars& f, ad::Var x);
/// Transposed Jacobian (D_y phi^{-1})^T at a single point y (1 x d).
ad::Var inverse_jacobian_transposed(const FlowVars& f, ad::Var y);

}  // namespace ad_flow

// ---- checkpoint ------------------------------------------------------------

inline constexpr int kFlowCheckpointVersion = 1;

nlohmann::json flow_to_json(const FlowModel& model);
/// Throws SchemaError on a malformed or mismatched document.
FlowModel flow_from_json(const nlohmann::json& doc);

}  // namespace raflow
