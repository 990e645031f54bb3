#pragma once

// Riemannian autoencoder: tangent-space PCA at a base point x_bar.
//
//   E(x) = U^T log_xbar(x),   D(p) = exp_xbar(U p) = phi^{-1}(phi(xbar) + D_xbar phi [U p]).

#include "raflow/geometry.hpp"
#include "raflow/metrics.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>

namespace raflow {

class RAE {
 public:
  RAE(PullbackGeometry geometry, Vec base_point, Mat basis, Vec spectrum);

  const PullbackGeometry& geometry() const { return geometry_; }
  const FlowModel& flow() const { return geometry_.flow; }
  const Vec& base_point() const { return base_point_; }
  const Mat& basis() const { return basis_; }
  const Vec& spectrum() const { return spectrum_; }
  Index latent_dim() const { return basis_.cols(); }
  Index dim() const { return basis_.rows(); }

  /// phi(x_bar).
  const Vec& base_image() const { return base_image_; }
  /// D_xbar phi.
  const Mat& base_jacobian() const { return solver_.jacobian(); }
  /// U~ = D_xbar phi U, the latent directions in flow coordinates.
  const Mat& latent_map() const { return latent_map_; }

  Vec encode(const Vec& x) const;
  Vec decode(const Vec& p) const;
  /// D(E(x)).
  Vec project(const Vec& x) const { return decode(encode(x)); }
  /// Rows in, rows out.
  Mat encode_batch(const Mat& xs) const;
  Mat decode_batch(const Mat& ps) const;

  /// Jacobian of the decoder at p: D_{phi(xbar) + U~ p} phi^{-1} U~ (d x d_eps).
  Mat decode_jacobian(const Vec& p) const;

 private:
  PullbackGeometry geometry_;
  Vec base_point_;
  Mat basis_;
  Vec spectrum_;
  Vec base_image_;
  TangentSolver solver_;
  Mat latent_map_;
};

/// D_0 phi^{-1} (D_0 phi^{-1})^T: the covariance of log_xbar(x) for x ~ p with
/// unit latent covariance, at x_bar = phi^{-1}(0).
Mat tangent_covariance_analytic(const PullbackGeometry& g);
/// (1/N) sum_i log_xbar(x_i) log_xbar(x_i)^T; x_bar defaults to the barycenter.
Mat tangent_covariance_samples(const PullbackGeometry& g, const Mat& samples,
                               const std::optional<Vec>& base_point = std::nullopt);

/// Lambda_dd / tr(Lambda): epsilons at or below this admit no dimension.
double epsilon_floor(const Vec& spectrum);
/// Smallest d' in [1, d-1] whose discarded tail sum is at most eps tr(Lambda).
/// `spectrum` must be nonincreasing.
Index select_dim(const Vec& spectrum, double epsilon);

/// Fixed latent dimension or one chosen from epsilon via select_dim.
struct LatentSpec {
  std::optional<Index> latent_dim;
  std::optional<double> epsilon;

  static LatentSpec fixed(Index d) { return {d, std::nullopt}; }
  static LatentSpec from_epsilon(double e) { return {std::nullopt, e}; }
};

RAE build_rae_analytic(const PullbackGeometry& g, double epsilon);
/// Barycenter plus l2 tangent PCA. Needs N >= latent_dim + 1 samples and at
/// least latent_dim nonzero principal directions.
RAE build_rae_from_samples(const PullbackGeometry& g, const Mat& samples, LatentSpec spec);

struct ProjectionErrorReport {
  double expected_error = 0.0;  // mean ||D(E(x)) - x||
  Index sample_count = 0;
  double std_error = 0.0;
  W1Estimate sliced_w1;  // between {D(E(x_i))} and {x_i}
};

/// Monte Carlo estimate over the rows of `samples`.
ProjectionErrorReport expected_projection_error(const RAE& rae, const Mat& samples);
/// Same, with `count` >= 100 samples drawn from the flow's density.
ProjectionErrorReport expected_projection_error(const RAE& rae, Index count, std::uint64_t seed);

/// Heuristic estimate of the two leading terms of the expected projection
/// error bound. The suprema over latents are replaced by maxima over sampled
/// latents, so this is not a certified bound.
struct ProjectionBoundTerms {
  double c1 = 0.0;         // max ||D_{phi(D(p))} phi^{-1} D_xbar phi||
  double c2 = 0.0;         // max norm of the second-derivative bilinear map
  double frobenius = 0.0;  // ||D_0 phi^{-1}||_F
  double c1_term = 0.0;    // c1 sqrt(eps) ||.||_F
  double c2_term = 0.0;    // c2 eps ||.||_F^2 / 2
  double bound = 0.0;
  Index latent_samples = 0;
};
ProjectionBoundTerms projection_bound_terms(const RAE& rae, double epsilon, Index latent_sample_count,
                                            std::uint64_t seed = 1);

inline constexpr int kRaeCheckpointVersion = 1;

nlohmann::json rae_to_json(const RAE& rae, const std::string& flow_checkpoint_reference);
/// The flow must be loaded separately from the referenced checkpoint.
RAE rae_from_json(const nlohmann::json& doc, const FlowModel& flow);
std::string rae_flow_reference(const nlohmann::json& doc);

}  // namespace raflow
