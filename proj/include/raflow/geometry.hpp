#pragma once

// Euclidean structure pulled back through a flow phi. Every mapping is closed
// form: the flow sends geodesics to straight lines.

#include "raflow/flow.hpp"

namespace raflow {

struct PullbackGeometry {
  FlowModel flow;

  Index dim() const { return flow.dim(); }
};

/// ||phi(x) - phi(y)||.
double distance(const PullbackGeometry& g, const Vec& x, const Vec& y);
/// phi^{-1}((1 - t) phi(x) + t phi(y)), t in [0, 1].
Vec geodesic(const PullbackGeometry& g, const Vec& x, const Vec& y, double t);
/// phi^{-1}(phi(x) + D_x phi [v]).
Vec exp_map(const PullbackGeometry& g, const Vec& x, const Vec& v);
/// Solves D_x phi u = phi(y) - phi(x) with the assembled Jacobian.
Vec log_map(const PullbackGeometry& g, const Vec& x, const Vec& y);
/// phi^{-1}(mean_i phi(x_i)); rows of `points` are the x_i.
Vec barycenter(const PullbackGeometry& g, const Mat& points);

/// log_x for many targets sharing one base point; rows in, rows out.
Mat log_map_batch(const PullbackGeometry& g, const Vec& x, const Mat& ys);

/// LU factorization of D_x phi, reused across tangent vectors at x. Throws
/// NumericError if the differential is numerically singular.
class TangentSolver {
 public:
  TangentSolver(const FlowModel& flow, const Vec& x);
  const Mat& jacobian() const { return jacobian_; }
  Vec solve(const Vec& w) const;

 private:
  Mat jacobian_;
  Eigen::PartialPivLU<Mat> lu_;
};

}  // namespace raflow
