#include "raflow/geometry.hpp"

namespace raflow {

namespace {

void check_same(const PullbackGeometry& g, const Vec& x, const Vec& y, const char* what) {
  if (x.size() != g.dim() || y.size() != g.dim()) {
    throw ShapeError(std::string(what) + ": points must have dimension " + std::to_string(g.dim()));
  }
}

}  // namespace

TangentSolver::TangentSolver(const FlowModel& flow, const Vec& x) : jacobian_(jacobian_at(flow, x)) {
  lu_.compute(jacobian_);
  // Reciprocal condition estimate; the flow is a diffeomorphism, so this only
  // trips on extreme parameter values.
  const double rcond = lu_.rcond();
  if (!(rcond > 1e-14)) throw NumericError("log_map: differential is numerically singular");
}

Vec TangentSolver::solve(const Vec& w) const { return lu_.solve(w); }

double distance(const PullbackGeometry& g, const Vec& x, const Vec& y) {
  check_same(g, x, y, "distance");
  return (forward(g.flow, x) - forward(g.flow, y)).norm();
}

Vec geodesic(const PullbackGeometry& g, const Vec& x, const Vec& y, double t) {
  check_same(g, x, y, "geodesic");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("geodesic: t must lie in [0, 1]");
  if (t == 0.0) return x;
  if (t == 1.0) return y;
  return inverse(g.flow, (1.0 - t) * forward(g.flow, x) + t * forward(g.flow, y));
}

Vec exp_map(const PullbackGeometry& g, const Vec& x, const Vec& v) {
  check_same(g, x, v, "exp_map");
  return inverse(g.flow, forward(g.flow, x) + jvp(g.flow, x, v));
}

Vec log_map(const PullbackGeometry& g, const Vec& x, const Vec& y) {
  check_same(g, x, y, "log_map");
  TangentSolver solver(g.flow, x);
  return solver.solve(forward(g.flow, y) - forward(g.flow, x));
}

Mat log_map_batch(const PullbackGeometry& g, const Vec& x, const Mat& ys) {
  if (x.size() != g.dim() || ys.cols() != g.dim()) throw ShapeError("log_map: dimension mismatch");
  TangentSolver solver(g.flow, x);
  const Vec fx = forward(g.flow, x);
  const Mat fy = forward_batch(g.flow, ys);
  Mat out(ys.rows(), ys.cols());
  for (Index i = 0; i < ys.rows(); ++i) out.row(i) = solver.solve(fy.row(i).transpose() - fx).transpose();
  return out;
}

Vec barycenter(const PullbackGeometry& g, const Mat& points) {
  if (points.rows() < 1) throw DomainError("barycenter: empty batch");
  if (points.cols() != g.dim()) throw ShapeError("barycenter: dimension mismatch");
  if (points.rows() == 1) return points.row(0).transpose();
  const Vec mean = forward_batch(g.flow, points).colwise().mean().transpose();
  return inverse(g.flow, mean);
}

}  // namespace raflow
