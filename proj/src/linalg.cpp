#include "raflow/linalg.hpp"

#include "raflow/random.hpp"

#include <cmath>

namespace raflow {

SymmetricEigen sorted_eigen(const Mat& s) {
  if (s.rows() != s.cols()) throw ShapeError("sorted_eigen: matrix must be square, got " + shape_of(s));
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (s + s.transpose()));
  if (es.info() != Eigen::Success) throw NumericError("sorted_eigen: eigensolver did not converge");
  const Index n = s.rows();
  SymmetricEigen out{es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse()};
  for (Index k = 0; k < n; ++k) {
    auto col = out.vectors.col(k);
    const double scale = col.cwiseAbs().maxCoeff();
    for (Index i = 0; i < n; ++i) {
      if (std::abs(col(i)) > 1e-12 * scale) {
        if (col(i) < 0.0) col = -col;
        break;
      }
    }
  }
  return out;
}

double spectral_norm(const std::function<Vec(const Vec&)>& apply, const std::function<Vec(const Vec&)>& apply_transpose,
                     Index n, std::uint64_t seed, int max_iterations, double tolerance) {
  if (n == 0) return 0.0;
  Rng rng = make_rng(seed, 0x706f776572);
  Vec v = random_unit(n, rng);
  double sigma = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    const Vec av = apply(v);
    const double next = av.norm();
    if (next == 0.0) return 0.0;
    Vec w = apply_transpose(av);
    const double wn = w.norm();
    if (wn == 0.0) return next;
    v = w / wn;
    if (std::abs(next - sigma) <= tolerance * next) return next;
    sigma = next;
  }
  return sigma;
}

double spectral_norm(const Mat& a, std::uint64_t seed, int max_iterations, double tolerance) {
  return spectral_norm([&](const Vec& x) -> Vec { return a * x; }, [&](const Vec& y) -> Vec { return a.transpose() * y; },
                       a.cols(), seed, max_iterations, tolerance);
}

double spectral_norm_svd(const Mat& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(a);
  return svd.singularValues()(0);
}

}  // namespace raflow
