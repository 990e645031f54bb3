#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the autodiff tape.

#include "raflow/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using raflow::Index;
using raflow::Mat;
using raflow::Tensor;
using raflow::Vec;

/// Central differences of a scalar function of several blocks.
inline std::vector<Tensor> fd_gradient(const std::function<double(const std::vector<Tensor>&)>& f,
                                       std::vector<Tensor> at, double h = 1e-6) {
  std::vector<Tensor> g;
  for (std::size_t k = 0; k < at.size(); ++k) {
    Tensor gk = Tensor::Zero(at[k].rows(), at[k].cols());
    for (Index i = 0; i < at[k].size(); ++i) {
      const double x0 = at[k].data()[i];
      at[k].data()[i] = x0 + h;
      const double fp = f(at);
      at[k].data()[i] = x0 - h;
      const double fm = f(at);
      at[k].data()[i] = x0;
      gk.data()[i] = (fp - fm) / (2.0 * h);
    }
    g.push_back(gk);
  }
  return g;
}

/// Central-difference Jacobian of a vector function.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h = 1e-6) {
  const Vec f0 = f(x);
  Mat j(f0.size(), x.size());
  for (Index k = 0; k < x.size(); ++k) {
    Vec xp = x, xm = x;
    xp(k) += h;
    xm(k) -= h;
    j.col(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

/// max |a - b| / max(|b|, floor) over all blocks.
inline double max_rel_error(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double floor = 1.0) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (Index i = 0; i < a[k].size(); ++i) {
      const double ref = b[k].data()[i];
      worst = std::max(worst, std::abs(a[k].data()[i] - ref) / std::max(std::abs(ref), floor));
    }
  }
  return worst;
}

/// Relative error in the norm sense: |a - b| / max(|b|, floor), over all blocks.
inline double rel_norm_error(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double floor = 1e-8) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += (a[k] - b[k]).squaredNorm();
    den += b[k].squaredNorm();
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

/// log det via dense LU, independent of the triangular parameterization.
inline double log_abs_det_dense(const Mat& m) {
  return std::log(std::abs(m.fullPivLu().determinant()));
}

}  // namespace oracle
