#pragma once

#include "raflow/types.hpp"

#include <cstdint>
#include <functional>

namespace raflow {

/// Eigenpairs of a symmetric matrix, eigenvalues descending. Each eigenvector
/// has its first nonzero component made positive so bases are reproducible.
struct SymmetricEigen {
  Vec values;
  Mat vectors;  // columns
};
SymmetricEigen sorted_eigen(const Mat& s);

/// Largest singular value by power iteration on A^T A, matrix free.
/// `apply` maps R^n -> R^m, `apply_transpose` maps R^m -> R^n.
double spectral_norm(const std::function<Vec(const Vec&)>& apply, const std::function<Vec(const Vec&)>& apply_transpose,
                     Index n, std::uint64_t seed = 1, int max_iterations = 1000, double tolerance = 1e-12);
double spectral_norm(const Mat& a, std::uint64_t seed = 1, int max_iterations = 1000, double tolerance = 1e-12);

/// Largest singular value from a dense SVD; the reference for the above.
double spectral_norm_svd(const Mat& a);

}  // namespace raflow
