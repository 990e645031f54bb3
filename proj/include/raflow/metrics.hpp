#pragma once

#include "raflow/types.hpp"

#include <cstdint>
#include <string>

namespace raflow {

enum class W1Method { Exact1d, Sliced, ExactAssignment };

std::string to_string(W1Method m);

struct W1Estimate {
  double value = 0.0;
  W1Method method = W1Method::Sliced;
  Index projection_count = 0;  // sliced only
  double std_error = 0.0;      // across slices; 0 for exact methods
  Index count_p = 0;
  Index count_q = 0;
};

inline constexpr Index kDefaultSlices = 128;
inline constexpr std::uint64_t kDefaultSliceSeed = 0x5eed;

/// Rows are samples. Exact1d needs one column; ExactAssignment needs equal
/// counts of at most 2000.
W1Estimate w1(const Mat& p, const Mat& q, W1Method method, std::uint64_t seed = kDefaultSliceSeed,
              Index projections = kDefaultSlices);

/// W1 between two 1-d empirical measures of any sizes: integral |F_p - F_q|.
double w1_exact_1d(const Vec& p, const Vec& q);

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// O(n^3)). Returns assignment[row] = column.
std::vector<Index> solve_assignment(const Mat& cost);

/// ||x_hat - x||^2 / d.
double mse(const Vec& x_hat, const Vec& x);

/// 2 omega (1 + ||A|| / sqrt(1 - delta)), delta in [0, 1).
double recoverability_bound(double omega, double operator_norm, double delta);

}  // namespace raflow
