#include "raflow/metrics.hpp"

#include "raflow/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace raflow {

std::string to_string(W1Method m) {
  switch (m) {
    case W1Method::Exact1d: return "exact-1d";
    case W1Method::Sliced: return "sliced";
    case W1Method::ExactAssignment: return "exact-assignment";
  }
  return "unknown";
}

double w1_exact_1d(const Vec& p, const Vec& q) {
  if (p.size() == 0 || q.size() == 0) throw DomainError("w1: empty sample set");
  std::vector<double> a(p.data(), p.data() + p.size());
  std::vector<double> b(q.data(), q.data() + q.size());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double wa = 1.0 / static_cast<double>(a.size());
  const double wb = 1.0 / static_cast<double>(b.size());
  // Sweep the merged support accumulating |F_p - F_q| times the gap.
  std::size_t i = 0, j = 0;
  double fa = 0.0, fb = 0.0, total = 0.0;
  double prev = std::min(a.front(), b.front());
  while (i < a.size() || j < b.size()) {
    const double next = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    total += std::abs(fa - fb) * (next - prev);
    prev = next;
    while (i < a.size() && a[i] == next) {
      fa += wa;
      ++i;
    }
    while (j < b.size() && b[j] == next) {
      fb += wb;
      ++j;
    }
  }
  return total;
}

std::vector<Index> solve_assignment(const Mat& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw ShapeError("solve_assignment: cost matrix must be square");
  // Potentials formulation with 1-based sentinels.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<Index> match(n + 1, 0), way(n + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    match[0] = i;
    Index j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const Index i0 = match[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const Index j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assignment(n, -1);
  for (Index j = 1; j <= n; ++j) assignment[match[j] - 1] = j - 1;
  return assignment;
}

W1Estimate w1(const Mat& p, const Mat& q, W1Method method, std::uint64_t seed, Index projections) {
  if (p.rows() == 0 || q.rows() == 0) throw DomainError("w1: empty sample set");
  if (p.cols() != q.cols()) throw ShapeError("w1: sample sets have different dimensions");
  W1Estimate est;
  est.method = method;
  est.count_p = p.rows();
  est.count_q = q.rows();
  switch (method) {
    case W1Method::Exact1d: {
      if (p.cols() != 1) throw DomainError("w1: exact-1d requires one-dimensional samples");
      est.value = w1_exact_1d(p.col(0), q.col(0));
      break;
    }
    case W1Method::Sliced: {
      if (projections < 1) throw DomainError("w1: need at least one projection");
      Rng rng = make_rng(seed, 0x736c6963);
      Vec vals(projections);
      for (Index k = 0; k < projections; ++k) {
        const Vec dir = random_unit(p.cols(), rng);
        vals(k) = w1_exact_1d(p * dir, q * dir);
      }
      est.projection_count = projections;
      est.value = vals.mean();
      if (projections > 1) {
        const double var = (vals.array() - est.value).square().sum() / static_cast<double>(projections - 1);
        est.std_error = std::sqrt(var / static_cast<double>(projections));
      }
      break;
    }
    case W1Method::ExactAssignment: {
      if (p.rows() != q.rows()) throw DomainError("w1: exact-assignment requires equal sample counts");
      if (p.rows() > 2000) throw DomainError("w1: exact-assignment is limited to 2000 samples");
      const Index n = p.rows();
      Mat cost(n, n);
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) cost(i, j) = (p.row(i) - q.row(j)).norm();
      }
      const auto a = solve_assignment(cost);
      double total = 0.0;
      for (Index i = 0; i < n; ++i) total += cost(i, a[static_cast<std::size_t>(i)]);
      est.value = total / static_cast<double>(n);
      break;
    }
  }
  return est;
}

double mse(const Vec& x_hat, const Vec& x) {
  if (x_hat.size() != x.size()) throw ShapeError("mse: dimension mismatch");
  if (x.size() == 0) throw DomainError("mse: empty vectors");
  return (x_hat - x).squaredNorm() / static_cast<double>(x.size());
}

double recoverability_bound(double omega, double operator_norm, double delta) {
  if (!(delta >= 0.0 && delta < 1.0)) throw DomainError("recoverability_bound: delta must lie in [0, 1)");
  if (omega < 0.0) throw DomainError("recoverability_bound: omega must be nonnegative");
  if (operator_norm < 0.0) throw DomainError("recoverability_bound: operator norm must be nonnegative");
  return 2.0 * omega * (1.0 + operator_norm / std::sqrt(1.0 - delta));
}

}  // namespace raflow
