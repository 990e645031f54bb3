#include "raflow/random.hpp"

namespace raflow {
namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t state = seed ^ (stream * 0xd1b54a32d192ed03ULL);
  std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(state)), static_cast<std::uint32_t>(splitmix64(state)),
                    static_cast<std::uint32_t>(splitmix64(state)), static_cast<std::uint32_t>(splitmix64(state))};
  return Rng(seq);
}

Mat standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Mat out(rows, cols);
  // Fill row by row so a batch drawn row-wise matches one drawn point by point.
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = n01(rng);
  }
  return out;
}

Vec standard_normal(Index n, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vec out(n);
  for (Index i = 0; i < n; ++i) out(i) = n01(rng);
  return out;
}

Mat uniform(Index rows, Index cols, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = u(rng);
  }
  return out;
}

Vec random_unit(Index n, Rng& rng) {
  Vec v = standard_normal(n, rng);
  while (v.norm() == 0.0) v = standard_normal(n, rng);
  return v / v.norm();
}

}  // namespace raflow
