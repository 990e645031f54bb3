#pragma once

#include "raflow/types.hpp"

#include <cstdint>
#include <random>

namespace raflow {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream). Streams let one seed drive
/// several reproducible sequences (per step, per worker, per purpose).
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

Mat standard_normal(Index rows, Index cols, Rng& rng);
Vec standard_normal(Index n, Rng& rng);
Mat uniform(Index rows, Index cols, double lo, double hi, Rng& rng);

/// Uniformly distributed unit vector in R^n.
Vec random_unit(Index n, Rng& rng);

}  // namespace raflow
