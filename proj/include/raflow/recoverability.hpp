#pragma once

// Advisory check of the distribution-recovery bound
//
//   W1(p_model, p_data) <= 2 omega (1 + ||A|| / sqrt(1 - delta))
//
// with omega replaced by the measured expected projection error of the RAE
// and delta by the sampled RIP constant over the decoder range. The
// theorem's feasibility assumptions cannot be checked, so the outcome is a
// diagnostic, never a proof.

#include "raflow/corruption.hpp"
#include "raflow/metrics.hpp"
#include "raflow/rae.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>

namespace raflow {

struct RecoverabilityReport {
  double omega_hat = 0.0;          // E ||D(E(x)) - x|| under the model
  double omega_std_error = 0.0;
  double reference_term = 0.0;     // E ||phi_tau(phi^{-1}(x)) - x||; 0 with phi_tau = phi
  double delta_hat = 0.0;          // sampled RIP constant over range(D)
  double rip_lower = 0.0;
  double rip_upper = 0.0;
  double operator_norm = 0.0;      // ||A||
  double bound = 0.0;              // +inf when delta_hat >= 1
  W1Estimate w1;                   // sliced W1(model samples, ground truth)
  Index model_samples = 0;
  bool advisory_pass = false;
};

struct RecoverabilityOptions {
  Index model_samples = 2000;
  Index rip_pairs = 10000;
  std::uint64_t seed = 0;
};

/// The RAE's flow is the model whose samples are compared with `ground_truth`
/// (rows are clean signals).
RecoverabilityReport verify_recoverability(const RAE& rae, const Mat& ground_truth, const LinearOperator& a,
                                           const RecoverabilityOptions& options = {});

nlohmann::json recoverability_to_json(const RecoverabilityReport& r);

}  // namespace raflow
