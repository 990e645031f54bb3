#include "raflow/recoverability.hpp"

#include "raflow/inversion.hpp"

#include <cmath>
#include <limits>

namespace raflow {

RecoverabilityReport verify_recoverability(const RAE& rae, const Mat& ground_truth, const LinearOperator& a,
                                           const RecoverabilityOptions& o) {
  if (ground_truth.rows() == 0) throw DomainError("verify_recoverability: ground truth is empty");
  if (ground_truth.cols() != rae.dim())
    throw ShapeError("verify_recoverability: ground truth has " + std::to_string(ground_truth.cols()) +
                     " columns, model dimension is " + std::to_string(rae.dim()));
  RecoverabilityReport r;
  r.model_samples = o.model_samples;
  const ProjectionErrorReport pe = expected_projection_error(rae, o.model_samples, o.seed);
  r.omega_hat = pe.expected_error;
  r.omega_std_error = pe.std_error;
  // The reference flow is the model flow itself, so phi_tau o phi^{-1} = id.
  r.reference_term = 0.0;

  const RipEstimate rip = check_rip(rae, a, o.rip_pairs, o.seed);
  r.rip_lower = rip.lower;
  r.rip_upper = rip.upper;
  r.delta_hat = rip.delta();
  r.operator_norm = a.operator_norm();
  const double omega = r.omega_hat + r.reference_term;
  r.bound = r.delta_hat < 1.0 ? recoverability_bound(omega, r.operator_norm, std::max(0.0, r.delta_hat))
                              : std::numeric_limits<double>::infinity();

  const Mat model = sample(rae.flow(), o.model_samples, o.seed + 1);
  r.w1 = w1(model, ground_truth, W1Method::Sliced);
  r.advisory_pass = r.w1.value <= r.bound;
  return r;
}

nlohmann::json recoverability_to_json(const RecoverabilityReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"omega_hat", num(r.omega_hat)},
          {"omega_std_error", num(r.omega_std_error)},
          {"reference_term", num(r.reference_term)},
          {"delta_hat", num(r.delta_hat)},
          {"rip_ratio_range", {num(r.rip_lower), num(r.rip_upper)}},
          {"operator_norm", num(r.operator_norm)},
          {"bound", num(r.bound)},
          {"sliced_w1", num(r.w1.value)},
          {"sliced_w1_std_error", num(r.w1.std_error)},
          {"w1_projections", r.w1.projection_count},
          {"model_samples", r.model_samples},
          {"advisory_pass", r.advisory_pass},
          {"note", "advisory only: omega and delta are sampled estimates and the bound's feasibility assumptions "
                   "are not checked"}};
}

}  // namespace raflow
