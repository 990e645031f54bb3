#pragma once

// Inverse problems with the RAE decoder as prior:
//
//   min_p L(p) = 1/2 ||A D(p) - y||^2,   p_{t+1} = p_t - alpha grad L(p_t),
//
// together with the decoder smoothness constants, the step-size certificate
// that follows from them, sampled RIP / range-restricted isometry checks and
// a total-variation baseline.

#include "raflow/corruption.hpp"
#include "raflow/rae.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace raflow {

/// sup_{t in [0,1]} r t^{r-1} (1 - t^2): bound on |d/du tanh(u)^r|.
double tanh_power_derivative_bound(int r);

// ---- smoothness ----------------------------------------------------------------

/// Constants of the inverse layer psi_i = phi_{L+1-i}^{-1}, i = 1..L.
struct LayerSmoothness {
  double sigma_min = 0.0;  // of V_{L+1-i}^{-1}
  double sigma_max = 0.0;
  double b = 0.0;          // 2 max_l sum_r |alpha(r, l)|
  double c_tilde = 0.0;    // Lipschitz constant of the coupling Jacobian
};

struct DecoderSmoothness {
  double m1_lower = 0.0;
  double m2_upper = 0.0;
  double M_upper = 0.0;
  double sigma_tilde_min = 0.0;  // of U~ = D_xbar phi U
  double sigma_tilde_max = 0.0;
  std::vector<LayerSmoothness> per_layer;  // inverse order
};

/// Closed-form bounds valid on all of R^{d_eps}:
///   m1 >= s~_min prod s_i / (1 + B_i),  m2 <= s~_max prod s'_i (1 + B_i),
///   M  <= s~_max^2 sum_l [prod_{i>l} Mt_i] s'_l C~_l [prod_{k<l} Mt_k]^2,
/// with Mt_i = (1 + B_i) s'_i.
DecoderSmoothness smoothness_constants(const RAE& rae);

/// Latents used by the sampled checks: p = s * xi, xi ~ N(0, I), where
/// s_k = 3 sqrt(Lambda_k), or 1 when Lambda_k vanishes.
Vec latent_sampling_scale(const RAE& rae);

struct BiLipschitzEstimate {
  double m1 = 0.0;  // min ||D(p) - D(q)|| / ||p - q||
  double m2 = 0.0;  // max
  Index pairs = 0;
};
BiLipschitzEstimate empirical_bilipschitz(const RAE& rae, Index pair_count, std::uint64_t seed);

/// max ||J_D(p) - J_D(q)|| / ||p - q|| over sampled pairs.
double empirical_jacobian_lipschitz(const RAE& rae, Index pair_count, std::uint64_t seed);

// ---- isometry checks ----------------------------------------------------------

/// Sampled range-restricted isometry constant: the largest
/// |<(A^T A - I) a, b>| / (||a|| ||b||) over differences a = D(p1) - D(p2),
/// b = D(p3) - D(p4). Always a lower bound on the true constant.
struct RricEstimate {
  double delta_hat = 0.0;
  Index quadruples = 0;
  Index resampled = 0;
  std::vector<double> values;
};
RricEstimate check_rric(const RAE& rae, const LinearOperator& a, Index quadruple_count, std::uint64_t seed);

/// ||A(x1 - x2)||^2 / ||x1 - x2||^2 over sampled pairs, reported as the
/// extreme ratios (1 - delta_low, 1 + delta_high).
struct RipEstimate {
  double lower = 0.0;
  double upper = 0.0;
  Index pairs = 0;
  Index resampled = 0;
  std::vector<double> ratios;

  double delta_low() const { return 1.0 - lower; }
  double delta_high() const { return upper - 1.0; }
  double delta() const { return std::max(delta_low(), delta_high()); }
};
/// Pairs of decoded latents.
RipEstimate check_rip(const RAE& rae, const LinearOperator& a, Index pair_count, std::uint64_t seed);
/// Pairs of distinct rows of `points`.
RipEstimate check_rip(const Mat& points, const LinearOperator& a, Index pair_count, std::uint64_t seed);

// ---- certificate ---------------------------------------------------------------

struct ConvergenceCertificate {
  double m1 = 0.0;
  double m2 = 0.0;
  double M = 0.0;
  double delta = 0.0;
  bool delta_certified = false;  // false when delta is a sampled estimate
  double gram_norm = 0.0;        // ||A^T A||
  double alpha = 0.0;
  double m_delta = 0.0;          // m1^2 - m2 M / 2 - delta m2^2
  double alpha_max = 0.0;        // m_delta / (2 m2^4 ||A^T A||^2)
  double rho = 0.0;              // 1 - alpha m_delta + 2 alpha^2 m2^4 ||A^T A||^2
  double beta = 0.0;             // 2 alpha^2 m2^2 + alpha m2^2 / m_delta
  bool curvature_ok = false;     // m2 M < 2 m1^2
  bool delta_ok = false;         // delta < (m1^2 - m2 M / 2) / m2^2
  bool alpha_ok = false;         // alpha < alpha_max
  bool satisfied = false;
};

/// ||A^T A|| by power iteration (100 iterations, tolerance 1e-10); for at
/// most 512 rows a dense SVD is also taken and the larger value kept.
double gram_norm(const LinearOperator& a);

ConvergenceCertificate certificate(const DecoderSmoothness& s, double gram_norm, double alpha, double delta,
                                   bool delta_certified = false);
ConvergenceCertificate certificate(const RAE& rae, const LinearOperator& a, double alpha, double delta,
                                   bool delta_certified = false);

nlohmann::json certificate_to_json(const ConvergenceCertificate& c);

// ---- gradient descent ---------------------------------------------------------

double inversion_loss(const RAE& rae, const LinearOperator& a, const Vec& y, const Vec& p);
/// J_D(p)^T A^T (A D(p) - y).
Vec inversion_gradient(const RAE& rae, const LinearOperator& a, const Vec& y, const Vec& p);

struct InversionOptions {
  double alpha = 1e-2;
  Index max_iterations = 1000;
  std::optional<Vec> init;                // defaults to p = 0
  std::optional<Vec> true_latent;         // enables ||p_t - p*|| in the history
  std::optional<Vec> true_signal;         // enables per-iterate MSE
  bool select_best_mse = false;           // needs true_signal
};

struct IterateRecord {
  Index iteration = 0;  // 1-based; record t describes p_t
  double loss = 0.0;
  double grad_norm = 0.0;
  double latent_error = 0.0;  // NaN without a true latent
  double mse = 0.0;           // NaN without a true signal
};

struct InversionResult {
  Vec p;
  Vec x;
  std::vector<IterateRecord> history;
  Index selected_iteration = 0;
  bool aborted = false;
  std::string abort_reason;
};

InversionResult invert(const RAE& rae, const LinearOperator& a, const Vec& y, const InversionOptions& options);

void write_inversion_csv(const std::string& path, const std::vector<IterateRecord>& history);

// ---- total variation baseline -------------------------------------------------

/// argmin_x 1/2 ||x - z||^2 + weight TV(x) for an h x w image stored row
/// major; isotropic TV with reflective boundary, dual projection iterations.
Vec tv_prox(const Vec& z, Index height, Index width, double weight, int inner_iterations = 50);
/// Isotropic total variation of an h x w image.
double total_variation(const Vec& x, Index height, Index width);

struct TvOptions {
  double lambda = 8.0;
  double alpha = 0.0;  // 0 selects 0.2 / ||A||^2
  Index max_iterations = 200;
  int inner_iterations = 50;
  std::optional<Vec> init;         // defaults to A^T y
  std::optional<Vec> true_signal;
  bool select_best_mse = false;
};

struct TvResult {
  Vec x;
  std::vector<IterateRecord> history;  // loss is the data term
  Index selected_iteration = 0;
  double alpha = 0.0;
};

/// x_{t+1} = prox_{alpha lambda TV}(x_t - alpha A^T (A x_t - y)).
TvResult tv_reconstruct(const LinearOperator& a, const Vec& y, Index height, Index width, const TvOptions& options);

}  // namespace raflow
