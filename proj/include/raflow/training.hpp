#pragma once

// Training objective
//
//   total = -VLB + lambda ||D_0 phi^{-1}||_F + mu * mean_ref(-log p(x))
//
// with VLB the batch mean of log (1/M) sum_k exp(log p(x_k) + log p_noise(y - A x_k)
// - log q(x_k | y)), x_k ~ q(. | y) reparametrized.

#include "raflow/corruption.hpp"
#include "raflow/flow.hpp"
#include "raflow/posterior.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace raflow {

struct TrainConfig {
  Index vlb_samples = 10;  // M
  double lambda = 0.1;
  double mu = 1.0;
  double learning_rate = 1e-3;
  /// Steps when batch_size == 0 (full batch); ignored otherwise.
  Index iterations = 500;
  /// Mini-batch mode when batch_size > 0.
  Index epochs = 0;
  Index batch_size = 0;
  std::uint64_t seed = 0;
  /// Emit a checkpoint every this many steps; 0 disables.
  Index checkpoint_every = 0;
  double grad_clip = 100.0;

  /// Throws DomainError naming the offending field.
  void validate() const;
  /// Total optimizer steps for a dataset of n measurements.
  Index total_steps(Index n) const;
};

nlohmann::json config_to_json(const TrainConfig& c);
/// Strict: unknown keys are rejected with their path.
TrainConfig config_from_json(const nlohmann::json& doc, const std::string& where = "train");

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  Index t = 0;
};

struct LossRecord {
  Index step = 0;
  double vlb = 0.0;
  double lowrank = 0.0;  // lambda-weighted
  double refnll = 0.0;   // mu-weighted
  double total = 0.0;
  int floored = 0;
};

struct TrainState {
  FlowModel prior;
  PosteriorModel posterior;
  AdamState adam;
  Index step = 0;
  std::vector<LossRecord> history;
  bool aborted = false;
  std::string abort_reason;
};

TrainState initial_state(FlowModel prior, PosteriorModel posterior);

// ---- objective terms ---------------------------------------------------------

/// Recorded VLB (1 x 1) over the rows of `y_batch`. `xi` holds the
/// (B M) x d posterior noise.
ad::Var vlb_term(const ad_flow::FlowVars& prior, const ad_posterior::PosteriorVars& posterior,
                 const CorruptionModel& corruption, ad::Var y_batch, const Tensor& xi, Index m_samples);
/// Recorded ||D_0 phi^{-1}||_F.
ad::Var lowrank_term(const ad_flow::FlowVars& prior);
/// Recorded mean negative log density over the rows of `clean`.
ad::Var reference_nll_term(const ad_flow::FlowVars& prior, ad::Var clean);

/// Standard-normal posterior noise for one batch, reproducible from `seed`.
Tensor posterior_noise(Index batch, Index m_samples, Index dim, std::uint64_t seed);

double vlb_loss(const FlowModel& prior, const PosteriorModel& posterior, const CorruptionModel& corruption,
                const Mat& y_batch, Index m_samples, std::uint64_t seed, int* floored = nullptr);
double lowrank_penalty(const FlowModel& prior);
/// Mean -log p(x) over rows; 0 for an empty batch.
double reference_nll(const FlowModel& prior, const Mat& clean);

struct LossAndGradient {
  LossRecord terms;
  std::vector<Tensor> gradient;  // prior blocks then posterior blocks
};

/// Full loss and its gradient for one batch.
LossAndGradient loss_and_gradient(const FlowModel& prior, const PosteriorModel& posterior,
                                  const CorruptionModel& corruption, const Mat& y_batch, const Mat& clean,
                                  const TrainConfig& config, std::uint64_t noise_seed);

// ---- optimizer ----------------------------------------------------------------

/// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8) after clipping the
/// global gradient norm to `clip`. Returns the pre-clip norm.
double adam_step(std::vector<Tensor>& params, std::vector<Tensor> grads, AdamState& state, double lr, double clip);

struct TrainHooks {
  std::function<void(const LossRecord&)> on_step;
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Runs from `state.step` to config.total_steps. A non-finite loss or
/// gradient stops the run with the last good parameters kept and
/// `aborted` set.
TrainState train(const TrainConfig& config, const Dataset& data, const CorruptionModel& corruption, TrainState state,
                 const TrainHooks& hooks = {});

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history);

inline constexpr int kTrainCheckpointVersion = 1;
nlohmann::json train_checkpoint_to_json(const TrainState& state, const TrainConfig& config);
/// Returns the state; the stored config is written to `config` if given.
TrainState train_checkpoint_from_json(const nlohmann::json& doc, TrainConfig* config = nullptr);

}  // namespace raflow
