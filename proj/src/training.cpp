#include "raflow/training.hpp"

#include "raflow/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>

namespace raflow {

// ---- config --------------------------------------------------------------------

void TrainConfig::validate() const {
  if (vlb_samples < 1) throw DomainError("train.vlb_samples: must be at least 1");
  if (!(lambda >= 0.0)) throw DomainError("train.lambda: must be nonnegative");
  if (!(mu >= 0.0)) throw DomainError("train.mu: must be nonnegative");
  if (!(learning_rate > 0.0)) throw DomainError("train.learning_rate: must be positive");
  if (batch_size < 0) throw DomainError("train.batch_size: must be nonnegative");
  if (batch_size == 0 && iterations < 0) throw DomainError("train.iterations: must be nonnegative");
  if (batch_size > 0 && epochs < 0) throw DomainError("train.epochs: must be nonnegative");
  if (checkpoint_every < 0) throw DomainError("train.checkpoint_every: must be nonnegative");
  if (!(grad_clip > 0.0)) throw DomainError("train.grad_clip: must be positive");
}

Index TrainConfig::total_steps(Index n) const {
  if (batch_size == 0) return iterations;
  const Index per_epoch = (n + batch_size - 1) / batch_size;
  return epochs * per_epoch;
}

nlohmann::json config_to_json(const TrainConfig& c) {
  return {{"vlb_samples", c.vlb_samples},     {"lambda", c.lambda},
          {"mu", c.mu},                       {"learning_rate", c.learning_rate},
          {"iterations", c.iterations},       {"epochs", c.epochs},
          {"batch_size", c.batch_size},       {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every}, {"grad_clip", c.grad_clip}};
}

TrainConfig config_from_json(const nlohmann::json& doc, const std::string& where) {
  json_util::reject_unknown_keys(doc,
                                 {"vlb_samples", "lambda", "mu", "learning_rate", "iterations", "epochs", "batch_size",
                                  "seed", "checkpoint_every", "grad_clip"},
                                 where);
  TrainConfig c;
  auto idx = [&](const char* k, Index& out) {
    if (doc.contains(k)) out = json_util::get_index(doc, k, where);
  };
  auto dbl = [&](const char* k, double& out) {
    if (doc.contains(k)) out = json_util::get_double(doc, k, where);
  };
  idx("vlb_samples", c.vlb_samples);
  dbl("lambda", c.lambda);
  dbl("mu", c.mu);
  dbl("learning_rate", c.learning_rate);
  idx("iterations", c.iterations);
  idx("epochs", c.epochs);
  idx("batch_size", c.batch_size);
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned() && !doc["seed"].is_number_integer()) {
      throw SchemaError(where + ".seed: expected an integer");
    }
    c.seed = doc["seed"].get<std::uint64_t>();
  }
  idx("checkpoint_every", c.checkpoint_every);
  dbl("grad_clip", c.grad_clip);
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw SchemaError(e.what());
  }
  return c;
}

TrainState initial_state(FlowModel prior, PosteriorModel posterior) {
  if (prior.dim() != posterior.data_dim()) throw ShapeError("train: prior and posterior dimensions differ");
  TrainState s;
  s.prior = std::move(prior);
  s.posterior = std::move(posterior);
  return s;
}

// ---- objective -----------------------------------------------------------------

ad::Var vlb_term(const ad_flow::FlowVars& prior, const ad_posterior::PosteriorVars& posterior,
                 const CorruptionModel& corruption, ad::Var y_batch, const Tensor& xi, Index m_samples) {
  if (y_batch.cols() != corruption.out_dim()) throw ShapeError("vlb: measurement dimension mismatch");
  if (y_batch.rows() < 1) throw DomainError("vlb: empty batch");
  if (m_samples < 1) throw DomainError("vlb: need at least one sample per measurement");
  const double sigma = corruption.sigma();
  if (!(sigma > 0.0)) throw DomainError("vlb: noise sigma must be positive");
  const Index b = y_batch.rows();
  const double m = static_cast<double>(corruption.out_dim());

  auto draws = ad_posterior::sample(posterior, y_batch, xi, m_samples);
  ad::Var log_prior = ad_flow::log_density(prior, draws.x);
  const Tensor at = corruption.op().matrix().transpose();
  ad::Var residual = ad::repeat_rows(y_batch, m_samples) - ad::matmul_const(draws.x, at);
  ad::Var log_noise = ad::scale(ad::sum_cols(ad::square(residual)), -0.5 / (sigma * sigma)) +
                      (-0.5 * m * std::log(2.0 * std::numbers::pi * sigma * sigma));
  ad::Var log_w = (log_prior + log_noise) - draws.log_q;
  ad::Var per_y = ad::logsumexp_rows(ad::reshape(log_w, b, m_samples)) - std::log(static_cast<double>(m_samples));
  return ad::mean(per_y);
}

ad::Var lowrank_term(const ad_flow::FlowVars& prior) {
  ad::Var zero = prior.tape->constant(Tensor::Zero(1, prior.dim));
  return ad::sqrt(ad::sum(ad::square(ad_flow::inverse_jacobian_transposed(prior, zero))));
}

ad::Var reference_nll_term(const ad_flow::FlowVars& prior, ad::Var clean) {
  return ad::scale(ad::mean(ad_flow::log_density(prior, clean)), -1.0);
}

Tensor posterior_noise(Index batch, Index m_samples, Index dim, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x78690000);
  return standard_normal(batch * m_samples, dim, rng);
}

double vlb_loss(const FlowModel& prior, const PosteriorModel& posterior, const CorruptionModel& corruption,
                const Mat& y_batch, Index m_samples, std::uint64_t seed, int* floored) {
  ad::Tape tape;
  auto pv = ad_flow::record(tape, prior, false);
  auto qv = ad_posterior::record(tape, posterior, false);
  const Tensor xi = posterior_noise(y_batch.rows(), m_samples, prior.dim(), seed);
  const double v = vlb_term(pv, qv, corruption, tape.constant(y_batch), xi, m_samples).scalar();
  if (floored) *floored = tape.floored_count();
  return v;
}

double lowrank_penalty(const FlowModel& prior) { return inverse_jacobian_at(prior, Vec::Zero(prior.dim())).norm(); }

double reference_nll(const FlowModel& prior, const Mat& clean) {
  if (clean.rows() == 0) return 0.0;
  return -log_density_batch(prior, clean).mean();
}

LossAndGradient loss_and_gradient(const FlowModel& prior, const PosteriorModel& posterior,
                                  const CorruptionModel& corruption, const Mat& y_batch, const Mat& clean,
                                  const TrainConfig& config, std::uint64_t noise_seed) {
  ad::Tape tape;
  auto pv = ad_flow::record(tape, prior, true);
  auto qv = ad_posterior::record(tape, posterior, true);
  const Tensor xi = posterior_noise(y_batch.rows(), config.vlb_samples, prior.dim(), noise_seed);
  ad::Var vlb = vlb_term(pv, qv, corruption, tape.constant(y_batch), xi, config.vlb_samples);
  ad::Var total = ad::scale(vlb, -1.0);
  LossAndGradient out;
  out.terms.vlb = vlb.scalar();
  if (config.lambda > 0.0) {
    ad::Var lr = ad::scale(lowrank_term(pv), config.lambda);
    out.terms.lowrank = lr.scalar();
    total = total + lr;
  }
  if (config.mu > 0.0 && clean.rows() > 0) {
    ad::Var ref = ad::scale(reference_nll_term(pv, tape.constant(clean)), config.mu);
    out.terms.refnll = ref.scalar();
    total = total + ref;
  }
  out.terms.total = total.scalar();
  out.terms.floored = tape.floored_count();
  std::vector<ad::Var> wrt = pv.parameters();
  for (const ad::Var& v : qv.parameters(posterior.diffeo_trainable)) wrt.push_back(v);
  out.gradient = tape.gradient(total, std::span<const ad::Var>(wrt));
  return out;
}

// ---- optimizer -------------------------------------------------------------------

double adam_step(std::vector<Tensor>& params, std::vector<Tensor> grads, AdamState& state, double lr, double clip) {
  if (grads.size() != params.size()) throw ShapeError("adam: gradient and parameter counts differ");
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.push_back(Tensor::Zero(p.rows(), p.cols()));
      state.v.push_back(Tensor::Zero(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: moment buffers do not match parameters");
  double sq = 0.0;
  for (const Tensor& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > clip) {
    for (Tensor& g : grads) g *= clip / norm;
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  state.t += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = b1 * state.m[k] + (1.0 - b1) * grads[k];
    state.v[k] = b2 * state.v[k] + (1.0 - b2) * grads[k].cwiseAbs2();
    params[k].array() -= lr * (state.m[k].array() / c1) / ((state.v[k].array() / c2).sqrt() + eps);
  }
  return norm;
}

namespace {

std::uint64_t step_seed(std::uint64_t seed, Index step) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(step) + 1;
}

bool all_finite(const std::vector<Tensor>& ts) {
  return std::all_of(ts.begin(), ts.end(), [](const Tensor& t) { return t.allFinite(); });
}

Mat batch_rows(const Mat& y, const TrainConfig& config, Index step) {
  if (config.batch_size == 0 || config.batch_size >= y.rows()) return y;
  const Index n = y.rows();
  const Index per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const Index epoch = step / per_epoch;
  const Index pos = step % per_epoch;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(config.seed, 0x65706f63680000ULL + static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  const Index start = pos * config.batch_size;
  const Index count = std::min(config.batch_size, n - start);
  Mat out(count, y.cols());
  for (Index i = 0; i < count; ++i) out.row(i) = y.row(order[static_cast<std::size_t>(start + i)]);
  return out;
}

}  // namespace

TrainState train(const TrainConfig& config, const Dataset& data, const CorruptionModel& corruption, TrainState state,
                 const TrainHooks& hooks) {
  config.validate();
  if (data.corrupted.rows() == 0) throw DomainError("train: no corrupted measurements");
  if (data.corrupted.cols() != corruption.out_dim()) throw ShapeError("train: measurement dimension mismatch");
  if (config.mu > 0.0 && data.clean_reference.rows() == 0) {
    std::clog << "warning: reference set is empty; the reference term contributes 0\n";
  }
  const Index total_steps = config.total_steps(data.corrupted.rows());
  const std::size_t prior_blocks = state.prior.parameter_block_count();
  while (state.step < total_steps) {
    const Mat y = batch_rows(data.corrupted, config, state.step);
    LossAndGradient lg = loss_and_gradient(state.prior, state.posterior, corruption, y, data.clean_reference, config,
                                           step_seed(config.seed, state.step));
    lg.terms.step = state.step + 1;
    if (!std::isfinite(lg.terms.total) || !all_finite(lg.gradient)) {
      state.aborted = true;
      state.abort_reason = "non-finite loss or gradient at step " + std::to_string(state.step + 1);
      return state;
    }
    std::vector<Tensor> params = state.prior.parameters();
    for (Tensor& t : state.posterior.parameters()) params.push_back(std::move(t));
    adam_step(params, std::move(lg.gradient), state.adam, config.learning_rate, config.grad_clip);
    state.prior.set_parameters(std::vector<Tensor>(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(prior_blocks)));
    state.posterior.set_parameters(std::vector<Tensor>(params.begin() + static_cast<std::ptrdiff_t>(prior_blocks), params.end()));
    state.step += 1;
    state.history.push_back(lg.terms);
    if (hooks.on_step) hooks.on_step(lg.terms);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
  return state;
}

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out.precision(17);
  out << "step,vlb,lowrank,refnll,total\n";
  for (const LossRecord& r : history) {
    out << r.step << ',' << r.vlb << ',' << r.lowrank << ',' << r.refnll << ',' << r.total << '\n';
  }
}

// ---- checkpoint ------------------------------------------------------------------

namespace {

nlohmann::json tensors_to_json(const std::vector<Tensor>& ts) {
  nlohmann::json out = nlohmann::json::array();
  for (const Tensor& t : ts) out.push_back(json_util::matrix_to_json(t));
  return out;
}

std::vector<Tensor> tensors_from_json(const nlohmann::json& arr, const std::string& where) {
  if (!arr.is_array()) throw SchemaError(where + ": expected an array");
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    out.emplace_back(json_util::matrix_from_json(arr[i], where + "[" + std::to_string(i) + "]"));
  }
  return out;
}

}  // namespace

nlohmann::json train_checkpoint_to_json(const TrainState& state, const TrainConfig& config) {
  nlohmann::json history = nlohmann::json::array();
  for (const LossRecord& r : state.history) history.push_back({r.step, r.vlb, r.lowrank, r.refnll, r.total});
  return {{"version", kTrainCheckpointVersion},
          {"flow", flow_to_json(state.prior)},
          {"posterior", posterior_to_json(state.posterior)},
          {"adam", {{"t", state.adam.t}, {"m", tensors_to_json(state.adam.m)}, {"v", tensors_to_json(state.adam.v)}}},
          {"step", state.step},
          {"config", config_to_json(config)},
          // Posterior noise and batch order are pure functions of (seed, step).
          {"rng_state", {{"seed", config.seed}, {"step", state.step}}},
          {"history", history}};
}

TrainState train_checkpoint_from_json(const nlohmann::json& doc, TrainConfig* config) {
  const std::string where = "training checkpoint";
  json_util::require_version(doc, kTrainCheckpointVersion, where);
  for (const char* k : {"flow", "posterior", "adam", "config"}) {
    if (!doc.contains(k)) throw SchemaError(where + ": missing '" + k + "'");
  }
  TrainState s = initial_state(flow_from_json(doc["flow"]), posterior_from_json(doc["posterior"]));
  s.step = json_util::get_index(doc, "step", where);
  s.adam.t = json_util::get_index(doc["adam"], "t", where + ".adam");
  s.adam.m = tensors_from_json(doc["adam"].value("m", nlohmann::json::array()), where + ".adam.m");
  s.adam.v = tensors_from_json(doc["adam"].value("v", nlohmann::json::array()), where + ".adam.v");
  const std::size_t blocks = s.prior.parameter_block_count() + s.posterior.parameters().size();
  if (!s.adam.m.empty() && (s.adam.m.size() != blocks || s.adam.v.size() != blocks)) {
    throw SchemaError(where + ".adam: moment buffers do not match the parameter blocks");
  }
  if (doc.contains("history")) {
    for (const auto& row : doc["history"]) {
      if (!row.is_array() || row.size() != 5) throw SchemaError(where + ".history: expected rows of 5 numbers");
      s.history.push_back({row[0].get<Index>(), row[1].get<double>(), row[2].get<double>(), row[3].get<double>(),
                           row[4].get<double>(), 0});
    }
  }
  if (config) *config = config_from_json(doc["config"], where + ".config");
  return s;
}

}  // namespace raflow
