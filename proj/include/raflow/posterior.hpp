#pragma once

// Conditional density q(x | y): a Gaussian with mean m(y) and diagonal
// covariance exp(logvar(y)) on phi_post(x). m and logvar come from a small
// network: linear embedding, one tanh ResNet block, affine head.

#include "raflow/flow.hpp"

#include <nlohmann/json.hpp>

#include <utility>

namespace raflow {

struct Affine {
  Mat weight;  // out x in
  Vec bias;

  Vec operator()(const Vec& x) const { return weight * x + bias; }
  Index in_dim() const { return weight.cols(); }
  Index out_dim() const { return weight.rows(); }
};

struct PosteriorArchitecture {
  Index data_dim = 0;         // d
  Index measurement_dim = 0;  // m
  Index hidden = 0;           // h
  Index block_width = 0;      // w
};

class PosteriorModel {
 public:
  PosteriorModel() = default;
  /// Random embedding and block weights (N(0, 1/fan_in)), zero head, and the
  /// identity diffeomorphism (frozen).
  PosteriorModel(PosteriorArchitecture arch, std::uint64_t seed);

  const PosteriorArchitecture& architecture() const { return arch_; }
  Index data_dim() const { return arch_.data_dim; }
  Index measurement_dim() const { return arch_.measurement_dim; }

  Affine embed, block_in, block_out, head;
  /// phi_post. With zero layers it is the identity.
  FlowModel diffeo;
  bool diffeo_trainable = false;

  /// (mean, log-variance) for a measurement y.
  std::pair<Vec, Vec> mean_logvar(const Vec& y) const;
  double conditional_log_density(const Vec& x, const Vec& y) const;
  /// x = phi_post^{-1}(m(y) + exp(logvar / 2) xi); rows are samples.
  Mat sample(const Vec& y, Index count, std::uint64_t seed) const;

  /// Network blocks {embed W, b, block_in W, b, block_out W, b, head W, b}
  /// (biases as 1 x n), then the diffeo blocks when trainable.
  std::vector<Tensor> parameters() const;
  void set_parameters(const std::vector<Tensor>& values);
  Index parameter_count() const;

 private:
  PosteriorArchitecture arch_;
};

/// m = 3 -> h = 10, one block of width 8, head to 6; identity diffeo.
PosteriorModel build_sinusoid_posterior(std::uint64_t seed);
/// Same template for 14 x 14 images: 196 -> 256, width 256, head to 392.
PosteriorModel build_mnist_posterior(std::uint64_t seed);

namespace ad_posterior {

struct PosteriorVars {
  ad::Var embed_w, embed_b, in_w, in_b, out_w, out_b, head_w, head_b;
  ad_flow::FlowVars diffeo;
  Index data_dim = 0;

  std::vector<ad::Var> parameters(bool with_diffeo) const;
};

PosteriorVars record(ad::Tape& tape, const PosteriorModel& model, bool trainable = true);
/// Rows of y are measurements; returns B x 2d (mean | log-variance).
ad::Var head_output(const PosteriorVars& p, ad::Var y);

struct Draws {
  ad::Var x;      // (B M) x d, row b*M + k is sample k for measurement b
  ad::Var log_q;  // (B M) x 1
};
/// Reparametrized samples with their conditional log densities; `xi` holds
/// (B M) x d standard normal draws.
Draws sample(const PosteriorVars& p, ad::Var y, const Tensor& xi, Index m_samples);

}  // namespace ad_posterior

nlohmann::json posterior_to_json(const PosteriorModel& p);
PosteriorModel posterior_from_json(const nlohmann::json& doc);

}  // namespace raflow
