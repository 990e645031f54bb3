#include "oracles.hpp"

#include "raflow/posterior.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace raflow;

namespace {

PosteriorModel randomized(PosteriorArchitecture a, std::uint64_t seed) {
  PosteriorModel p(a, seed);
  Rng rng = make_rng(seed, 5);
  p.head.weight = 0.3 * standard_normal(p.head.weight.rows(), p.head.weight.cols(), rng);
  p.head.bias = 0.3 * standard_normal(p.head.bias.size(), rng);
  return p;
}

// Kolmogorov distribution tail, P(K > lambda).
double kolmogorov_tail(double lambda) {
  double s = 0.0;
  for (int k = 1; k < 100; ++k) s += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(s, 0.0, 1.0);
}

}  // namespace

TEST_CASE("sinusoid posterior architecture") {
  PosteriorModel p = build_sinusoid_posterior(1);
  CHECK(p.embed.out_dim() == 10);
  CHECK(p.head.out_dim() == 6);
  // 3*10+10 + 10*8+8 + 8*10+10 + 10*6+6
  CHECK(p.parameter_count() == 284);
  Vec y(3);
  y << 0.3, -1, 2;
  const auto [m, lv] = p.mean_logvar(y);
  CHECK(m.isZero());
  CHECK(lv.isZero());
  CHECK(build_mnist_posterior(1).head.out_dim() == 392);
}

TEST_CASE("conditional density values") {
  PosteriorModel p({1, 1, 4, 3}, 2);
  CHECK(p.conditional_log_density(Vec::Zero(1), Vec::Ones(1)) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  PosteriorModel q = randomized({2, 2, 5, 4}, 3);
  Vec y(2), x(2), shift(2);
  y << 0.4, -0.2;
  x << 0.1, 0.7;
  shift << 0.5, -1.5;
  const double base = q.conditional_log_density(x, y);
  PosteriorModel moved = q;
  moved.head.bias.head(2) += shift;
  CHECK(moved.conditional_log_density(x + shift, y) == doctest::Approx(base));
  // Grid normalization at d = 2.
  const auto [m, lv] = q.mean_logvar(y);
  const double h = 0.02;
  double total = 0.0;
  for (double a = m(0) - 8; a <= m(0) + 8; a += h) {
    for (double b = m(1) - 8; b <= m(1) + 8; b += h) {
      Vec pt(2);
      pt << a, b;
      total += std::exp(q.conditional_log_density(pt, y)) * h * h;
    }
  }
  CHECK(std::abs(total - 1.0) < 1e-2);
}

TEST_CASE("posterior sampling") {
  PosteriorModel p = randomized({3, 3, 10, 8}, 4);
  Vec y(3);
  y << 1, 0, -1;
  const auto [m, lv] = p.mean_logvar(y);
  const Mat xs = p.sample(y, 10000, 7);
  const Vec mean = xs.colwise().mean().transpose();
  const Vec sd = (0.5 * lv.array()).exp().matrix();
  for (Index j = 0; j < 3; ++j) CHECK(std::abs(mean(j) - m(j)) <= 4.0 * sd(j) / 100.0);
  PosteriorModel tight = p;
  tight.head.weight.bottomRows(3).setZero();
  tight.head.bias.tail(3).setConstant(-30.0);
  const Mat ts = tight.sample(y, 5, 1);
  const Vec tm = tight.mean_logvar(y).first;
  for (Index k = 0; k < 5; ++k) CHECK((ts.row(k).transpose() - tm).norm() < 1e-5);
  CHECK_THROWS_AS(p.sample(y, 0, 1), DomainError);
}

TEST_CASE("samples follow the conditional density (KS)") {
  PosteriorModel p = randomized({1, 1, 4, 3}, 9);
  const Vec y = Vec::Constant(1, 0.7);
  const auto [m, lv] = p.mean_logvar(y);
  const double sd = std::exp(0.5 * lv(0));
  Mat xs = p.sample(y, 4000, 11);
  std::vector<double> v(xs.data(), xs.data() + xs.size());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double dmax = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-(v[i] - m(0)) / (sd * std::sqrt(2.0)));
    dmax = std::max({dmax, std::abs(cdf - i / n), std::abs(cdf - (i + 1) / n)});
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * dmax;
  CHECK(kolmogorov_tail(lambda) > 0.01);
}

TEST_CASE("recorded sampling matches the direct model") {
  PosteriorModel p = randomized({3, 3, 10, 8}, 12);
  Rng rng = make_rng(3);
  const Tensor ys = standard_normal(2, 3, rng);
  const Tensor xi = standard_normal(8, 3, rng);
  ad::Tape tape;
  auto vars = ad_posterior::record(tape, p);
  auto draws = ad_posterior::sample(vars, tape.constant(ys), xi, 4);
  for (Index b = 0; b < 2; ++b) {
    const Vec y = ys.row(b).transpose();
    const auto [m, lv] = p.mean_logvar(y);
    for (Index k = 0; k < 4; ++k) {
      const Vec x = draws.x.value().row(b * 4 + k).transpose();
      CHECK((x - (m + (0.5 * lv.array()).exp().matrix().cwiseProduct(xi.row(b * 4 + k).transpose()))).norm() < 1e-12);
      CHECK(draws.log_q.value()(b * 4 + k, 0) == doctest::Approx(p.conditional_log_density(x, y)));
    }
  }
}

TEST_CASE("pathwise gradient of a sample expectation matches finite differences") {
  PosteriorModel p = randomized({2, 2, 5, 4}, 13);
  Rng rng = make_rng(4);
  const Vec y = standard_normal(2, rng);
  const Index n = 100000;
  // The finite-difference pair shares draws; the tape uses its own, so the
  // agreement is up to Monte Carlo error.
  auto estimate = [&](const PosteriorModel& model, std::uint64_t seed) {
    const Mat xs = model.sample(y, n, seed);
    return xs.array().tanh().sum() / static_cast<double>(n);
  };
  Rng xr = make_rng(5);
  const Tensor xi = standard_normal(n, 2, xr);
  ad::Tape tape;
  auto vars = ad_posterior::record(tape, p);
  auto draws = ad_posterior::sample(vars, tape.constant(y.transpose()), xi, n);
  ad::Var f = ad::sum(ad::tanh(draws.x));
  const auto g = tape.gradient(ad::scale(f, 1.0 / static_cast<double>(n)), {vars.head_b});
  const double h = 1e-2;
  for (Index j = 0; j < 2; ++j) {
    PosteriorModel plus = p, minus = p;
    plus.head.bias(j) += h;
    minus.head.bias(j) -= h;
    const double fd = (estimate(plus, 21) - estimate(minus, 21)) / (2 * h);
    CHECK(std::abs(g[0](0, j) - fd) <= 1e-2 * std::abs(fd));
  }
}

TEST_CASE("posterior parameter gradients agree with finite differences") {
  PosteriorModel p = randomized({2, 3, 4, 3}, 14);
  Rng rng = make_rng(6);
  const Tensor ys = standard_normal(2, 3, rng);
  const Tensor xi = standard_normal(4, 2, rng);
  auto objective = [&](const std::vector<Tensor>& params) {
    PosteriorModel m = p;
    m.set_parameters(params);
    ad::Tape t;
    auto v = ad_posterior::record(t, m);
    auto d = ad_posterior::sample(v, t.constant(ys), xi, 2);
    return ad::sum(d.log_q + ad::sum_cols(ad::tanh(d.x))).scalar();
  };
  ad::Tape tape;
  auto vars = ad_posterior::record(tape, p);
  auto draws = ad_posterior::sample(vars, tape.constant(ys), xi, 2);
  ad::Var loss = ad::sum(draws.log_q + ad::sum_cols(ad::tanh(draws.x)));
  const auto pv = vars.parameters(false);
  const auto g = tape.gradient(loss, std::span<const ad::Var>(pv));
  CHECK(oracle::rel_norm_error(g, oracle::fd_gradient(objective, p.parameters())) < 1e-6);
}

TEST_CASE("posterior checkpoint round trip") {
  PosteriorModel p = randomized({3, 3, 10, 8}, 15);
  PosteriorModel back = posterior_from_json(nlohmann::json::parse(posterior_to_json(p).dump()));
  Vec y(3);
  y << 0.1, 0.2, 0.3;
  CHECK(back.mean_logvar(y).first == p.mean_logvar(y).first);
  auto doc = posterior_to_json(p);
  doc["head"]["bias"] = nlohmann::json::array({1.0});
  CHECK_THROWS_AS(posterior_from_json(doc), SchemaError);
}
