#include "oracles.hpp"

#include "raflow/inversion.hpp"
#include "raflow/linalg.hpp"
#include "raflow/random.hpp"

#include <doctest.h>

#include <cmath>

using namespace raflow;

namespace {

RAE toy_rae(const FlowModel& flow, Index latent_dim, std::uint64_t seed) {
  PullbackGeometry g{flow};
  return build_rae_from_samples(g, sample(flow, 400, seed), LatentSpec::fixed(latent_dim));
}

RAE identity_rae(Index d, Index k) {
  return toy_rae(FlowModel::identity(d, 2, 3), k, 3);
}

// Near-identity model whose certificate holds for A = I.
FlowModel gentle_flow(std::uint64_t seed) {
  RandomFlowScales s;
  s.offdiag = 0.02;
  s.logmag = 0.02;
  s.alpha = 0.005;
  return random_flow(6, 2, 3, seed, s);
}

LinearOperator identity_op(Index d) { return LinearOperator::dense(Mat::Identity(d, d)); }

}  // namespace

TEST_CASE("tanh power derivative bound") {
  CHECK(tanh_power_derivative_bound(1) == 1.0);
  CHECK(std::abs(tanh_power_derivative_bound(2) - 4.0 / (3.0 * std::sqrt(3.0))) < 1e-12);
  // Grid oracle over t = tanh(u) in [0, 1].
  for (int r = 1; r <= 6; ++r) {
    double best = 0.0;
    for (int k = 0; k <= 200000; ++k) {
      const double t = k / 200000.0;
      best = std::max(best, r * std::pow(t, r - 1) * (1 - t * t));
    }
    CHECK(std::abs(best - tanh_power_derivative_bound(r)) < 1e-8);
    CHECK(tanh_power_derivative_bound(r) <= 2.0);
  }
  CHECK_THROWS_AS(tanh_power_derivative_bound(0), DomainError);
}

TEST_CASE("smoothness constants of an identity model") {
  const RAE rae = identity_rae(4, 2);
  const DecoderSmoothness s = smoothness_constants(rae);
  CHECK(s.M_upper == 0.0);
  CHECK(s.m1_lower == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.m2_upper == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(s.per_layer.size() == 2);
  for (const LayerSmoothness& l : s.per_layer) {
    CHECK(l.b == 0.0);
    CHECK(l.sigma_min == doctest::Approx(1.0));
  }
  const BiLipschitzEstimate e = empirical_bilipschitz(rae, 200, 1);
  CHECK(std::abs(e.m1 - 1.0) < 1e-12);
  CHECK(std::abs(e.m2 - 1.0) < 1e-12);
}

TEST_CASE("single-layer Jacobian-Lipschitz bound matches hand evaluation") {
  const FlowModel flow = random_flow(4, 1, 2, 9);
  const RAE rae = toy_rae(flow, 2, 1);
  const DecoderSmoothness s = smoothness_constants(rae);
  const Eigen::JacobiSVD<Mat> vi(flow.layers()[0].linear.inverse_matrix());
  const Eigen::JacobiSVD<Mat> ut(rae.latent_map());
  double mass = 0.0;
  const Mat& al = flow.layers()[0].coupling.alpha;
  for (Index l = 0; l < al.cols(); ++l) mass = std::max(mass, al.col(l).cwiseAbs().sum());
  const double smax = ut.singularValues()(0);
  const double vmax = vi.singularValues()(0);
  CHECK(s.M_upper == doctest::Approx(smax * smax * vmax * 2 * mass).epsilon(1e-12));
  CHECK(s.m2_upper == doctest::Approx(smax * vmax * (1 + 2 * mass)).epsilon(1e-12));
  CHECK(s.m1_lower ==
        doctest::Approx(ut.singularValues()(1) * vi.singularValues()(3) / (1 + 2 * mass)).epsilon(1e-12));
}

TEST_CASE("empirical ratios sit inside the certified bounds") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const RAE rae = toy_rae(random_flow(5, 3, 3, seed), 2, seed);
    const DecoderSmoothness s = smoothness_constants(rae);
    CHECK(s.m1_lower > 0.0);
    CHECK(s.m1_lower <= s.m2_upper);
    const BiLipschitzEstimate e = empirical_bilipschitz(rae, 2000, seed);
    CHECK(s.m1_lower <= e.m1);
    CHECK(e.m1 <= e.m2);
    CHECK(e.m2 <= s.m2_upper);
    CHECK(empirical_jacobian_lipschitz(rae, 200, seed) <= s.M_upper);
  }
}

TEST_CASE("affine decoder with one latent has a constant ratio") {
  RandomFlowScales sc;
  sc.alpha = 0.0;
  const RAE rae = toy_rae(random_flow(4, 2, 3, 4, sc), 1, 2);
  const BiLipschitzEstimate e = empirical_bilipschitz(rae, 100, 2);
  CHECK(std::abs(e.m1 - e.m2) < 1e-9 * e.m2);
  const DecoderSmoothness s = smoothness_constants(rae);
  CHECK(s.M_upper == 0.0);
}

TEST_CASE("range-restricted isometry checks") {
  const RAE rae = toy_rae(random_flow(6, 2, 3, 5), 2, 5);
  CHECK(check_rric(rae, identity_op(6), 500, 1).delta_hat < 1e-12);

  const RricEstimate zero = check_rric(rae, LinearOperator::dense(Mat::Zero(3, 6)), 500, 1);
  CHECK(zero.delta_hat <= 1.0 + 1e-12);
  CHECK(zero.quadruples == 500);
  CHECK(zero.values.size() == 500);

  // Gaussian A with 8 d_eps rows, N(0, 1/m) entries.
  Rng rng = make_rng(11);
  const Index m = 16;
  const LinearOperator ga = LinearOperator::dense(standard_normal(m, 6, rng) / std::sqrt(double(m)));
  const RricEstimate g = check_rric(rae, ga, 10000, 2);
  MESSAGE("gaussian RRIC delta_hat = " << g.delta_hat);
  CHECK(g.delta_hat < 1.0);
  // Oracle: the form is bounded by ||A^T A - I|| by Cauchy-Schwarz.
  const Mat gram = ga.matrix().transpose() * ga.matrix() - Mat::Identity(6, 6);
  CHECK(g.delta_hat <= spectral_norm_svd(gram) + 1e-12);
}

TEST_CASE("sampled RIP ratios") {
  const RAE rae = toy_rae(random_flow(6, 2, 3, 6), 2, 6);
  RipEstimate id = check_rip(rae, identity_op(6), 300, 1);
  CHECK(std::abs(id.lower - 1) < 1e-12);
  CHECK(std::abs(id.upper - 1) < 1e-12);
  RipEstimate scaled = check_rip(rae, LinearOperator::dense(2.5 * Mat::Identity(6, 6)), 300, 1);
  CHECK(scaled.lower == doctest::Approx(6.25).epsilon(1e-12));
  CHECK(scaled.upper == doctest::Approx(6.25).epsilon(1e-12));

  Rng rng = make_rng(12);
  const LinearOperator ga = LinearOperator::dense(standard_normal(16, 6, rng) / 4.0);
  const RipEstimate g = check_rip(rae, ga, 10000, 3);
  MESSAGE("gaussian RIP ratios in [" << g.lower << ", " << g.upper << "]");
  const Eigen::JacobiSVD<Mat> sv(ga.matrix());
  CHECK(g.lower >= sv.singularValues()(5) * sv.singularValues()(5) - 1e-12);
  CHECK(g.upper <= sv.singularValues()(0) * sv.singularValues()(0) + 1e-12);

  Mat pts(3, 2);
  pts << 0, 0, 1, 0, 0, 2;
  const RipEstimate p = check_rip(pts, LinearOperator::dense(Mat::Identity(2, 2)), 50, 1);
  CHECK(p.pairs == 50);
  CHECK(p.delta() < 1e-15);
  CHECK_THROWS_AS(check_rip(Mat(pts.topRows(1)), LinearOperator::dense(Mat::Identity(2, 2)), 5, 1), DomainError);
}

TEST_CASE("certificate worked example") {
  DecoderSmoothness s;
  s.m1_lower = s.m2_upper = 1.0;
  s.M_upper = 0.0;
  const ConvergenceCertificate c = certificate(s, 1.0, 0.2, 0.0, true);
  CHECK(c.satisfied);
  CHECK(c.m_delta == 1.0);
  CHECK(c.alpha_max == 0.5);
  CHECK(std::abs(c.rho - 0.88) < 1e-15);
  CHECK(std::abs(c.beta - 0.28) < 1e-15);

  // The identity decoder with A = I gives the same numbers.
  const ConvergenceCertificate ci = certificate(identity_rae(6, 2), identity_op(6), 0.2, 0.0, true);
  CHECK(ci.satisfied);
  CHECK(ci.rho == doctest::Approx(0.88).epsilon(1e-10));
  CHECK(ci.beta == doctest::Approx(0.28).epsilon(1e-10));

  DecoderSmoothness bad = s;
  bad.M_upper = 2.0;
  CHECK_FALSE(certificate(bad, 1.0, 0.1, 0.0).curvature_ok);
  CHECK_FALSE(certificate(bad, 1.0, 0.1, 0.0).satisfied);
  const ConvergenceCertificate big = certificate(s, 1.0, 0.6, 0.0);
  CHECK_FALSE(big.alpha_ok);
  CHECK_FALSE(big.satisfied);
  CHECK_FALSE(certificate(s, 1.0, 0.2, 1.0).delta_ok);
  CHECK(certificate_to_json(c)["delta_kind"] == "certified");
  CHECK(certificate_to_json(big)["delta_kind"] == "empirical");
}

TEST_CASE("gram norm agrees with a dense SVD") {
  Rng rng = make_rng(4);
  const Mat a = standard_normal(7, 5, rng);
  const double s = spectral_norm_svd(a);
  CHECK(gram_norm(LinearOperator::dense(a)) == doctest::Approx(s * s).epsilon(1e-9));
  const LinearOperator blur = LinearOperator::gaussian_blur(6, 6, 3, 1.0);
  const double sb = spectral_norm_svd(blur.matrix());
  CHECK(gram_norm(blur) == doctest::Approx(sb * sb).epsilon(1e-9));
}

TEST_CASE("inversion gradient matches finite differences") {
  const RAE rae = toy_rae(random_flow(5, 2, 3, 8), 2, 8);
  Rng rng = make_rng(5);
  const LinearOperator a = LinearOperator::dense(standard_normal(4, 5, rng));
  const Vec y = standard_normal(4, rng);
  const Vec p = 0.5 * standard_normal(2, rng);
  const Vec g = inversion_gradient(rae, a, y, p);
  Vec fd(2);
  for (Index k = 0; k < 2; ++k) {
    const double h = 1e-6;
    Vec pp = p, pm = p;
    pp(k) += h;
    pm(k) -= h;
    fd(k) = (inversion_loss(rae, a, y, pp) - inversion_loss(rae, a, y, pm)) / (2 * h);
  }
  CHECK((g - fd).norm() < 1e-6 * (1 + fd.norm()));
}

TEST_CASE("gradient descent on an identity decoder contracts by 1 - alpha") {
  const RAE rae = identity_rae(6, 2);
  const Vec ps = (Vec(2) << 0.7, -1.2).finished();
  const Vec y = rae.decode(ps);
  InversionOptions o;
  o.alpha = 0.3;
  o.max_iterations = 30;
  o.true_latent = ps;
  o.true_signal = y;
  const InversionResult r = invert(rae, identity_op(6), y, o);
  REQUIRE(r.history.size() == 31);
  for (std::size_t t = 1; t < r.history.size(); ++t) {
    CHECK(r.history[t].latent_error == doctest::Approx(0.7 * r.history[t - 1].latent_error).epsilon(1e-9));
  }
  CHECK((r.p - ps).norm() < 1e-4);
  CHECK(r.selected_iteration == 31);

  o.select_best_mse = true;
  const InversionResult b = invert(rae, identity_op(6), y, o);
  CHECK(b.selected_iteration == 31);
  CHECK_THROWS_AS(invert(rae, identity_op(6), Vec::Zero(5), o), ShapeError);
  InversionOptions bad = o;
  bad.alpha = 0;
  CHECK_THROWS_AS(invert(rae, identity_op(6), y, bad), DomainError);
}

TEST_CASE("gradient descent aborts on a non-finite loss") {
  const RAE rae = identity_rae(4, 2);
  InversionOptions o;
  o.alpha = 0.1;
  o.max_iterations = 5;
  Vec y = Vec::Zero(4);
  y(0) = std::numeric_limits<double>::quiet_NaN();
  const InversionResult r = invert(rae, identity_op(4), y, o);
  CHECK(r.aborted);
  CHECK(r.history.empty());
}

TEST_CASE("certified toy instance obeys the contraction inequality and the gradient lemma") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const RAE rae = toy_rae(gentle_flow(seed), 2, seed);
    const LinearOperator a = identity_op(6);
    const ConvergenceCertificate c0 = certificate(rae, a, 1e-3, 0.0, true);
    REQUIRE(c0.satisfied);
    const double alpha = 0.5 * c0.alpha_max;
    const ConvergenceCertificate c = certificate(rae, a, alpha, 0.0, true);
    REQUIRE(c.satisfied);

    Rng rng = make_rng(seed, 77);
    const Vec ps = standard_normal(2, rng);
    const Vec n = 0.01 * standard_normal(6, rng);
    const Vec y = rae.decode(ps) + n;
    const double noise = a.apply_adjoint(n).squaredNorm();
    InversionOptions o;
    o.alpha = alpha;
    o.max_iterations = 60;
    o.true_latent = ps;
    o.init = Vec::Zero(2);
    const InversionResult r = invert(rae, a, y, o);
    for (std::size_t t = 1; t < r.history.size(); ++t) {
      const double prev = r.history[t - 1].latent_error;
      const double cur = r.history[t].latent_error;
      CHECK(cur * cur <= c.rho * prev * prev + c.beta * noise + 1e-12);
    }

    // Lemma checks at sampled points, noiseless measurement.
    const Vec y0 = rae.decode(ps);
    for (int k = 0; k < 200; ++k) {
      const Vec p = ps + 2.0 * standard_normal(2, rng);
      const Vec g = inversion_gradient(rae, a, y0, p);
      const double e2 = (p - ps).squaredNorm();
      CHECK(g.squaredNorm() <= 2 * std::pow(c.m2, 4) * c.gram_norm * c.gram_norm * e2 + 1e-12);
      CHECK((p - ps).dot(g) >= c.m_delta * e2 - 1e-12);
    }
  }
}

TEST_CASE("TV prox basics") {
  const Vec c = Vec::Constant(12, 0.4);
  CHECK((tv_prox(c, 3, 4, 2.0) - c).norm() < 1e-14);
  CHECK(total_variation(c, 3, 4) == 0.0);

  Rng rng = make_rng(3);
  const Vec z = standard_normal(20, rng);
  CHECK((tv_prox(z, 4, 5, 0.0) - z).norm() == 0.0);

  // Objective oracle: the prox beats z and nearby perturbations.
  const double w = 0.3;
  auto obj = [&](const Vec& x) { return 0.5 * (x - z).squaredNorm() + w * total_variation(x, 4, 5); };
  const Vec x = tv_prox(z, 4, 5, w, 500);
  CHECK(obj(x) < obj(z));
  for (int k = 0; k < 50; ++k) CHECK(obj(x) <= obj(x + 1e-2 * standard_normal(20, rng)) + 1e-6);

  // 1-d step: levels move toward each other by w / n_left and w / n_right.
  Vec step = Vec::Zero(10);
  step.tail(6).setOnes();
  const Vec s = tv_prox(step, 1, 10, 0.4, 5000);
  for (Index i = 0; i < 4; ++i) CHECK(std::abs(s(i) - 0.1) < 1e-4);
  for (Index i = 4; i < 10; ++i) CHECK(std::abs(s(i) - (1 - 0.4 / 6)) < 1e-4);
  CHECK_THROWS_AS(tv_prox(z, 3, 5, 1.0), ShapeError);
}

TEST_CASE("TV reconstruction") {
  Rng rng = make_rng(6);
  const Vec y = standard_normal(16, rng);
  TvOptions o;
  o.lambda = 0.0;
  o.alpha = 0.5;
  o.max_iterations = 60;
  o.init = Vec::Zero(16);
  const TvResult r = tv_reconstruct(identity_op(16), y, 4, 4, o);
  CHECK((r.x - y).norm() < 1e-12 * (1 + y.norm()));

  // Default step is 0.2 / ||A||^2.
  TvOptions d;
  d.max_iterations = 3;
  const LinearOperator twice = LinearOperator::dense(2.0 * Mat::Identity(16, 16));
  CHECK(tv_reconstruct(twice, y, 4, 4, d).alpha == doctest::Approx(0.05).epsilon(1e-9));

  // Denoising a piecewise constant image: the best iterate improves on the input.
  Vec truth = Vec::Zero(64);
  for (Index i = 0; i < 8; ++i)
    for (Index j = 4; j < 8; ++j) truth(i * 8 + j) = 1.0;
  const Vec noisy = truth + 0.2 * standard_normal(64, rng);
  TvOptions t;
  t.lambda = 0.15;
  t.alpha = 1.0;
  t.max_iterations = 20;
  t.true_signal = truth;
  t.select_best_mse = true;
  const TvResult tr = tv_reconstruct(identity_op(64), noisy, 8, 8, t);
  CHECK(mse(tr.x, truth) < 0.5 * mse(noisy, truth));
}
