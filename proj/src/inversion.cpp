#include "raflow/inversion.hpp"

#include "raflow/linalg.hpp"
#include "raflow/random.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <limits>

namespace raflow {

double tanh_power_derivative_bound(int r) {
  if (r < 1) throw DomainError("tanh_power_derivative_bound: degree must be >= 1");
  if (r == 1) return 1.0;
  const double rr = r;
  return 2.0 * rr / (rr + 1.0) * std::pow((rr - 1.0) / (rr + 1.0), 0.5 * (rr - 1.0));
}

// ---- smoothness ----------------------------------------------------------------

namespace {

Vec singular_values(const Mat& m) { return Eigen::JacobiSVD<Mat>(m).singularValues(); }

double coupling_mass(const CouplingLayerParams& c) {
  if (c.alpha.size() == 0) return 0.0;
  return c.alpha.cwiseAbs().colwise().sum().maxCoeff();
}

}  // namespace

DecoderSmoothness smoothness_constants(const RAE& rae) {
  const FlowModel& flow = rae.flow();
  const Index n = flow.num_layers();
  DecoderSmoothness s;
  const Vec st = singular_values(rae.latent_map());
  s.sigma_tilde_max = st(0);
  s.sigma_tilde_min = st(st.size() - 1);

  s.per_layer.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const FlowLayer& layer = flow.layers()[static_cast<std::size_t>(n - 1 - i)];
    const Vec sv = singular_values(layer.linear.inverse_matrix());
    LayerSmoothness& ls = s.per_layer[static_cast<std::size_t>(i)];
    ls.sigma_max = sv(0);
    ls.sigma_min = sv(sv.size() - 1);
    ls.b = 2.0 * coupling_mass(layer.coupling);
    ls.c_tilde = ls.b;
  }

  s.m1_lower = s.sigma_tilde_min;
  s.m2_upper = s.sigma_tilde_max;
  for (const LayerSmoothness& ls : s.per_layer) {
    s.m1_lower *= ls.sigma_min / (1.0 + ls.b);
    s.m2_upper *= ls.sigma_max * (1.0 + ls.b);
  }

  // Mt_i = (1 + B_i) s'_i; prefix[l] = prod_{k<l} Mt_k, suffix[l] = prod_{i>l} Mt_i.
  std::vector<double> mt(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const LayerSmoothness& ls = s.per_layer[static_cast<std::size_t>(i)];
    mt[static_cast<std::size_t>(i)] = (1.0 + ls.b) * ls.sigma_max;
  }
  double total = 0.0;
  double prefix = 1.0;
  for (Index l = 0; l < n; ++l) {
    double suffix = 1.0;
    for (Index i = l + 1; i < n; ++i) suffix *= mt[static_cast<std::size_t>(i)];
    const LayerSmoothness& ls = s.per_layer[static_cast<std::size_t>(l)];
    total += suffix * ls.sigma_max * ls.c_tilde * prefix * prefix;
    prefix *= mt[static_cast<std::size_t>(l)];
  }
  s.M_upper = s.sigma_tilde_max * s.sigma_tilde_max * total;
  return s;
}

Vec latent_sampling_scale(const RAE& rae) {
  Vec s(rae.latent_dim());
  for (Index k = 0; k < s.size(); ++k) {
    const double l = rae.spectrum()(k);
    s(k) = l > 0.0 ? 3.0 * std::sqrt(l) : 1.0;
  }
  return s;
}

namespace {

Vec draw_latent(const Vec& scale, Rng& rng) { return scale.cwiseProduct(standard_normal(scale.size(), rng)); }

void require_count(Index n, const char* what) {
  if (n < 1) throw DomainError(std::string(what) + ": need at least one sample");
}

// Resampling guard: a sampler that keeps producing coincident points is broken.
void check_resamples(Index resampled, Index wanted, const char* what) {
  if (resampled > 100 * wanted + 100) throw NumericError(std::string(what) + ": sampled points keep coinciding");
}

}  // namespace

BiLipschitzEstimate empirical_bilipschitz(const RAE& rae, Index pair_count, std::uint64_t seed) {
  require_count(pair_count, "empirical_bilipschitz");
  const Vec scale = latent_sampling_scale(rae);
  Rng rng = make_rng(seed, 0x626c);
  BiLipschitzEstimate e;
  e.m1 = std::numeric_limits<double>::infinity();
  while (e.pairs < pair_count) {
    const Vec p = draw_latent(scale, rng);
    const Vec q = draw_latent(scale, rng);
    const double dp = (p - q).norm();
    if (dp == 0.0) continue;
    const double ratio = (rae.decode(p) - rae.decode(q)).norm() / dp;
    e.m1 = std::min(e.m1, ratio);
    e.m2 = std::max(e.m2, ratio);
    ++e.pairs;
  }
  return e;
}

double empirical_jacobian_lipschitz(const RAE& rae, Index pair_count, std::uint64_t seed) {
  require_count(pair_count, "empirical_jacobian_lipschitz");
  const Vec scale = latent_sampling_scale(rae);
  Rng rng = make_rng(seed, 0x6a6c);
  double best = 0.0;
  for (Index k = 0; k < pair_count; ++k) {
    const Vec p = draw_latent(scale, rng);
    const Vec q = draw_latent(scale, rng);
    const double dp = (p - q).norm();
    if (dp == 0.0) continue;
    best = std::max(best, spectral_norm_svd(rae.decode_jacobian(p) - rae.decode_jacobian(q)) / dp);
  }
  return best;
}

// ---- isometry checks ----------------------------------------------------------

namespace {

bool degenerate(const Vec& diff, const Vec& x) { return diff.norm() <= 1e-12 * (1.0 + x.norm()); }

}  // namespace

RricEstimate check_rric(const RAE& rae, const LinearOperator& a, Index quadruple_count, std::uint64_t seed) {
  require_count(quadruple_count, "check_rric");
  if (a.in_dim() != rae.dim()) throw ShapeError("check_rric: operator input " + std::to_string(a.in_dim()) +
                                                " does not match signal dimension " + std::to_string(rae.dim()));
  const Vec scale = latent_sampling_scale(rae);
  Rng rng = make_rng(seed, 0x72726963);
  RricEstimate e;
  e.values.reserve(static_cast<std::size_t>(quadruple_count));
  while (e.quadruples < quadruple_count) {
    const Vec x1 = rae.decode(draw_latent(scale, rng));
    const Vec x2 = rae.decode(draw_latent(scale, rng));
    const Vec x3 = rae.decode(draw_latent(scale, rng));
    const Vec x4 = rae.decode(draw_latent(scale, rng));
    const Vec u = x1 - x2;
    const Vec v = x3 - x4;
    if (degenerate(u, x1) || degenerate(v, x3)) {
      check_resamples(++e.resampled, quadruple_count, "check_rric");
      continue;
    }
    // <(A^T A - I) u, v> = <A u, A v> - <u, v>
    const double form = a.apply(u).dot(a.apply(v)) - u.dot(v);
    const double value = std::abs(form) / (u.norm() * v.norm());
    e.values.push_back(value);
    e.delta_hat = std::max(e.delta_hat, value);
    ++e.quadruples;
  }
  return e;
}

namespace {

template <class Draw>
RipEstimate rip_from_pairs(const LinearOperator& a, Index pair_count, Draw draw) {
  RipEstimate e;
  e.lower = std::numeric_limits<double>::infinity();
  e.ratios.reserve(static_cast<std::size_t>(pair_count));
  while (e.pairs < pair_count) {
    const auto [x1, x2] = draw();
    const Vec d = x1 - x2;
    if (degenerate(d, x1)) {
      check_resamples(++e.resampled, pair_count, "check_rip");
      continue;
    }
    const double ratio = a.apply(d).squaredNorm() / d.squaredNorm();
    e.ratios.push_back(ratio);
    e.lower = std::min(e.lower, ratio);
    e.upper = std::max(e.upper, ratio);
    ++e.pairs;
  }
  return e;
}

}  // namespace

RipEstimate check_rip(const RAE& rae, const LinearOperator& a, Index pair_count, std::uint64_t seed) {
  require_count(pair_count, "check_rip");
  if (a.in_dim() != rae.dim()) throw ShapeError("check_rip: operator input " + std::to_string(a.in_dim()) +
                                                " does not match signal dimension " + std::to_string(rae.dim()));
  const Vec scale = latent_sampling_scale(rae);
  Rng rng = make_rng(seed, 0x726970);
  return rip_from_pairs(a, pair_count, [&] {
    Vec x1 = rae.decode(draw_latent(scale, rng));
    Vec x2 = rae.decode(draw_latent(scale, rng));
    return std::pair<Vec, Vec>(std::move(x1), std::move(x2));
  });
}

RipEstimate check_rip(const Mat& points, const LinearOperator& a, Index pair_count, std::uint64_t seed) {
  require_count(pair_count, "check_rip");
  if (points.rows() < 2) throw DomainError("check_rip: need at least two points");
  if (a.in_dim() != points.cols()) throw ShapeError("check_rip: operator input " + std::to_string(a.in_dim()) +
                                                    " does not match point dimension " + std::to_string(points.cols()));
  Rng rng = make_rng(seed, 0x726970);
  std::uniform_int_distribution<Index> pick(0, points.rows() - 1);
  return rip_from_pairs(a, pair_count, [&] {
    const Index i = pick(rng);
    Index j = pick(rng);
    while (j == i) j = pick(rng);
    return std::pair<Vec, Vec>(points.row(i).transpose(), points.row(j).transpose());
  });
}

// ---- certificate ---------------------------------------------------------------

double gram_norm(const LinearOperator& a) {
  const double n = spectral_norm([&](const Vec& x) { return a.apply(x); }, [&](const Vec& y) { return a.apply_adjoint(y); },
                                 a.in_dim(), 1, 100, 1e-10);
  double g = n * n;
  if (a.out_dim() <= 512) {
    const double s = spectral_norm_svd(a.matrix());
    g = std::max(g, s * s);
  }
  return g;
}

ConvergenceCertificate certificate(const DecoderSmoothness& s, double gram, double alpha, double delta,
                                   bool delta_certified) {
  if (!(alpha > 0.0)) throw DomainError("certificate: step size must be positive");
  if (!(delta >= 0.0)) throw DomainError("certificate: delta must be >= 0");
  ConvergenceCertificate c;
  c.m1 = s.m1_lower;
  c.m2 = s.m2_upper;
  c.M = s.M_upper;
  c.delta = delta;
  c.delta_certified = delta_certified;
  c.gram_norm = gram;
  c.alpha = alpha;
  const double m1s = c.m1 * c.m1;
  const double m2s = c.m2 * c.m2;
  const double m2q = m2s * m2s;
  c.m_delta = m1s - 0.5 * c.m2 * c.M - delta * m2s;
  c.curvature_ok = c.m2 * c.M < 2.0 * m1s;
  c.delta_ok = delta < (m1s - 0.5 * c.m2 * c.M) / m2s;
  c.alpha_max = c.m_delta > 0.0 ? c.m_delta / (2.0 * m2q * gram * gram) : 0.0;
  c.alpha_ok = alpha < c.alpha_max;
  if (c.m_delta > 0.0) {
    c.rho = 1.0 - alpha * c.m_delta + 2.0 * alpha * alpha * m2q * gram * gram;
    c.beta = 2.0 * alpha * alpha * m2s + alpha * m2s / c.m_delta;
  } else {
    c.rho = std::numeric_limits<double>::quiet_NaN();
    c.beta = std::numeric_limits<double>::quiet_NaN();
  }
  c.satisfied = c.curvature_ok && c.delta_ok && c.alpha_ok && c.rho > 0.0 && c.rho < 1.0 && std::isfinite(c.beta);
  return c;
}

ConvergenceCertificate certificate(const RAE& rae, const LinearOperator& a, double alpha, double delta,
                                   bool delta_certified) {
  return certificate(smoothness_constants(rae), gram_norm(a), alpha, delta, delta_certified);
}

nlohmann::json certificate_to_json(const ConvergenceCertificate& c) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"m1_lower", num(c.m1)},
          {"m2_upper", num(c.m2)},
          {"M_upper", num(c.M)},
          {"delta", num(c.delta)},
          {"delta_kind", c.delta_certified ? "certified" : "empirical"},
          {"gram_norm", num(c.gram_norm)},
          {"alpha", num(c.alpha)},
          {"m_delta", num(c.m_delta)},
          {"alpha_max", num(c.alpha_max)},
          {"rho", num(c.rho)},
          {"beta", num(c.beta)},
          {"curvature_ok", c.curvature_ok},
          {"delta_ok", c.delta_ok},
          {"alpha_ok", c.alpha_ok},
          {"satisfied", c.satisfied},
          {"note", c.delta_certified ? "delta supplied as certified"
                                     : "delta is a sampled lower bound; the certificate is necessary, not sufficient"}};
}

// ---- gradient descent ---------------------------------------------------------

namespace {

void check_problem(const RAE& rae, const LinearOperator& a, const Vec& y) {
  if (a.in_dim() != rae.dim())
    throw ShapeError("invert: operator input " + std::to_string(a.in_dim()) + " does not match signal dimension " +
                     std::to_string(rae.dim()));
  if (y.size() != a.out_dim())
    throw ShapeError("invert: measurement has " + std::to_string(y.size()) + " entries, operator produces " +
                     std::to_string(a.out_dim()));
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

double inversion_loss(const RAE& rae, const LinearOperator& a, const Vec& y, const Vec& p) {
  check_problem(rae, a, y);
  return 0.5 * (a.apply(rae.decode(p)) - y).squaredNorm();
}

Vec inversion_gradient(const RAE& rae, const LinearOperator& a, const Vec& y, const Vec& p) {
  check_problem(rae, a, y);
  const Vec r = a.apply(rae.decode(p)) - y;
  return rae.decode_jacobian(p).transpose() * a.apply_adjoint(r);
}

InversionResult invert(const RAE& rae, const LinearOperator& a, const Vec& y, const InversionOptions& o) {
  check_problem(rae, a, y);
  if (!(o.alpha > 0.0)) throw DomainError("invert: step size must be positive");
  if (o.max_iterations < 0) throw DomainError("invert: iteration budget must be >= 0");
  if (o.select_best_mse && !o.true_signal) throw DomainError("invert: best-MSE selection needs the true signal");
  const Index k = rae.latent_dim();
  if (o.init && o.init->size() != k) throw ShapeError("invert: initial latent has wrong size");
  if (o.true_latent && o.true_latent->size() != k) throw ShapeError("invert: true latent has wrong size");
  if (o.true_signal && o.true_signal->size() != rae.dim()) throw ShapeError("invert: true signal has wrong size");

  InversionResult res;
  Vec p = o.init ? *o.init : Vec::Zero(k);
  Vec best_p = p;
  Index best_t = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  Vec last_good = p;
  for (Index t = 1; t <= o.max_iterations + 1; ++t) {
    const Vec x = rae.decode(p);
    const Vec r = a.apply(x) - y;
    IterateRecord rec;
    rec.iteration = t;
    rec.loss = 0.5 * r.squaredNorm();
    const bool last = t == o.max_iterations + 1;
    Vec grad;
    if (!last) {
      grad = rae.decode_jacobian(p).transpose() * a.apply_adjoint(r);
      rec.grad_norm = grad.norm();
    } else {
      rec.grad_norm = kNaN;
    }
    rec.latent_error = o.true_latent ? (p - *o.true_latent).norm() : kNaN;
    rec.mse = o.true_signal ? mse(x, *o.true_signal) : kNaN;
    if (!std::isfinite(rec.loss) || (!last && !std::isfinite(rec.grad_norm))) {
      res.aborted = true;
      res.abort_reason = "non-finite loss or gradient at iteration " + std::to_string(t);
      break;
    }
    res.history.push_back(rec);
    last_good = p;
    res.selected_iteration = t;
    if (o.true_signal && rec.mse < best_mse) {
      best_mse = rec.mse;
      best_p = p;
      best_t = t;
    }
    if (last) break;
    p -= o.alpha * grad;
  }
  if (o.select_best_mse && best_t > 0) {
    res.p = best_p;
    res.selected_iteration = best_t;
  } else {
    res.p = last_good;
  }
  res.x = rae.decode(res.p);
  return res;
}

void write_inversion_csv(const std::string& path, const std::vector<IterateRecord>& history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out.precision(17);
  out << "iteration,loss,grad_norm,latent_error,mse\n";
  for (const IterateRecord& r : history) {
    out << r.iteration << ',' << r.loss << ',' << r.grad_norm << ',' << r.latent_error << ',' << r.mse << '\n';
  }
}

// ---- total variation ------------------------------------------------------------

namespace {

using ImageMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using Image = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Forward differences, zero across the last row / column (reflective boundary).
void gradient(const Image& x, Image& gx, Image& gy) {
  const Index h = x.rows(), w = x.cols();
  gx.setZero(h, w);
  gy.setZero(h, w);
  if (h > 1) gx.topRows(h - 1) = x.bottomRows(h - 1) - x.topRows(h - 1);
  if (w > 1) gy.leftCols(w - 1) = x.rightCols(w - 1) - x.leftCols(w - 1);
}

// Negative adjoint of `gradient`.
Image divergence(const Image& px, const Image& py) {
  const Index h = px.rows(), w = px.cols();
  Image d = Image::Zero(h, w);
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      double v = 0.0;
      if (i < h - 1) v += px(i, j);
      if (i > 0) v -= px(i - 1, j);
      if (j < w - 1) v += py(i, j);
      if (j > 0) v -= py(i, j - 1);
      d(i, j) = v;
    }
  }
  return d;
}

void check_image(const Vec& x, Index h, Index w, const char* what) {
  if (h < 1 || w < 1 || x.size() != h * w)
    throw ShapeError(std::string(what) + ": vector of length " + std::to_string(x.size()) + " is not a " +
                     std::to_string(h) + " x " + std::to_string(w) + " image");
}

}  // namespace

double total_variation(const Vec& x, Index height, Index width) {
  check_image(x, height, width, "total_variation");
  Image gx, gy;
  gradient(Image(ImageMap(x.data(), height, width)), gx, gy);
  return (gx.array().square() + gy.array().square()).sqrt().sum();
}

Vec tv_prox(const Vec& z, Index height, Index width, double weight, int inner_iterations) {
  check_image(z, height, width, "tv_prox");
  if (!(weight >= 0.0)) throw DomainError("tv_prox: weight must be >= 0");
  if (weight == 0.0 || inner_iterations <= 0) return z;
  // Dual projection iterations: x = z - weight div p, |p| <= 1 pointwise.
  const Image zi = ImageMap(z.data(), height, width);
  Image px = Image::Zero(height, width), py = Image::Zero(height, width);
  Image gx, gy;
  constexpr double tau = 0.125;
  for (int it = 0; it < inner_iterations; ++it) {
    gradient(divergence(px, py) - zi / weight, gx, gy);
    const Image mag = (gx.array().square() + gy.array().square()).sqrt();
    px = ((px + tau * gx).array() / (1.0 + tau * mag.array())).matrix();
    py = ((py + tau * gy).array() / (1.0 + tau * mag.array())).matrix();
  }
  const Image x = zi - weight * divergence(px, py);
  return Eigen::Map<const Vec>(x.data(), x.size());
}

TvResult tv_reconstruct(const LinearOperator& a, const Vec& y, Index height, Index width, const TvOptions& o) {
  if (a.in_dim() != height * width)
    throw ShapeError("tv_reconstruct: operator input " + std::to_string(a.in_dim()) + " is not " +
                     std::to_string(height) + " x " + std::to_string(width));
  if (y.size() != a.out_dim()) throw ShapeError("tv_reconstruct: measurement size does not match operator");
  if (!(o.lambda >= 0.0)) throw DomainError("tv_reconstruct: lambda must be >= 0");
  if (o.alpha < 0.0) throw DomainError("tv_reconstruct: step size must be >= 0");
  if (o.select_best_mse && !o.true_signal) throw DomainError("tv_reconstruct: best-MSE selection needs the true signal");
  if (o.init) check_image(*o.init, height, width, "tv_reconstruct");
  if (o.true_signal) check_image(*o.true_signal, height, width, "tv_reconstruct");

  TvResult res;
  if (o.alpha > 0.0) {
    res.alpha = o.alpha;
  } else {
    const double n = a.operator_norm();
    res.alpha = 0.2 / (n * n);
  }
  Vec x = o.init ? *o.init : a.apply_adjoint(y);
  Vec best = x;
  Index best_t = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  for (Index t = 1; t <= o.max_iterations + 1; ++t) {
    const Vec r = a.apply(x) - y;
    IterateRecord rec;
    rec.iteration = t;
    rec.loss = 0.5 * r.squaredNorm();
    rec.latent_error = kNaN;
    rec.mse = o.true_signal ? mse(x, *o.true_signal) : kNaN;
    const bool last = t == o.max_iterations + 1;
    Vec g;
    if (!last) {
      g = a.apply_adjoint(r);
      rec.grad_norm = g.norm();
    } else {
      rec.grad_norm = kNaN;
    }
    res.history.push_back(rec);
    if (o.true_signal && rec.mse < best_mse) {
      best_mse = rec.mse;
      best = x;
      best_t = t;
    }
    if (last) break;
    x = tv_prox(x - res.alpha * g, height, width, res.alpha * o.lambda, o.inner_iterations);
  }
  res.selected_iteration = o.select_best_mse ? best_t : o.max_iterations + 1;
  res.x = o.select_best_mse ? best : x;
  return res;
}

}  // namespace raflow
