#include "raflow/rae.hpp"

#include "raflow/json_util.hpp"
#include "raflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace raflow {

// ---- autoencoder -------------------------------------------------------------

RAE::RAE(PullbackGeometry geometry, Vec base_point, Mat basis, Vec spectrum)
    : geometry_(std::move(geometry)),
      base_point_(std::move(base_point)),
      basis_(std::move(basis)),
      spectrum_(std::move(spectrum)),
      base_image_(forward(geometry_.flow, base_point_)),
      solver_(geometry_.flow, base_point_),
      latent_map_(solver_.jacobian() * basis_) {
  const Index d = geometry_.dim();
  if (basis_.rows() != d || spectrum_.size() != d) {
    throw ShapeError("rae: basis " + shape_of(basis_) + " and spectrum of length " + std::to_string(spectrum_.size()) +
                     " do not match dimension " + std::to_string(d));
  }
  if (basis_.cols() < 1 || basis_.cols() > d) throw DomainError("rae: latent dimension must lie in [1, d]");
}

Vec RAE::encode(const Vec& x) const {
  if (x.size() != dim()) throw ShapeError("encode: point has dimension " + std::to_string(x.size()));
  return basis_.transpose() * solver_.solve(forward(flow(), x) - base_image_);
}

Vec RAE::decode(const Vec& p) const {
  if (p.size() != latent_dim()) throw ShapeError("decode: latent has dimension " + std::to_string(p.size()));
  return inverse(flow(), base_image_ + latent_map_ * p);
}

Mat RAE::encode_batch(const Mat& xs) const {
  Mat out(xs.rows(), latent_dim());
  for (Index i = 0; i < xs.rows(); ++i) out.row(i) = encode(xs.row(i).transpose()).transpose();
  return out;
}

Mat RAE::decode_batch(const Mat& ps) const {
  Mat out(ps.rows(), dim());
  for (Index i = 0; i < ps.rows(); ++i) out.row(i) = decode(ps.row(i).transpose()).transpose();
  return out;
}

Mat RAE::decode_jacobian(const Vec& p) const {
  const Vec y = base_image_ + latent_map_ * p;
  Mat j(dim(), latent_dim());
  for (Index k = 0; k < latent_dim(); ++k) j.col(k) = inverse_jvp(flow(), y, latent_map_.col(k));
  return j;
}

// ---- covariance and dimension ------------------------------------------------

Mat tangent_covariance_analytic(const PullbackGeometry& g) {
  const Mat j = inverse_jacobian_at(g.flow, Vec::Zero(g.dim()));
  return j * j.transpose();
}

Mat tangent_covariance_samples(const PullbackGeometry& g, const Mat& samples, const std::optional<Vec>& base_point) {
  if (samples.rows() < 2) throw DomainError("tangent_covariance: need at least 2 samples");
  const Vec base = base_point ? *base_point : barycenter(g, samples);
  const Mat logs = log_map_batch(g, base, samples);
  return logs.transpose() * logs / static_cast<double>(samples.rows());
}

double epsilon_floor(const Vec& spectrum) {
  const double tr = spectrum.sum();
  if (!(tr > 0.0)) throw DomainError("select_dim: spectrum must have positive trace");
  return spectrum(spectrum.size() - 1) / tr;
}

Index select_dim(const Vec& spectrum, double epsilon) {
  const Index d = spectrum.size();
  if (d < 2) throw DomainError("select_dim: need at least two eigenvalues");
  for (Index i = 1; i < d; ++i) {
    if (spectrum(i) > spectrum(i - 1)) throw DomainError("select_dim: spectrum must be nonincreasing");
  }
  const double floor = epsilon_floor(spectrum);
  if (!(epsilon > floor && epsilon <= 1.0)) {
    throw DomainError("select_dim: epsilon " + std::to_string(epsilon) + " must lie in (" + std::to_string(floor) +
                      ", 1]");
  }
  const double budget = epsilon * spectrum.sum();
  for (Index k = 1; k < d; ++k) {
    if (spectrum.tail(d - k).sum() <= budget) return k;
  }
  return d - 1;  // unreachable for epsilon > floor
}

namespace {

Vec clamp_spectrum(const Vec& v) { return v.cwiseMax(0.0); }

}  // namespace

RAE build_rae_analytic(const PullbackGeometry& g, double epsilon) {
  const SymmetricEigen eig = sorted_eigen(tangent_covariance_analytic(g));
  const Index k = select_dim(eig.values, epsilon);
  return RAE(g, inverse(g.flow, Vec::Zero(g.dim())), eig.vectors.leftCols(k), clamp_spectrum(eig.values));
}

RAE build_rae_from_samples(const PullbackGeometry& g, const Mat& samples, LatentSpec spec) {
  if (spec.latent_dim.has_value() == spec.epsilon.has_value()) {
    throw DomainError("build_rae: give exactly one of latent dimension and epsilon");
  }
  if (samples.cols() != g.dim()) throw ShapeError("build_rae: samples have dimension " + std::to_string(samples.cols()));
  if (spec.latent_dim && (*spec.latent_dim < 1 || *spec.latent_dim > g.dim())) {
    throw DomainError("build_rae: latent dimension must lie in [1, d]");
  }
  const Index needed = spec.latent_dim ? *spec.latent_dim + 1 : 2;
  if (samples.rows() < needed) {
    throw DomainError("build_rae: " + std::to_string(samples.rows()) + " samples, need at least " +
                      std::to_string(needed));
  }
  const Vec base = barycenter(g, samples);
  const SymmetricEigen eig = sorted_eigen(tangent_covariance_samples(g, samples, base));
  const Vec spectrum = clamp_spectrum(eig.values);
  const Index k = spec.latent_dim ? *spec.latent_dim : select_dim(spectrum, *spec.epsilon);
  const double tol = 1e-12 * std::max(spectrum(0), std::numeric_limits<double>::min());
  const Index rank = (spectrum.array() > tol).count();
  if (rank < k) {
    throw DomainError("build_rae: tangent vectors span " + std::to_string(rank) + " directions, fewer than latent dim " +
                      std::to_string(k));
  }
  return RAE(g, base, eig.vectors.leftCols(k), spectrum);
}

// ---- projection error --------------------------------------------------------

ProjectionErrorReport expected_projection_error(const RAE& rae, const Mat& samples) {
  if (samples.rows() < 2) throw DomainError("expected_projection_error: need at least 2 samples");
  if (samples.cols() != rae.dim()) throw ShapeError("expected_projection_error: dimension mismatch");
  const Index n = samples.rows();
  Mat projected(n, rae.dim());
  Vec err(n);
  for (Index i = 0; i < n; ++i) {
    const Vec x = samples.row(i).transpose();
    const Vec px = rae.project(x);
    projected.row(i) = px.transpose();
    err(i) = (px - x).norm();
  }
  ProjectionErrorReport r;
  r.sample_count = n;
  r.expected_error = err.mean();
  const double var = (err.array() - r.expected_error).square().sum() / static_cast<double>(n - 1);
  r.std_error = std::sqrt(var / static_cast<double>(n));
  r.sliced_w1 = w1(projected, samples, W1Method::Sliced);
  return r;
}

ProjectionErrorReport expected_projection_error(const RAE& rae, Index count, std::uint64_t seed) {
  if (count < 100) throw DomainError("expected_projection_error: Monte Carlo mode needs at least 100 samples");
  return expected_projection_error(rae, sample(rae.flow(), count, seed));
}

namespace {

/// Norm of the bilinear map (u, v) -> D^2_y phi^{-1}[K u, K v]. For a fixed u,
/// M_u v is a directional derivative of the inverse Jacobian, obtained by
/// central differences. Alternating u <- top right singular vector of M_u
/// increases sigma_max(M_u) monotonically because the map is symmetric.
double second_derivative_norm(const FlowModel& flow, const Vec& y, const Mat& k, Rng& rng) {
  const Index n = k.cols();
  auto m_of = [&](const Vec& u) -> Mat {
    const Vec dir = k * u;
    const double len = dir.norm();
    if (len == 0.0) return Mat::Zero(flow.dim(), n);
    const double h = 1e-4 * std::max(1.0, y.norm()) / len;
    const Mat dp = inverse_jacobian_at(flow, y + h * dir);
    const Mat dm = inverse_jacobian_at(flow, y - h * dir);
    return (dp - dm) / (2.0 * h) * k;
  };
  double best = 0.0;
  for (int restart = 0; restart < 3; ++restart) {
    Vec u = random_unit(n, rng);
    double prev = -1.0;
    for (int it = 0; it < 20; ++it) {
      Eigen::JacobiSVD<Mat> svd(m_of(u), Eigen::ComputeThinV);
      const double s = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
      best = std::max(best, s);
      if (s <= prev * (1.0 + 1e-6)) break;
      prev = s;
      u = svd.matrixV().col(0);
    }
  }
  return best;
}

}  // namespace

ProjectionBoundTerms projection_bound_terms(const RAE& rae, double epsilon, Index latent_sample_count,
                                            std::uint64_t seed) {
  if (latent_sample_count < 1) throw DomainError("projection_bound_terms: need at least one latent sample");
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw DomainError("projection_bound_terms: epsilon must lie in (0, 1]");
  const FlowModel& flow = rae.flow();
  const Mat& k = rae.base_jacobian();
  const Vec scale = 3.0 * rae.spectrum().head(rae.latent_dim()).cwiseSqrt();
  Rng rng = make_rng(seed, 0x7468);
  ProjectionBoundTerms t;
  t.latent_samples = latent_sample_count;
  for (Index s = 0; s < latent_sample_count; ++s) {
    // The first sample is the base point itself.
    const Vec p = s == 0 ? Vec::Zero(rae.latent_dim()) : Vec(scale.cwiseProduct(standard_normal(rae.latent_dim(), rng)));
    const Vec y = rae.base_image() + rae.latent_map() * p;
    const Mat m = inverse_jacobian_at(flow, y) * k;
    t.c1 = std::max(t.c1, spectral_norm(m, seed + static_cast<std::uint64_t>(s)));
    t.c2 = std::max(t.c2, second_derivative_norm(flow, y, k, rng));
  }
  t.frobenius = inverse_jacobian_at(flow, Vec::Zero(flow.dim())).norm();
  t.c1_term = t.c1 * std::sqrt(epsilon) * t.frobenius;
  t.c2_term = 0.5 * t.c2 * epsilon * t.frobenius * t.frobenius;
  t.bound = t.c1_term + t.c2_term;
  return t;
}

// ---- checkpoint --------------------------------------------------------------

nlohmann::json rae_to_json(const RAE& rae, const std::string& flow_checkpoint_reference) {
  nlohmann::json basis = nlohmann::json::array();
  for (Index c = 0; c < rae.latent_dim(); ++c) basis.push_back(json_util::vector_to_json(rae.basis().col(c)));
  return {{"version", kRaeCheckpointVersion},
          {"base_point", json_util::vector_to_json(rae.base_point())},
          {"basis", basis},
          {"spectrum", json_util::vector_to_json(rae.spectrum())},
          {"latent_dim", rae.latent_dim()},
          {"flow_checkpoint_reference", flow_checkpoint_reference}};
}

std::string rae_flow_reference(const nlohmann::json& doc) {
  return json_util::get_string(doc, "flow_checkpoint_reference", "rae checkpoint");
}

RAE rae_from_json(const nlohmann::json& doc, const FlowModel& flow) {
  const std::string where = "rae checkpoint";
  json_util::require_version(doc, kRaeCheckpointVersion, where);
  const Vec base = json_util::vector_from_json(doc, "base_point", where);
  const Vec spectrum = json_util::vector_from_json(doc, "spectrum", where);
  const Index k = json_util::get_index(doc, "latent_dim", where);
  // Stored column by column.
  const Mat cols = json_util::matrix_from_json(doc, "basis", where);
  if (cols.rows() != k) throw SchemaError(where + ": basis has " + std::to_string(cols.rows()) + " columns, latent_dim " +
                                          std::to_string(k));
  if (base.size() != flow.dim()) throw SchemaError(where + ": base point does not match the flow dimension");
  try {
    return RAE(PullbackGeometry{flow}, base, cols.transpose(), spectrum);
  } catch (const Error& e) {
    throw SchemaError(where + ": " + e.what());
  }
}

}  // namespace raflow
