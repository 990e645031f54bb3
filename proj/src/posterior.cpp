#include "raflow/posterior.hpp"

#include "raflow/json_util.hpp"

#include <cmath>
#include <numbers>

namespace raflow {

namespace {

Affine random_affine(Index in, Index out, Rng& rng) {
  return {std::sqrt(1.0 / static_cast<double>(in)) * standard_normal(out, in, rng), Vec::Zero(out)};
}

}  // namespace

PosteriorModel::PosteriorModel(PosteriorArchitecture arch, std::uint64_t seed) : arch_(arch) {
  if (arch.data_dim < 1 || arch.measurement_dim < 1 || arch.hidden < 1 || arch.block_width < 1) {
    throw DomainError("posterior: all architecture sizes must be positive");
  }
  Rng rng = make_rng(seed, 0x706f7374);
  embed = random_affine(arch.measurement_dim, arch.hidden, rng);
  block_in = random_affine(arch.hidden, arch.block_width, rng);
  block_out = random_affine(arch.block_width, arch.hidden, rng);
  head = {Mat::Zero(2 * arch.data_dim, arch.hidden), Vec::Zero(2 * arch.data_dim)};
  diffeo = FlowModel::identity(arch.data_dim, 0, 1);
}

std::pair<Vec, Vec> PosteriorModel::mean_logvar(const Vec& y) const {
  if (y.size() != arch_.measurement_dim) throw ShapeError("posterior: measurement dimension mismatch");
  const Vec h = embed(y);
  const Vec r = h + block_out(block_in(h).array().tanh().matrix());
  const Vec out = head(r);
  return {out.head(arch_.data_dim), out.tail(arch_.data_dim)};
}

double PosteriorModel::conditional_log_density(const Vec& x, const Vec& y) const {
  if (x.size() != arch_.data_dim) throw ShapeError("posterior: point dimension mismatch");
  const auto [m, lv] = mean_logvar(y);
  const Vec z = forward(diffeo, x);
  const double d = static_cast<double>(arch_.data_dim);
  return -0.5 * ((z - m).array().square() * (-lv.array()).exp()).sum() - 0.5 * lv.sum() -
         0.5 * d * std::log(2.0 * std::numbers::pi) + log_abs_det(diffeo);
}

Mat PosteriorModel::sample(const Vec& y, Index count, std::uint64_t seed) const {
  if (count < 1) throw DomainError("posterior: sample count must be at least 1");
  const auto [m, lv] = mean_logvar(y);
  Rng rng = make_rng(seed, 0x71736d70);
  const Vec sd = (0.5 * lv.array()).exp().matrix();
  Mat out(count, arch_.data_dim);
  for (Index k = 0; k < count; ++k) {
    const Vec z = m + sd.cwiseProduct(standard_normal(arch_.data_dim, rng));
    out.row(k) = inverse(diffeo, z).transpose();
  }
  return out;
}

std::vector<Tensor> PosteriorModel::parameters() const {
  std::vector<Tensor> out;
  for (const Affine* a : {&embed, &block_in, &block_out, &head}) {
    out.emplace_back(a->weight);
    out.emplace_back(a->bias.transpose());
  }
  if (diffeo_trainable) {
    for (Tensor& t : diffeo.parameters()) out.push_back(std::move(t));
  }
  return out;
}

void PosteriorModel::set_parameters(const std::vector<Tensor>& values) {
  const std::size_t net = 8;
  const std::size_t extra = diffeo_trainable ? diffeo.parameter_block_count() : 0;
  if (values.size() != net + extra) throw ShapeError("posterior: wrong number of parameter blocks");
  std::size_t k = 0;
  for (Affine* a : {&embed, &block_in, &block_out, &head}) {
    if (values[k].rows() != a->weight.rows() || values[k].cols() != a->weight.cols()) {
      throw ShapeError("posterior: parameter block shape mismatch");
    }
    a->weight = values[k++];
    a->bias = values[k++].transpose();
  }
  if (diffeo_trainable) diffeo.set_parameters(std::vector<Tensor>(values.begin() + net, values.end()));
}

Index PosteriorModel::parameter_count() const {
  Index n = 0;
  for (const Tensor& t : parameters()) n += t.size();
  return n;
}

PosteriorModel build_sinusoid_posterior(std::uint64_t seed) { return PosteriorModel({3, 3, 10, 8}, seed); }

PosteriorModel build_mnist_posterior(std::uint64_t seed) { return PosteriorModel({196, 196, 256, 256}, seed); }

// ---- recorded evaluation -----------------------------------------------------

namespace ad_posterior {

std::vector<ad::Var> PosteriorVars::parameters(bool with_diffeo) const {
  std::vector<ad::Var> out{embed_w, embed_b, in_w, in_b, out_w, out_b, head_w, head_b};
  if (with_diffeo) {
    for (const ad::Var& v : diffeo.parameters()) out.push_back(v);
  }
  return out;
}

PosteriorVars record(ad::Tape& tape, const PosteriorModel& model, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  PosteriorVars p;
  p.embed_w = put(model.embed.weight);
  p.embed_b = put(model.embed.bias.transpose());
  p.in_w = put(model.block_in.weight);
  p.in_b = put(model.block_in.bias.transpose());
  p.out_w = put(model.block_out.weight);
  p.out_b = put(model.block_out.bias.transpose());
  p.head_w = put(model.head.weight);
  p.head_b = put(model.head.bias.transpose());
  p.diffeo = ad_flow::record(tape, model.diffeo, trainable && model.diffeo_trainable);
  p.data_dim = model.data_dim();
  return p;
}

namespace {

// Rows: x W^T + b.
ad::Var affine_rows(ad::Var x, ad::Var w, ad::Var b) { return ad::matmul(x, ad::transpose(w)) + b; }

}  // namespace

ad::Var head_output(const PosteriorVars& p, ad::Var y) {
  ad::Var h = affine_rows(y, p.embed_w, p.embed_b);
  ad::Var r = h + affine_rows(ad::tanh(affine_rows(h, p.in_w, p.in_b)), p.out_w, p.out_b);
  return affine_rows(r, p.head_w, p.head_b);
}

Draws sample(const PosteriorVars& p, ad::Var y, const Tensor& xi, Index m_samples) {
  const Index d = p.data_dim;
  if (xi.rows() != y.rows() * m_samples || xi.cols() != d) {
    throw ShapeError("posterior sample: noise has shape " + shape_of(xi) + ", expected " +
                     shape_str(y.rows() * m_samples, d));
  }
  ad::Var out = ad::repeat_rows(head_output(p, y), m_samples);
  ad::Var mean = ad::slice_cols(out, 0, d);
  ad::Var logvar = ad::slice_cols(out, d, d);
  ad::Var noise = y.tape->constant(xi);
  ad::Var z = mean + ad::exp(ad::scale(logvar, 0.5)) * noise;
  Draws draws;
  draws.x = ad_flow::inverse(p.diffeo, z);
  // Evaluated through phi_post(x) so gradients reach a trainable diffeo.
  ad::Var zz = ad_flow::forward(p.diffeo, draws.x);
  ad::Var std_res = (zz - mean) * ad::exp(ad::scale(logvar, -0.5));
  const double c = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  draws.log_q = ((ad::scale(ad::sum_cols(ad::square(std_res)), -0.5) - ad::scale(ad::sum_cols(logvar), 0.5)) +
                 ad_flow::log_abs_det(p.diffeo)) +
                c;
  return draws;
}

}  // namespace ad_posterior

// ---- checkpoint --------------------------------------------------------------

namespace {

nlohmann::json affine_to_json(const Affine& a) {
  return {{"weight", json_util::matrix_to_json(a.weight)}, {"bias", json_util::vector_to_json(a.bias)}};
}

Affine affine_from_json(const nlohmann::json& doc, const std::string& key, Index in, Index out) {
  const std::string where = "posterior." + key;
  if (!doc.contains(key)) throw SchemaError("posterior: missing '" + key + "'");
  Affine a{json_util::matrix_from_json(doc[key], "weight", where), json_util::vector_from_json(doc[key], "bias", where)};
  if (a.weight.rows() != out || a.weight.cols() != in || a.bias.size() != out) {
    throw SchemaError(where + ": expected weight " + shape_str(out, in));
  }
  return a;
}

}  // namespace

nlohmann::json posterior_to_json(const PosteriorModel& p) {
  const auto& a = p.architecture();
  return {{"data_dim", a.data_dim},
          {"measurement_dim", a.measurement_dim},
          {"hidden", a.hidden},
          {"block_width", a.block_width},
          {"embed", affine_to_json(p.embed)},
          {"block_in", affine_to_json(p.block_in)},
          {"block_out", affine_to_json(p.block_out)},
          {"head", affine_to_json(p.head)},
          {"diffeo_trainable", p.diffeo_trainable},
          {"diffeo", flow_to_json(p.diffeo)}};
}

PosteriorModel posterior_from_json(const nlohmann::json& doc) {
  const std::string w = "posterior";
  PosteriorArchitecture a{json_util::get_index(doc, "data_dim", w), json_util::get_index(doc, "measurement_dim", w),
                          json_util::get_index(doc, "hidden", w), json_util::get_index(doc, "block_width", w)};
  PosteriorModel p(a, 0);
  p.embed = affine_from_json(doc, "embed", a.measurement_dim, a.hidden);
  p.block_in = affine_from_json(doc, "block_in", a.hidden, a.block_width);
  p.block_out = affine_from_json(doc, "block_out", a.block_width, a.hidden);
  p.head = affine_from_json(doc, "head", a.hidden, 2 * a.data_dim);
  if (!doc.contains("diffeo_trainable") || !doc["diffeo_trainable"].is_boolean()) {
    throw SchemaError("posterior.diffeo_trainable: expected a boolean");
  }
  p.diffeo_trainable = doc["diffeo_trainable"].get<bool>();
  if (!doc.contains("diffeo")) throw SchemaError("posterior: missing 'diffeo'");
  p.diffeo = flow_from_json(doc["diffeo"]);
  if (p.diffeo.dim() != a.data_dim) throw SchemaError("posterior.diffeo: dimension mismatch");
  return p;
}

}  // namespace raflow
