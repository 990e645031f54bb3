#include "raflow/experiment.hpp"

#include "raflow/json_util.hpp"
#include "raflow/random.hpp"

#include <algorithm>
#include <numeric>

namespace raflow {

namespace {

using nlohmann::json;

void read_index(const json& o, const char* key, Index& out, const std::string& where) {
  if (o.contains(key)) out = json_util::get_index(o, key, where);
}
void read_double(const json& o, const char* key, double& out, const std::string& where) {
  if (o.contains(key)) out = json_util::get_double(o, key, where);
}
void read_string(const json& o, const char* key, std::string& out, const std::string& where) {
  if (o.contains(key)) out = json_util::get_string(o, key, where);
}
void read_bool(const json& o, const char* key, bool& out, const std::string& where) {
  if (!o.contains(key)) return;
  if (!o[key].is_boolean()) throw SchemaError(where + "." + key + ": expected a boolean");
  out = o[key].get<bool>();
}
const json& object_at(const json& doc, const char* key, const std::string& where) {
  const json& o = doc[key];
  if (!o.is_object()) throw SchemaError(where + "." + key + ": expected an object");
  return o;
}
std::uint64_t read_seed(const json& o, const std::string& where) {
  if (!o["seed"].is_number_unsigned() && !(o["seed"].is_number_integer() && o["seed"].get<long long>() >= 0))
    throw SchemaError(where + ".seed: expected a nonnegative integer");
  return o["seed"].get<std::uint64_t>();
}

void require(bool ok, const std::string& message) {
  if (!ok) throw SchemaError(message);
}

void validate(const RunConfig& c) {
  const DatasetSpec& d = c.dataset;
  require(d.kind == "sinusoid" || d.kind == "mnist14", "dataset.kind: expected \"sinusoid\" or \"mnist14\"");
  require(d.n_clean >= 0, "dataset.n_clean: must be >= 0");
  if (d.kind == "sinusoid") {
    require(d.n_corrupted >= 1, "dataset.n_corrupted: must be >= 1");
    require(c.corruption.kind == "identity", "corruption.kind: the sinusoid problem uses the identity operator");
  } else {
    require(!d.train_images.empty(), "dataset.train_images: required for mnist14");
    require(d.n_train >= 1 && d.n_clean <= d.n_train, "dataset.n_train: must be >= max(1, n_clean)");
  }
  const CorruptionSpec& k = c.corruption;
  require(k.kind == "identity" || k.kind == "blur", "corruption.kind: expected \"identity\" or \"blur\"");
  require(k.sigma > 0.0, "corruption.sigma: must be > 0");
  if (k.kind == "blur") {
    require(k.kernel_size >= 1 && k.kernel_size % 2 == 1, "corruption.kernel_size: must be odd and positive");
    require(k.kernel_sigma > 0.0, "corruption.kernel_sigma: must be > 0");
  }
  require(c.flow.layers >= 0, "flow.layers: must be >= 0");
  require(c.flow.degree >= 1, "flow.degree: must be >= 1");
  require(c.posterior.hidden >= 1, "posterior.hidden: must be >= 1");
  require(c.posterior.block_width >= 1, "posterior.block_width: must be >= 1");
  require(c.rae.latent_dim.has_value() != c.rae.epsilon.has_value(),
          "rae: exactly one of latent_dim and epsilon must be given");
  if (c.rae.latent_dim) require(*c.rae.latent_dim >= 1, "rae.latent_dim: must be >= 1");
  if (c.rae.epsilon) require(*c.rae.epsilon > 0.0 && *c.rae.epsilon <= 1.0, "rae.epsilon: must lie in (0, 1]");
  require(c.rae.prior_samples >= 0, "rae.prior_samples: must be >= 0");
  require(c.rae.use_clean_reference || c.rae.prior_samples > 0, "rae: no samples to build the basis from");
  const InversionSpec& v = c.inversion;
  require(v.alpha > 0.0, "inversion.alpha: must be > 0");
  require(v.iterations >= 0, "inversion.iterations: must be >= 0");
  require(v.test_count >= 0, "inversion.test_count: must be >= 0");
  require(v.noise_sigma >= 0.0, "inversion.noise_sigma: must be >= 0");
  require(v.tv_lambda >= 0.0, "inversion.tv_lambda: must be >= 0");
  require(v.tv_alpha >= 0.0, "inversion.tv_alpha: must be >= 0");
  require(v.tv_iterations >= 0, "inversion.tv_iterations: must be >= 0");
}

}  // namespace

RunConfig run_config_from_json(const json& doc) {
  const std::string w = "config";
  if (!doc.is_object()) throw SchemaError("config: expected an object");
  json_util::reject_unknown_keys(doc,
                                 {"schema_version", "experiment", "seed", "dataset", "corruption", "flow", "posterior",
                                  "train", "rae", "inversion", "output_dir"},
                                 w);
  if (!doc.contains("schema_version")) throw SchemaError("config.schema_version: missing");
  const Index version = json_util::get_index(doc, "schema_version", w);
  if (version != kRunConfigVersion)
    throw SchemaError("config.schema_version: found " + std::to_string(version) + ", expected " +
                      std::to_string(kRunConfigVersion));
  RunConfig c;
  read_string(doc, "experiment", c.experiment, w);
  if (doc.contains("seed")) c.seed = read_seed(doc, w);
  read_string(doc, "output_dir", c.output_dir, w);

  if (doc.contains("dataset")) {
    const json& o = object_at(doc, "dataset", w);
    const std::string p = "dataset";
    json_util::reject_unknown_keys(
        o, {"kind", "n_corrupted", "n_clean", "train_images", "train_labels", "test_images", "n_train"}, p);
    read_string(o, "kind", c.dataset.kind, p);
    if (c.dataset.kind == "mnist14") {
      c.dataset.n_clean = 100;
    }
    read_index(o, "n_corrupted", c.dataset.n_corrupted, p);
    read_index(o, "n_clean", c.dataset.n_clean, p);
    read_string(o, "train_images", c.dataset.train_images, p);
    read_string(o, "train_labels", c.dataset.train_labels, p);
    read_string(o, "test_images", c.dataset.test_images, p);
    read_index(o, "n_train", c.dataset.n_train, p);
  }
  if (doc.contains("corruption")) {
    const json& o = object_at(doc, "corruption", w);
    const std::string p = "corruption";
    json_util::reject_unknown_keys(o, {"kind", "sigma", "kernel_size", "kernel_sigma"}, p);
    read_string(o, "kind", c.corruption.kind, p);
    read_double(o, "sigma", c.corruption.sigma, p);
    read_index(o, "kernel_size", c.corruption.kernel_size, p);
    read_double(o, "kernel_sigma", c.corruption.kernel_sigma, p);
  }
  if (doc.contains("flow")) {
    const json& o = object_at(doc, "flow", w);
    json_util::reject_unknown_keys(o, {"layers", "degree"}, "flow");
    read_index(o, "layers", c.flow.layers, "flow");
    read_index(o, "degree", c.flow.degree, "flow");
  }
  if (doc.contains("posterior")) {
    const json& o = object_at(doc, "posterior", w);
    json_util::reject_unknown_keys(o, {"hidden", "block_width"}, "posterior");
    read_index(o, "hidden", c.posterior.hidden, "posterior");
    read_index(o, "block_width", c.posterior.block_width, "posterior");
  }
  if (doc.contains("train")) {
    const json& o = object_at(doc, "train", w);
    c.train = config_from_json(o, "train");
    if (o.contains("seed") && c.train.seed != c.seed) throw SchemaError("train.seed: conflicts with the run seed");
  }
  c.train.seed = c.seed;
  if (doc.contains("rae")) {
    const json& o = object_at(doc, "rae", w);
    const std::string p = "rae";
    json_util::reject_unknown_keys(o, {"latent_dim", "epsilon", "prior_samples", "use_clean_reference"}, p);
    if (o.contains("latent_dim")) c.rae.latent_dim = json_util::get_index(o, "latent_dim", p);
    if (o.contains("epsilon")) c.rae.epsilon = json_util::get_double(o, "epsilon", p);
    read_index(o, "prior_samples", c.rae.prior_samples, p);
    read_bool(o, "use_clean_reference", c.rae.use_clean_reference, p);
  } else {
    c.rae.latent_dim = 1;
  }
  if (doc.contains("inversion")) {
    const json& o = object_at(doc, "inversion", w);
    const std::string p = "inversion";
    json_util::reject_unknown_keys(
        o, {"alpha", "iterations", "test_count", "noise_sigma", "tv_lambda", "tv_alpha", "tv_iterations"}, p);
    read_double(o, "alpha", c.inversion.alpha, p);
    read_index(o, "iterations", c.inversion.iterations, p);
    read_index(o, "test_count", c.inversion.test_count, p);
    read_double(o, "noise_sigma", c.inversion.noise_sigma, p);
    read_double(o, "tv_lambda", c.inversion.tv_lambda, p);
    read_double(o, "tv_alpha", c.inversion.tv_alpha, p);
    read_index(o, "tv_iterations", c.inversion.tv_iterations, p);
  }
  validate(c);
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json dataset = {{"kind", c.dataset.kind}, {"n_clean", c.dataset.n_clean}};
  if (c.dataset.kind == "sinusoid") {
    dataset["n_corrupted"] = c.dataset.n_corrupted;
  } else {
    dataset["train_images"] = c.dataset.train_images;
    dataset["train_labels"] = c.dataset.train_labels;
    dataset["test_images"] = c.dataset.test_images;
    dataset["n_train"] = c.dataset.n_train;
  }
  json corruption = {{"kind", c.corruption.kind}, {"sigma", c.corruption.sigma}};
  if (c.corruption.kind == "blur") {
    corruption["kernel_size"] = c.corruption.kernel_size;
    corruption["kernel_sigma"] = c.corruption.kernel_sigma;
  }
  json train = config_to_json(c.train);
  json rae = {{"prior_samples", c.rae.prior_samples}, {"use_clean_reference", c.rae.use_clean_reference}};
  if (c.rae.latent_dim) rae["latent_dim"] = *c.rae.latent_dim;
  if (c.rae.epsilon) rae["epsilon"] = *c.rae.epsilon;
  return {{"schema_version", kRunConfigVersion},
          {"experiment", c.experiment},
          {"seed", c.seed},
          {"dataset", dataset},
          {"corruption", corruption},
          {"flow", {{"layers", c.flow.layers}, {"degree", c.flow.degree}}},
          {"posterior", {{"hidden", c.posterior.hidden}, {"block_width", c.posterior.block_width}}},
          {"train", train},
          {"rae", rae},
          {"inversion",
           {{"alpha", c.inversion.alpha},
            {"iterations", c.inversion.iterations},
            {"test_count", c.inversion.test_count},
            {"noise_sigma", c.inversion.noise_sigma},
            {"tv_lambda", c.inversion.tv_lambda},
            {"tv_alpha", c.inversion.tv_alpha},
            {"tv_iterations", c.inversion.tv_iterations}}},
          {"output_dir", c.output_dir}};
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  if (name == "sinusoid") {
    c.experiment = "sinusoid";
    c.dataset = DatasetSpec{};
    c.corruption.kind = "identity";
    c.corruption.sigma = 0.1;
    c.flow = {6, 3};
    c.posterior = {10, 8};
    c.train = TrainConfig{};  // M = 10, lambda 0.1, mu 1, lr 1e-3, 500 full-batch iterations
    c.rae.latent_dim = 1;
    c.rae.prior_samples = 0;
    c.inversion.noise_sigma = 0.1;
    c.inversion.test_count = 10;
  } else if (name == "mnist14") {
    c.experiment = "mnist14";
    c.dataset.kind = "mnist14";
    c.dataset.train_images = "data/mnist/train-images-idx3-ubyte";
    c.dataset.train_labels = "data/mnist/train-labels-idx1-ubyte";
    c.dataset.test_images = "data/mnist/t10k-images-idx3-ubyte";
    c.dataset.n_train = 55000;
    c.dataset.n_clean = 100;
    c.corruption = {"blur", 0.05, 9, 1.5};
    c.flow = {8, 3};
    c.posterior = {256, 256};
    c.train.lambda = 0.0;
    c.train.mu = 100.0;
    c.train.learning_rate = 1e-3;
    c.train.iterations = 0;
    c.train.epochs = 480;
    c.train.batch_size = 250;
    c.rae.latent_dim = 40;
    c.rae.prior_samples = 400;
    c.inversion = InversionSpec{};
    c.inversion.alpha = 1e-2;
    c.inversion.tv_lambda = 8.0;
  } else {
    throw SchemaError("unknown preset '" + name + "' (available: sinusoid, mnist14)");
  }
  c.train.seed = c.seed;
  validate(c);
  return c;
}

Index data_dim(const RunConfig& c) { return c.dataset.kind == "sinusoid" ? 3 : 196; }

Experiment build_experiment(const RunConfig& c) {
  if (c.dataset.kind == "sinusoid") {
    SinusoidProblem p = make_sinusoid_dataset(c.dataset.n_corrupted, c.dataset.n_clean, c.corruption.sigma, c.seed);
    Experiment e{std::move(p.data), std::move(p.corruption), std::move(p.embedding), Mat(0, 3), 0, 0};
    return e;
  }
  LinearOperator op = c.corruption.kind == "blur"
                          ? LinearOperator::gaussian_blur(14, 14, c.corruption.kernel_size, c.corruption.kernel_sigma)
                          : LinearOperator::dense(Mat::Identity(196, 196));
  CorruptionModel corruption(std::move(op), c.corruption.sigma);
  const IdxImages raw = read_idx_images(c.dataset.train_images);
  if (!c.dataset.train_labels.empty()) {
    const std::vector<int> labels = read_idx_labels(c.dataset.train_labels);
    if (static_cast<Index>(labels.size()) != raw.count)
      throw SchemaError("'" + c.dataset.train_labels + "': label count does not match the image count");
  }
  if (raw.rows != 28 || raw.cols != 28) throw SchemaError("'" + c.dataset.train_images + "': expected 28 x 28 images");
  const Mat images = pool_images(raw);
  if (c.dataset.n_train > images.rows())
    throw SchemaError("dataset.n_train: " + std::to_string(c.dataset.n_train) + " exceeds the " +
                      std::to_string(images.rows()) + " available images");

  // Held-out split before the training draw so test digits are unseen.
  std::vector<Index> order(static_cast<std::size_t>(images.rows()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(c.seed, 0x73706c74);
  std::shuffle(order.begin(), order.end(), rng);
  Mat pool(c.dataset.n_train, 196);
  for (Index i = 0; i < c.dataset.n_train; ++i) pool.row(i) = images.row(order[static_cast<std::size_t>(i)]);

  Mat test;
  if (!c.dataset.test_images.empty()) {
    const Mat t = pool_images(read_idx_images(c.dataset.test_images));
    test = t.topRows(std::min<Index>(c.inversion.test_count, t.rows()));
  } else {
    const Index held = images.rows() - c.dataset.n_train;
    const Index k = std::min<Index>(c.inversion.test_count, held);
    test.resize(k, 196);
    for (Index i = 0; i < k; ++i)
      test.row(i) = images.row(order[static_cast<std::size_t>(c.dataset.n_train + i)]);
  }
  Dataset data = make_mnist_dataset(pool, c.dataset.n_train, c.dataset.n_clean, corruption, c.seed);
  return Experiment{std::move(data), std::move(corruption), std::nullopt, std::move(test), 14, 14};
}

TrainState initial_train_state(const RunConfig& c) {
  const Index d = data_dim(c);
  FlowModel prior = FlowModel::initialize(d, c.flow.layers, c.flow.degree, c.seed);
  PosteriorModel post(PosteriorArchitecture{d, d, c.posterior.hidden, c.posterior.block_width}, c.seed);
  return initial_state(std::move(prior), std::move(post));
}

RAE build_run_rae(const RunConfig& c, const FlowModel& prior, const Dataset& data) {
  const Index refs = c.rae.use_clean_reference ? data.clean_reference.rows() : 0;
  Mat samples(refs + c.rae.prior_samples, prior.dim());
  if (refs > 0) samples.topRows(refs) = data.clean_reference;
  if (c.rae.prior_samples > 0) samples.bottomRows(c.rae.prior_samples) = sample(prior, c.rae.prior_samples, c.seed ^ 0x726165);
  const LatentSpec spec = c.rae.latent_dim ? LatentSpec::fixed(*c.rae.latent_dim) : LatentSpec::from_epsilon(*c.rae.epsilon);
  return build_rae_from_samples(PullbackGeometry{prior}, samples, spec);
}

json operator_spec(const RunConfig& c) {
  if (c.corruption.kind == "blur")
    return {{"kind", "blur"},
            {"height", 14},
            {"width", 14},
            {"kernel_size", c.corruption.kernel_size},
            {"kernel_sigma", c.corruption.kernel_sigma}};
  return {{"kind", "identity"}, {"dim", data_dim(c)}};
}

LinearOperator operator_from_json(const json& doc) {
  const std::string w = "operator";
  if (!doc.is_object()) throw SchemaError("operator: expected an object");
  const std::string kind = json_util::get_string(doc, "kind", w);
  if (kind == "identity") {
    json_util::reject_unknown_keys(doc, {"kind", "dim"}, w);
    const Index n = json_util::get_index(doc, "dim", w);
    if (n < 1) throw SchemaError("operator.dim: must be >= 1");
    return LinearOperator::dense(Mat::Identity(n, n));
  }
  if (kind == "blur") {
    json_util::reject_unknown_keys(doc, {"kind", "height", "width", "kernel_size", "kernel_sigma"}, w);
    const Index h = json_util::get_index(doc, "height", w);
    const Index wd = json_util::get_index(doc, "width", w);
    const Index k = json_util::get_index(doc, "kernel_size", w);
    const double s = json_util::get_double(doc, "kernel_sigma", w);
    try {
      return LinearOperator::gaussian_blur(h, wd, k, s);
    } catch (const DomainError& e) {
      throw SchemaError(std::string("operator: ") + e.what());
    }
  }
  if (kind == "dense") {
    json_util::reject_unknown_keys(doc, {"kind", "matrix"}, w);
    return LinearOperator::dense(json_util::matrix_from_json(doc, "matrix", w));
  }
  throw SchemaError("operator.kind: expected \"identity\", \"blur\" or \"dense\", found \"" + kind + "\"");
}

}  // namespace raflow
