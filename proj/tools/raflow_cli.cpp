// raflow: train, sample, build RAEs, walk geodesics, invert and check operators.
//
// Exit codes: 0 success, 1 usage or invalid config, 2 data / schema error,
// 3 numeric failure.

#include "raflow/experiment.hpp"
#include "raflow/geometry.hpp"
#include "raflow/inversion.hpp"
#include "raflow/json_util.hpp"
#include "raflow/recoverability.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace raflow;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : Error {
  using Error::Error;
};

std::string output_root() {
  const char* env = std::getenv("RAFLOW_OUT_ROOT");
  return env && *env ? env : "runs";
}

// ---- config -------------------------------------------------------------------

struct ConfigFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool dry_run = false;
};

void add_config_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--config", f.config, "run configuration (JSON)");
  app->add_option("--preset", f.preset, "built-in configuration: sinusoid | mnist14");
  app->add_option("--seed", f.seed, "overrides the configured seed");
  app->add_option("--out", f.out, "run directory");
  app->add_flag("--dry-run", f.dry_run, "validate the configuration and exit");
}

RunConfig resolve_config(const ConfigFlags& f) {
  if (f.config.empty() == f.preset.empty()) throw UsageError("give exactly one of --config and --preset");
  RunConfig c;
  try {
    c = f.preset.empty() ? run_config_from_json(json_util::read_file(f.config)) : preset_config(f.preset);
  } catch (const SchemaError& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  if (f.seed) {
    c.seed = *f.seed;
    c.train.seed = *f.seed;
  }
  if (!f.out.empty()) c.output_dir = f.out;
  if (c.output_dir.empty()) c.output_dir = (fs::path(output_root()) / c.experiment).string();
  return c;
}

fs::path make_run_dir(const std::string& dir) {
  fs::create_directories(dir);
  return fs::path(dir);
}

void echo_config(const fs::path& dir, const RunConfig& c) { json_util::write_file((dir / "config.json").string(), run_config_to_json(c)); }

RunConfig read_run_config(const fs::path& run) {
  try {
    return run_config_from_json(json_util::read_file((run / "config.json").string()));
  } catch (const SchemaError& e) {
    throw SchemaError((run / "config.json").string() + ": " + e.what());
  }
}

// ---- checkpoints ------------------------------------------------------------------

/// Flow checkpoints, or training checkpoints that embed one.
FlowModel load_flow(const std::string& path) {
  const json doc = json_util::read_file(path);
  try {
    if (doc.is_object() && doc.contains("flow") && doc.contains("posterior")) return flow_from_json(doc["flow"]);
    return flow_from_json(doc);
  } catch (const SchemaError& e) {
    throw SchemaError("'" + path + "': " + e.what());
  }
}

RAE load_rae(const std::string& rae_path, const std::string& flow_path) {
  const json doc = json_util::read_file(rae_path);
  std::string flow_file = flow_path;
  if (flow_file.empty()) {
    flow_file = rae_flow_reference(doc);
    if (fs::path(flow_file).is_relative()) flow_file = (fs::path(rae_path).parent_path() / flow_file).string();
  }
  return rae_from_json(doc, load_flow(flow_file));
}

LinearOperator load_operator(const std::string& path) { return operator_from_json(json_util::read_file(path)); }

Vec parse_point(const std::string& text, const char* what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string(what) + ": cannot parse '" + item + "' as a number");
    }
  }
  return Eigen::Map<Vec>(v.data(), static_cast<Index>(v.size()));
}

void write_csv_column(const fs::path& file, const char* header, const std::vector<double>& values) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write '" + file.string() + "'");
  out.precision(17);
  out << header << '\n';
  for (double v : values) out << v << '\n';
}

// Grayscale grid of 14 x 14 images, one row of tiles.
void write_pgm(const fs::path& file, const Mat& images, Index h, Index w) {
  const Index n = images.rows();
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write '" + file.string() + "'");
  out << "P5\n" << n * w << ' ' << h << "\n255\n";
  for (Index r = 0; r < h; ++r)
    for (Index k = 0; k < n; ++k)
      for (Index c = 0; c < w; ++c) {
        const double v = std::clamp(images(k, r * w + c), 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
      }
}

// ---- commands ---------------------------------------------------------------------

int cmd_preset(const std::string& name) {
  RunConfig c;
  try {
    c = preset_config(name);
  } catch (const SchemaError& e) {
    throw UsageError(e.what());
  }
  std::cout << run_config_to_json(c).dump(2) << '\n';
  return kOk;
}

int cmd_train(const ConfigFlags& f, const std::string& resume) {
  const RunConfig c = resolve_config(f);
  if (f.dry_run) {
    std::cout << "configuration ok\n" << run_config_to_json(c).dump(2) << '\n';
    return kOk;
  }
  const fs::path dir = make_run_dir(c.output_dir);
  echo_config(dir, c);
  const Experiment e = build_experiment(c);
  write_dataset((dir / "dataset").string(), e.data);
  json_util::write_file((dir / "operator.json").string(), operator_spec(c));
  if (e.test_images.rows() > 0) write_matrix_artifact(dir.string(), "test_images", e.test_images);

  TrainState state = initial_train_state(c);
  if (!resume.empty()) {
    TrainConfig saved;
    state = train_checkpoint_from_json(json_util::read_file(resume), &saved);
    if (saved.seed != c.train.seed) throw SchemaError("'" + resume + "': checkpoint seed differs from the run seed");
  }
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const TrainState& s) {
    json_util::write_file((dir / "checkpoint.json").string(), train_checkpoint_to_json(s, c.train));
  };
  const Index total = c.train.total_steps(e.data.corrupted.rows());
  hooks.on_step = [&](const LossRecord& r) {
    if (r.step == 1 || r.step % 50 == 0 || r.step == total)
      std::clog << "step " << r.step << "/" << total << "  loss " << r.total << "  vlb " << r.vlb << '\n';
  };
  state = train(c.train, e.data, e.corruption, std::move(state), hooks);
  write_loss_csv((dir / "loss.csv").string(), state.history);
  json_util::write_file((dir / "checkpoint.json").string(), train_checkpoint_to_json(state, c.train));
  json_util::write_file((dir / "flow.json").string(), flow_to_json(state.prior));
  if (state.aborted) {
    std::cerr << "training aborted: " << state.abort_reason << " (last finite state saved)\n";
    return kNumeric;
  }
  std::cout << dir.string() << '\n';
  return kOk;
}

int cmd_rae(const std::string& run, const std::string& out_flag, std::uint64_t seed) {
  const fs::path dir(run);
  const RunConfig c = read_run_config(dir);
  const FlowModel prior = load_flow((dir / "flow.json").string());
  const Dataset data = read_dataset((dir / "dataset").string());
  const fs::path out = out_flag.empty() ? dir : make_run_dir(out_flag);
  const RAE rae = build_run_rae(c, prior, data);
  json_util::write_file((out / "rae.json").string(),
                        rae_to_json(rae, fs::relative(dir / "flow.json", fs::absolute(out)).string()));
  std::vector<double> spectrum(rae.spectrum().data(), rae.spectrum().data() + rae.spectrum().size());
  write_csv_column(out / "spectrum.csv", "eigenvalue", spectrum);

  json report = {{"latent_dim", rae.latent_dim()}, {"seed", seed}, {"schema_version", kRunConfigVersion}};
  const ProjectionErrorReport pe = expected_projection_error(rae, 1000, seed);
  report["expected_projection_error"] = pe.expected_error;
  report["expected_projection_error_std"] = pe.std_error;
  if (data.ground_truth) {
    const ProjectionErrorReport pd = expected_projection_error(rae, *data.ground_truth);
    report["data_projection_error"] = pd.expected_error;
    RecoverabilityOptions o;
    o.seed = seed;
    const LinearOperator op = load_operator((dir / "operator.json").string());
    json_util::write_file((out / "recoverability.json").string(),
                          recoverability_to_json(verify_recoverability(rae, *data.ground_truth, op, o)));
  }
  if (c.dataset.kind == "sinusoid") {
    const Experiment e = build_experiment(c);
    const Mat curve = dense_sinusoid(*e.embedding, 20000);
    const Mat fresh = sample_sinusoid(*e.embedding, 500, seed ^ 0x6375);
    Mat proj(fresh.rows(), fresh.cols());
    for (Index i = 0; i < fresh.rows(); ++i) proj.row(i) = rae.project(fresh.row(i).transpose()).transpose();
    report["curve_distance"] = mean_distance_to_curve(proj, curve);
  }
  json_util::write_file((out / "rae_report.json").string(), report);
  std::cout << report.dump(2) << '\n';
  return kOk;
}

int cmd_sample(const std::string& checkpoint, Index count, std::uint64_t seed, const std::string& out, bool pgm) {
  if (count < 0) throw UsageError("--count must be >= 0");
  const FlowModel flow = load_flow(checkpoint);
  const Mat xs = count > 0 ? sample(flow, count, seed) : Mat(0, flow.dim());
  const fs::path dir = make_run_dir(out);
  write_matrix_artifact(dir.string(), "samples", xs);
  json_util::write_file((dir / "sample_run.json").string(),
                        {{"schema_version", kRunConfigVersion}, {"checkpoint", checkpoint}, {"count", count}, {"seed", seed}});
  if (pgm && flow.dim() == 196 && count > 0) write_pgm(dir / "samples.pgm", xs.topRows(std::min<Index>(count, 10)), 14, 14);
  std::cout << (dir / "samples.json").string() << '\n';
  return kOk;
}

int cmd_geodesic(const std::string& checkpoint, const std::string& from, const std::string& to, Index steps,
                 const std::string& out) {
  if (steps < 2) throw UsageError("--steps must be >= 2");
  const PullbackGeometry g{load_flow(checkpoint)};
  const Vec x = parse_point(from, "--from");
  const Vec y = parse_point(to, "--to");
  if (x.size() != g.dim() || y.size() != g.dim())
    throw UsageError("endpoints must have " + std::to_string(g.dim()) + " coordinates");
  std::ofstream file;
  if (!out.empty()) {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    file.open(out);
    if (!file) throw Error("cannot write '" + out + "'");
  }
  std::ostream& os = out.empty() ? std::cout : file;
  os.precision(17);
  os << 't';
  for (Index k = 0; k < g.dim(); ++k) os << ",x" << k;
  os << '\n';
  for (Index s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps - 1);
    const Vec p = geodesic(g, x, y, t);
    os << t;
    for (Index k = 0; k < p.size(); ++k) os << ',' << p(k);
    os << '\n';
  }
  return kOk;
}

struct InvertFlags {
  std::string checkpoint, rae, measurement, truth, op, out;
  double alpha = 1e-2;
  Index iterations = 1000;
  bool certificate = false;
  bool best_mse = false;
  std::optional<double> delta;
  Index rric_samples = 10000;
  std::uint64_t seed = 0;
};

int cmd_invert(const InvertFlags& f) {
  const RAE rae = load_rae(f.rae, f.checkpoint);
  const LinearOperator op = load_operator(f.op);
  const Mat ys = read_matrix_artifact(f.measurement);
  std::optional<Mat> truth;
  if (!f.truth.empty()) {
    truth = read_matrix_artifact(f.truth);
    if (truth->rows() != ys.rows()) throw SchemaError("'" + f.truth + "': row count differs from the measurements");
  }
  if (f.best_mse && !truth) throw UsageError("--best-mse needs --truth");
  const fs::path dir = make_run_dir(f.out);
  Mat xs(ys.rows(), rae.dim());
  json runs = json::array();
  bool aborted = false;
  for (Index i = 0; i < ys.rows(); ++i) {
    InversionOptions o;
    o.alpha = f.alpha;
    o.max_iterations = f.iterations;
    if (truth) o.true_signal = Vec(truth->row(i).transpose());
    o.select_best_mse = f.best_mse;
    const InversionResult r = invert(rae, op, ys.row(i).transpose(), o);
    xs.row(i) = r.x.transpose();
    write_inversion_csv((dir / ("iterates_" + std::to_string(i) + ".csv")).string(), r.history);
    json item = {{"index", i}, {"selected_iteration", r.selected_iteration}, {"aborted", r.aborted}};
    if (truth) item["mse"] = mse(r.x, truth->row(i).transpose());
    if (r.aborted) item["abort_reason"] = r.abort_reason;
    aborted = aborted || r.aborted;
    runs.push_back(item);
  }
  write_matrix_artifact(dir.string(), "reconstruction", xs);
  json summary = {{"schema_version", kRunConfigVersion}, {"alpha", f.alpha}, {"iterations", f.iterations}, {"runs", runs}};
  if (f.certificate) {
    double delta = 0.0;
    bool certified = false;
    if (f.delta) {
      delta = *f.delta;
      certified = true;
    } else {
      delta = check_rric(rae, op, f.rric_samples, f.seed).delta_hat;
    }
    json_util::write_file((dir / "certificate.json").string(),
                          certificate_to_json(certificate(rae, op, f.alpha, delta, certified)));
  }
  json_util::write_file((dir / "summary.json").string(), summary);
  std::cout << (dir / "reconstruction.json").string() << '\n';
  return aborted ? kNumeric : kOk;
}

int cmd_check(const std::string& checkpoint, const std::string& rae_path, const std::string& op_path, Index pairs,
              std::uint64_t seed, const std::string& out) {
  if (pairs < 1) throw UsageError("--pairs must be >= 1");
  const RAE rae = load_rae(rae_path, checkpoint);
  const LinearOperator op = load_operator(op_path);
  const RipEstimate rip = check_rip(rae, op, pairs, seed);
  const RricEstimate rric = check_rric(rae, op, pairs, seed);
  const fs::path dir = make_run_dir(out);
  write_csv_column(dir / "rip_ratios.csv", "ratio", rip.ratios);
  write_csv_column(dir / "rric_values.csv", "value", rric.values);
  const json report = {{"schema_version", kRunConfigVersion},
                       {"seed", seed},
                       {"pairs", pairs},
                       {"rip_lower", rip.lower},
                       {"rip_upper", rip.upper},
                       {"rip_delta_hat", rip.delta()},
                       {"rric_delta_hat", rric.delta_hat},
                       {"operator_norm", op.operator_norm()},
                       {"gram_norm", gram_norm(op)},
                       {"note", "sampled estimates are lower bounds on the true constants"}};
  json_util::write_file((dir / "check.json").string(), report);
  std::cout << report.dump(2) << '\n';
  return kOk;
}

struct TvFlags {
  std::string measurement, truth, op, out;
  double lambda = 8.0;
  double alpha = 0.0;
  Index iterations = 500;
  Index height = 0, width = 0;
  bool best_mse = false;
};

int cmd_tv(const TvFlags& f) {
  const json spec = json_util::read_file(f.op);
  const LinearOperator op = operator_from_json(spec);
  Index h = f.height, w = f.width;
  if (op.is_blur()) {
    h = op.height();
    w = op.width();
  }
  if (h * w != op.in_dim()) throw UsageError("--height and --width must describe the operator input");
  const Mat ys = read_matrix_artifact(f.measurement);
  std::optional<Mat> truth;
  if (!f.truth.empty()) truth = read_matrix_artifact(f.truth);
  if (f.best_mse && !truth) throw UsageError("--best-mse needs --truth");
  const fs::path dir = make_run_dir(f.out);
  Mat xs(ys.rows(), op.in_dim());
  json runs = json::array();
  for (Index i = 0; i < ys.rows(); ++i) {
    TvOptions o;
    o.lambda = f.lambda;
    o.alpha = f.alpha;
    o.max_iterations = f.iterations;
    if (truth) o.true_signal = Vec(truth->row(i).transpose());
    o.select_best_mse = f.best_mse;
    const TvResult r = tv_reconstruct(op, ys.row(i).transpose(), h, w, o);
    xs.row(i) = r.x.transpose();
    write_inversion_csv((dir / ("tv_iterates_" + std::to_string(i) + ".csv")).string(), r.history);
    json item = {{"index", i}, {"selected_iteration", r.selected_iteration}, {"alpha", r.alpha}};
    if (truth) item["mse"] = mse(r.x, truth->row(i).transpose());
    runs.push_back(item);
  }
  write_matrix_artifact(dir.string(), "tv_reconstruction", xs);
  json_util::write_file((dir / "tv_summary.json").string(),
                        {{"schema_version", kRunConfigVersion}, {"lambda", f.lambda}, {"runs", runs}});
  std::cout << (dir / "tv_reconstruction.json").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raflow: manifold learning from corrupted data with pullback geometry"};
  app.require_subcommand(1);

  std::string preset_name;
  auto* preset = app.add_subcommand("preset", "print a built-in configuration");
  preset->add_option("name", preset_name, "sinusoid | mnist14")->required();

  ConfigFlags train_flags;
  std::string resume;
  auto* train_cmd = app.add_subcommand("train", "train prior and posterior on corrupted data");
  add_config_flags(train_cmd, train_flags);
  train_cmd->add_option("--resume", resume, "training checkpoint to continue from");

  std::string rae_run, rae_out;
  std::uint64_t rae_seed = 0;
  auto* rae_cmd = app.add_subcommand("rae", "build the RAE of a trained run and report its errors");
  rae_cmd->add_option("--run", rae_run, "run directory written by train")->required();
  rae_cmd->add_option("--out", rae_out, "output directory (default: the run directory)");
  rae_cmd->add_option("--seed", rae_seed, "Monte Carlo seed");

  std::string sample_ckpt, sample_out;
  Index sample_count = 10;
  std::uint64_t sample_seed = 0;
  bool sample_pgm = false;
  auto* sample_cmd = app.add_subcommand("sample", "draw samples from a trained prior");
  sample_cmd->add_option("--checkpoint", sample_ckpt, "flow or training checkpoint")->required();
  sample_cmd->add_option("--count", sample_count, "number of samples");
  sample_cmd->add_option("--seed", sample_seed, "sampling seed");
  sample_cmd->add_option("--out", sample_out, "output directory")->required();
  sample_cmd->add_flag("--pgm", sample_pgm, "also write a PGM grid for 14 x 14 images");

  std::string geo_ckpt, geo_from, geo_to, geo_out;
  Index geo_steps = 11;
  auto* geo_cmd = app.add_subcommand("geodesic", "points along the geodesic between two points (CSV)");
  geo_cmd->add_option("--checkpoint", geo_ckpt, "flow or training checkpoint")->required();
  geo_cmd->add_option("--from", geo_from, "comma separated coordinates")->required();
  geo_cmd->add_option("--to", geo_to, "comma separated coordinates")->required();
  geo_cmd->add_option("--steps", geo_steps, "number of points, endpoints included");
  geo_cmd->add_option("--out", geo_out, "CSV path (default: stdout)");

  InvertFlags inv;
  auto* inv_cmd = app.add_subcommand("invert", "gradient descent through the RAE decoder");
  inv_cmd->add_option("--checkpoint", inv.checkpoint, "flow checkpoint (default: the one the RAE references)");
  inv_cmd->add_option("--rae", inv.rae, "RAE checkpoint")->required();
  inv_cmd->add_option("--measurement", inv.measurement, "measurement manifest, one row per measurement")->required();
  inv_cmd->add_option("--operator", inv.op, "operator description (JSON)")->required();
  inv_cmd->add_option("--truth", inv.truth, "ground-truth manifest for MSE reporting");
  inv_cmd->add_option("--alpha", inv.alpha, "step size");
  inv_cmd->add_option("--iterations", inv.iterations, "iteration budget");
  inv_cmd->add_flag("--best-mse", inv.best_mse, "report the iterate with the lowest MSE (needs --truth)");
  inv_cmd->add_flag("--certificate", inv.certificate, "write the convergence certificate");
  inv_cmd->add_option("--delta", inv.delta, "certified isometry constant (default: sampled estimate)");
  inv_cmd->add_option("--rric-samples", inv.rric_samples, "quadruples for the sampled estimate");
  inv_cmd->add_option("--seed", inv.seed, "sampling seed");
  inv_cmd->add_option("--out", inv.out, "output directory")->required();

  std::string chk_ckpt, chk_rae, chk_op, chk_out;
  Index chk_pairs = 10000;
  std::uint64_t chk_seed = 0;
  auto* chk_cmd = app.add_subcommand("check", "sampled RIP and range-restricted isometry constants");
  chk_cmd->alias("check-rip");
  chk_cmd->alias("check-rric");
  chk_cmd->add_option("--checkpoint", chk_ckpt, "flow checkpoint (default: the one the RAE references)");
  chk_cmd->add_option("--rae", chk_rae, "RAE checkpoint")->required();
  chk_cmd->add_option("--operator", chk_op, "operator description (JSON)")->required();
  chk_cmd->add_option("--pairs", chk_pairs, "sampled pairs / quadruples");
  chk_cmd->add_option("--seed", chk_seed, "sampling seed");
  chk_cmd->add_option("--out", chk_out, "output directory")->required();

  TvFlags tv;
  auto* tv_cmd = app.add_subcommand("tv", "total-variation reconstruction baseline");
  tv_cmd->add_option("--measurement", tv.measurement, "measurement manifest")->required();
  tv_cmd->add_option("--operator", tv.op, "operator description (JSON)")->required();
  tv_cmd->add_option("--truth", tv.truth, "ground-truth manifest for MSE reporting");
  tv_cmd->add_option("--lambda", tv.lambda, "TV weight");
  tv_cmd->add_option("--alpha", tv.alpha, "step size (default 0.2 / ||A||^2)");
  tv_cmd->add_option("--iterations", tv.iterations, "iteration budget");
  tv_cmd->add_option("--height", tv.height, "image height for dense operators");
  tv_cmd->add_option("--width", tv.width, "image width for dense operators");
  tv_cmd->add_flag("--best-mse", tv.best_mse, "report the iterate with the lowest MSE (needs --truth)");
  tv_cmd->add_option("--out", tv.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*preset) return cmd_preset(preset_name);
    if (*train_cmd) return cmd_train(train_flags, resume);
    if (*rae_cmd) return cmd_rae(rae_run, rae_out, rae_seed);
    if (*sample_cmd) return cmd_sample(sample_ckpt, sample_count, sample_seed, sample_out, sample_pgm);
    if (*geo_cmd) return cmd_geodesic(geo_ckpt, geo_from, geo_to, geo_steps, geo_out);
    if (*inv_cmd) return cmd_invert(inv);
    if (*chk_cmd) return cmd_check(chk_ckpt, chk_rae, chk_op, chk_pairs, chk_seed, chk_out);
    if (*tv_cmd) return cmd_tv(tv);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const SchemaError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
