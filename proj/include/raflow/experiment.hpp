#pragma once

// Run configuration shared by the command-line tool and the acceptance
// suite: a strict JSON document describing data, corruption, architecture,
// training, RAE construction and inversion settings.

#include "raflow/corruption.hpp"
#include "raflow/flow.hpp"
#include "raflow/posterior.hpp"
#include "raflow/rae.hpp"
#include "raflow/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>

namespace raflow {

inline constexpr int kRunConfigVersion = 1;

struct DatasetSpec {
  std::string kind = "sinusoid";  // sinusoid | mnist14
  Index n_corrupted = 1000;       // sinusoid
  Index n_clean = 50;
  std::string train_images;       // mnist14: IDX paths
  std::string train_labels;       // optional
  std::string test_images;        // optional; held-out training images otherwise
  Index n_train = 55000;
};

struct CorruptionSpec {
  std::string kind = "identity";  // identity | blur
  double sigma = 0.1;
  Index kernel_size = 9;
  double kernel_sigma = 1.5;
};

struct FlowSpec {
  Index layers = 6;
  Index degree = 3;
};

struct PosteriorSpec {
  Index hidden = 10;
  Index block_width = 8;
};

struct RaeSpec {
  std::optional<Index> latent_dim;
  std::optional<double> epsilon;
  Index prior_samples = 0;        // model samples added to the clean references
  bool use_clean_reference = true;
};

struct InversionSpec {
  double alpha = 1e-2;
  Index iterations = 1000;
  Index test_count = 10;
  double noise_sigma = 0.05;
  double tv_lambda = 8.0;
  double tv_alpha = 0.0;          // 0 selects 0.2 / ||A||^2
  Index tv_iterations = 500;
};

struct RunConfig {
  std::string experiment = "sinusoid";
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  CorruptionSpec corruption;
  FlowSpec flow;
  PosteriorSpec posterior;
  TrainConfig train;
  RaeSpec rae;
  InversionSpec inversion;
  std::string output_dir;         // empty: <output root>/<experiment>
};

/// Unknown keys and ill-typed values raise SchemaError naming the path.
RunConfig run_config_from_json(const nlohmann::json& doc);
nlohmann::json run_config_to_json(const RunConfig& c);

/// Built-in presets "sinusoid" and "mnist14"; the files under presets/ hold
/// the same documents.
RunConfig preset_config(const std::string& name);

/// Signal dimension implied by the dataset.
Index data_dim(const RunConfig& c);

struct Experiment {
  Dataset data;
  CorruptionModel corruption;
  std::optional<Mat> embedding;   // sinusoid only
  Mat test_images;                // mnist14: unseen clean images for inversion
  Index image_height = 0;
  Index image_width = 0;
};

/// Generates (sinusoid) or loads (mnist14) the data described by `c`.
Experiment build_experiment(const RunConfig& c);

/// Training initialization for the configured architecture.
TrainState initial_train_state(const RunConfig& c);

/// RAE from the trained prior: barycenter plus tangent PCA over the clean
/// references and `prior_samples` model samples.
RAE build_run_rae(const RunConfig& c, const FlowModel& prior, const Dataset& data);

/// Forward-operator description used by the inversion tools:
///   {"kind": "identity", "dim": n}
///   {"kind": "blur", "height": h, "width": w, "kernel_size": k, "kernel_sigma": s}
///   {"kind": "dense", "matrix": [[...], ...]}
nlohmann::json operator_spec(const RunConfig& c);
LinearOperator operator_from_json(const nlohmann::json& doc);

}  // namespace raflow
