#pragma once

// Forward operators, Gaussian measurement noise, and the datasets used for
// training: the embedded sinusoid and 14 x 14 MNIST with Gaussian blur.

#include "raflow/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace raflow {

/// Dense m x d matrix, or a separable blur acting on h x w images stored
/// row-major in vectors of length h w.
class LinearOperator {
 public:
  static LinearOperator dense(Mat a);
  /// Normalized Gaussian kernel of odd size `kernel_size`, reflection padding
  /// (the edge pixel is not repeated).
  static LinearOperator gaussian_blur(Index height, Index width, Index kernel_size, double kernel_sigma);

  Index in_dim() const;
  Index out_dim() const;
  bool is_blur() const { return blur_; }

  Vec apply(const Vec& x) const;
  Vec apply_adjoint(const Vec& y) const;
  /// Rows of xs are points.
  Mat apply_rows(const Mat& xs) const;
  /// Dense m x d matrix.
  const Mat& matrix() const { return dense_; }

  /// ||A|| by power iteration.
  double operator_norm() const;
  /// ||A^T A||.
  double gram_norm() const;

  // Blur structure; empty for dense operators.
  const Mat& row_filter() const { return bh_; }
  const Mat& col_filter() const { return bw_; }
  Index height() const { return h_; }
  Index width() const { return w_; }

 private:
  bool blur_ = false;
  Mat dense_;
  Mat bh_, bw_;
  Index h_ = 0, w_ = 0;
};

/// 1-d reflection-padded convolution matrix for a centered kernel.
Mat reflect_convolution_matrix(Index n, const Vec& kernel);
/// exp(-i^2 / (2 s^2)) for i in [-(k-1)/2, (k-1)/2], normalized to sum 1.
Vec gaussian_kernel(Index kernel_size, double sigma);

class CorruptionModel {
 public:
  /// sigma may be 0 for noiseless simulation; the noise density then is
  /// undefined and noise_log_density rejects the call.
  CorruptionModel(LinearOperator op, double sigma);

  const LinearOperator& op() const { return op_; }
  double sigma() const { return sigma_; }
  Index in_dim() const { return op_.in_dim(); }
  Index out_dim() const { return op_.out_dim(); }

  Vec apply_noiseless(const Vec& x) const { return op_.apply(x); }
  Vec apply(const Vec& x, std::uint64_t seed) const;
  /// Row i gets noise from stream i of `seed`.
  Mat apply_rows(const Mat& xs, std::uint64_t seed) const;

  /// -||r||^2 / (2 sigma^2) - (m/2) log(2 pi sigma^2).
  double noise_log_density(const Vec& residual) const;

 private:
  LinearOperator op_;
  double sigma_;
};

struct Dataset {
  Mat corrupted;        // n x m measurements
  Mat clean_reference;  // k x d, possibly empty
  std::optional<Mat> ground_truth;  // clean points behind `corrupted`
};

// ---- sinusoid ------------------------------------------------------------------

struct SinusoidProblem {
  Dataset data;
  CorruptionModel corruption;
  Mat embedding;  // 3 x 5
};

/// (s, sin 2s, 0, 0, 0).
Vec sinusoid_curve_point(double s);
/// Curve points E c(s) for s ~ U[-pi, pi]; rows are points.
Mat sample_sinusoid(const Mat& embedding, Index count, std::uint64_t seed);
/// Dense evenly spaced curve samples for distance queries.
Mat dense_sinusoid(const Mat& embedding, Index count);
/// Mean over rows of `points` of the distance to the nearest row of `curve`.
double mean_distance_to_curve(const Mat& points, const Mat& curve);

/// Curve in R^5 mapped to R^3 by a seeded N(0, 1/3) matrix; identity forward
/// operator with additive noise sigma.
SinusoidProblem make_sinusoid_dataset(Index n_corrupt, Index n_clean, double sigma, std::uint64_t seed);

// ---- MNIST ---------------------------------------------------------------------

struct IdxImages {
  Index count = 0;
  Index rows = 0;
  Index cols = 0;
  std::vector<std::uint8_t> pixels;
};

IdxImages read_idx_images(const std::string& path);
std::vector<int> read_idx_labels(const std::string& path);
/// Pixels scaled to [0, 1] then 2 x 2 average pooled; one row per image.
Mat pool_images(const IdxImages& images);

struct MnistData {
  Mat images;  // n x 196
  std::vector<int> labels;
};
MnistData load_mnist_idx(const std::string& images_path, const std::string& labels_path);

/// x + U[0, 1/256) per pixel.
Mat dequantize(const Mat& xs, std::uint64_t seed);

/// First `n_train` images (after a seeded shuffle) corrupted by blur plus
/// noise; the first `n_clean` of those are also kept clean.
Dataset make_mnist_dataset(const Mat& images, Index n_train, Index n_clean, const CorruptionModel& corruption,
                           std::uint64_t seed);

// ---- export ------------------------------------------------------------------

/// Row-major little-endian float64 values, no header.
void write_f64_block(const std::string& path, const Mat& m);
Mat read_f64_block(const std::string& path, Index rows, Index cols);
/// <dir>/<name>.f64 plus the manifest <dir>/<name>.json.
void write_matrix_artifact(const std::string& dir, const std::string& name, const Mat& m);
/// Reads the block described by a manifest written above.
Mat read_matrix_artifact(const std::string& manifest_path);

/// manifest.json plus one little-endian float64 file per block.
void write_dataset(const std::string& dir, const Dataset& data);
Dataset read_dataset(const std::string& dir);

}  // namespace raflow
