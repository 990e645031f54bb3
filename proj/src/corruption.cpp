#include "raflow/corruption.hpp"

#include "raflow/json_util.hpp"
#include "raflow/linalg.hpp"
#include "raflow/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

namespace raflow {

// ---- operators ---------------------------------------------------------------

LinearOperator LinearOperator::dense(Mat a) {
  if (a.size() == 0) throw ShapeError("dense operator: empty matrix");
  LinearOperator op;
  op.dense_ = std::move(a);
  return op;
}

Vec gaussian_kernel(Index kernel_size, double sigma) {
  if (kernel_size < 1 || kernel_size % 2 == 0) throw DomainError("gaussian_kernel: size must be odd and positive");
  if (!(sigma > 0.0)) throw DomainError("gaussian_kernel: sigma must be positive");
  const Index r = kernel_size / 2;
  Vec k(kernel_size);
  for (Index i = -r; i <= r; ++i) k(i + r) = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  return k / k.sum();
}

Mat reflect_convolution_matrix(Index n, const Vec& kernel) {
  const Index r = kernel.size() / 2;
  if (n <= r) throw DomainError("blur: image side must exceed the kernel radius");
  Mat b = Mat::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index o = -r; o <= r; ++o) {
      Index j = i + o;
      if (j < 0) j = -j;
      if (j >= n) j = 2 * (n - 1) - j;
      b(i, j) += kernel(o + r);
    }
  }
  return b;
}

LinearOperator LinearOperator::gaussian_blur(Index height, Index width, Index kernel_size, double kernel_sigma) {
  const Vec k = gaussian_kernel(kernel_size, kernel_sigma);
  LinearOperator op;
  op.blur_ = true;
  op.h_ = height;
  op.w_ = width;
  op.bh_ = reflect_convolution_matrix(height, k);
  op.bw_ = reflect_convolution_matrix(width, k);
  // Row-major vec(Bh X Bw^T) = (Bh kron Bw) vec(X).
  op.dense_ = Mat(height * width, height * width);
  for (Index i = 0; i < height; ++i) {
    for (Index j = 0; j < height; ++j) op.dense_.block(i * width, j * width, width, width) = op.bh_(i, j) * op.bw_;
  }
  return op;
}

Index LinearOperator::in_dim() const { return dense_.cols(); }
Index LinearOperator::out_dim() const { return dense_.rows(); }

namespace {

using RowImage = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Vec flatten(const Mat& img) {
  Vec v(img.size());
  for (Index i = 0; i < img.rows(); ++i) v.segment(i * img.cols(), img.cols()) = img.row(i).transpose();
  return v;
}

}  // namespace

Vec LinearOperator::apply(const Vec& x) const {
  if (x.size() != in_dim()) throw ShapeError("operator: input has dimension " + std::to_string(x.size()) +
                                             ", expected " + std::to_string(in_dim()));
  if (!blur_) return dense_ * x;
  const Mat img = RowImage(x.data(), h_, w_);
  return flatten(bh_ * img * bw_.transpose());
}

Vec LinearOperator::apply_adjoint(const Vec& y) const {
  if (y.size() != out_dim()) throw ShapeError("operator: measurement has dimension " + std::to_string(y.size()) +
                                              ", expected " + std::to_string(out_dim()));
  if (!blur_) return dense_.transpose() * y;
  const Mat img = RowImage(y.data(), h_, w_);
  return flatten(bh_.transpose() * img * bw_);
}

Mat LinearOperator::apply_rows(const Mat& xs) const {
  if (xs.cols() != in_dim()) throw ShapeError("operator: rows have dimension " + std::to_string(xs.cols()));
  return xs * dense_.transpose();
}

double LinearOperator::operator_norm() const {
  return spectral_norm([this](const Vec& x) { return apply(x); }, [this](const Vec& y) { return apply_adjoint(y); },
                       in_dim());
}

double LinearOperator::gram_norm() const {
  const double n = operator_norm();
  return n * n;
}

CorruptionModel::CorruptionModel(LinearOperator op, double sigma) : op_(std::move(op)), sigma_(sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("corruption: noise sigma must be finite and >= 0");
}

Vec CorruptionModel::apply(const Vec& x, std::uint64_t seed) const {
  Rng rng = make_rng(seed, 0x6e6f6973);
  return op_.apply(x) + sigma_ * standard_normal(out_dim(), rng);
}

Mat CorruptionModel::apply_rows(const Mat& xs, std::uint64_t seed) const {
  Mat out = op_.apply_rows(xs);
  for (Index i = 0; i < xs.rows(); ++i) {
    Rng rng = make_rng(seed, 0x6e6f6973 + static_cast<std::uint64_t>(i));
    out.row(i) += sigma_ * standard_normal(out_dim(), rng).transpose();
  }
  return out;
}

double CorruptionModel::noise_log_density(const Vec& residual) const {
  if (!(sigma_ > 0.0)) throw DomainError("noise_log_density: undefined for sigma = 0");
  if (residual.size() != out_dim()) throw ShapeError("noise_log_density: residual dimension mismatch");
  const double m = static_cast<double>(out_dim());
  return -residual.squaredNorm() / (2.0 * sigma_ * sigma_) -
         0.5 * m * std::log(2.0 * std::numbers::pi * sigma_ * sigma_);
}

// ---- sinusoid ------------------------------------------------------------------

Vec sinusoid_curve_point(double s) {
  Vec c = Vec::Zero(5);
  c(0) = s;
  c(1) = std::sin(2.0 * s);
  return c;
}

Mat sample_sinusoid(const Mat& embedding, Index count, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x63757276);
  const Mat s = uniform(count, 1, -std::numbers::pi, std::numbers::pi, rng);
  Mat out(count, embedding.rows());
  for (Index i = 0; i < count; ++i) out.row(i) = (embedding * sinusoid_curve_point(s(i, 0))).transpose();
  return out;
}

Mat dense_sinusoid(const Mat& embedding, Index count) {
  if (count < 2) throw DomainError("dense_sinusoid: need at least two points");
  Mat out(count, embedding.rows());
  for (Index i = 0; i < count; ++i) {
    const double s = -std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1);
    out.row(i) = (embedding * sinusoid_curve_point(s)).transpose();
  }
  return out;
}

double mean_distance_to_curve(const Mat& points, const Mat& curve) {
  if (points.rows() == 0) throw DomainError("mean_distance_to_curve: no points");
  double total = 0.0;
  for (Index i = 0; i < points.rows(); ++i) {
    total += std::sqrt((curve.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff());
  }
  return total / static_cast<double>(points.rows());
}

SinusoidProblem make_sinusoid_dataset(Index n_corrupt, Index n_clean, double sigma, std::uint64_t seed) {
  if (n_corrupt < 0 || n_clean < 0) throw DomainError("sinusoid: counts must be nonnegative");
  Rng rng = make_rng(seed, 0x656d6264);
  const Mat embedding = std::sqrt(1.0 / 3.0) * standard_normal(3, 5, rng);
  CorruptionModel corruption(LinearOperator::dense(Mat::Identity(3, 3)), sigma);
  Dataset data;
  const Mat truth = sample_sinusoid(embedding, n_corrupt, seed ^ 0x1111);
  data.corrupted = corruption.apply_rows(truth, seed ^ 0x2222);
  data.ground_truth = truth;
  data.clean_reference = sample_sinusoid(embedding, n_clean, seed ^ 0x3333);
  return {std::move(data), std::move(corruption), embedding};
}

// ---- IDX -----------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t offset, const std::string& path) {
  if (offset + 4 > b.size()) {
    throw SchemaError("'" + path + "': truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) | (std::uint32_t{b[offset + 2]} << 8) |
         std::uint32_t{b[offset + 3]};
}

}  // namespace

IdxImages read_idx_images(const std::string& path) {
  const auto b = read_bytes(path);
  const std::uint32_t magic = be32(b, 0, path);
  if (magic != 2051) {
    throw SchemaError("'" + path + "': bad image magic " + std::to_string(magic) + " at byte offset 0 (expected 2051)");
  }
  IdxImages img;
  img.count = be32(b, 4, path);
  img.rows = be32(b, 8, path);
  img.cols = be32(b, 12, path);
  const std::size_t need = static_cast<std::size_t>(img.count * img.rows * img.cols);
  if (b.size() < 16 + need) {
    throw SchemaError("'" + path + "': truncated payload at byte offset " + std::to_string(b.size()) + " (expected " +
                      std::to_string(16 + need) + " bytes)");
  }
  img.pixels.assign(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

std::vector<int> read_idx_labels(const std::string& path) {
  const auto b = read_bytes(path);
  const std::uint32_t magic = be32(b, 0, path);
  if (magic != 2049) {
    throw SchemaError("'" + path + "': bad label magic " + std::to_string(magic) + " at byte offset 0 (expected 2049)");
  }
  const std::size_t n = be32(b, 4, path);
  if (b.size() < 8 + n) {
    throw SchemaError("'" + path + "': truncated payload at byte offset " + std::to_string(b.size()) + " (expected " +
                      std::to_string(8 + n) + " bytes)");
  }
  return std::vector<int>(b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

Mat pool_images(const IdxImages& images) {
  if (images.rows % 2 != 0 || images.cols % 2 != 0) throw DomainError("pool_images: sides must be even");
  const Index ph = images.rows / 2, pw = images.cols / 2;
  Mat out(images.count, ph * pw);
  const Index stride = images.rows * images.cols;
  for (Index n = 0; n < images.count; ++n) {
    const std::uint8_t* p = images.pixels.data() + n * stride;
    for (Index i = 0; i < ph; ++i) {
      for (Index j = 0; j < pw; ++j) {
        const Index r = 2 * i, c = 2 * j;
        const double s = p[r * images.cols + c] + p[r * images.cols + c + 1] + p[(r + 1) * images.cols + c] +
                         p[(r + 1) * images.cols + c + 1];
        out(n, i * pw + j) = s / (4.0 * 255.0);
      }
    }
  }
  return out;
}

MnistData load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  MnistData d;
  d.images = pool_images(read_idx_images(images_path));
  d.labels = read_idx_labels(labels_path);
  if (static_cast<Index>(d.labels.size()) != d.images.rows()) {
    throw SchemaError("mnist: " + std::to_string(d.images.rows()) + " images but " + std::to_string(d.labels.size()) +
                      " labels");
  }
  return d;
}

Mat dequantize(const Mat& xs, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x64657175);
  return xs + uniform(xs.rows(), xs.cols(), 0.0, 1.0 / 256.0, rng);
}

Dataset make_mnist_dataset(const Mat& images, Index n_train, Index n_clean, const CorruptionModel& corruption,
                           std::uint64_t seed) {
  if (n_train > images.rows() || n_clean > n_train || n_clean < 0) {
    throw DomainError("mnist: requested " + std::to_string(n_train) + " training images from " +
                      std::to_string(images.rows()));
  }
  std::vector<Index> order(static_cast<std::size_t>(images.rows()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0x73687566);
  std::shuffle(order.begin(), order.end(), rng);
  Mat chosen(n_train, images.cols());
  for (Index i = 0; i < n_train; ++i) chosen.row(i) = images.row(order[static_cast<std::size_t>(i)]);
  Dataset data;
  data.corrupted = corruption.apply_rows(chosen, seed ^ 0x2222);
  data.clean_reference = chosen.topRows(n_clean);
  data.ground_truth = chosen;
  return data;
}

// ---- export ------------------------------------------------------------------

void write_f64_block(const std::string& path, const Mat& m) {
  const std::filesystem::path file(path);
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write '" + file.string() + "'");
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      auto bits = std::bit_cast<std::uint64_t>(m(i, j));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
  }
}

Mat read_f64_block(const std::string& path, Index rows, Index cols) {
  const std::filesystem::path file(path);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw SchemaError("cannot open '" + file.string() + "'");
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      std::uint64_t bits = 0;
      if (!in.read(reinterpret_cast<char*>(&bits), sizeof(bits))) {
        throw SchemaError("'" + file.string() + "': truncated at byte offset " +
                          std::to_string(8 * (i * cols + j)));
      }
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      m(i, j) = std::bit_cast<double>(bits);
    }
  }
  return m;
}

void write_matrix_artifact(const std::string& dir, const std::string& name, const Mat& m) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string file = name + ".f64";
  write_f64_block((fs::path(dir) / file).string(), m);
  json_util::write_file((fs::path(dir) / (name + ".json")).string(),
                        {{"version", 1}, {"file", file}, {"rows", m.rows()}, {"cols", m.cols()}, {"dtype", "float64-le"}});
}

Mat read_matrix_artifact(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const auto doc = json_util::read_file(manifest_path);
  const std::string where = "'" + manifest_path + "'";
  json_util::require_version(doc, 1, where);
  const Index rows = json_util::get_index(doc, "rows", where);
  const Index cols = json_util::get_index(doc, "cols", where);
  const fs::path file = fs::path(manifest_path).parent_path() / json_util::get_string(doc, "file", where);
  return read_f64_block(file.string(), rows, cols);
}

void write_dataset(const std::string& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json blocks = nlohmann::json::object();
  auto put = [&](const char* name, const Mat& m) {
    const std::string file = std::string(name) + ".f64";
    write_f64_block((fs::path(dir) / file).string(), m);
    blocks[name] = {{"file", file}, {"rows", m.rows()}, {"cols", m.cols()}, {"dtype", "float64-le"}};
  };
  put("corrupted", data.corrupted);
  put("clean_reference", data.clean_reference);
  if (data.ground_truth) put("ground_truth", *data.ground_truth);
  json_util::write_file((fs::path(dir) / "manifest.json").string(), {{"version", 1}, {"blocks", blocks}});
}

Dataset read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto doc = json_util::read_file((fs::path(dir) / "manifest.json").string());
  json_util::require_version(doc, 1, "dataset manifest");
  if (!doc.contains("blocks") || !doc["blocks"].is_object()) throw SchemaError("dataset manifest: missing 'blocks'");
  const auto& blocks = doc["blocks"];
  auto get = [&](const char* name) {
    const auto& b = blocks.at(name);
    const std::string where = std::string("dataset manifest.blocks.") + name;
    const Index rows = json_util::get_index(b, "rows", where);
    const Index cols = json_util::get_index(b, "cols", where);
    return read_f64_block((fs::path(dir) / json_util::get_string(b, "file", where)).string(), rows, cols);
  };
  for (const char* required : {"corrupted", "clean_reference"}) {
    if (!blocks.contains(required)) throw SchemaError(std::string("dataset manifest: missing block '") + required + "'");
  }
  Dataset data;
  data.corrupted = get("corrupted");
  data.clean_reference = get("clean_reference");
  if (blocks.contains("ground_truth")) data.ground_truth = get("ground_truth");
  return data;
}

}  // namespace raflow
