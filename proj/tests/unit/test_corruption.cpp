#include "raflow/corruption.hpp"
#include "raflow/linalg.hpp"
#include "raflow/random.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numbers>

using namespace raflow;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("raflow_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

Vec delta(Index h, Index w, Index r, Index c) {
  Vec v = Vec::Zero(h * w);
  v(r * w + c) = 1.0;
  return v;
}

}  // namespace

TEST_CASE("operators pass the adjoint test") {
  Rng rng = make_rng(1);
  const LinearOperator ops[] = {LinearOperator::dense(standard_normal(4, 6, rng)),
                                LinearOperator::gaussian_blur(14, 14, 9, 1.5), LinearOperator::gaussian_blur(10, 12, 5, 1.0)};
  for (const auto& op : ops) {
    for (int k = 0; k < 100; ++k) {
      const Vec x = standard_normal(op.in_dim(), rng), y = standard_normal(op.out_dim(), rng);
      CHECK(std::abs(op.apply(x).dot(y) - x.dot(op.apply_adjoint(y))) < 1e-10);
      CHECK((op.apply(x) - op.matrix() * x).norm() < 1e-12);
      CHECK(op.operator_norm() * x.norm() >= op.apply(x).norm() - 1e-12);
    }
    CHECK(op.operator_norm() == doctest::Approx(spectral_norm_svd(op.matrix())).epsilon(1e-6));
  }
}

TEST_CASE("blurring a delta reproduces the kernel") {
  const auto op = LinearOperator::gaussian_blur(14, 14, 9, 1.5);
  const Vec k = gaussian_kernel(9, 1.5);
  CHECK(k.sum() == doctest::Approx(1.0));
  CHECK(k(4) / k(5) == doctest::Approx(std::exp(0.5 / 2.25)));
  const Vec out = op.apply(delta(14, 14, 7, 6));
  for (Index i = -4; i <= 4; ++i) {
    for (Index j = -4; j <= 4; ++j) CHECK(out((7 + i) * 14 + 6 + j) == doctest::Approx(k(i + 4) * k(j + 4)));
  }
  // Reflection averages only real pixels, so constants are preserved.
  CHECK((op.apply(Vec::Constant(196, 0.3)).array() - 0.3).abs().maxCoeff() < 1e-15);
}

TEST_CASE("blur commutes with shifts away from the border") {
  const auto op = LinearOperator::gaussian_blur(20, 20, 9, 1.5);
  const Vec a = op.apply(delta(20, 20, 8, 8));
  const Vec b = op.apply(delta(20, 20, 10, 9));
  for (Index r = 4; r < 14; ++r) {
    for (Index c = 4; c < 14; ++c) CHECK(a(r * 20 + c) == doctest::Approx(b((r + 2) * 20 + c + 1)));
  }
}

TEST_CASE("corruption applies the operator and reproducible noise") {
  CorruptionModel clean(LinearOperator::dense(Mat::Identity(3, 3)), 0.0);
  Vec x(3);
  x << 1, 2, 3;
  CHECK(clean.apply(x, 5) == x);
  CorruptionModel noisy(LinearOperator::dense(Mat::Identity(3, 3)), 0.1);
  CHECK(noisy.apply(x, 5) == noisy.apply(x, 5));
  CHECK(noisy.apply(x, 5) != noisy.apply(x, 6));
  CHECK_THROWS_AS(noisy.apply(Vec::Zero(2), 1), ShapeError);
  CHECK_THROWS_AS(CorruptionModel(LinearOperator::dense(Mat::Identity(2, 2)), -1.0), DomainError);
  CHECK_THROWS_AS(clean.noise_log_density(Vec::Zero(3)), DomainError);
}

TEST_CASE("noise log density values and normalization") {
  CorruptionModel c(LinearOperator::dense(Mat::Identity(1, 1)), 1.0);
  CHECK(c.noise_log_density(Vec::Zero(1)) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)));
  CorruptionModel s(LinearOperator::dense(Mat::Identity(1, 1)), 0.3);
  Vec r(1);
  r << 0.5;
  CHECK(s.noise_log_density(r) - s.noise_log_density(Vec::Zero(1)) == doctest::Approx(-0.25 / (2 * 0.09)));
  double total = 0.0;
  const double h = 1e-3;
  for (double t = -5.0; t <= 5.0; t += h) {
    r << t;
    total += std::exp(s.noise_log_density(r)) * h;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("sinusoid dataset") {
  auto p0 = make_sinusoid_dataset(200, 10, 0.0, 7);
  const Mat curve = dense_sinusoid(p0.embedding, 20000);
  CHECK(mean_distance_to_curve(p0.data.corrupted, curve) <= 1e-3);
  auto p = make_sinusoid_dataset(1000, 50, 0.1, 7);
  auto q = make_sinusoid_dataset(1000, 50, 0.1, 7);
  CHECK(p.data.corrupted == q.data.corrupted);
  CHECK(p.data.clean_reference == q.data.clean_reference);
  CHECK(p.data.corrupted.rows() == 1000);
  CHECK(p.data.clean_reference.rows() == 50);
  CHECK(p.data.corrupted.cols() == 3);
  CHECK(static_cast<double>(p.data.clean_reference.rows()) / p.data.corrupted.rows() == doctest::Approx(0.05));
  const Mat noise = p.data.corrupted - *p.data.ground_truth;
  const double sd = std::sqrt(noise.squaredNorm() / static_cast<double>(noise.size()));
  CHECK(sd == doctest::Approx(0.1).epsilon(0.05));
}

TEST_CASE("IDX files parse and pool") {
  const auto dir = temp_dir("idx");
  {
    std::ofstream img(dir / "img", std::ios::binary);
    put_be32(img, 0x00000803);
    put_be32(img, 2);
    put_be32(img, 28);
    put_be32(img, 28);
    for (int n = 0; n < 2; ++n) {
      for (int i = 0; i < 28 * 28; ++i) img.put(static_cast<char>(n == 0 ? 51 : (i % 2) * 255));
    }
    std::ofstream lab(dir / "lab", std::ios::binary);
    put_be32(lab, 0x00000801);
    put_be32(lab, 2);
    lab.put(3);
    lab.put(7);
  }
  const auto data = load_mnist_idx((dir / "img").string(), (dir / "lab").string());
  REQUIRE(data.images.rows() == 2);
  CHECK(data.images.cols() == 196);
  CHECK((data.images.row(0).array() - 0.2).abs().maxCoeff() < 1e-15);
  CHECK((data.images.row(1).array() - 0.5).abs().maxCoeff() < 1e-15);
  CHECK(data.labels == std::vector<int>{3, 7});

  {
    std::ofstream bad(dir / "bad", std::ios::binary);
    put_be32(bad, 2049);
  }
  CHECK_THROWS_WITH_AS(read_idx_images((dir / "bad").string()), doctest::Contains("byte offset 0"), SchemaError);
  {
    std::ofstream trunc(dir / "trunc", std::ios::binary);
    put_be32(trunc, 2051);
    put_be32(trunc, 5);
    put_be32(trunc, 28);
    put_be32(trunc, 28);
    trunc.put(1);
  }
  CHECK_THROWS_WITH_AS(read_idx_images((dir / "trunc").string()), doctest::Contains("byte offset 17"), SchemaError);
  const Mat dq = dequantize(data.images, 1);
  CHECK((dq - data.images).minCoeff() >= 0.0);
  CHECK((dq - data.images).maxCoeff() < 1.0 / 256.0);
}

TEST_CASE("dataset export round trip") {
  auto p = make_sinusoid_dataset(20, 5, 0.1, 3);
  const auto dir = temp_dir("export");
  write_dataset(dir.string(), p.data);
  const Dataset back = read_dataset(dir.string());
  CHECK(back.corrupted == p.data.corrupted);
  CHECK(back.clean_reference == p.data.clean_reference);
  REQUIRE(back.ground_truth.has_value());
  CHECK(*back.ground_truth == *p.data.ground_truth);
  std::filesystem::resize_file(dir / "corrupted.f64", 16);
  CHECK_THROWS_AS(read_dataset(dir.string()), SchemaError);
}
