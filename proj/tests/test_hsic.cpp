#include <doctest.h>

#include "mokd/error.hpp"
#include "mokd/hsic.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <numeric>

using namespace mokd;
using namespace mokd::testing;

namespace {

Matrix ones_off_diagonal(Eigen::Index m) {
  Matrix k = Matrix::Ones(m, m);
  k.diagonal().setZero();
  return k;
}

Matrix permute(const Matrix& k, const std::vector<int>& p) {
  Matrix out(k.rows(), k.cols());
  for (Eigen::Index i = 0; i < k.rows(); ++i)
    for (Eigen::Index j = 0; j < k.cols(); ++j) out(i, j) = k(p[i], p[j]);
  return out;
}

Matrix gaussian_gram(const Matrix& z, double sigma) {
  return kernel_matrix({KernelFamily::Gaussian, sigma}, z, true).data;
}

}  // namespace

TEST_CASE("constant kernels at m=4 give zero") {
  const Matrix k = ones_off_diagonal(4);
  CHECK(std::abs(hsic_unbiased(k, k)) <= 1e-12);
  CHECK(hsic_h_vector(k, k).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(std::abs(hsic_variance_raw(k, k, 0.0)) <= 1e-12);
  CHECK(std::abs(hsic_naive_oracle(k, k)) <= 1e-12);
}

TEST_CASE("zero label kernel gives zero") {
  Rng rng(1);
  const Matrix k = random_zero_diag_kernel(rng, 4);
  const Matrix zero = Matrix::Zero(4, 4);
  CHECK(hsic_unbiased(k, zero) == 0.0);
  CHECK(hsic_h_vector(k, zero).cwiseAbs().maxCoeff() == 0.0);
  CHECK(hsic_variance(k, zero, 0.0) == 0.0);
  CHECK(hsic_naive_oracle(k, zero) == 0.0);
}

TEST_CASE("estimator matches the index-sum oracle") {
  Rng rng(2);
  const Matrix z = random_matrix(rng, 6, 3);
  const Matrix k = gaussian_gram(z, 1.0);
  const Matrix l = label_kernel_matrix({0, 1, 0, 2, 1, 2}).data;
  CHECK(std::abs(hsic_unbiased(k, l) - hsic_naive_oracle(k, l)) <= 1e-12);

  for (int trial = 0; trial < 200; ++trial) {
    const auto m = std::uniform_int_distribution<Eigen::Index>(4, 12)(rng);
    const Matrix a = random_zero_diag_kernel(rng, m);
    const Matrix b = random_zero_diag_kernel(rng, m);
    CHECK(std::abs(hsic_unbiased(a, b) - hsic_naive_oracle(a, b)) <= 1e-10);
  }
}

TEST_CASE("estimator input validation") {
  const Matrix k3 = ones_off_diagonal(3);
  CHECK_THROWS_WITH_AS(hsic_unbiased(k3, k3),
                       doctest::Contains("insufficient samples for unbiased estimator"),
                       InvalidArgument);
  CHECK_THROWS_AS(hsic_unbiased(ones_off_diagonal(4), ones_off_diagonal(5)), InvalidArgument);
  CHECK_THROWS_AS(hsic_unbiased(Matrix::Ones(4, 4), ones_off_diagonal(4)), InvalidArgument);
  CHECK_THROWS_AS(hsic_variance(k3, k3, 0.0), InvalidArgument);
}

TEST_CASE("variance matches the loop oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix z = random_matrix(rng, 8, 2);
    const Labels y = random_labels(rng, 8, 3);
    const Matrix k = gaussian_gram(z, 0.8);
    const Matrix l = label_kernel_matrix(y).data;
    const double value = hsic_unbiased(k, l);
    const double v = hsic_variance(k, l, value);
    CHECK(v >= 0.0);
    CHECK(std::abs(v - hsic_variance_loop_oracle(k, l, value)) <= 1e-10);
  }
}

TEST_CASE("variance term equals the Hoeffding projection second moment") {
  Rng rng(4);
  for (int m : {5, 6, 7}) {
    const Matrix k = random_zero_diag_kernel(rng, m);
    const Matrix l = random_zero_diag_kernel(rng, m);
    const auto h1 = hoeffding_projection(k, l);
    const Vector h = hsic_h_vector(k, l);
    const double p = (m - 1.0) * (m - 2.0) * (m - 3.0);
    for (int i = 0; i < m; ++i) CHECK(h(i) == doctest::Approx(2.0 * p * h1[i]).epsilon(1e-10));

    // The projections average back to the estimator itself.
    const double mean_h1 = std::accumulate(h1.begin(), h1.end(), 0.0) / m;
    CHECK(mean_h1 == doctest::Approx(hsic_unbiased(k, l)).epsilon(1e-10));

    double r = 0.0;
    for (double x : h1) r += x * x;
    r /= m;
    const double value = hsic_unbiased(k, l);
    CHECK(hsic_variance_raw(k, l, value) ==
          doctest::Approx(16.0 / m * (r - value * value)).epsilon(1e-9));
  }
}

TEST_CASE("power ratio") {
  CHECK(power_ratio(0.0, 0.3, 1e-5) == 0.0);
  CHECK(power_ratio(0.5, 0.0, 1e-5) == doctest::Approx(158.114).epsilon(1e-6));
  CHECK(power_ratio(1.0, 1.0 - 1e-5, 1e-5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(power_ratio(1.0, 0.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(power_ratio(1.0, 0.0, -1e-5), InvalidArgument);
}

TEST_CASE("permutation symmetry") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix k = random_zero_diag_kernel(rng, 9);
    const Matrix l = random_zero_diag_kernel(rng, 9);
    std::vector<int> p(9);
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    const Matrix kp = permute(k, p);
    const Matrix lp = permute(l, p);
    const double value = hsic_unbiased(k, l);
    CHECK(hsic_unbiased(kp, lp) == doctest::Approx(value).epsilon(1e-12));
    CHECK(hsic_variance(kp, lp, value) ==
          doctest::Approx(hsic_variance(k, l, value)).epsilon(1e-10));
  }
}

TEST_CASE("scale linearity") {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix k = random_zero_diag_kernel(rng, 7);
    const Matrix l = random_zero_diag_kernel(rng, 7);
    const double a = 0.3 + trial;
    const double b = -1.7;
    CHECK(std::abs(hsic_unbiased(a * k, b * l) - a * b * hsic_unbiased(k, l)) <=
          1e-12 * std::max(1.0, std::abs(a * b)));
  }
}

TEST_CASE("clustered embeddings show positive dependence") {
  Matrix z(12, 3);
  Labels y(12);
  for (int i = 0; i < 12; ++i) {
    y[i] = i % 3;
    z.row(i) = 10.0 * RowVector::Unit(3, y[i]);
  }
  const Matrix k = gaussian_gram(z, 5.0);
  CHECK(hsic_unbiased(k, label_kernel_matrix(y).data) > 0.0);
}

TEST_CASE("kernel gradient of the estimator") {
  Rng rng(7);
  const Matrix l = random_zero_diag_kernel(rng, 8);
  const Matrix g = hsic_kernel_gradient(l);
  CHECK(g == g.transpose());
  CHECK(g.diagonal().cwiseAbs().maxCoeff() == 0.0);

  // Perturb one symmetric pair of K and compare with the linearised change.
  Matrix k = random_zero_diag_kernel(rng, 8);
  const double base = hsic_unbiased(k, l);
  const double h = 1e-6;
  k(2, 5) += h;
  k(5, 2) += h;
  CHECK((hsic_unbiased(k, l) - base) / h == doctest::Approx(2.0 * g(2, 5)).epsilon(1e-6));
}

TEST_CASE("bandwidth grid defaults") {
  const BandwidthGrid grid;
  REQUIRE(grid.coefficients.size() == 15);
  CHECK(grid.coefficients.front() == 0.001);
  CHECK(grid.coefficients.back() == 10.0);
  CHECK(grid.epsilon == 1e-5);
  CHECK_THROWS_AS((BandwidthGrid{{}, 1e-5}.validate()), InvalidArgument);
  CHECK_THROWS_AS((BandwidthGrid{{1.0, -2.0}, 1e-5}.validate()), InvalidArgument);
  CHECK_THROWS_AS((BandwidthGrid{{1.0}, 0.0}.validate()), InvalidArgument);
}

TEST_CASE("select_bandwidth with a single coefficient") {
  Rng rng(8);
  const Matrix z = random_matrix(rng, 10, 3);
  const Labels y = random_labels(rng, 10, 2);
  const auto sel = select_bandwidth(z, y, KernelFamily::Gaussian, BandwidthGrid{{0.75}, 1e-5});
  REQUIRE(sel.table.size() == 1);
  CHECK(sel.coefficient == 0.75);
  CHECK(sel.sigma == doctest::Approx(0.75 * std::sqrt(median_sq_distance(z))));
}

TEST_CASE("select_bandwidth returns the table maximum") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix z = random_matrix(rng, 12, 4);
    const Labels y = random_labels(rng, 12, 3);
    for (auto family : {KernelFamily::Gaussian, KernelFamily::IMQ}) {
      const auto sel = select_bandwidth(z, y, family, BandwidthGrid{});
      for (const auto& row : sel.table) CHECK(sel.best().power_ratio >= row.power_ratio);
      for (std::size_t i = 0; i < sel.index; ++i)
        CHECK(sel.table[i].power_ratio < sel.best().power_ratio);
    }
  }
}

TEST_CASE("ties go to the smallest coefficient") {
  // All-distinct labels give a zero label kernel, so every row ties exactly.
  Rng rng(10);
  const Matrix z = random_matrix(rng, 8, 2);
  const auto sel =
      select_bandwidth(z, Labels{0, 1, 2, 3, 4, 5, 6, 7}, KernelFamily::Gaussian, BandwidthGrid{});
  CHECK(sel.index == 0);
}

TEST_CASE("two well separated blobs select an interior coefficient") {
  Rng rng(11);
  Matrix z = random_matrix(rng, 40, 4);
  Labels y(40);
  for (int i = 0; i < 40; ++i) {
    y[i] = i < 20 ? 0 : 1;
    if (y[i] == 1) z(i, 0) += 6.0;
  }
  for (auto family : {KernelFamily::Gaussian, KernelFamily::IMQ}) {
    const auto sel = select_bandwidth(z, y, family, BandwidthGrid{});
    CHECK(sel.coefficient > 0.001);
    CHECK(sel.coefficient < 10.0);
    CHECK(sel.best().value > 0.0);
  }
}

TEST_CASE("select_bandwidth against an embedding target") {
  Rng rng(12);
  const Matrix z = random_matrix(rng, 10, 3);
  const auto sel = select_bandwidth(z, z, KernelFamily::Gaussian, BandwidthGrid{});
  const Matrix k = gaussian_gram(z, sel.sigma);
  CHECK(sel.best().value == doctest::Approx(hsic_unbiased(k, k)).epsilon(1e-12));
}

TEST_CASE("select_bandwidth errors") {
  Matrix same = Matrix::Ones(6, 2);
  CHECK_THROWS_AS(select_bandwidth(same, Labels{0, 0, 0, 1, 1, 1}, KernelFamily::Gaussian, BandwidthGrid{}),
                  InvalidArgument);
  Rng rng(13);
  const Matrix z = random_matrix(rng, 6, 2);
  CHECK_THROWS_AS(select_bandwidth(z, Labels{0, 0, 0, 1, 1, 1}, KernelFamily::Gaussian,
                                   BandwidthGrid{{}, 1e-5}),
                  InvalidArgument);
  CHECK_THROWS_AS(select_bandwidth(z.topRows(3), Labels{0, 1, 1}, KernelFamily::Gaussian, BandwidthGrid{}),
                  InvalidArgument);
  CHECK_THROWS_AS(select_bandwidth(z, Labels{0, 1}, KernelFamily::Gaussian, BandwidthGrid{}),
                  InvalidArgument);
}
