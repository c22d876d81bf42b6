#include "mokd/hsic.hpp"

#include "mokd/error.hpp"

#include <cmath>

namespace mokd {

namespace {

void check_pair(const Matrix& kt, const Matrix& lt) {
  if (kt.rows() != kt.cols() || lt.rows() != lt.cols()) {
    throw InvalidArgument("HSIC kernel matrices must be square");
  }
  if (kt.rows() != lt.rows()) {
    throw InvalidArgument("HSIC kernel matrices differ in size: " + std::to_string(kt.rows()) +
                          " vs " + std::to_string(lt.rows()));
  }
  if (kt.rows() < 4) {
    throw InvalidArgument("insufficient samples for unbiased estimator (need m >= 4, got m=" +
                          std::to_string(kt.rows()) + ")");
  }
  if (kt.diagonal().cwiseAbs().maxCoeff() != 0.0 || lt.diagonal().cwiseAbs().maxCoeff() != 0.0) {
    throw InvalidArgument("HSIC estimator expects zero-diagonal kernel matrices");
  }
}

template <typename MakeTarget>
BandwidthSelection grid_search(const Matrix& z, KernelFamily family, const BandwidthGrid& grid,
                               MakeTarget&& make_target) {
  grid.validate();
  check_embeddings(z);
  if (family == KernelFamily::CosineLinear) {
    throw InvalidArgument("bandwidth selection needs a radial kernel (gaussian or imq)");
  }
  if (z.rows() < 4) {
    throw InvalidArgument("insufficient samples for unbiased estimator (need m >= 4, got m=" +
                          std::to_string(z.rows()) + ")");
  }
  BandwidthSelection sel;
  sel.sigma0 = std::sqrt(median_sq_distance(z));
  const Matrix d2 = pairwise_sq_distances(z);
  sel.table.reserve(grid.coefficients.size());
  for (std::size_t i = 0; i < grid.coefficients.size(); ++i) {
    const double c = grid.coefficients[i];
    const double sigma = c * sel.sigma0;
    const Matrix kt = radial_gram(family, sigma, d2, true);
    HsicEstimate est = estimate_hsic(kt, make_target(sigma), grid.epsilon);
    est.sigma = sigma;
    est.coefficient = c;
    sel.table.push_back(est);
    if (i == 0 || est.power_ratio > sel.table[sel.index].power_ratio) sel.index = i;
  }
  sel.sigma = sel.table[sel.index].sigma;
  sel.coefficient = sel.table[sel.index].coefficient;
  return sel;
}

}  // namespace

std::vector<double> BandwidthGrid::default_coefficients() {
  return {0.001, 0.01, 0.1, 0.2, 0.25, 0.5, 0.75, 0.8, 0.9, 1.0, 1.25, 1.5, 2.0, 5.0, 10.0};
}

void BandwidthGrid::validate() const {
  if (coefficients.empty()) throw InvalidArgument("bandwidth grid is empty");
  for (double c : coefficients) {
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw InvalidArgument("bandwidth coefficients must be positive, got " + std::to_string(c));
    }
  }
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
}

double hsic_unbiased(const Matrix& kt, const Matrix& lt) {
  check_pair(kt, lt);
  const double m = static_cast<double>(kt.rows());
  const double trace_kl = kt.cwiseProduct(lt.transpose()).sum();
  const double sum_k = kt.sum();
  const double sum_l = lt.sum();
  const double sum_kl = kt.colwise().sum().dot(lt.rowwise().sum().transpose());
  return (trace_kl + sum_k * sum_l / ((m - 1.0) * (m - 2.0)) - 2.0 * sum_kl / (m - 2.0)) /
         (m * (m - 3.0));
}

double hsic_unbiased(const KernelMatrix& kt, const KernelMatrix& lt) {
  return hsic_unbiased(kt.data, lt.data);
}

Vector hsic_h_vector(const Matrix& kt, const Matrix& lt) {
  check_pair(kt, lt);
  const Eigen::Index n = kt.rows();
  const double m = static_cast<double>(n);
  const Vector k1 = kt.rowwise().sum();
  const Vector l1 = lt.rowwise().sum();
  const Vector kl1 = kt * l1;
  const Vector lk1 = lt * k1;
  const double sum_k = k1.sum();
  const double sum_l = l1.sum();
  const double sum_kl = kt.colwise().sum().dot(l1.transpose());
  const double trace_kl = kt.cwiseProduct(lt.transpose()).sum();

  Vector h = (m - 2.0) * (m - 2.0) * kt.cwiseProduct(lt).rowwise().sum();
  h -= m * k1.cwiseProduct(l1);
  h += sum_l * k1 + sum_k * l1;
  h.array() -= sum_kl;
  h += (m - 2.0) * (Vector::Constant(n, trace_kl) - kl1 - lk1);
  return h;
}

double hsic_variance_raw(const Matrix& kt, const Matrix& lt, double hsic_value,
                         VarianceNormalization norm) {
  const Vector h = hsic_h_vector(kt, lt);
  const double m = static_cast<double>(kt.rows());
  const double pochhammer = (m - 1.0) * (m - 2.0) * (m - 3.0);
  const double scale = norm == VarianceNormalization::SquaredPochhammer ? pochhammer * pochhammer
                                                                        : pochhammer;
  const double r = h.squaredNorm() / (4.0 * m * scale);
  return 16.0 / m * (r - hsic_value * hsic_value);
}

double hsic_variance(const Matrix& kt, const Matrix& lt, double hsic_value,
                     VarianceNormalization norm) {
  return std::max(hsic_variance_raw(kt, lt, hsic_value, norm), 0.0);
}

double power_ratio(double value, double variance, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
  if (variance < 0.0) throw InvalidArgument("variance must be non-negative");
  return value / std::sqrt(variance + epsilon);
}

HsicEstimate estimate_hsic(const Matrix& kt, const Matrix& lt, double epsilon) {
  HsicEstimate est;
  est.value = hsic_unbiased(kt, lt);
  est.raw_variance = hsic_variance_raw(kt, lt, est.value);
  est.variance = std::max(est.raw_variance, 0.0);
  est.power_ratio = power_ratio(est.value, est.variance, epsilon);
  return est;
}

Matrix hsic_kernel_gradient(const Matrix& lt) {
  const Eigen::Index n = lt.rows();
  if (n < 4 || lt.cols() != n) {
    throw InvalidArgument("insufficient samples for unbiased estimator (need m >= 4, got m=" +
                          std::to_string(n) + ")");
  }
  const double m = static_cast<double>(n);
  const Vector l1 = lt.rowwise().sum();
  const double sum_l = l1.sum();
  Matrix g = 0.5 * (lt + lt.transpose());
  g.array() += sum_l / ((m - 1.0) * (m - 2.0));
  g -= (Vector::Ones(n) * l1.transpose() + l1 * Vector::Ones(n).transpose()) / (m - 2.0);
  g.diagonal().setZero();
  return g / (m * (m - 3.0));
}

BandwidthSelection select_bandwidth(const Matrix& z, const Labels& labels, KernelFamily family,
                                    const BandwidthGrid& grid) {
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) {
    throw InvalidArgument("label count does not match sample count");
  }
  const Matrix lt = label_kernel_matrix(labels, 1.0, 0.0, true).data;
  return grid_search(z, family, grid, [&](double) -> const Matrix& { return lt; });
}

BandwidthSelection select_bandwidth(const Matrix& z, const Matrix& target, KernelFamily family,
                                    const BandwidthGrid& grid) {
  check_embeddings(target);
  if (target.rows() != z.rows()) {
    throw InvalidArgument("target sample count does not match embeddings");
  }
  const Matrix d2 = pairwise_sq_distances(target);
  return grid_search(z, family, grid,
                     [&](double sigma) { return radial_gram(family, sigma, d2, true); });
}

}  // namespace mokd
