#pragma once

#include "mokd/kernels.hpp"

#include <cstddef>
#include <vector>

namespace mokd {

/// How the h-vector norm is scaled when forming R in the variance estimate.
/// SquaredPochhammer matches the Hoeffding-projection variance of the
/// U-statistic; LinearPochhammer is the alternative literal reading, kept for
/// comparison only.
enum class VarianceNormalization { SquaredPochhammer, LinearPochhammer };

struct HsicEstimate {
  double value = 0.0;
  double variance = 0.0;      // clamped at zero
  double raw_variance = 0.0;  // before clamping
  double power_ratio = 0.0;
  double sigma = 0.0;
  double coefficient = 0.0;
};

struct BandwidthGrid {
  std::vector<double> coefficients = default_coefficients();
  double epsilon = 1e-5;

  static std::vector<double> default_coefficients();
  void validate() const;
};

/// Unbiased (U-statistic) HSIC on zero-diagonal Gram matrices. Needs m >= 4.
double hsic_unbiased(const Matrix& kt, const Matrix& lt);
double hsic_unbiased(const KernelMatrix& kt, const KernelMatrix& lt);

/// The h-vector whose squared norm drives R.
Vector hsic_h_vector(const Matrix& kt, const Matrix& lt);

/// v = (16/m)(R - value^2) without clamping.
double hsic_variance_raw(const Matrix& kt, const Matrix& lt, double hsic_value,
                         VarianceNormalization norm = VarianceNormalization::SquaredPochhammer);

/// max(v, 0).
double hsic_variance(const Matrix& kt, const Matrix& lt, double hsic_value,
                     VarianceNormalization norm = VarianceNormalization::SquaredPochhammer);

double power_ratio(double value, double variance, double epsilon);

/// Value, variance and power ratio in one pass.
HsicEstimate estimate_hsic(const Matrix& kt, const Matrix& lt, double epsilon);

/// d hsic_unbiased / d K~ for a fixed L~, symmetrised with a zero diagonal, so
/// that dH = sum_{i != j} G[i,j] dk(z_i, z_j) for a symmetric kernel.
Matrix hsic_kernel_gradient(const Matrix& lt);

struct BandwidthSelection {
  double sigma = 0.0;
  double coefficient = 0.0;
  double sigma0 = 0.0;  // sqrt of the median squared distance
  std::size_t index = 0;
  std::vector<HsicEstimate> table;

  const HsicEstimate& best() const { return table[index]; }
};

/// Grid search over sigma = c * sigma0 maximising the power ratio of
/// HSIC(Z, Y) with a delta label kernel. Ties go to the earliest coefficient.
BandwidthSelection select_bandwidth(const Matrix& z, const Labels& labels, KernelFamily family,
                                    const BandwidthGrid& grid);

/// Same, but the second argument is an embedding matrix kernelised with the
/// same family and sigma (HSIC(Z, Z) when target == z).
BandwidthSelection select_bandwidth(const Matrix& z, const Matrix& target, KernelFamily family,
                                    const BandwidthGrid& grid);

}  // namespace mokd
